import numpy as np
import pytest
import torch

from clap_uad.attention import MockBackend, PromptSet
from clap_uad.dataset import generate_synthetic

torch.use_deterministic_algorithms(True)
torch.set_num_threads(1)

ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mock():
    return MockBackend()


@pytest.fixture
def bright_dark():
    return PromptSet("synthetic", ("bright",), ("dark",))


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("small") / "data"
    manifest = generate_synthetic(20, 10, 64, seed=3, out_dir=root)
    return root, manifest


@pytest.fixture(scope="session")
def e2e(tmp_path_factory):
    """Acceptance-scale run: synth -> train -> evaluate every strategy arm."""
    import time

    from clap_uad.evaluation import evaluate
    from clap_uad.pipeline import PipelineCfgs, score_pipeline
    from clap_uad.reconstruction import TrainConfig, UNetSpec, build_model, train

    t0 = time.perf_counter()
    root = tmp_path_factory.mktemp("e2e") / "synthetic"
    manifest = generate_synthetic(250, 50, 64, seed=0, out_dir=root, n_test_normal=50)
    model = build_model(UNetSpec(depth=5, base_channels=8), seed=0)
    train(model, manifest, TrainConfig(epochs=20, samples_per_epoch=1000, image_side=64, seed=0))
    backend = MockBackend()
    prompts = PromptSet("synthetic", ("bright",), ("dark",))
    cfgs = PipelineCfgs()

    def scorer(img, strategy, i):
        return score_pipeline(backend, model, img, prompts, cfgs, strategy,
                              mask_seed=np.random.SeedSequence([0, i]))

    reports, results = {}, {}
    for strategy in ("clap", "plp", "none"):
        reports[strategy], results[strategy] = evaluate(manifest, scorer, strategy, 64)
    return {"manifest": manifest, "model": model, "backend": backend, "prompts": prompts,
            "cfgs": cfgs, "reports": reports, "results": results,
            "elapsed": time.perf_counter() - t0}
