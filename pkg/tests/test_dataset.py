import json

import numpy as np
import pytest
from PIL import Image

from clap_uad.dataset import (DataContractError, LayoutError, SplitManifest, epoch_subsample,
                              generate_synthetic, load_image, mask_path_for, save_image,
                              scan_manifest)


def _layout(root, n_train=3, n_test_good=2, n_test_bad=2):
    rng = np.random.default_rng(0)
    for sub, n in (("train/good", n_train), ("test/good", n_test_good), ("test/ungood", n_test_bad)):
        (root / sub).mkdir(parents=True, exist_ok=True)
        for i in range(n):
            save_image(root / sub / f"{i:03d}.png", rng.random((16, 16)))
    return root


def test_scan_counts(tmp_path):
    m = scan_manifest(_layout(tmp_path))
    assert m.counts == {"train/normal": 3, "train/abnormal": 0,
                        "test/normal": 2, "test/abnormal": 2}
    for split in ("train", "test"):
        for label in ("normal", "abnormal"):
            paths = [r.image_path for r in m.subset(split, label)]
            assert paths == sorted(paths)


def test_scan_labels(tmp_path):
    m = scan_manifest(_layout(tmp_path))
    assert {r.label for r in m.subset("test") if "/ungood/" in r.image_path} == {"abnormal"}
    assert {r.label for r in m.subset("train")} == {"normal"}


def test_scan_empty_ungood(tmp_path):
    m = scan_manifest(_layout(tmp_path, n_test_bad=0))
    assert m.counts["test/abnormal"] == 0


def test_scan_missing_train(tmp_path):
    (tmp_path / "test" / "good").mkdir(parents=True)
    with pytest.raises(LayoutError):
        scan_manifest(tmp_path)


def test_scan_skips_unreadable(tmp_path):
    _layout(tmp_path)
    (tmp_path / "test" / "good" / "broken.png").write_bytes(b"not a png")
    m = scan_manifest(tmp_path)
    assert m.skipped == 1
    assert m.counts["test/normal"] == 2


def test_manifest_json_roundtrip(tmp_path):
    m = scan_manifest(_layout(tmp_path / "d"))
    m.save(tmp_path / "m.json")
    d = json.loads((tmp_path / "m.json").read_text())
    assert set(d) >= {"dataset_name", "records"}
    assert set(d["records"][0]) == {"path", "label", "split"}
    assert SplitManifest.load(tmp_path / "m.json") == m


def test_manifest_rejects_duplicates(tmp_path):
    m = scan_manifest(_layout(tmp_path))
    with pytest.raises(ValueError):
        SplitManifest("x", m.records + m.records[:1])


def test_load_image_range_and_luminance(tmp_path):
    rgb = np.zeros((10, 12, 3), dtype=np.uint8)
    rgb[..., 0] = 255
    Image.fromarray(rgb).save(tmp_path / "c.png")
    img = load_image(tmp_path / "c.png")
    assert img.shape == (10, 12)
    np.testing.assert_allclose(img, 1 / 3, atol=1e-6)
    assert load_image(tmp_path / "c.png", side=32).shape == (32, 32)


def test_load_image_exact_8bit(tmp_path):
    arr = np.arange(256, dtype=np.uint8).reshape(16, 16)
    Image.fromarray(arr).save(tmp_path / "g.png")
    np.testing.assert_array_equal(load_image(tmp_path / "g.png"), (arr / 255.0).astype(np.float32))


def test_subsample_deterministic(small_synth):
    _, m = small_synth
    a = epoch_subsample(m, 3, seed=7)
    assert a == epoch_subsample(m, 3, seed=7)
    assert len(a) == 3


def test_subsample_clamps(tmp_path):
    m = scan_manifest(_layout(tmp_path, n_train=5))
    out = epoch_subsample(m, 3000, seed=0)
    assert sorted(r.image_path for r in out) == sorted(r.image_path for r in m.subset("train"))


def test_subsample_seeds_differ():
    from clap_uad.dataset import SampleRecord
    recs = tuple(SampleRecord(f"/x/{i}.png", "normal", "train", "x") for i in range(1000))
    m = SplitManifest("x", recs)
    a, b = epoch_subsample(m, 100, 1), epoch_subsample(m, 100, 2)
    assert a != b
    for s in (a, b):
        assert len(set(s)) == 100
        assert all(r.split == "train" for r in s)


def test_subsample_errors():
    with pytest.raises(DataContractError):
        epoch_subsample(SplitManifest("x", ()), 3, 0)


def test_generate_routing(tmp_path):
    m = generate_synthetic(20, 10, 64, seed=1, out_dir=tmp_path)
    assert m.counts == {"train/normal": 10, "train/abnormal": 0,
                        "test/normal": 10, "test/abnormal": 10}


def test_generate_no_abnormal(tmp_path):
    m = generate_synthetic(4, 0, 32, seed=1, out_dir=tmp_path)
    assert not list((tmp_path / "test" / "ungood").glob("*.png"))
    assert m.counts["test/abnormal"] == 0


def test_generate_deterministic(tmp_path):
    generate_synthetic(4, 2, 32, seed=5, out_dir=tmp_path / "a")
    generate_synthetic(4, 2, 32, seed=5, out_dir=tmp_path / "b")
    for p in sorted((tmp_path / "a").rglob("*.png")):
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_generate_rejects_small_side(tmp_path):
    with pytest.raises(ValueError):
        generate_synthetic(4, 2, 16, seed=0, out_dir=tmp_path)


def test_blob_contrast(small_synth):
    _, m = small_synth
    for rec in m.subset("test", "abnormal"):
        img = load_image(rec.image_path)
        mask = load_image(mask_path_for(rec)) > 0.5
        assert img[mask].mean() - img[~mask].mean() >= 0.3


def test_roundtrip_scan(small_synth):
    root, m = small_synth
    assert set(scan_manifest(root).records) == set(m.records)


def test_loaded_images_valid(small_synth):
    _, m = small_synth
    for rec in m.records:
        img = load_image(rec.image_path)
        assert img.min() >= 0 and img.max() <= 1
        assert min(img.shape) >= 8
