import numpy as np
import pytest

from denise.raster import raster_to_mask, read_raster
from denise.synth import (
    DatasetManifest,
    Entry,
    ManifestError,
    SceneConfig,
    generate_dataset,
    load_manifest,
    render_scene,
    save_manifest,
    split_dataset,
)


def scenes(cfg, n):
    for child in np.random.SeedSequence(cfg.seed).spawn(n):
        yield render_scene(cfg, np.random.default_rng(child))


def fake_manifest(n, root="/nonexistent"):
    return DatasetManifest(root, [Entry(f"{i:05d}", f"i/{i}.png", f"m/{i}.png") for i in range(n)])


def test_mask_is_union_of_footprints_without_occlusion(tmp_path):
    cfg = SceneConfig(occlusion_prob=0.0, seed=11)
    manifest = generate_dataset(cfg, 1, tmp_path)
    (scene,) = scenes(cfg, 1)
    stored = raster_to_mask(read_raster(manifest.mask_path(manifest.entries[0])))
    assert np.array_equal(stored, np.logical_or.reduce(scene.footprints))
    assert scene.image == scene.clean


def test_generation_is_deterministic(tmp_path):
    cfg = SceneConfig(seed=5, occlusion_prob=0.5)
    a = generate_dataset(cfg, 4, tmp_path / "a")
    b = generate_dataset(cfg, 4, tmp_path / "b")
    for ea, eb in zip(a.entries, b.entries):
        assert a.image_path(ea).read_bytes() == b.image_path(eb).read_bytes()
        assert a.mask_path(ea).read_bytes() == b.mask_path(eb).read_bytes()
    assert (tmp_path / "a/manifest.txt").read_text() == (tmp_path / "b/manifest.txt").read_text()


def test_occlusion_cap_per_building():
    cfg = SceneConfig(occlusion_prob=1.0, occlusion_max_fraction=0.3, seed=2)
    occluded_any = False
    for scene in scenes(cfg, 30):
        changed = np.any(scene.image.data != scene.clean.data, axis=0)
        for fp in scene.footprints:
            assert np.count_nonzero(changed & fp) <= 0.3 * np.count_nonzero(fp)
            occluded_any |= bool((changed & fp).any())
    assert occluded_any


def test_masks_ignore_trees_and_shadows():
    base = SceneConfig(occlusion_prob=0.0, shadow_prob=0.0, seed=9)
    busy = SceneConfig(occlusion_prob=1.0, shadow_prob=1.0, seed=9)
    differs = False
    for a, b in zip(scenes(base, 10), scenes(busy, 10)):
        # Buildings are drawn before any tree is sampled, so the footprints coincide.
        assert np.array_equal(a.mask, b.mask)
        differs |= a.clean != b.clean
    assert differs


def test_minimum_footprint():
    for scene in scenes(SceneConfig(seed=4, min_side=6, max_side=10), 40):
        for fp in scene.footprints:
            assert fp.sum() >= 16


def test_scene_config_validation():
    with pytest.raises(ValueError):
        SceneConfig(image_size=16)
    with pytest.raises(ValueError):
        SceneConfig(occlusion_prob=1.5)
    with pytest.raises(ValueError):
        SceneConfig(roof_brightness=(0.9, 0.2))
    cfg = SceneConfig(seed=3, noise_std=0.1)
    assert SceneConfig.from_echo({k: str(v) for k, v in cfg.echo().items()}) == cfg


def test_split_large_counts():
    split = split_dataset(fake_manifest(28615), (0.8, 0.1, 0.1), seed=0)
    assert split.counts() == {"train": 22893, "val": 2861, "test": 2861}


def test_split_small():
    assert split_dataset(fake_manifest(10), seed=1).counts() == {"train": 8, "val": 1, "test": 1}
    assert split_dataset(fake_manifest(3), seed=1).counts() == {"train": 1, "val": 1, "test": 1}
    with pytest.raises(ValueError):
        split_dataset(fake_manifest(2))
    with pytest.raises(ValueError):
        split_dataset(fake_manifest(10), (0.5, 0.3, 0.3))


def test_split_is_seeded_partition():
    m = fake_manifest(50)
    a, b, c = split_dataset(m, seed=3), split_dataset(m, seed=3), split_dataset(m, seed=4)
    assert a.entries == b.entries
    assert a.entries != c.entries
    ids = [set(e.sample_id for e in a.split(s)) for s in ("train", "val", "test")]
    assert set.union(*ids) == {e.sample_id for e in m.entries}
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])


def test_manifest_round_trip(tmp_path):
    m = split_dataset(generate_dataset(SceneConfig(seed=1), 5, tmp_path), seed=1)
    save_manifest(m, tmp_path / "manifest.txt")
    back = load_manifest(tmp_path / "manifest.txt")
    assert back.entries == m.entries
    assert back.seed == m.seed
    assert back.config == {k: str(v) for k, v in m.config.items()}
    assert back.root == tmp_path


def test_manifest_dangling_path(tmp_path):
    m = generate_dataset(SceneConfig(seed=1), 3, tmp_path)
    m.image_path(m.entries[1]).unlink()
    with pytest.raises(ManifestError, match="00001"):
        load_manifest(tmp_path / "manifest.txt")


def test_manifest_empty_and_malformed(tmp_path):
    (tmp_path / "empty.txt").write_text("# denise-manifest v1\n")
    with pytest.raises(ManifestError, match="no entries"):
        load_manifest(tmp_path / "empty.txt")
    (tmp_path / "bad.txt").write_text("a\tb\tc\n")
    with pytest.raises(ManifestError, match="malformed"):
        load_manifest(tmp_path / "bad.txt")
    (tmp_path / "split.txt").write_text("a\tb\tc\tholdout\n")
    with pytest.raises(ManifestError, match="unknown split"):
        load_manifest(tmp_path / "split.txt")


def test_manifest_rejects_duplicate_ids():
    with pytest.raises(ManifestError):
        DatasetManifest("/x", [Entry("a", "i", "m"), Entry("a", "i2", "m2")])
