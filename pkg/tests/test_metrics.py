import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import random_mask
from denise.metrics import (
    ImageScore,
    MetricsConfig,
    MetricsError,
    MetricsReport,
    boundary_iou,
    compare_runs,
    evaluate_dataset,
    iou,
    load_report,
)
from denise.raster import Domain, Raster, mask_to_raster, probmap_to_raster, write_raster

pairs = st.tuples(st.integers(1, 40), st.integers(1, 40)).flatmap(
    lambda s: st.tuples(arrays(np.bool_, s), arrays(np.bool_, s))
)


def block(shape, rows, cols):
    m = np.zeros(shape, bool)
    m[rows, cols] = True
    return m


def report(values, label=""):
    scores = [ImageScore(f"s{i}", a, b, 1) for i, (a, b) in enumerate(values)]
    return MetricsReport(scores, MetricsConfig().echo(), label=label)


def test_iou_identity_and_disjoint():
    a = block((4, 4), slice(0, 2), slice(0, 2))
    assert iou(a, a) == 1.0
    assert iou(a, block((4, 4), slice(2, 4), slice(2, 4))) == 0.0


def test_iou_shifted_block():
    # 2x2 block vs. the same block one column right: overlap 2, union 6.
    a = block((4, 4), slice(1, 3), slice(0, 2))
    b = block((4, 4), slice(1, 3), slice(1, 3))
    assert iou(a, b) == pytest.approx(1 / 3)


def test_iou_empty_pair_is_one():
    z = np.zeros((3, 3), bool)
    assert iou(z, z) == 1.0


def test_iou_shape_mismatch():
    with pytest.raises(MetricsError):
        iou(np.zeros((3, 3), bool), np.zeros((3, 4), bool))


def test_boundary_iou_identical():
    m = block((20, 20), slice(3, 15), slice(4, 12))
    assert boundary_iou(m, m) == 1.0


def test_boundary_iou_saturated_equals_iou(rng):
    a, b = random_mask(rng, (30, 30)), random_mask(rng, (30, 30))
    cfg = MetricsConfig(biou_pixels=math.ceil(math.hypot(30, 30)))
    assert boundary_iou(a, b, cfg) == iou(a, b)


def test_boundary_iou_matches_scan_oracle(rng):
    a, b = random_mask(rng, (64, 64)), random_mask(rng, (64, 64))
    expected = oracles.iou_count(oracles.band_scan(a, 3), oracles.band_scan(b, 3))
    assert boundary_iou(a, b, MetricsConfig(biou_pixels=3)) == expected


@pytest.mark.parametrize("h, w, d", [(64, 64, 2), (512, 512, 14), (10, 10, 1), (30, 40, 1)])
def test_resolve_fraction_of_diagonal(h, w, d):
    # 0.02 * hypot: 64x64 -> 1.81, 512x512 -> 14.48, 10x10 -> 0.28, 30x40 -> 1.0
    assert MetricsConfig().resolve_d(h, w) == d


def test_config_validation():
    with pytest.raises(ValueError):
        MetricsConfig(biou_fraction=0.0)
    with pytest.raises(ValueError):
        MetricsConfig(biou_pixels=0)
    cfg = MetricsConfig(biou_pixels=4, eval_threshold=0.3)
    assert MetricsConfig.from_echo(cfg.echo()) == cfg


@settings(max_examples=100, deadline=None)
@given(pairs)
def test_iou_properties(pair):
    a, b = pair
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)
    assert iou(a, a) == 1.0
    assert boundary_iou(a, a) == 1.0


def _write_pair_dirs(tmp_path, preds, truths, as_probs=True):
    pd, td = tmp_path / "pred", tmp_path / "truth"
    pd.mkdir()
    td.mkdir()
    for i, (p, t) in enumerate(zip(preds, truths)):
        if as_probs:
            write_raster(probmap_to_raster(p.astype(np.float32)), pd / f"s{i:02d}.dpf")
        else:
            write_raster(mask_to_raster(p), pd / f"s{i:02d}.png")
        write_raster(mask_to_raster(t), td / f"s{i:02d}.png")
    return pd, td


def test_evaluate_same_dir_is_perfect(tmp_path, rng):
    masks = [random_mask(rng, (16, 16)) for _ in range(3)]
    _, td = _write_pair_dirs(tmp_path, masks, masks)
    rep = evaluate_dataset(td, td)
    assert rep.mean_iou == 1.0 and rep.mean_biou == 1.0


def test_evaluate_single_pair_echoes_values(tmp_path):
    a = block((4, 4), slice(1, 3), slice(0, 2))
    b = block((4, 4), slice(1, 3), slice(1, 3))
    pd, td = _write_pair_dirs(tmp_path, [a], [b], as_probs=False)
    rep = evaluate_dataset(pd, td, MetricsConfig(biou_pixels=1))
    assert rep.per_image[0].iou == pytest.approx(1 / 3)
    assert rep.per_image[0].biou == boundary_iou(a, b, MetricsConfig(biou_pixels=1))


def test_evaluate_mean_is_hand_average(tmp_path, rng):
    preds = [rng.random((20, 20)) for _ in range(10)]
    truths = [random_mask(rng, (20, 20)) for _ in range(10)]
    pd, td = _write_pair_dirs(tmp_path, preds, truths)
    cfg = MetricsConfig(biou_pixels=2, eval_threshold=0.5)
    rep = evaluate_dataset(pd, td, cfg)
    ious = [oracles.iou_count(p.astype(np.float32) >= 0.5, t) for p, t in zip(preds, truths)]
    bious = [oracles.iou_count(oracles.band_scan(p.astype(np.float32) >= 0.5, 2),
                               oracles.band_scan(t, 2)) for p, t in zip(preds, truths)]
    assert rep.sample_ids == [f"s{i:02d}" for i in range(10)]
    assert rep.mean_iou == pytest.approx(sum(ious) / 10, abs=1e-12)
    assert rep.mean_biou == pytest.approx(sum(bious) / 10, abs=1e-12)


def test_evaluate_unmatched_and_empty(tmp_path, rng):
    masks = [random_mask(rng, (8, 8)) for _ in range(2)]
    pd, td = _write_pair_dirs(tmp_path, masks, masks)
    (pd / "s01.dpf").unlink()
    with pytest.raises(MetricsError, match="s01"):
        evaluate_dataset(pd, td)
    rep = evaluate_dataset(pd, td, strict=False)
    assert rep.unmatched == ["s01"] and rep.sample_ids == ["s00"]
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(MetricsError, match="no matching"):
        evaluate_dataset(empty, td)


def test_evaluate_id_subset(tmp_path, rng):
    masks = [random_mask(rng, (8, 8)) for _ in range(3)]
    pd, td = _write_pair_dirs(tmp_path, masks, masks)
    assert evaluate_dataset(pd, td, ids=["s02"]).sample_ids == ["s02"]
    with pytest.raises(MetricsError, match="s09"):
        evaluate_dataset(pd, td, ids=["s09"])


def test_evaluate_reports_unreadable_file(tmp_path, rng):
    masks = [random_mask(rng, (8, 8))]
    pd, td = _write_pair_dirs(tmp_path, masks, masks)
    (pd / "s00.dpf").write_bytes(b"DPF1garbage")
    with pytest.raises(MetricsError, match="s00"):
        evaluate_dataset(pd, td)


def test_report_mean_is_order_invariant():
    values = [(0.1, 0.2), (0.7, 0.3), (0.4, 0.9)]
    a = report(values)
    b = MetricsReport(list(reversed(a.per_image)), a.config)
    assert a.mean_iou == b.mean_iou and a.sample_ids == b.sample_ids


def test_report_text_round_trip(tmp_path):
    rep = report([(1 / 3, 0.25), (0.123456789012345, 1.0)], label="Standalone")
    rep.write(tmp_path / "r.txt")
    back = load_report(tmp_path / "r.txt")
    assert back.per_image == rep.per_image
    assert back.config == rep.config and back.label == "Standalone"
    assert (tmp_path / "r.json").exists()
    assert "# biou_d=fraction:0.02" in (tmp_path / "r.txt").read_text()


def test_compare_identical_reports():
    r = report([(0.5, 0.4)])
    c = compare_runs(r, r)
    assert c.rows[1].delta_iou == 0.0 and c.rows[1].delta_biou == 0.0


def test_compare_table1_unet_rows():
    # U-Net standalone vs. Edge-DeNISE (3-channels) means used as fixture inputs.
    base = report([(0.7657, 0.6279)])
    enh = report([(0.7742, 0.6445)])
    c = compare_runs(base, enh, model="U-Net", enhanced_method="Edge-DeNISE (3-channels)")
    assert c.rows[1].delta_iou == pytest.approx(0.0085, abs=1e-12)
    assert c.rows[1].delta_biou == pytest.approx(0.0166, abs=1e-12)
    text = c.to_text()
    assert "+0.0085" in text and "+0.0166" in text
    assert c.best_iou == 1 and c.best_biou == 1


def test_compare_is_antisymmetric():
    a, b = report([(0.6, 0.3), (0.2, 0.5)]), report([(0.4, 0.1), (0.9, 0.5)])
    ab, ba = compare_runs(a, b), compare_runs(b, a)
    assert ab.rows[1].delta_iou == -ba.rows[1].delta_iou
    assert ab.rows[1].delta_biou == -ba.rows[1].delta_biou


def test_compare_rejects_different_samples():
    a = report([(0.5, 0.5)])
    b = MetricsReport([ImageScore("other", 0.5, 0.5, 1)], a.config)
    with pytest.raises(MetricsError):
        compare_runs(a, b)
