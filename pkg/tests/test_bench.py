import math

import numpy as np
import pytest

from binmap import bench, codec, embednet as en, histfilter as hf, synthworld as sw
from binmap.geometry import Pose
from binmap.rng import Rng


def test_match_report_invariant():
    bench.MatchReport(0.3, 0.6, 1.0)
    with pytest.raises(ValueError):
        bench.MatchReport(0.7, 0.6, 1.0)
    with pytest.raises(ValueError):
        bench.MatchReport(-0.1, 0.5, 1.0)


def test_median_definition():
    assert bench._percentile_median([3.0, 1.0, 2.0]) == 2.0
    assert bench._percentile_median([4.0, 1.0, 2.0, 3.0]) == 2.5
    assert math.isnan(bench._percentile_median([]))


def test_topk_random_scores_match_chance_rate():
    # argmax of i.i.d. scores is uniform over the volume: top-1 hits with
    # probability 1/cells (the gt pixel), independent of the rotation axis
    from binmap.training import topk_counts
    rng = Rng(1)
    n = 4000
    s = 9
    A = 3
    scores = rng.uniform((n, A, s, s)).astype(np.float32)
    gt = np.stack([rng.integers(0, s, (n,)), rng.integers(0, s, (n,))], axis=1)
    top1, top9 = topk_counts(scores, gt)
    p = 1.0 / (s * s)
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(top1 - n * p) <= 3 * sigma
    assert top9 >= top1


WORLD = sw.WorldConfig(seed=41, width=192, height=192, sweep_extent=0.4,
                       gps_sigma=0.15)
NET = en.NetConfig(embed_channels=(2, 3, 4, 5), embed_dim=3,
                   comp_channels=(3, 4, 4, 5), groups=2, group_size=4)


@pytest.fixture(scope="module")
def tiny_world():
    m = sw.generate_map(WORLD)
    store = en.init_params(NET, seed=13)
    return m, store


def test_make_condition_lossless_uses_raster_baseline(tiny_world):
    m, store = tiny_world
    cond = bench.make_condition("lossless", store, NET, m, compressed=False)
    expect = codec.encode_raster_bits(m) / (m.spec.width * m.spec.height)
    assert abs(cond.bpp - expect) < 1e-12
    assert cond.compressed_map is None


def test_make_condition_compressed_has_code(tiny_world):
    m, store = tiny_world
    cond = bench.make_condition("match-8x", store, NET, m, compressed=True)
    assert cond.compressed_map is not None
    assert cond.bpp == codec.bpp(cond.compressed_map, m.spec.width * m.spec.height)
    # the code decodes losslessly
    code = codec.decode_map(cond.compressed_map)
    assert code.width == m.spec.width // NET.downsample


def test_eval_matching_runs_and_bounds(tiny_world):
    m, store = tiny_world
    ds = sw.make_dataset(m, WORLD, 24)
    mr = bench.eval_matching(store, NET, ds, 0.5, compressed=False)
    assert 0.0 <= mr.top1_px <= mr.top9_px <= 1.0


def test_eval_localization_zero_noise_smoke(tiny_world):
    m, store = tiny_world
    cfg0 = sw.WorldConfig(seed=41, width=192, height=192, sweep_extent=0.4,
                          intensity_noise=0.0, sweep_dropout=0.0)
    drive = sw.generate_drive(m, cfg0, 24, drive_key=0, zero_noise=True)
    source = hf.UncompressedMapSource(m, store, NET)

    def factory():
        return hf.LocalizationSession(source, store, NET,
                                      hf.FilterConfig(gps=hf.GpsConfig(0.05)))

    lr = bench.eval_localization(factory, [drive], bpp=1.0)
    # drive shorter than a segment: no segments counted, medians still valid
    assert lr.n_segments == 0
    assert math.isfinite(lr.median_total)


def test_eval_localization_segments_and_failures(tiny_world):
    m, store = tiny_world

    class FakeResult:
        def __init__(self, err):
            self.total_err = err
            self.lat_err = err / 2
            self.lon_err = err / 2
            self.estimate = Pose(0, 0, 0)
            self.diverged = False
            self.entropy = 0.0

    class FakeSession:
        pass

    import binmap.bench as bb

    def fake_run(session, drive, trace_path=None):
        # two segments: first clean, second fails after step 150
        errs = [0.02] * bb.SEGMENT_STEPS + [0.02] * 150 + [1.5] * 50
        return [FakeResult(e) for e in errs]

    orig = bb.histfilter.run_drive
    bb.histfilter.run_drive = fake_run
    try:
        lr = bench.eval_localization(lambda: FakeSession(), [object()], bpp=0.0)
    finally:
        bb.histfilter.run_drive = orig
    assert lr.n_segments == 2
    assert lr.failure_rates[20] == 0.0
    assert lr.failure_rates[100] == 0.0
    assert lr.failure_rates[200] == 0.5
    # total >= max(lat, lon) for the Euclidean decomposition
    assert lr.median_total >= max(lr.median_lat, lr.median_lon)


def test_compare_conditions_writes_tables(tmp_path, tiny_world):
    m, store = tiny_world
    ds = sw.make_dataset(m, WORLD, 16)
    conds = [bench.make_condition("lossless", store, NET, m, compressed=False),
             bench.make_condition("match-8x", store, NET, m, compressed=True)]
    rows = bench.compare_conditions(conds, m, ds, [], out_dir=str(tmp_path))
    assert len(rows) == 2
    table = (tmp_path / "comparison.csv").read_text().splitlines()
    assert table[0].startswith("condition,bpp,top1_px")
    assert len(table) == 3
    plot = (tmp_path / "rate_vs_accuracy.csv").read_text().splitlines()
    assert len(plot) == 3


def test_compare_conditions_deterministic(tmp_path, tiny_world):
    m, store = tiny_world
    ds = sw.make_dataset(m, WORLD, 16)
    conds = [bench.make_condition("match-8x", store, NET, m, compressed=True)]
    r1 = bench.compare_conditions(conds, m, ds, [], out_dir=str(tmp_path / "a"))
    r2 = bench.compare_conditions(conds, m, ds, [], out_dir=str(tmp_path / "b"))
    assert (tmp_path / "a" / "comparison.csv").read_bytes() == \
           (tmp_path / "b" / "comparison.csv").read_bytes()
    assert r1[0].match.top1_px == r2[0].match.top1_px
