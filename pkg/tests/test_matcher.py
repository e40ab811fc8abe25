import math

import numpy as np
import pytest

from binmap import matcher
from binmap.autograd import Tensor, cross_entropy, softmax_flat
from binmap.geometry import GridSpec


RR = np.random.default_rng(77)


def test_rotation_set_defaults():
    rot = matcher.RotationSet()
    assert len(rot) == 11
    assert abs(rot.angles[0] + math.radians(5)) < 1e-12
    assert abs(rot.angles[-1] - math.radians(5)) < 1e-12
    assert abs(rot.angles[5]) < 1e-12


def test_rotation_set_rejects_unsorted():
    with pytest.raises(ValueError):
        matcher.RotationSet(np.asarray([0.1, -0.1]))


def test_rotate_embedding_zero_identity():
    emb = RR.normal(size=(3, 9, 9)).astype(np.float32)
    out = matcher.rotate_embedding(emb, 0.0)
    assert np.allclose(out.data, emb, atol=1e-6)


def test_rotate_embedding_quarter_turn():
    emb = np.arange(25, dtype=np.float32).reshape(1, 5, 5)
    out = matcher.rotate_embedding(emb, math.pi / 2)
    assert np.allclose(out.data[0], np.rot90(emb[0], k=3), atol=1e-4)


def test_correlate_fft_delta_kernel():
    m = RR.normal(size=(1, 8, 8)).astype(np.float32)
    k = np.zeros((1, 1, 1), np.float32)
    k[0, 0, 0] = 1.0
    out = matcher.correlate_fft(m, k)
    assert np.allclose(out.data, m[0], atol=1e-5)


def test_correlate_fft_matches_brute_force():
    for _ in range(5):
        m = RR.normal(size=(2, 20, 18)).astype(np.float32)
        k = RR.normal(size=(2, 6, 7)).astype(np.float32)
        out = matcher.correlate_fft(m, k).data
        ny, nx = 20 - 6 + 1, 18 - 7 + 1
        ref = np.zeros((ny, nx))
        for dy in range(ny):
            for dx in range(nx):
                ref[dy, dx] = (m[:, dy:dy + 6, dx:dx + 7].astype(np.float64)
                               * k.astype(np.float64)).sum()
        assert np.abs(out - ref).max() / np.abs(ref).max() < 1e-4


def test_correlate_fft_channel_mismatch():
    with pytest.raises(ValueError):
        matcher.correlate_fft(np.zeros((2, 8, 8), np.float32),
                              np.zeros((3, 4, 4), np.float32))


def _match_setup(map_cells=32, patch=8, search=9):
    """Plant the online patch inside a map embedding at a known cell."""
    emb = RR.normal(size=(2, map_cells, map_cells)).astype(np.float32)
    res = 0.05
    map_spec = GridSpec(map_cells, map_cells, res, (0.0, 0.0))
    anchor = patch // 2
    vrow, vcol = 15, 13  # vehicle cell in the map
    online = emb[:, vrow - anchor:vrow + patch - anchor,
                 vcol - anchor:vcol + patch - anchor].copy()
    half = search // 2
    search_spec = GridSpec(search, search, res,
                           ((vcol - half) * res, (vrow - half) * res))
    return emb, map_spec, online, search_spec, (vrow, vcol)


def test_match_planted_peak():
    emb, map_spec, online, search_spec, (vrow, vcol) = _match_setup()
    rot = matcher.RotationSet(np.linspace(-0.05, 0.05, 5))
    vol = matcher.match(Tensor(emb), map_spec, Tensor(online), rot, search_spec)
    a, wy, wx = vol.argmax_index()
    assert a == 2  # zero-rotation candidate
    assert (wy, wx) == (search_spec.height // 2, search_spec.width // 2)


def test_match_translation_equivariance():
    emb, map_spec, online, search_spec, (vrow, vcol) = _match_setup()
    rot = matcher.RotationSet(np.asarray([0.0]))
    for dy, dx in ((0, 0), (1, 2), (-2, 1), (3, -3)):
        shifted = emb[:, vrow + dy - 4:vrow + dy + 4,
                      vcol + dx - 4:vcol + dx + 4].copy()
        vol = matcher.match(Tensor(emb), map_spec, Tensor(shifted), rot, search_spec)
        _, wy, wx = vol.argmax_index()
        assert (wy - search_spec.height // 2, wx - search_spec.width // 2) == (dy, dx)


def test_match_single_rotation_reduces_to_correlate():
    emb, map_spec, online, search_spec, _ = _match_setup()
    rot = matcher.RotationSet(np.asarray([0.0]))
    vol = matcher.match(Tensor(emb), map_spec, Tensor(online), rot, search_spec)
    plane = matcher.correlate_fft(emb, online).data
    # match crops the valid plane to the search window
    cx0, cy0 = 13 - 4 - 4, 15 - 4 - 4
    ref = plane[cy0:cy0 + 9, cx0:cx0 + 9]
    assert np.allclose(vol.scores.data[0], ref, atol=2e-4 * np.abs(ref).max())
    ref_probs = softmax_flat(Tensor(ref)).data
    assert np.allclose(vol.probs.data[0], ref_probs, atol=1e-6)


def test_match_probs_normalized():
    emb, map_spec, online, search_spec, _ = _match_setup()
    vol = matcher.match(Tensor(emb), map_spec, Tensor(online),
                        matcher.RotationSet(), search_spec)
    assert abs(vol.probs.data.sum() - 1.0) < 1e-6


def test_match_rejects_misaligned_grid():
    emb, map_spec, online, _, _ = _match_setup()
    bad = GridSpec(9, 9, 0.05, (0.5125, 0.55))  # off-lattice origin
    with pytest.raises(ValueError):
        matcher.match(Tensor(emb), map_spec, Tensor(online),
                      matcher.RotationSet(), bad)


def test_match_rejects_window_outside_valid_region():
    emb, map_spec, online, _, _ = _match_setup()
    bad = GridSpec(9, 9, 0.05, (0.0, 0.0))  # too close to the map edge
    with pytest.raises(ValueError):
        matcher.match(Tensor(emb), map_spec, Tensor(online),
                      matcher.RotationSet(np.asarray([0.0])), bad)


def test_match_is_differentiable():
    emb, map_spec, online, search_spec, _ = _match_setup(16, 4, 5)
    m = Tensor(RR.normal(size=(1, 16, 16)).astype(np.float32) * 0.4, requires_grad=True)
    o = Tensor(RR.normal(size=(1, 4, 4)).astype(np.float32) * 0.4, requires_grad=True)
    spec = GridSpec(5, 5, 0.05, (6 * 0.05, 6 * 0.05))
    mspec = GridSpec(16, 16, 0.05, (0.0, 0.0))
    rot = matcher.RotationSet(np.asarray([-0.1, 0.0, 0.1]))

    def fn():
        vol = matcher.match(m, mspec, o, rot, spec)
        return cross_entropy(vol.probs, 31)

    from .test_autograd import check_grads
    check_grads(fn, [m, o])


def test_score_volume_shape_and_center():
    emb, map_spec, online, search_spec, (vrow, vcol) = _match_setup()
    rot = matcher.RotationSet(np.linspace(-0.1, 0.1, 3))
    vol = matcher.match(Tensor(emb), map_spec, Tensor(online), rot, search_spec)
    assert vol.shape == (3, 9, 9)
    assert abs(vol.center.tx - vcol * 0.05) < 1e-9
    assert abs(vol.center.ty - vrow * 0.05) < 1e-9
