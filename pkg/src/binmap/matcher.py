"""Pose-candidate matching between an online embedding and a map embedding.

The online embedding is rotated to each candidate heading (bilinear
resampling about its anchor cell), then correlated against the map embedding
over all translations at once via FFT. Raw inner-product scores are
normalized with a softmax over the whole candidate volume.

Geometry: the online raster's anchor cell (h//2, w//2) marks the vehicle
position, so a valid-plane offset d means "anchor sits on map cell d+anchor".
Candidate translations must land on integer map cells; the synthetic world
and the filter keep their grids aligned so this is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .geometry import GridSpec, Pose, world_to_cell


def default_rotations(n: int = 11, half_range_deg: float = 5.0) -> np.ndarray:
    """Candidate heading offsets: `n` angles uniform over +-half_range."""
    half = np.deg2rad(half_range_deg)
    return np.linspace(-half, half, n)


@dataclass
class RotationSet:
    angles: np.ndarray = field(default_factory=default_rotations)

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.angles.size == 0:
            raise ValueError("rotation set must be nonempty")
        if np.any(np.diff(self.angles) < 0):
            raise ValueError("rotation angles must be sorted ascending")

    def __len__(self):
        return self.angles.size


@dataclass
class ScoreVolume:
    """Scores and softmax probabilities over (rotation, y, x) candidates."""

    scores: Tensor      # (A, ny, nx)
    probs: Tensor       # same shape, sums to 1
    spec: GridSpec      # world grid of the (y, x) candidate translations
    center: Pose        # search-region center pose
    angles: np.ndarray  # absolute candidate headings

    @property
    def shape(self):
        return self.scores.shape

    def argmax_index(self) -> tuple[int, int, int]:
        flat = int(np.argmax(self.probs.data))
        a, rest = divmod(flat, self.shape[1] * self.shape[2])
        return (a, rest // self.shape[2], rest % self.shape[2])


def rotate_embedding(emb, angle: float, center: tuple[float, float] | None = None) -> Tensor:
    """Rotate a (C, H, W) embedding by `angle` about `center` (default: the
    tensor center). Out-of-support samples are zero."""
    t = ag.as_tensor(emb)
    single = t.ndim == 3
    if single:
        t = Tensor(t.data[None]) if not t.requires_grad else _lift(t)
    out = ag.rotate_bilinear(t, np.asarray([float(angle)]), center=center)
    return _squeeze2(out) if single else out


def _lift(t: Tensor) -> Tensor:
    out_data = t.data[None]

    def backward(g):
        t.accumulate_grad(g[0])

    from .autograd.tensor import make_result
    return make_result(out_data, (t,), backward)


def _squeeze2(t: Tensor) -> Tensor:
    out_data = t.data[0, 0]

    def backward(g):
        t.accumulate_grad(g[None, None])

    from .autograd.tensor import make_result
    return make_result(out_data, (t,), backward)


def correlate_fft(map_emb, online_emb) -> Tensor:
    """Valid-mode channelwise-summed cross-correlation of two (C, H, W) /
    (C, h, w) embeddings; returns the (H-h+1, W-w+1) score plane."""
    m = ag.as_tensor(map_emb)
    k = ag.as_tensor(online_emb)
    if m.ndim != 3 or k.ndim != 3:
        raise ValueError("correlate_fft expects (C, H, W) tensors")
    if m.shape[0] != k.shape[0]:
        raise ValueError("channel counts must agree")
    m4 = _lift(m) if m.requires_grad else Tensor(m.data[None])
    k5 = Tensor(k.data[None, None])
    if k.requires_grad:
        k5 = _lift(_lift(k))
    out = ag.correlate_valid(m4, k5)
    return _squeeze2(out)


def score_windows(map_emb: Tensor, online_emb: Tensor, angles,
                  rot_center=None, window=None) -> Tensor:
    """Batched rotation + correlation core.

    map_emb (B,C,H,W), online_emb (B,C,h,w), angles (A,) or (B,A);
    window = (r0, c0, wh, ww) crops the valid plane. Returns (B,A,wy,wx).
    """
    rot = ag.rotate_bilinear(online_emb, angles, center=rot_center)
    scores = ag.correlate_valid(map_emb, rot)
    if window is not None:
        r0, c0, wh, ww = window
        scores = ag.crop2d(scores, r0, c0, wh, ww)
    return scores


def match(map_emb, map_spec: GridSpec, online_emb, rotations: RotationSet,
          search_spec: GridSpec, center: Pose | None = None) -> ScoreVolume:
    """Score every (rotation, translation) candidate of the search grid.

    map_emb: (C, H, W) embedding of a map window described by map_spec;
    online_emb: (C, h, w) embedding of the online raster whose anchor cell
    (h//2, w//2) is the vehicle position; rotations: absolute candidate
    headings; search_spec: world grid of candidate vehicle positions, which
    must lie on map cells with the whole online raster in support.
    """
    m = ag.as_tensor(map_emb)
    o = ag.as_tensor(online_emb)
    if m.shape[0] != o.shape[0]:
        raise ValueError("embedding channel counts must agree")
    h, w = o.shape[1], o.shape[2]
    ay, ax = h // 2, w // 2
    if abs(map_spec.resolution - search_spec.resolution) > 1e-9:
        raise ValueError("search grid resolution must match the map window")
    cx0, cy0 = world_to_cell(map_spec, search_spec.origin)
    if abs(cx0 - round(cx0)) > 1e-6 or abs(cy0 - round(cy0)) > 1e-6:
        raise ValueError("search grid is not aligned to map cells")
    r0 = int(round(cy0)) - ay
    c0 = int(round(cx0)) - ax
    ny = m.shape[1] - h + 1
    nx = m.shape[2] - w + 1
    if r0 < 0 or c0 < 0 or r0 + search_spec.height > ny or c0 + search_spec.width > nx:
        raise ValueError("search grid exceeds the valid correlation region")

    m4 = _lift(m) if m.requires_grad else Tensor(m.data[None])
    o4 = _lift(o) if o.requires_grad else Tensor(o.data[None])
    scores4 = score_windows(m4, o4, rotations.angles, rot_center=(ay, ax),
                            window=(r0, c0, search_spec.height, search_spec.width))
    scores = _drop_batch(scores4)
    probs = ag.softmax_flat(scores)
    if center is None:
        cx = search_spec.origin[0] + (search_spec.width - 1) / 2 * search_spec.resolution
        cy = search_spec.origin[1] + (search_spec.height - 1) / 2 * search_spec.resolution
        mid = rotations.angles[len(rotations) // 2]
        center = Pose(cx, cy, float(mid))
    return ScoreVolume(scores, probs, search_spec, center, rotations.angles.copy())


def _drop_batch(t: Tensor) -> Tensor:
    out_data = t.data[0]

    def backward(g):
        t.accumulate_grad(g[None])

    from .autograd.tensor import make_result
    return make_result(out_data, (t,), backward)
