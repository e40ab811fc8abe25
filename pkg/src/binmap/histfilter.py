"""Recursive Bayes histogram filter over a local (x, y, theta) pose grid.

The belief is a discretized posterior over a small window of map-aligned
cells around the current estimate. Each step: motion prediction transports
the belief to a recentered grid (Gaussian-weighted sum, truncated to the
window), the GPS and matching likelihoods multiply in, and a soft-argmax
extracts the continuous pose estimate.

Observation updates are stored as named likelihood factors and folded into
the belief in canonical (sorted-name) order, so applying GPS and matching
updates in either order yields bit-identical posteriors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import embednet, matcher
from .autograd import Tensor
from .codec import CompressedMap, decode_map
from .geometry import GridSpec, MapRaster, Pose, VelocityObs, normalize_angle, pose_compose


class FilterDivergence(Exception):
    """Belief mass vanished; the filter cannot continue."""


@dataclass(frozen=True)
class MotionModelConfig:
    """Diagonal covariance of the per-step dynamics Gaussian (world axes)."""

    sigma_x: float = 0.03
    sigma_y: float = 0.03
    sigma_theta: float = 0.01

    def __post_init__(self):
        if min(self.sigma_x, self.sigma_y, self.sigma_theta) <= 0:
            raise ValueError("motion sigmas must be positive")


@dataclass(frozen=True)
class GpsConfig:
    sigma: float = 0.3

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("GPS sigma must be positive")


@dataclass(frozen=True)
class GpsObs:
    gx: float
    gy: float


@dataclass
class BeliefGrid:
    """Nonnegative weights over (theta bin, row, col) cells.

    `base` carries the prediction; `factors` holds observation likelihoods,
    multiplied in sorted-key order by `values`, which always normalizes to 1.
    """

    base: np.ndarray                     # (A, ny, nx) float64
    spec: GridSpec                       # x/y grid (origin = cell (0,0) center)
    theta_offsets: np.ndarray            # (A,) radians relative to center.theta
    center: Pose
    factors: dict = field(default_factory=dict)

    @property
    def theta_axis(self) -> np.ndarray:
        return np.asarray([normalize_angle(self.center.theta + o) for o in self.theta_offsets])

    @property
    def values(self) -> np.ndarray:
        v = self.base
        for key in sorted(self.factors):
            v = v * self.factors[key]
        s = v.sum()
        if not s > 0 or not math.isfinite(s):
            raise FilterDivergence("belief mass is zero or non-finite")
        return v / s

    def cell_world_xy(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.spec.origin[0] + np.arange(self.spec.width) * self.spec.resolution
        ys = self.spec.origin[1] + np.arange(self.spec.height) * self.spec.resolution
        return np.meshgrid(xs, ys)


def make_belief(center: Pose, n_cells: int, n_theta: int, resolution: float,
                theta_half_range: float, init_sigma: float = 0.1) -> BeliefGrid:
    """Gaussian-initialized belief on a grid centered at `center`."""
    half = (n_cells - 1) / 2.0
    origin = (center.tx - half * resolution, center.ty - half * resolution)
    spec = GridSpec(n_cells, n_cells, resolution, origin)
    offsets = np.zeros(1) if n_theta == 1 else np.linspace(-theta_half_range, theta_half_range, n_theta)
    xs, ys = np.meshgrid(np.arange(n_cells) - half, np.arange(n_cells) - half)
    d2 = (xs ** 2 + ys ** 2) * resolution ** 2
    plane = np.exp(-d2 / (2 * init_sigma ** 2))
    theta_w = np.exp(-offsets ** 2 / (2 * max(theta_half_range / 2, 1e-6) ** 2))
    base = theta_w[:, None, None] * plane[None]
    return BeliefGrid(base / base.sum(), spec, offsets, center)


def predict(bel: BeliefGrid, v: VelocityObs, cfg: MotionModelConfig,
            new_center: Pose | None = None) -> BeliefGrid:
    """Motion update: Gaussian-weighted sum over all prior cells, evaluated
    on a grid recentered at `new_center` (default: composed mean pose),
    truncated to the window, renormalized."""
    V = bel.values  # folds pending observation factors
    A, ny, nx = V.shape
    res = bel.spec.resolution
    if new_center is None:
        new_center = pose_compose(bel.center, v)
    half_y, half_x = (ny - 1) / 2.0, (nx - 1) / 2.0
    origin = (new_center.tx - half_x * res, new_center.ty - half_y * res)
    spec = GridSpec(nx, ny, res, origin)

    # target/source cell offsets from their respective centers
    oy = (np.arange(ny) - half_y) * res
    ox = (np.arange(nx) - half_x) * res
    base_dt = normalize_angle(new_center.theta - bel.center.theta - v.vtheta)
    dth = np.asarray([[normalize_angle(a - ap + base_dt)
                       for ap in bel.theta_offsets] for a in bel.theta_offsets])
    wt = np.exp(-dth ** 2 / (2 * cfg.sigma_theta ** 2))

    out = np.zeros_like(V)
    planes = np.empty_like(V)
    for ai in range(A):
        th = bel.center.theta + bel.theta_offsets[ai]
        mx = bel.center.tx + math.cos(th) * v.vx - math.sin(th) * v.vy
        my = bel.center.ty + math.sin(th) * v.vx + math.cos(th) * v.vy
        ddx = (new_center.tx - mx) + ox[:, None] - ox[None, :]
        ddy = (new_center.ty - my) + oy[:, None] - oy[None, :]
        wx = np.exp(-ddx ** 2 / (2 * cfg.sigma_x ** 2))
        wy = np.exp(-ddy ** 2 / (2 * cfg.sigma_y ** 2))
        planes[ai] = wy @ V[ai] @ wx.T
    out = np.einsum("ab,byx->ayx", wt, planes)
    s = out.sum()
    if not s > 0 or not math.isfinite(s):
        raise FilterDivergence("prediction left no probability mass on the grid")
    return BeliefGrid(out / s, spec, bel.theta_offsets.copy(), new_center)


def update_gps(bel: BeliefGrid, obs: GpsObs, cfg: GpsConfig) -> BeliefGrid:
    """Multiply in exp(-||cell - g||^2 / (2 sigma^2)); same for every theta."""
    X, Y = bel.cell_world_xy()
    lik = np.exp(-((X - obs.gx) ** 2 + (Y - obs.gy) ** 2) / (2 * cfg.sigma ** 2))
    factors = dict(bel.factors)
    factors["gps"] = factors.get("gps", 1.0) * lik[None]
    return replace(bel, factors=factors)


def update_lidar(bel: BeliefGrid, volume: matcher.ScoreVolume) -> BeliefGrid:
    """Multiply in the matching probability volume (cellwise)."""
    probs = volume.probs.data if isinstance(volume.probs, Tensor) else np.asarray(volume.probs)
    if probs.shape != bel.base.shape:
        raise ValueError(f"volume shape {probs.shape} != belief shape {bel.base.shape}")
    if (abs(volume.spec.origin[0] - bel.spec.origin[0]) > 1e-6
            or abs(volume.spec.origin[1] - bel.spec.origin[1]) > 1e-6):
        raise ValueError("volume grid is not aligned with the belief grid")
    factors = dict(bel.factors)
    factors["lidar"] = factors.get("lidar", 1.0) * probs.astype(np.float64)
    return replace(bel, factors=factors)


def soft_argmax(bel: BeliefGrid, alpha: float = 2.0) -> Pose:
    """Temperature-weighted mean pose; theta uses the circular mean."""
    if alpha < 1:
        raise ValueError("soft-argmax temperature must be >= 1")
    w = bel.values ** alpha
    s = w.sum()
    if not s > 0:
        raise FilterDivergence("soft-argmax over zero mass")
    w = w / s
    X, Y = bel.cell_world_xy()
    wxy = w.sum(axis=0)
    tx = float((wxy * X).sum())
    ty = float((wxy * Y).sum())
    wth = w.sum(axis=(1, 2))
    th_abs = bel.center.theta + bel.theta_offsets
    theta = math.atan2(float((wth * np.sin(th_abs)).sum()),
                       float((wth * np.cos(th_abs)).sum()))
    return Pose(tx, ty, theta)


def belief_entropy(bel: BeliefGrid) -> float:
    v = bel.values.reshape(-1)
    pos = v > 0
    return float(-(v[pos] * np.log(v[pos])).sum())


def boundary_mass(bel: BeliefGrid) -> float:
    v = bel.values
    inner = v[:, 1:-1, 1:-1].sum() if min(v.shape[1], v.shape[2]) > 2 else 0.0
    return float(v.sum() - inner)


# ---------------------------------------------------------------------------
# map embedding sources


class UncompressedMapSource:
    """Serves windows of g(M) computed once over the full raster."""

    def __init__(self, raster: MapRaster, store: embednet.ParamStore, cfg: embednet.NetConfig):
        self.spec = raster.spec
        emb = embednet.embed(Tensor(raster.values[None, None]), store, "g", cfg)
        self._emb = emb.data[0]

    def window(self, row0: int, col0: int, h: int, w: int) -> np.ndarray:
        if row0 < 0 or col0 < 0 or row0 + h > self._emb.shape[1] or col0 + w > self._emb.shape[2]:
            raise ValueError("embedding window out of map bounds")
        return self._emb[:, row0:row0 + h, col0:col0 + w]


class DecodedMapSource:
    """Serves windows of the embedding decoded from a compressed code.

    mode="full" decodes the entire code once; mode="tile" decodes a padded
    local code tile per request (the decoder's receptive field is small, so
    a few code cells of padding reproduce the interior exactly).
    """

    def __init__(self, cm: CompressedMap, store: embednet.ParamStore,
                 cfg: embednet.NetConfig, mode: str = "full", pad_code_cells: int = 6):
        self.spec = cm.map_spec
        self._cfg = cfg
        self._store = store
        self._d = cm.downsample
        self._code = decode_map(cm)
        self._mode = mode
        self._pad = pad_code_cells
        self._full: np.ndarray | None = None

    def _decode_full(self) -> np.ndarray:
        if self._full is None:
            out = embednet.decode(self._code, self._store, self._cfg)
            self._full = out.data[0]
        return self._full

    def window(self, row0: int, col0: int, h: int, w: int) -> np.ndarray:
        if self._mode == "full":
            emb = self._decode_full()
            return emb[:, row0:row0 + h, col0:col0 + w]
        d = self._d
        cr0 = max(row0 // d - self._pad, 0)
        cc0 = max(col0 // d - self._pad, 0)
        cr1 = min(-(-(row0 + h) // d) + self._pad, self._code.height)
        cc1 = min(-(-(col0 + w) // d) + self._pad, self._code.width)
        bits = self._code.bits[:, cr0:cr1, cc0:cc1].astype(np.float32)
        tile = embednet.decode(Tensor(bits[None]), self._store, self._cfg).data[0]
        r = row0 - cr0 * d
        c = col0 - cc0 * d
        return tile[:, r:r + h, c:c + w]


# ---------------------------------------------------------------------------
# the online localization loop


@dataclass(frozen=True)
class FilterConfig:
    resolution: float = 0.05
    half_extent: float = 0.5          # meters each side -> 21 cells at 5 cm
    n_theta: int = 11
    theta_half_range: float = math.radians(5.0)
    motion: MotionModelConfig = MotionModelConfig()
    gps: GpsConfig = GpsConfig()
    alpha: float = 2.0
    init_sigma: float = 0.1
    boundary_divergence: float = 0.5  # flag when this much mass sits on the rim

    @property
    def n_cells(self) -> int:
        return 2 * int(round(self.half_extent / self.resolution)) + 1


@dataclass
class StepResult:
    estimate: Pose
    diverged: bool
    boundary_mass: float
    entropy: float
    lat_err: float | None = None
    lon_err: float | None = None
    total_err: float | None = None


class LocalizationSession:
    """Drives the filter over a stream of (velocity, GPS, sweep) observations."""

    def __init__(self, map_source, store: embednet.ParamStore, cfg: embednet.NetConfig,
                 fcfg: FilterConfig = FilterConfig()):
        self.map_source = map_source
        self.store = store
        self.net_cfg = cfg
        self.fcfg = fcfg
        self.belief: BeliefGrid | None = None
        self.estimate: Pose | None = None

    def _snap(self, pose: Pose) -> Pose:
        """Snap xy onto the map cell lattice so FFT scores align with cells."""
        ms = self.map_source.spec
        cx = round((pose.tx - ms.origin[0]) / ms.resolution)
        cy = round((pose.ty - ms.origin[1]) / ms.resolution)
        return Pose(ms.origin[0] + cx * ms.resolution,
                    ms.origin[1] + cy * ms.resolution, pose.theta)

    def start(self, initial_pose: Pose) -> None:
        c = self._snap(initial_pose)
        self.belief = make_belief(c, self.fcfg.n_cells, self.fcfg.n_theta,
                                  self.fcfg.resolution, self.fcfg.theta_half_range,
                                  self.fcfg.init_sigma)
        self.estimate = c

    def _match_volume(self, bel: BeliefGrid, sweep: np.ndarray) -> matcher.ScoreVolume:
        online = embednet.embed(Tensor(sweep[None, None]), self.store, "f", self.net_cfg)
        online3 = Tensor(online.data[0])
        h, w = sweep.shape
        ay, ax = h // 2, w // 2
        ms = self.map_source.spec
        c0f = (bel.spec.origin[0] - ms.origin[0]) / ms.resolution
        r0f = (bel.spec.origin[1] - ms.origin[1]) / ms.resolution
        r0, c0 = int(round(r0f)), int(round(c0f))
        win_r0, win_c0 = r0 - ay, c0 - ax
        win_h = bel.spec.height + h - 1
        win_w = bel.spec.width + w - 1
        emb_win = self.map_source.window(win_r0, win_c0, win_h, win_w)
        win_spec = GridSpec(win_w, win_h, ms.resolution,
                            (ms.origin[0] + win_c0 * ms.resolution,
                             ms.origin[1] + win_r0 * ms.resolution))
        rot = matcher.RotationSet(bel.center.theta + bel.theta_offsets)
        return matcher.match(Tensor(np.ascontiguousarray(emb_win)), win_spec,
                             online3, rot, bel.spec, center=bel.center)

    def step(self, velocity: VelocityObs, gps_obs: GpsObs | None,
             sweep: np.ndarray, gt_pose: Pose | None = None) -> StepResult:
        if self.belief is None:
            raise RuntimeError("session not started")
        target = self._snap(pose_compose(self.estimate, velocity))
        bel = predict(self.belief, velocity, self.fcfg.motion, new_center=target)
        volume = self._match_volume(bel, sweep)
        if gps_obs is not None:
            bel = update_gps(bel, gps_obs, self.fcfg.gps)
        bel = update_lidar(bel, volume)
        est = soft_argmax(bel, self.fcfg.alpha)
        bm = boundary_mass(bel)
        ent = belief_entropy(bel)
        self.belief = bel
        self.estimate = est
        res = StepResult(est, bm > self.fcfg.boundary_divergence, bm, ent)
        if gt_pose is not None:
            ex, ey = est.tx - gt_pose.tx, est.ty - gt_pose.ty
            c, s = math.cos(gt_pose.theta), math.sin(gt_pose.theta)
            res.lon_err = c * ex + s * ey
            res.lat_err = -s * ex + c * ey
            res.total_err = math.hypot(ex, ey)
        return res


TRACE_HEADER = ("step,gt_tx,gt_ty,gt_theta,est_tx,est_ty,est_theta,"
                "lat_err,lon_err,total_err,entropy,diverged")


def run_drive(session: LocalizationSession, drive, trace_path=None) -> list[StepResult]:
    """Run a full drive; optionally emit the per-step CSV trace."""
    session.start(drive.start_pose)
    rows = []
    results = []
    for t in range(len(drive.gt_poses)):
        res = session.step(drive.velocity_obs[t], drive.gps_obs[t],
                           drive.sweeps[t], gt_pose=drive.gt_poses[t])
        results.append(res)
        gt = drive.gt_poses[t]
        est = res.estimate
        rows.append(
            f"{t},{gt.tx:.9g},{gt.ty:.9g},{gt.theta:.9g},"
            f"{est.tx:.9g},{est.ty:.9g},{est.theta:.9g},"
            f"{res.lat_err:.9g},{res.lon_err:.9g},{res.total_err:.9g},"
            f"{res.entropy:.9g},{int(res.diverged)}"
        )
    if trace_path is not None:
        with open(trace_path, "w") as fh:
            fh.write(TRACE_HEADER + "\n")
            fh.write("\n".join(rows) + "\n")
    return results
