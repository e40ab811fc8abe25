"""Procedural worlds and drives standing in for real survey data.

A world is an intensity raster with road-like structure: smooth ground
texture, bright dashed lane markings along both axes, and keypoint-like
blobs. Intensities are quantized to 8-bit levels so a lossless raster
baseline rate is well defined. Drives are smooth curvature walks with noisy
velocity/GPS observations and simulated online sweeps (bilinear crops in the
vehicle frame plus noise and dropout).

Everything is a pure function of (seed, config): see `binmap.rng` for the
generator. Substreams: map=1, drive trajectory=2+i, velocity noise=3+..,
handled via `Rng.spawn` keys documented inline.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (GridSpec, MapRaster, Pose, VelocityObs, normalize_angle,
                       pose_compose, pose_relative)
from .histfilter import GpsObs
from .rng import Rng


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 0
    width: int = 384                 # cells
    height: int = 384
    resolution: float = 0.05         # m/cell
    lane_spacing: float = 3.0        # m between marking lines
    marking_width: float = 0.1       # m
    marking_density: float = 1.0     # 0 disables markings and blobs
    marking_dropout: float = 0.15    # fraction of dash segments removed
    blob_density: float = 0.35       # blobs per m^2 (scaled by marking_density)
    texture_amp: float = 0.25
    intensity_noise: float = 0.02    # sweep additive noise sigma
    sweep_dropout: float = 0.1       # sweep cell dropout probability
    sweep_extent: float = 12.0       # half-extent of the online raster, m
    speed: float = 0.5               # m per filter step
    gps_sigma: float = 0.3
    vel_sigma_xy: float = 0.01
    vel_sigma_theta: float = 0.005

    @property
    def sweep_cells(self) -> int:
        return 2 * int(round(self.sweep_extent / self.resolution))


@dataclass
class Drive:
    """Ground truth plus per-step observations; all lists share one length."""

    start_pose: Pose
    gt_poses: list
    velocity_obs: list
    gps_obs: list
    sweeps: list


def _value_noise(rng: Rng, h: int, w: int, lattice: int) -> np.ndarray:
    """Bilinear-interpolated lattice noise in [0, 1]."""
    gh, gw = h // lattice + 2, w // lattice + 2
    grid = rng.uniform((gh, gw))
    ys = np.arange(h) / lattice
    xs = np.arange(w) / lattice
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[np.ix_(y0, x0)]
    g01 = grid[np.ix_(y0, x0 + 1)]
    g10 = grid[np.ix_(y0 + 1, x0)]
    g11 = grid[np.ix_(y0 + 1, x0 + 1)]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx) + g11 * fy * fx)


def generate_map(cfg: WorldConfig) -> MapRaster:
    """Deterministic intensity map; values are exact multiples of 1/255."""
    rng = Rng(cfg.seed).spawn(1)
    h, w, res = cfg.height, cfg.width, cfg.resolution
    img = cfg.texture_amp * (0.7 * _value_noise(rng.spawn(0), h, w, 24)
                             + 0.3 * _value_noise(rng.spawn(1), h, w, 8))

    if cfg.marking_density > 0:
        mark_rng = rng.spawn(2)
        spacing = max(int(round(cfg.lane_spacing / res)), 4)
        half_mark = max(int(round(cfg.marking_width / res / 2)), 1)
        base_period = max(int(round(1.0 / res)), 4)          # ~1 m dashes
        ys = np.arange(h)
        xs = np.arange(w)
        offset = spacing // 2
        # per-line phase and period so shifted windows never alias
        for cx in range(offset, w, spacing):                  # vertical lines
            period = base_period + int(mark_rng.integers(-4, 5))
            phase = int(mark_rng.integers(0, period))
            dash = ((ys + phase) % period) < int(period * 0.6)
            keep = mark_rng.uniform((h,)) > cfg.marking_dropout
            img[dash & keep, max(cx - half_mark, 0):cx + half_mark] = 0.9
        for cy in range(offset, h, spacing):                  # horizontal lines
            period = base_period + int(mark_rng.integers(-4, 5))
            phase = int(mark_rng.integers(0, period))
            dash = ((xs + phase) % period) < int(period * 0.6)
            keep = mark_rng.uniform((w,)) > cfg.marking_dropout
            img[max(cy - half_mark, 0):cy + half_mark, dash & keep] = 0.9

        blob_rng = rng.spawn(3)
        area_m2 = h * w * res * res
        n_blobs = int(cfg.blob_density * cfg.marking_density * area_m2)
        yy, xx = np.mgrid[-3:4, -3:4]
        for _ in range(n_blobs):
            by = int(blob_rng.integers(3, h - 3))
            bx = int(blob_rng.integers(3, w - 3))
            sig = 0.8 + 1.2 * blob_rng.uniform()
            amp = 0.4 + 0.6 * blob_rng.uniform()
            patch = amp * np.exp(-(yy ** 2 + xx ** 2) / (2 * sig ** 2))
            region = img[by - 3:by + 4, bx - 3:bx + 4]
            np.maximum(region, patch, out=region)

    img = np.clip(img, 0.0, 1.0)
    img = np.round(img * 255.0) / 255.0
    return MapRaster(img.astype(np.float32), GridSpec(w, h, res))


def render_sweep(raster: MapRaster, pose: Pose, cfg: WorldConfig,
                 rng: Rng | None = None, cells: int | None = None) -> np.ndarray:
    """Online observation: bilinear crop of the map in the vehicle frame.

    Cell (i, j) of the (S, S) output holds the map intensity at body offset
    ((j - S//2) res, (i - S//2) res) rotated into the world by pose.theta;
    the anchor cell (S//2, S//2) is the vehicle position. With `rng`,
    Gaussian intensity noise and Bernoulli dropout are applied.
    """
    S = cells if cells is not None else cfg.sweep_cells
    res = raster.spec.resolution
    idx = np.arange(S) - S // 2
    bx, by = np.meshgrid(idx * res, idx * res)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    wx = pose.tx + c * bx - s * by
    wy = pose.ty + s * bx + c * by
    fx = (wx - raster.spec.origin[0]) / res
    fy = (wy - raster.spec.origin[1]) / res
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    gx = fx - x0
    gy = fy - y0
    H, W = raster.values.shape
    out = np.zeros((S, S), dtype=np.float64)
    vals = raster.values
    for oy, ox, wgt in ((0, 0, (1 - gy) * (1 - gx)), (0, 1, (1 - gy) * gx),
                        (1, 0, gy * (1 - gx)), (1, 1, gy * gx)):
        yc, xc = y0 + oy, x0 + ox
        ok = (yc >= 0) & (yc < H) & (xc >= 0) & (xc < W)
        out += wgt * np.where(ok, vals[np.clip(yc, 0, H - 1), np.clip(xc, 0, W - 1)], 0.0)
    if rng is not None:
        if cfg.intensity_noise > 0:
            out = out + rng.normal((S, S), 0.0, cfg.intensity_noise)
        if cfg.sweep_dropout > 0:
            out = np.where(rng.uniform((S, S)) < cfg.sweep_dropout, 0.0, out)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def generate_drive(raster: MapRaster, cfg: WorldConfig, length: int,
                   drive_key: int = 0, zero_noise: bool = False,
                   sweep_cells: int | None = None,
                   row_band: tuple = (0.0, 1.0)) -> Drive:
    """Smooth curvature walk with noisy observations.

    The trajectory steers away from the border so every sweep (and the
    filter's search window) keeps full map support. `row_band` confines the
    drive to a horizontal slice of the map (fractions of the height), which
    gives geographically disjoint train/eval regions on one world.
    """
    rng = Rng(cfg.seed).spawn(100 + drive_key)
    traj_rng, vel_rng, gps_rng, sweep_rng = (rng.spawn(i) for i in range(4))
    S = sweep_cells if sweep_cells is not None else cfg.sweep_cells
    res = raster.spec.resolution
    margin = (S // 2 + 24) * res
    x_lo = raster.spec.origin[0] + margin
    x_hi = raster.spec.origin[0] + (raster.spec.width - 1) * res - margin
    band_lo = raster.spec.origin[1] + row_band[0] * (raster.spec.height - 1) * res
    band_hi = raster.spec.origin[1] + row_band[1] * (raster.spec.height - 1) * res
    y_lo = band_lo + margin
    y_hi = band_hi - margin
    if x_lo >= x_hi or y_lo >= y_hi:
        raise ValueError("map too small for the requested sweep extent")
    cx, cy = (x_lo + x_hi) / 2, (y_lo + y_hi) / 2

    start = Pose(cx, cy, traj_rng.uniform() * 2 * math.pi - math.pi)
    start = _snap_to_cells(start, raster.spec)
    poses = []
    kappa = 0.0
    pose = start
    for _ in range(length):
        kappa = 0.92 * kappa + traj_rng.normal(sigma=0.035)
        kappa = float(np.clip(kappa, -0.12, 0.12))
        heading = pose.theta + kappa
        # steer toward the interior until the next position stays in bounds
        for _ in range(12):
            nx = pose.tx + cfg.speed * math.cos(heading)
            ny = pose.ty + cfg.speed * math.sin(heading)
            if x_lo < nx < x_hi and y_lo < ny < y_hi:
                break
            to_center = math.atan2(cy - pose.ty, cx - pose.tx)
            heading = heading + float(np.clip(normalize_angle(to_center - heading), -0.5, 0.5))
            kappa = 0.0
        # express the world displacement in the previous body frame so that
        # pose_compose lands exactly on the bounds-checked position
        c0, s0 = math.cos(pose.theta), math.sin(pose.theta)
        dxw, dyw = cfg.speed * math.cos(heading), cfg.speed * math.sin(heading)
        step = VelocityObs(c0 * dxw + s0 * dyw, -s0 * dxw + c0 * dyw,
                           normalize_angle(heading - pose.theta))
        pose = pose_compose(pose, step)
        poses.append(pose)

    vel_obs, gps_obs, sweeps = [], [], []
    prev = start
    for p in poses:
        v = pose_relative(prev, p)
        prev = p
        if zero_noise:
            vel_obs.append(v)
            gps_obs.append(GpsObs(p.tx, p.ty))
            sweeps.append(render_sweep(raster, p, cfg, rng=None, cells=S))
        else:
            vel_obs.append(VelocityObs(v.vx + vel_rng.normal(sigma=cfg.vel_sigma_xy),
                                       v.vy + vel_rng.normal(sigma=cfg.vel_sigma_xy),
                                       v.vtheta + vel_rng.normal(sigma=cfg.vel_sigma_theta)))
            gps_obs.append(GpsObs(p.tx + gps_rng.normal(sigma=cfg.gps_sigma),
                                  p.ty + gps_rng.normal(sigma=cfg.gps_sigma)))
            sweeps.append(render_sweep(raster, p, cfg, rng=sweep_rng, cells=S))
    return Drive(start, poses, vel_obs, gps_obs, sweeps)


def _snap_to_cells(pose: Pose, spec: GridSpec) -> Pose:
    cx = round((pose.tx - spec.origin[0]) / spec.resolution)
    cy = round((pose.ty - spec.origin[1]) / spec.resolution)
    return Pose(spec.origin[0] + cx * spec.resolution,
                spec.origin[1] + cy * spec.resolution, pose.theta)


# ---------------------------------------------------------------------------
# training/eval samples


@dataclass(frozen=True)
class SampleConfig:
    crop_cells: int = 64           # map window side (divisible by 16)
    sweep_cells: int = 32          # online raster side (divisible by 16)
    search_cells: int = 21         # score window side (odd)
    n_rotations: int = 11
    rot_half_range: float = math.radians(5.0)
    max_shift_cells: int = 10      # +-0.5 m at 5 cm

    def __post_init__(self):
        if self.crop_cells % 16 or self.sweep_cells % 16:
            raise ValueError("crop and sweep sides must be divisible by 16")
        if self.search_cells % 2 == 0:
            raise ValueError("search window side must be odd")
        valid = self.crop_cells - self.sweep_cells + 1
        if self.search_cells > valid:
            raise ValueError("search window exceeds the valid correlation plane")
        if 2 * self.max_shift_cells + 1 > self.search_cells:
            raise ValueError("shift range exceeds the search window")


@dataclass
class SampleSet:
    """Matching samples: map crop, online sweep, ground-truth volume index."""

    crops: np.ndarray      # (N, 1, crop, crop) float32
    sweeps: np.ndarray     # (N, 1, S, S) float32
    gt_flat: np.ndarray    # (N,) int64 index into (A, search, search)
    gt_rot: np.ndarray     # (N,) int64
    gt_cell: np.ndarray    # (N, 2) int64 (row, col) in the search window
    headings: np.ndarray   # (N,) float64 prior heading per sample
    cfg: SampleConfig

    def __len__(self):
        return self.crops.shape[0]

    @property
    def rotation_offsets(self) -> np.ndarray:
        return np.linspace(-self.cfg.rot_half_range, self.cfg.rot_half_range,
                           self.cfg.n_rotations)


def make_dataset(raster: MapRaster, cfg: WorldConfig, n_samples: int,
                 scfg: SampleConfig = SampleConfig(), sample_key: int = 0,
                 row_band: tuple = (0.0, 1.0)) -> SampleSet:
    """Matching samples with uniform translational/rotational perturbations.

    Each sample: a crop centered on the perturbed (prior) position, the
    sweep rendered at the true pose, and the index of the true pose in the
    (rotation, row, col) score volume. Perturbations are quantized to cells
    and rotation candidates so indices are exact. `row_band` restricts the
    sampled region (fractions of the height) for geographic splits.
    """
    rng = Rng(cfg.seed).spawn(200 + sample_key)
    pos_rng, head_rng, pert_rng, noise_rng = (rng.spawn(i) for i in range(4))
    crop, S = scfg.crop_cells, scfg.sweep_cells
    half_win = scfg.search_cells // 2
    H, W = raster.values.shape
    # prior center must keep the crop inside the map and the sweep in support
    margin = crop // 2 + scfg.max_shift_cells + S
    if H - 2 * margin <= 0 or W - 2 * margin <= 0:
        raise ValueError("map too small for the sample geometry")
    row_lo = max(margin, int(row_band[0] * H))
    row_hi = min(H - margin, int(row_band[1] * H))
    if row_hi <= row_lo:
        raise ValueError("row band too narrow for the sample geometry")
    offsets = np.linspace(-scfg.rot_half_range, scfg.rot_half_range, scfg.n_rotations)

    crops = np.empty((n_samples, 1, crop, crop), dtype=np.float32)
    sweeps = np.empty((n_samples, 1, S, S), dtype=np.float32)
    gt_flat = np.empty(n_samples, dtype=np.int64)
    gt_rot = np.empty(n_samples, dtype=np.int64)
    gt_cell = np.empty((n_samples, 2), dtype=np.int64)
    headings = np.empty(n_samples, dtype=np.float64)
    res = raster.spec.resolution

    for i in range(n_samples):
        prow = int(pos_rng.integers(row_lo, row_hi))
        pcol = int(pos_rng.integers(margin, W - margin))
        dr = int(pert_rng.integers(-scfg.max_shift_cells, scfg.max_shift_cells + 1))
        dc = int(pert_rng.integers(-scfg.max_shift_cells, scfg.max_shift_cells + 1))
        ri = int(pert_rng.integers(0, scfg.n_rotations))
        psi0 = head_rng.uniform() * 2 * math.pi - math.pi
        true_heading = normalize_angle(psi0 + offsets[ri])
        # true vehicle cell; prior (crop center) is the perturbed cell
        vrow, vcol = prow + dr, pcol + dc
        gx, gy = (raster.spec.origin[0] + vcol * res,
                  raster.spec.origin[1] + vrow * res)
        sweeps[i, 0] = render_sweep(raster, Pose(gx, gy, true_heading), cfg,
                                    rng=noise_rng, cells=S)
        r0 = prow - crop // 2
        c0 = pcol - crop // 2
        crops[i, 0] = raster.values[r0:r0 + crop, c0:c0 + crop]
        wrow = vrow - (prow - half_win)
        wcol = vcol - (pcol - half_win)
        gt_rot[i] = ri
        gt_cell[i] = (wrow, wcol)
        gt_flat[i] = (ri * scfg.search_cells + wrow) * scfg.search_cells + wcol
        headings[i] = psi0
    return SampleSet(crops, sweeps, gt_flat, gt_rot, gt_cell, headings, scfg)


# ---------------------------------------------------------------------------
# dataset directory IO

SAMPLES_MAGIC = b"SMPL"
DRIVE_HEADER = "step,gt_tx,gt_ty,gt_theta,vx,vy,vtheta,gps_x,gps_y"


def save_samples(path, ss: SampleSet) -> None:
    with open(path, "wb") as fh:
        fh.write(SAMPLES_MAGIC)
        fh.write(struct.pack("<IHHHHdH", len(ss), ss.cfg.crop_cells, ss.cfg.sweep_cells,
                             ss.cfg.search_cells, ss.cfg.n_rotations,
                             ss.cfg.rot_half_range, ss.cfg.max_shift_cells))
        fh.write(ss.crops.astype("<f4").tobytes())
        fh.write(ss.sweeps.astype("<f4").tobytes())
        fh.write(ss.gt_flat.astype("<i8").tobytes())
        fh.write(ss.gt_rot.astype("<i8").tobytes())
        fh.write(ss.gt_cell.astype("<i8").tobytes())
        fh.write(ss.headings.astype("<f8").tobytes())


def load_samples(path) -> SampleSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SAMPLES_MAGIC:
        raise ValueError("not a sample record file")
    n, crop, S, search, nrot, rot_half, maxshift = struct.unpack_from("<IHHHHdH", blob, 4)
    scfg = SampleConfig(crop, S, search, nrot, rot_half, maxshift)
    off = 4 + struct.calcsize("<IHHHHdH")

    def take(shape, dtype, itemsize):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(shape)
        off += count * itemsize
        return arr.copy()

    crops = take((n, 1, crop, crop), "<f4", 4)
    sweeps = take((n, 1, S, S), "<f4", 4)
    gt_flat = take((n,), "<i8", 8)
    gt_rot = take((n,), "<i8", 8)
    gt_cell = take((n, 2), "<i8", 8)
    headings = take((n,), "<f8", 8)
    return SampleSet(crops, sweeps, gt_flat.astype(np.int64), gt_rot.astype(np.int64),
                     gt_cell.astype(np.int64), headings, scfg)


def save_drive(path, drive: Drive, sweeps_path=None) -> None:
    """Drive CSV (%.17g floats round-trip exactly) + optional sweep blob."""
    lines = [DRIVE_HEADER]
    for t, p in enumerate(drive.gt_poses):
        v = drive.velocity_obs[t]
        g = drive.gps_obs[t]
        lines.append(",".join([str(t)] + [f"{x:.17g}" for x in
                                          (p.tx, p.ty, p.theta, v.vx, v.vy, v.vtheta, g.gx, g.gy)]))
    start = drive.start_pose
    with open(path, "w") as fh:
        fh.write(f"# start,{start.tx:.17g},{start.ty:.17g},{start.theta:.17g}\n")
        fh.write("\n".join(lines) + "\n")
    if sweeps_path is not None:
        arr = np.stack(drive.sweeps).astype("<f4")
        with open(sweeps_path, "wb") as fh:
            fh.write(b"SWPS" + struct.pack("<IHH", arr.shape[0], arr.shape[1], arr.shape[2]))
            fh.write(arr.tobytes())


def load_drive(path, sweeps_path=None) -> Drive:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("# start,"):
        raise ValueError("missing drive start pose header")
    sx, sy, sth = (float(x) for x in lines[0].split(",")[1:4])
    start = Pose(sx, sy, sth)
    poses, vels, gps = [], [], []
    for ln in lines[2:]:
        parts = ln.split(",")
        vals = [float(x) for x in parts[1:]]
        poses.append(Pose(vals[0], vals[1], vals[2]))
        vels.append(VelocityObs(vals[3], vals[4], vals[5]))
        gps.append(GpsObs(vals[6], vals[7]))
    sweeps = []
    if sweeps_path is not None and os.path.exists(sweeps_path):
        with open(sweeps_path, "rb") as fh:
            blob = fh.read()
        n, h, w = struct.unpack_from("<IHH", blob, 4)
        sweeps = list(np.frombuffer(blob, dtype="<f4", offset=4 + 8,
                                    count=n * h * w).reshape(n, h, w).copy())
    return Drive(start, poses, vels, gps, sweeps)
