"""Evaluation harness: matching metrics, localization metrics, and the
multi-condition comparison table.

Segment bookkeeping uses the documented desk constants: one segment is 200
filter steps at 0.5 m/step, standing in for a 1 km stretch; the early
checkpoints sit at 20 and 100 steps ("100 m" / "500 m" equivalents). A
segment fails a checkpoint when the total position error exceeds 1 m at any
step up to that checkpoint.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import codec, embednet, histfilter, matcher, synthworld, training
from .autograd import Tensor
from .embednet import NetConfig, ParamStore

SEGMENT_STEPS = 200          # "1 km" equivalent
CHECKPOINT_STEPS = (20, 100, 200)
FAILURE_ERROR_M = 1.0


@dataclass
class MatchReport:
    top1_px: float
    top9_px: float
    bpp: float

    def __post_init__(self):
        if not (0.0 <= self.top1_px <= self.top9_px <= 1.0):
            raise ValueError("need 0 <= top1 <= top9 <= 1")


@dataclass
class LocReport:
    median_lat: float
    median_lon: float
    median_total: float
    failure_rates: dict        # checkpoint steps -> fraction of segments
    bpp: float
    n_segments: int = 0


def eval_matching(store: ParamStore, net_cfg: NetConfig, samples: synthworld.SampleSet,
                  bpp: float, compressed: bool, batch: int = 16) -> MatchReport:
    """top-1/top-9 pixel accuracy over evaluation samples.

    compressed=True routes the map embedding through the binarizer+decoder;
    otherwise the uncompressed embedding is matched directly.
    """
    offsets = samples.rotation_offsets
    top1 = top9 = 0
    n = len(samples)
    with training.inference_mode(store):
        for b0 in range(0, n, batch):
            idx = np.arange(b0, min(b0 + batch, n))
            crops = Tensor(samples.crops[idx])
            sweeps = Tensor(samples.sweeps[idx])
            angles = samples.headings[idx][:, None] + offsets[None, :]
            g_emb = embednet.embed(crops, store, "g", net_cfg)
            if compressed:
                _, bits = embednet.compress_forward(g_emb, store, net_cfg)
                g_emb = embednet.decode(bits, store, net_cfg)
            f_emb = embednet.embed(sweeps, store, "f", net_cfg)
            scores = training._match_scores(g_emb, f_emb, angles,
                                            samples.cfg.search_cells)
            t1, t9 = training.topk_counts(scores.data, samples.gt_cell[idx])
            top1 += t1
            top9 += t9
    return MatchReport(top1 / n, top9 / n, bpp)


def _percentile_median(values) -> float:
    v = sorted(values)
    if not v:
        return float("nan")
    m = len(v) // 2
    return v[m] if len(v) % 2 else 0.5 * (v[m - 1] + v[m])


def eval_localization(session_factory, drives, bpp: float,
                      trace_dir=None) -> LocReport:
    """Run the filter over each drive and aggregate errors and failures.

    `session_factory()` must return a fresh LocalizationSession; each drive
    is split into consecutive SEGMENT_STEPS-step segments.
    """
    lat, lon, tot = [], [], []
    seg_fail = {cp: 0 for cp in CHECKPOINT_STEPS}
    n_segments = 0
    for di, drive in enumerate(drives):
        session = session_factory()
        trace = (os.path.join(trace_dir, f"trace_{di:03d}.csv")
                 if trace_dir is not None else None)
        results = histfilter.run_drive(session, drive, trace_path=trace)
        errs = [r.total_err for r in results]
        lat.extend(abs(r.lat_err) for r in results)
        lon.extend(abs(r.lon_err) for r in results)
        tot.extend(errs)
        for s0 in range(0, len(errs) - SEGMENT_STEPS + 1, SEGMENT_STEPS):
            n_segments += 1
            seg = errs[s0:s0 + SEGMENT_STEPS]
            for cp in CHECKPOINT_STEPS:
                if any(e > FAILURE_ERROR_M for e in seg[:cp]):
                    seg_fail[cp] += 1
    rates = {cp: (seg_fail[cp] / n_segments if n_segments else float("nan"))
             for cp in CHECKPOINT_STEPS}
    return LocReport(_percentile_median(lat), _percentile_median(lon),
                     _percentile_median(tot), rates, bpp, n_segments)


# ---------------------------------------------------------------------------
# condition bundles


@dataclass
class Condition:
    """Everything needed to evaluate one compression setting."""

    name: str
    store: ParamStore
    net_cfg: NetConfig
    compressed: bool                  # binarizer+decoder in the map path
    compressed_map: codec.CompressedMap | None = None
    bpp: float = float("nan")


def compress_world_map(raster, store: ParamStore, net_cfg: NetConfig) -> codec.CompressedMap:
    """Offline encoding of a full map raster into a compressed code."""
    with training.inference_mode(store):
        emb = embednet.embed(Tensor(raster.values[None, None]), store, "g", net_cfg)
        code = embednet.compress_encode(emb.data[0], store, net_cfg)
    return codec.encode_map(code, raster.spec, net_cfg.downsample)


def make_condition(name: str, store: ParamStore, net_cfg: NetConfig,
                   raster, compressed: bool) -> Condition:
    map_px = raster.spec.width * raster.spec.height
    if compressed:
        cm = compress_world_map(raster, store, net_cfg)
        return Condition(name, store, net_cfg, True, cm, codec.bpp(cm, map_px))
    baseline_bits = codec.encode_raster_bits(raster)
    return Condition(name, store, net_cfg, False, None, baseline_bits / map_px)


def condition_session_factory(cond: Condition, raster, fcfg: histfilter.FilterConfig,
                              decode_mode: str = "full"):
    """Build a LocalizationSession factory for a condition on one map."""
    if cond.compressed:
        source = histfilter.DecodedMapSource(cond.compressed_map, cond.store,
                                             cond.net_cfg, mode=decode_mode)
    else:
        source = histfilter.UncompressedMapSource(raster, cond.store, cond.net_cfg)

    def factory():
        return histfilter.LocalizationSession(source, cond.store, cond.net_cfg, fcfg)

    return factory


@dataclass
class ConditionRow:
    name: str
    match: MatchReport
    loc: LocReport | None


def compare_conditions(conditions, raster, eval_samples, drives,
                       fcfg: histfilter.FilterConfig = histfilter.FilterConfig(),
                       out_dir=None) -> list[ConditionRow]:
    """Evaluate every condition on shared samples and drives; write the
    comparison table and the rate/accuracy plot data as CSV."""
    rows = []
    for cond in conditions:
        mr = eval_matching(cond.store, cond.net_cfg, eval_samples, cond.bpp,
                           cond.compressed)
        lr = None
        if drives:
            with training.inference_mode(cond.store):
                factory = condition_session_factory(cond, raster, fcfg)
                lr = eval_localization(factory, drives, cond.bpp)
        rows.append(ConditionRow(cond.name, mr, lr))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_tables(rows, out_dir)
    return rows


def _fmt(x: float) -> str:
    return f"{x:.9g}" if isinstance(x, float) and math.isfinite(x) else "nan"


def _write_tables(rows, out_dir) -> None:
    cps = [str(cp) for cp in CHECKPOINT_STEPS]
    head = ("condition,bpp,top1_px,top9_px,median_lat,median_lon,median_total,"
            + ",".join(f"fail_at_{cp}" for cp in cps))
    lines = [head]
    plot = ["bpp,top1_px,end_failure_rate,condition"]
    for r in rows:
        loc = r.loc
        vals = [r.name, _fmt(r.match.bpp), _fmt(r.match.top1_px), _fmt(r.match.top9_px)]
        if loc is not None:
            vals += [_fmt(loc.median_lat), _fmt(loc.median_lon), _fmt(loc.median_total)]
            vals += [_fmt(loc.failure_rates[cp]) for cp in CHECKPOINT_STEPS]
            end_rate = loc.failure_rates[CHECKPOINT_STEPS[-1]]
        else:
            vals += ["nan"] * (3 + len(CHECKPOINT_STEPS))
            end_rate = float("nan")
        lines.append(",".join(vals))
        plot.append(f"{_fmt(r.match.bpp)},{_fmt(r.match.top1_px)},{_fmt(end_rate)},{r.name}")
    with open(os.path.join(out_dir, "comparison.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "rate_vs_accuracy.csv"), "w") as fh:
        fh.write("\n".join(plot) + "\n")
