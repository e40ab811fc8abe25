"""Command-line entry point wiring the modules into reproducible runs.

Subcommands: gen, train, compress, localize, bench, inspect. Every run
writes its fully resolved configuration next to its outputs. Config files
are plain `key = value` lines; command-line flags override file values.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import bench, codec, embednet, histfilter, synthworld, training
from .geometry import Pose


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# config handling

CONFIG_DEFAULTS = {
    "seed": 0,
    "map_cells": 384,
    "resolution": 0.05,
    "sweep_extent": 0.8,
    "train_samples": 512,
    "eval_samples": 256,
    "n_drives": 2,
    "drive_steps": 200,
    "batch_size": 8,
    "epochs_stage1": 10,
    "epochs_stage2": 8,
    "lr": 1e-3,
    "lambda1": 0.1,
    "lambda2": 0.01,
    "alpha": 2.0,
    "downsample": 8,
    "threads": 0,  # 0 -> BINMAP_THREADS or 1
}


def load_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for ln in fh:
            ln = ln.split("#", 1)[0].strip()
            if not ln:
                continue
            if "=" not in ln:
                raise CliError(f"bad config line: {ln!r}")
            key, val = (part.strip() for part in ln.split("=", 1))
            out[key] = val
    return out


def resolve_config(args) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise CliError(f"missing config file: {args.config}")
        for key, val in load_config_file(args.config).items():
            if key not in cfg:
                raise CliError(f"unknown config key: {key}")
            cfg[key] = type(CONFIG_DEFAULTS[key])(float(val)) \
                if isinstance(CONFIG_DEFAULTS[key], (int, float)) else val
    for key in cfg:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if cfg["threads"] == 0:
        cfg["threads"] = int(os.environ.get("BINMAP_THREADS", "1"))
    return cfg


def write_resolved_config(cfg: dict, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    with open(os.path.join(out_dir, "resolved_config.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _world_cfg(cfg: dict, seed_offset: int = 0) -> synthworld.WorldConfig:
    return synthworld.WorldConfig(
        seed=int(cfg["seed"]) + seed_offset,
        width=int(cfg["map_cells"]), height=int(cfg["map_cells"]),
        resolution=float(cfg["resolution"]),
        sweep_extent=float(cfg["sweep_extent"]),
    )


# ---------------------------------------------------------------------------
# subcommands


TRAIN_BAND = (0.0, 0.5)   # geographic split: training half of the world
EVAL_BAND = (0.5, 1.0)    # held-out half for eval samples and drives


def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    out = args.out
    write_resolved_config(cfg, out)
    world = _world_cfg(cfg, 0)
    raster = synthworld.generate_map(world)
    codec.write_imap(os.path.join(out, "world.imap"), raster)
    os.makedirs(os.path.join(out, "samples"), exist_ok=True)
    ds = synthworld.make_dataset(raster, world, int(cfg["train_samples"]),
                                 row_band=TRAIN_BAND)
    dse = synthworld.make_dataset(raster, world, int(cfg["eval_samples"]),
                                  sample_key=1, row_band=EVAL_BAND)
    synthworld.save_samples(os.path.join(out, "samples", "train.rec"), ds)
    synthworld.save_samples(os.path.join(out, "samples", "eval.rec"), dse)
    for i in range(int(cfg["n_drives"])):
        d = synthworld.generate_drive(raster, world, int(cfg["drive_steps"]),
                                      drive_key=i, row_band=EVAL_BAND)
        synthworld.save_drive(os.path.join(out, f"drive_{i:03d}.csv"), d,
                              os.path.join(out, f"drive_{i:03d}.sweeps"))
    print(f"gen: wrote world, {len(ds)} train / {len(dse)} eval samples, "
          f"{cfg['n_drives']} drives to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    data = args.data
    train_rec = os.path.join(data, "samples", "train.rec")
    if not os.path.exists(train_rec):
        raise CliError(f"missing training samples: {train_rec}")
    ds = synthworld.load_samples(train_rec)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    write_resolved_config(cfg, out_dir)
    net = embednet.NetConfig(downsample=int(cfg["downsample"]))
    mode = args.mode or "match"
    if args.stage == 1:
        tc = training.TrainConfig(int(cfg["batch_size"]), int(cfg["epochs_stage1"]),
                                  float(cfg["lr"]), int(cfg["seed"]),
                                  log_path=os.path.join(out_dir, "train_log_stage1.csv"))
        state = training.train(1, ds, net, train_cfg=tc)
    else:
        if not args.init:
            raise CliError("stage 2 requires --init with a stage-1 checkpoint")
        if not os.path.exists(args.init):
            raise CliError(f"missing checkpoint: {args.init}")
        store, net_loaded = embednet.load_params(args.init)
        net = embednet.NetConfig(
            embed_channels=net_loaded.embed_channels, embed_dim=net_loaded.embed_dim,
            comp_channels=net_loaded.comp_channels, downsample=int(cfg["downsample"]),
            groups=net_loaded.groups, group_size=net_loaded.group_size,
            in_channels=net_loaded.in_channels)
        lc = training.LossConfig(float(cfg["lambda1"]), float(cfg["lambda2"]), mode)
        tc = training.TrainConfig(int(cfg["batch_size"]), int(cfg["epochs_stage2"]),
                                  float(cfg["lr"]), int(cfg["seed"]),
                                  log_path=os.path.join(out_dir, f"train_log_stage2_{mode}.csv"))
        state = training.train(2, ds, net, store=store, loss_cfg=lc, train_cfg=tc)
    embednet.save_params(args.out, state.store, net)
    last = state.history[-1] if state.history else {}
    print(f"train: stage {args.stage} ({mode}) done, epochs={state.epoch}, "
          f"top9={last.get('top9', float('nan')):.4f} -> {args.out}")
    return 0


def cmd_compress(args) -> int:
    if not os.path.exists(args.map):
        raise CliError(f"missing map file: {args.map}")
    if not os.path.exists(args.checkpoint):
        raise CliError(f"missing checkpoint: {args.checkpoint}")
    raster = codec.read_imap(args.map)
    store, net = embednet.load_params(args.checkpoint)
    cm = bench.compress_world_map(raster, store, net)
    codec.write_bmc(args.out, cm)
    stats = codec.code_rate_stats(cm)
    print(f"compress: {args.map} -> {args.out} "
          f"bpp={stats['achieved_bpp']:.6g} bound={stats['entropy_bound_per_map_px']:.6g}")
    return 0


def cmd_localize(args) -> int:
    cfg = resolve_config(args)
    for path in (args.drive, args.map, args.checkpoint):
        if not os.path.exists(path):
            raise CliError(f"missing input: {path}")
    drive = synthworld.load_drive(args.drive, args.drive.replace(".csv", ".sweeps"))
    if not drive.sweeps:
        raise CliError("drive has no sweep records")
    store, net = embednet.load_params(args.checkpoint)
    fcfg = histfilter.FilterConfig(alpha=float(cfg["alpha"]))
    if args.map.endswith(".bmc"):
        cm = codec.read_bmc(args.map)
        source = histfilter.DecodedMapSource(cm, store, net, mode=args.decode_mode)
    else:
        raster = codec.read_imap(args.map)
        source = histfilter.UncompressedMapSource(raster, store, net)
    with training.inference_mode(store):
        session = histfilter.LocalizationSession(source, store, net, fcfg)
        results = histfilter.run_drive(session, drive, trace_path=args.out)
    med = sorted(r.total_err for r in results)[len(results) // 2]
    ndiv = sum(r.diverged for r in results)
    print(f"localize: {len(results)} steps, median err {med:.4f} m, "
          f"{ndiv} diverged flags -> {args.out}")
    return int(ndiv > len(results) // 2)


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    data = args.data
    out = args.out
    write_resolved_config(cfg, out)
    names = args.conditions.split(",")
    meval = codec.read_imap(os.path.join(data, "world.imap"))
    dse = synthworld.load_samples(os.path.join(data, "samples", "eval.rec"))
    drives = []
    i = 0
    while os.path.exists(os.path.join(data, f"drive_{i:03d}.csv")):
        drives.append(synthworld.load_drive(os.path.join(data, f"drive_{i:03d}.csv"),
                                            os.path.join(data, f"drive_{i:03d}.sweeps")))
        i += 1
    conditions = []
    for name in names:
        ckpt = os.path.join(args.ckpt_dir, f"{name}.ckpt")
        if not os.path.exists(ckpt):
            raise CliError(f"missing checkpoint for condition {name}: {ckpt}")
        store, net = embednet.load_params(ckpt)
        conditions.append(bench.make_condition(name, store, net, meval,
                                               compressed=(name != "lossless")))
    fcfg = histfilter.FilterConfig(alpha=float(cfg["alpha"]))
    rows = bench.compare_conditions(conditions, meval, dse,
                                    drives if not args.no_drives else [],
                                    fcfg, out_dir=out)
    for r in rows:
        loc = r.loc
        extra = (f" median={loc.median_total:.4f} fail_end={loc.failure_rates[200]:.3f}"
                 if loc else "")
        print(f"bench: {r.name:>12} bpp={r.match.bpp:.6g} top1={r.match.top1_px:.4f} "
              f"top9={r.match.top9_px:.4f}{extra}")
    return 0


def cmd_inspect(args) -> int:
    path = args.file
    if not os.path.exists(path):
        raise CliError(f"missing file: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == codec.BMC_MAGIC:
        cm = codec.read_bmc(path)
        stats = codec.code_rate_stats(cm)
        print(f"compressed map: code {cm.code_width}x{cm.code_height}, "
              f"G={cm.groups} K={cm.group_size} downsample={cm.downsample}")
        print(f"map grid: {cm.map_spec.width}x{cm.map_spec.height} "
              f"@ {cm.map_spec.resolution} m, origin {cm.map_spec.origin}")
        print(f"payload: {cm.payload_bits} bits "
              f"({len(cm.payload)} bytes), table alphabet {cm.table.alphabet_size}")
        hist = stats["symbol_hist"]
        print("symbol histogram:", " ".join(f"{s}:{c}" for s, c in enumerate(hist) if c))
        print(f"achieved bpp: {stats['achieved_bpp']:.6g}")
        print(f"entropy bound: {stats['entropy_bound_per_map_px']:.6g} bpp "
              f"({stats['entropy_bound_per_code_px']:.4g} bits/code px)")
        print(f"coding efficiency: {100 * stats['efficiency']:.1f}%")
    elif magic == codec.IMAP_MAGIC:
        raster = codec.read_imap(path)
        bits = codec.encode_raster_bits(raster)
        px = raster.spec.width * raster.spec.height
        print(f"intensity raster: {raster.spec.width}x{raster.spec.height} "
              f"@ {raster.spec.resolution} m, origin {raster.spec.origin}")
        print(f"values in [{raster.values.min():.4g}, {raster.values.max():.4g}]")
        print(f"lossless raster rate: {bits / px:.6g} bpp")
    else:
        raise CliError(f"unrecognized magic {magic!r}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="binmap",
                                 description="Binary map compression + localization pipeline")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("gen", help="generate world, drives, and samples")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--map-cells", dest="map_cells", type=int, default=None)
    p.add_argument("--train-samples", dest="train_samples", type=int, default=None)
    p.add_argument("--eval-samples", dest="eval_samples", type=int, default=None)
    p.add_argument("--n-drives", dest="n_drives", type=int, default=None)
    p.add_argument("--drive-steps", dest="drive_steps", type=int, default=None)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="run a training stage")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--mode", choices=("match", "recon"), default=None)
    p.add_argument("--init", type=str, default=None, help="stage-1 checkpoint for stage 2")
    p.add_argument("--downsample", type=int, choices=(8, 16), default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--epochs-stage1", dest="epochs_stage1", type=int, default=None)
    p.add_argument("--epochs-stage2", dest="epochs_stage2", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("compress", help="encode a map raster into a .bmc code")
    common(p)
    p.add_argument("--map", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("localize", help="run the filter over a drive")
    common(p)
    p.add_argument("--drive", required=True)
    p.add_argument("--map", required=True, help=".bmc code or .imap raster")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--decode-mode", choices=("full", "tile"), default="full")
    p.set_defaults(fn=cmd_localize)

    p = sub.add_parser("bench", help="evaluate conditions into a comparison table")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--conditions", default="lossless,match-8x,match-16x,recon-8x,recon-16x")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--no-drives", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("inspect", help="dump headers and rate stats of artifacts")
    p.add_argument("file")
    p.set_defaults(fn=cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except codec.CodecError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except histfilter.FilterDivergence as e:
        print(f"error: filter diverged: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
