import os, sys, time, numpy as np
from binmap import synthworld as sw, training as tr, embednet as en, codec, bench

t00 = time.time()
W = sw.WorldConfig(seed=11, width=384, height=384, sweep_extent=0.8)
m = sw.generate_map(W)
ds = sw.make_dataset(m, W, 768, row_band=(0.0, 0.5))
dse = sw.make_dataset(m, W, 256, sample_key=1, row_band=(0.5, 1.0))
net = en.NetConfig()

store1, _ = en.load_params("stage1_cal5.ckpt")
base = store1.snapshot()
bl = codec.encode_raster_bits(m) / (384 * 384)
print(f"baseline {bl:.3f} bpp; target <= {bl/50:.4f}", flush=True)

def fresh():
    s = en.init_params(net, seed=3)
    s.restore(base)
    return s

variants = []
for arg in sys.argv[1:]:
    lam1, anchor = arg.split(":")
    variants.append((float(lam1), float(anchor)))

for lam1, anchor in variants:
    t0 = time.time()
    st2 = tr.train(2, ds, net, store=fresh(),
                   loss_cfg=tr.LossConfig(lam1, 0.001, "match", recon_anchor=anchor),
                   train_cfg=tr.TrainConfig(batch_size=8, epochs=12, seed=4,
                                            warmup_epochs=8, freeze_embedders=True))
    mr2 = bench.eval_matching(st2.store, net, dse, 0.0, compressed=True)
    cm = bench.compress_world_map(m, st2.store, net)
    stats = codec.code_rate_stats(cm)
    h = st2.history[-1]
    print(f"[{time.time()-t00:.0f}s] clipST lam1={lam1} anchor={anchor} ({time.time()-t0:.0f}s): "
          f"train top9={h['top9']:.4f} Hbits={h['entropy_bits']:.3f} | "
          f"eval top1={mr2.top1_px:.4f} top9={mr2.top9_px:.4f} | "
          f"bpp={stats['achieved_bpp']:.5f} ratio={bl/stats['achieved_bpp']:.0f}x", flush=True)
    for row in st2.history[7::2]:
        print("     ", {k: round(v, 4) if isinstance(v, float) else v for k, v in row.items()}, flush=True)
