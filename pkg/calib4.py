import os, time, numpy as np
from binmap import synthworld as sw, training as tr, embednet as en, codec, bench

t00 = time.time()
W = sw.WorldConfig(seed=11, width=384, height=384, sweep_extent=0.8)
m = sw.generate_map(W)
ds = sw.make_dataset(m, W, 512, row_band=(0.0, 0.5))
dse = sw.make_dataset(m, W, 256, sample_key=1, row_band=(0.5, 1.0))
net = en.NetConfig()

CKPT = "stage1_cal4.ckpt"
if os.path.exists(CKPT):
    store1, _ = en.load_params(CKPT)
else:
    st1 = tr.train(1, ds, net, train_cfg=tr.TrainConfig(batch_size=8, epochs=12, seed=3))
    en.save_params(CKPT, st1.store, net)
    store1 = st1.store
mr1 = bench.eval_matching(store1, net, dse, 0.0, compressed=False)
print(f"[{time.time()-t00:.0f}s] stage1 eval top1={mr1.top1_px:.4f} top9={mr1.top9_px:.4f}", flush=True)

base = store1.snapshot()

def fresh():
    s = en.init_params(net, seed=3)
    s.restore(base)
    return s

for label, lam1, wu, ep, freeze in (("frozen", 0.01, 6, 12, True),
                                    ("finetune", 0.01, 6, 12, False)):
    t0 = time.time()
    st2 = tr.train(2, ds, net, store=fresh(), loss_cfg=tr.LossConfig(lam1, 0.001, "match"),
                   train_cfg=tr.TrainConfig(batch_size=8, epochs=ep, seed=4,
                                            warmup_epochs=wu, freeze_embedders=freeze))
    mr2 = bench.eval_matching(st2.store, net, dse, 0.0, compressed=True)
    cm = bench.compress_world_map(m, st2.store, net)
    stats = codec.code_rate_stats(cm)
    bl = codec.encode_raster_bits(m) / (384 * 384)
    h = st2.history[-1]
    print(f"[{time.time()-t00:.0f}s] {label} lam1={lam1} wu={wu} ep={ep} ({time.time()-t0:.0f}s): "
          f"train top9={h['top9']:.4f} Hbits={h['entropy_bits']:.3f} | "
          f"eval top1={mr2.top1_px:.4f} top9={mr2.top9_px:.4f} | "
          f"bpp={stats['achieved_bpp']:.5f} ratio={bl/stats['achieved_bpp']:.0f}x", flush=True)
    for row in st2.history:
        print("     ", {k: round(v, 4) if isinstance(v, float) else v for k, v in row.items()}, flush=True)
