"""Online localization: train a small matcher, then track a noisy drive.

Trains the matching networks briefly (about two minutes on a laptop CPU),
then runs the histogram filter over a noisy drive and prints the error
trace. Compare the GPS-only column to see what the matching term buys.

Run:  python demos/04_histogram_filter.py
"""

import math
import time

import numpy as np

from binmap import bench, embednet as en, histfilter as hf
from binmap import synthworld as sw, training as tr
from binmap.geometry import pose_compose

cfg = sw.WorldConfig(seed=9, width=320, height=320, sweep_extent=0.8)
world = sw.generate_map(cfg)
samples = sw.make_dataset(world, cfg, 192, row_band=(0.0, 0.5))
net = en.NetConfig()

print("training the matcher (stage 1, a few epochs)...")
t0 = time.time()
state = tr.train(1, samples, net,
                 train_cfg=tr.TrainConfig(batch_size=8, epochs=5, seed=1))
print(f"  {time.time() - t0:.0f}s, final training top-9: "
      f"{state.history[-1]['top9']:.2f}")

drive = sw.generate_drive(world, cfg, 80, drive_key=4, row_band=(0.5, 1.0))
source = hf.UncompressedMapSource(world, state.store, net)

print("\nrunning the filter (GPS + matching) and a GPS-only ablation...")
errs_full, errs_gps = [], []
with tr.inference_mode(state.store):
    session = hf.LocalizationSession(source, state.store, net)
    session.start(drive.start_pose)
    gps_session = hf.LocalizationSession(source, state.store, net)
    gps_session.start(drive.start_pose)
    for t in range(len(drive.gt_poses)):
        gt = drive.gt_poses[t]
        res = session.step(drive.velocity_obs[t], drive.gps_obs[t],
                           drive.sweeps[t], gt_pose=gt)
        errs_full.append(res.total_err)
        # ablation: prediction + GPS, no matching update
        bel = hf.predict(gps_session.belief, drive.velocity_obs[t],
                         gps_session.fcfg.motion,
                         new_center=gps_session._snap(
                             pose_compose(gps_session.estimate,
                                          drive.velocity_obs[t])))
        bel = hf.update_gps(bel, drive.gps_obs[t], gps_session.fcfg.gps)
        est = hf.soft_argmax(bel, gps_session.fcfg.alpha)
        gps_session.belief, gps_session.estimate = bel, est
        errs_gps.append(math.hypot(est.tx - gt.tx, est.ty - gt.ty))
        if t % 10 == 0:
            print(f"  step {t:3d}: full {res.total_err * 100:6.1f} cm | "
                  f"GPS-only {errs_gps[-1] * 100:6.1f} cm")

med = sorted(errs_full)[len(errs_full) // 2]
med_gps = sorted(errs_gps)[len(errs_gps) // 2]
print(f"\nmedian error: {med * 100:.1f} cm with matching, "
      f"{med_gps * 100:.1f} cm GPS-only")
print(f"GPS noise level was {cfg.gps_sigma * 100:.0f} cm")
