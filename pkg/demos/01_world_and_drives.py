"""Generate a synthetic world and a drive; inspect what the sensors see.

Run:  python demos/01_world_and_drives.py
"""

import numpy as np

from binmap import codec, synthworld as sw

cfg = sw.WorldConfig(seed=7, width=384, height=384, sweep_extent=0.8)
world = sw.generate_map(cfg)
print(f"world: {world.spec.width}x{world.spec.height} cells at "
      f"{world.spec.resolution * 100:.0f} cm/px "
      f"({world.spec.width * world.spec.resolution:.1f} m square)")
print(f"intensities in [{world.values.min():.3f}, {world.values.max():.3f}], "
      f"mean {world.values.mean():.3f}")

bits = codec.encode_raster_bits(world)
px = world.spec.width * world.spec.height
print(f"lossless raster rate: {bits / px:.3f} bits/pixel "
      f"({bits / 8 / 1024:.1f} KiB for the whole map)")

drive = sw.generate_drive(world, cfg, length=200, drive_key=0)
dists = [0.0]
for a, b in zip(drive.gt_poses, drive.gt_poses[1:]):
    dists.append(np.hypot(b.tx - a.tx, b.ty - a.ty))
print(f"\ndrive: {len(drive.gt_poses)} steps, {sum(dists):.1f} m travelled, "
      f"speed {np.mean(dists[1:]):.2f} m/step")

gps_err = [np.hypot(g.gx - p.tx, g.gy - p.ty)
           for g, p in zip(drive.gps_obs, drive.gt_poses)]
print(f"GPS noise: mean offset {np.mean(gps_err):.3f} m (sigma {cfg.gps_sigma} m)")

sweep = drive.sweeps[0]
print(f"online sweep: {sweep.shape[0]}x{sweep.shape[1]} cells, "
      f"{(sweep == 0).mean() * 100:.0f}% dropped returns")

# ASCII render of a sweep (darker = dimmer)
ramp = " .:-=+*#%@"
print("\nfirst sweep, downsampled:")
for row in sweep[::2]:
    print("".join(ramp[min(int(v * (len(ramp) - 1) + 0.5), len(ramp) - 1)]
                  for v in row[::2]))
