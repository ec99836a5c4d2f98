"""Identify the cascaded two-tank plant from input/output data, then compress it.

Run with ``python3 demos/tank_identification.py`` (a few minutes on one core).

The story in four steps:

1. Simulate 100 closed-loop tank trajectories (PID tracking a random spline
   reference) and split them 60/20/20.
2. For two window sizes, fit the output network H on the regressor state z
   (the last ell input/output pairs) by output-error training.
3. Compare 100-step free-run rollouts on the test split.
4. Squeeze the ell=20 state through a linear autoencoder at several
   compression rates and see how much rollout accuracy survives.
"""
import time

from dynoid.datagen import TankDataConfig, generate_tank_dataset
from dynoid.reduction import AutoencoderConfig, compression_sweep
from dynoid.regressor import StateMapSpec, TrainConfig, evaluate_rollout, rollout, train_regressor, window_from_arrays

SEED = 0

print("1) simulating the tank (noiseless outputs) ...")
ds = generate_tank_dataset(TankDataConfig(noise_sigma=0.0), seed=SEED)
print(f"   {len(ds.train)} train / {len(ds.valid)} valid / {len(ds.test)} test trajectories of "
      f"{len(ds.train[0])} steps")

print("2) training one model per window size ...")
train_cfg = TrainConfig(hidden=(64, 64), epochs=300, lr=1e-3, batch_size=20)
models = {}
for ell in (2, 20):
    t0 = time.perf_counter()
    models[ell] = train_regressor(ds, StateMapSpec(ell, 1, 1), train_cfg, seed=SEED)
    print(f"   ell={ell:2d}: state size L={models[ell].spec.L:2d}, trained in {time.perf_counter() - t0:.0f}s")

print("3) 100-step free-run rollouts on the test split")
for ell, model in models.items():
    res = evaluate_rollout(model, ds.test, 100)
    print(f"   ell={ell:2d}: mean MSE {res.mean:.2e}")

# A single rollout, printed sparsely, to show what "free run" means: after the
# first ell measured pairs the model only sees the inputs.
model, t = models[20], ds.test[0]
ell = model.spec.ell
pred = rollout(model, window_from_arrays(t.inputs[:ell], t.outputs[:ell]), t.inputs[ell:ell + 100])
print("   step  measured  predicted")
for k in range(0, 100, 20):
    print(f"   {k:4d}  {t.outputs[ell + k, 0]:8.3f}  {pred[k, 0]:9.3f}")

print("4) compressing the ell=20 state with a linear autoencoder")
ae_cfg = AutoencoderConfig(hidden=(), activation="identity", epochs=300, lr=3e-3, batch_size=64)
base = evaluate_rollout(model, ds.test, 100).mean
for row in compression_sweep(model, ds, [0.3, 0.6, 0.9], ae_cfg, seed=SEED):
    print(f"   rate {row.rate:.2f}: latent {row.latent_dim:2d}/{model.spec.L}, recon {row.recon_mse:.1e}, "
          f"rollout {row.rollout_mse:.2e} ({row.rollout_mse / base:.2f}x unreduced)")
print("   done; the same pipeline is available as `dynoid sweep`.")
