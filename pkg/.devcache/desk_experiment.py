"""Dev experiment: desk-scale train + quality probes at several epoch budgets."""
import json, time, sys
import numpy as np
sys.path.insert(0, "/root/pkg/src")
from mobdiff.city import CityGenConfig, generate_city, ground_truth_flows, bootstrap_epr_params, generate_training_dataset
from mobdiff.pipeline import RunConfig, TrainConfig, train, generate, make_guided_eps_fn
from mobdiff.checkpoint import save_checkpoint, Checkpoint
from mobdiff.diffusion import sub_schedule, ddim_sample, inverse_ddim
from mobdiff.core import flows_from_dataset, loc_to_coord
from mobdiff.noise_prior import moving_probability
from mobdiff.metrics import evaluate_all

t00 = time.time()
out = "/root/pkg/.devcache/desk1"
import os; os.makedirs(out, exist_ok=True)

cfg = RunConfig()
cfg.seed = 0
city = generate_city(cfg.city)
flows_truth = ground_truth_flows(city, cfg.city.gravity_exponent, cfg.city.total_trips)
epr_boot = bootstrap_epr_params()
t0 = time.time()
train_ds = generate_training_dataset(city, flows_truth, epr_boot, cfg.n_train, cfg.seed)
holdout_ds = generate_training_dataset(city, flows_truth, epr_boot, cfg.n_holdout, cfg.seed + 1,
                                       split_tag="holdout", affine=train_ds.affine)
print(f"[{time.time()-t00:7.1f}] datasets: {time.time()-t0:.1f}s", flush=True)

def log(epoch, history):
    print(f"[{time.time()-t00:7.1f}] epoch {epoch}: train {history['train_loss'][-1]:.5f} "
          f"holdout {history['holdout_loss'][-1]:.5f}", flush=True)

t0 = time.time()
ckpt, history = train(cfg, train_ds, holdout_ds, log_fn=log)
train_time = time.time() - t0
print(f"[{time.time()-t00:7.1f}] training done in {train_time/60:.1f} min, epochs {len(history['train_loss'])}", flush=True)
save_checkpoint(ckpt, f"{out}/checkpoint.mdck")
json.dump(history, open(f"{out}/history.json", "w"))

# round-trip probe on 64 holdout trajectories
sub100 = sub_schedule(ckpt.schedule, 100)
hx = holdout_ds.to_model_units()[:64]
starts_xy = hx[:, 0, :].copy()
for K in (20, 50, 100):
    ss = sub_schedule(ckpt.schedule, K)
    eps_fn = make_guided_eps_fn(ckpt, ss, starts_xy, 1.0)
    t0 = time.time()
    z = inverse_ddim(eps_fn, hx, ss)
    xb = ddim_sample(eps_fn, z, ss)
    err = np.abs(xb - hx).max()
    print(f"[{time.time()-t00:7.1f}] round-trip K={K}: max abs err {err:.4f} ({time.time()-t0:.0f}s); z std {z.std():.3f}", flush=True)

# quick ablation CPC probe with n=512
flows_train = flows_from_dataset(train_ds)
profile = moving_probability(train_ds)
for abl in ("full", "no_prior", "no_fusion"):
    t0 = time.time()
    gen = generate(ckpt, city, flows_train, cfg.epr, 512, abl, seed=123, profile=profile,
                   guidance=3.0, n_steps=100, chunk=256)
    rep = evaluate_all(holdout_ds, gen)
    print(f"[{time.time()-t00:7.1f}] {abl}: cpc={rep.cpc:.4f} ks_radius={rep.ks_radius:.4f} "
          f"ks_dailyloc={rep.ks_dailyloc:.4f} mape={rep.mape:.3f} div={rep.diversity:.4f} ({(time.time()-t0)/60:.1f} min)", flush=True)
print(f"[{time.time()-t00:7.1f}] ALL DONE", flush=True)
