"""Snapshot training: evaluate ablation gap at several training budgets."""
import json, time, sys, copy
import numpy as np
sys.path.insert(0, "/root/pkg/src")
from mobdiff.city import generate_city, ground_truth_flows, bootstrap_epr_params, generate_training_dataset
from mobdiff.pipeline import RunConfig, TrainConfig, train, generate
from mobdiff.checkpoint import save_checkpoint, Checkpoint
from mobdiff.core import flows_from_dataset
from mobdiff.noise_prior import moving_probability
from mobdiff.metrics import evaluate_all
from mobdiff.diffusion import sub_schedule, inverse_ddim, ddim_sample
from mobdiff.pipeline import make_guided_eps_fn

t00 = time.time()
out = "/root/pkg/.devcache/desk2"
import os; os.makedirs(out, exist_ok=True)

cfg = RunConfig()
cfg.seed = 0
city = generate_city(cfg.city)
flows_truth = ground_truth_flows(city, cfg.city.gravity_exponent, cfg.city.total_trips)
boot = bootstrap_epr_params()
train_ds = generate_training_dataset(city, flows_truth, boot, cfg.n_train, cfg.seed)
holdout_ds = generate_training_dataset(city, flows_truth, boot, cfg.n_holdout, cfg.seed + 1,
                                       split_tag="holdout", affine=train_ds.affine)
flows_train = flows_from_dataset(train_ds)
profile = moving_probability(train_ds)
print(f"[{time.time()-t00:7.1f}] world ready", flush=True)

def probe(ckpt, tag, arms=("full", "no_prior")):
    for abl in arms:
        t0 = time.time()
        # generation EPR = world process (bootstrap params)
        gen = generate(ckpt, city, flows_train, boot, 512, abl, seed=123,
                       profile=profile, guidance=3.0, n_steps=50, chunk=256)
        rep = evaluate_all(holdout_ds, gen)
        print(f"[{time.time()-t00:7.1f}] {tag} {abl}: cpc={rep.cpc:.4f} ks_rad={rep.ks_radius:.4f} "
              f"ks_dloc={rep.ks_dailyloc:.4f} mape={rep.mape:.3f} ({(time.time()-t0)/60:.1f}m)", flush=True)
    # round trip at K=100
    ss = sub_schedule(ckpt.schedule, 100)
    hx = holdout_ds.to_model_units()[:64]
    eps_fn = make_guided_eps_fn(ckpt, ss, hx[:, 0, :].copy(), 1.0)
    z = inverse_ddim(eps_fn, hx, ss)
    err = float(np.abs(ddim_sample(eps_fn, z, ss) - hx).max())
    print(f"[{time.time()-t00:7.1f}] {tag} roundtrip K=100 err={err:.4f} zstd={z.std():.3f}", flush=True)

for stage, epochs in ((1, 10), (2, 10), (3, 10)):
    total_ep = stage * 10
    c2 = copy.deepcopy(cfg)
    c2.train = TrainConfig(epochs=total_ep, patience=99)
    t0 = time.time()
    ckpt, hist = train(c2, train_ds, holdout_ds)
    print(f"[{time.time()-t00:7.1f}] trained {total_ep} epochs fresh ({(time.time()-t0)/60:.1f}m); "
          f"holdout {hist['holdout_loss'][-1]:.4f}", flush=True)
    save_checkpoint(ckpt, f"{out}/ckpt_ep{total_ep}.mdck")
    probe(ckpt, f"ep{total_ep}", arms=("full", "no_prior") if total_ep < 30 else ("full", "no_prior", "no_fusion"))
print(f"[{time.time()-t00:7.1f}] ALL DONE", flush=True)
