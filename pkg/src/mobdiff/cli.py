"""Command-line entry point.

Every command validates its inputs, writes its declared artifacts plus a run
manifest (JSON lines, one record per run), and is idempotent for fixed seeds
apart from the manifest's wall-clock fields.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
Environment: MOBDIFF_SEED overrides the config seed, MOBDIFF_THREADS caps
kernel threads (MOBDIFF_NO_NUMBA=1 selects the pure-numpy kernel lane; same
results, different speed).
"""

from __future__ import annotations

import functools
import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import kernels
from .analysis import analyze_all, export_noise_vectors
from .checkpoint import load_checkpoint, save_checkpoint
from .city import bootstrap_epr_params, generate_city, generate_training_dataset, ground_truth_flows
from .config import config_to_dict, load_config
from .core import load_city, load_dataset, save_city, save_dataset, save_flows
from .errors import ConfigError, DataIOError, NumericError
from .manifest import write_manifest
from .metrics import dump_distributions, evaluate_all, flows_from_dataset
from .noise_prior import moving_probability
from .pipeline import generate as run_generate
from .pipeline import make_guided_eps_fn, train as run_train
from .privacy import MiaProtocol, run_mia, save_privacy_report, uniqueness_ecdf
from .utility import utility_probe


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(2)
        except NumericError as e:
            click.echo(f"numeric failure: {e}", err=True)
            sys.exit(3)
        except (DataIOError, OSError) as e:
            click.echo(f"i/o error: {e}", err=True)
            sys.exit(4)

    return wrapper


@click.group()
def main():
    """Trajectory generation on a synthetic grid city: world synthesis,
    denoiser training, prior-guided generation, evaluation, privacy audits,
    and noise analysis."""
    threads = os.environ.get("MOBDIFF_THREADS")
    if threads:
        try:
            kernels.set_num_threads(int(threads))
        except ValueError:
            raise ConfigError(f"MOBDIFF_THREADS: expected an integer, got {threads!r}")


@main.command("synth-city")
@click.argument("config_path", type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path(), help="output directory")
@_exit_codes
def cmd_synth_city(config_path, out_dir):
    """Build the synthetic world and its train/holdout datasets."""
    started = time.time()
    cfg = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    city = generate_city(cfg.city)
    flows = ground_truth_flows(city, cfg.city.gravity_exponent, cfg.city.total_trips)
    epr_boot = bootstrap_epr_params(cfg.denoiser.traj_len)
    train_ds = generate_training_dataset(
        city, flows, epr_boot, cfg.n_train, cfg.seed,
        traj_len=cfg.denoiser.traj_len, sigma_data=cfg.edm.sigma_data,
    )
    holdout_ds = generate_training_dataset(
        city, flows, epr_boot, cfg.n_holdout, cfg.seed + 1,
        split_tag="holdout", traj_len=cfg.denoiser.traj_len, affine=train_ds.affine,
    )
    save_city(city, out / "city.json", cfg.city.to_json(), cfg.seed)
    save_flows(flows, out / "flows_truth.csv", cfg.seed)
    save_dataset(train_ds, out / "train.csv", cfg.seed)
    save_dataset(holdout_ds, out / "holdout.csv", cfg.seed + 1)
    write_manifest(
        out, "synth-city", config_to_dict(cfg), [config_path],
        [out / "city.json", out / "flows_truth.csv", out / "train.csv", out / "holdout.csv"],
        {"seed": cfg.seed}, started,
    )
    click.echo(f"world written to {out}")


@main.command("train")
@click.argument("config_path", type=click.Path())
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default=None, type=click.Path())
@_exit_codes
def cmd_train(config_path, data_dir, out_dir):
    """Train the denoiser; writes checkpoint.mdck and loss_log.json."""
    started = time.time()
    cfg = load_config(config_path)
    data = Path(data_dir)
    out = Path(out_dir) if out_dir else data
    out.mkdir(parents=True, exist_ok=True)
    city = load_city(data / "city.json")
    train_ds = load_dataset(data / "train.csv", city)
    holdout_ds = load_dataset(data / "holdout.csv", city)

    def log(epoch, history):
        click.echo(
            f"epoch {epoch}: train {history['train_loss'][-1]:.6f}"
            + (f" holdout {history['holdout_loss'][-1]:.6f}" if history["holdout_loss"] else "")
        )

    ckpt, history = run_train(cfg, train_ds, holdout_ds, log_fn=log)
    ckpt_path = out / "checkpoint.mdck"
    save_checkpoint(ckpt, ckpt_path)
    (out / "loss_log.json").write_text(json.dumps(history, sort_keys=True, indent=1) + "\n")
    write_manifest(
        out, "train", config_to_dict(cfg),
        [config_path, data / "train.csv", data / "holdout.csv"],
        [ckpt_path, out / "loss_log.json"],
        {"seed": cfg.seed, "schedule_hash": ckpt.schedule.content_hash()}, started,
    )
    click.echo(f"checkpoint written to {ckpt_path}")


@main.command("generate")
@click.argument("config_path", type=click.Path())
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt_path", default=None, type=click.Path())
@click.option("--ablation", type=click.Choice(["full", "no_prior", "no_fusion"]), default=None)
@click.option("--n", "n_traj", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", default=None, type=click.Path())
@_exit_codes
def cmd_generate(config_path, data_dir, ckpt_path, ablation, n_traj, seed, out_path):
    """Generate trajectories with the trained model and noise priors."""
    started = time.time()
    cfg = load_config(config_path)
    data = Path(data_dir)
    ckpt_path = Path(ckpt_path) if ckpt_path else data / "checkpoint.mdck"
    ablation = ablation or cfg.generate.ablation
    n_traj = n_traj if n_traj is not None else cfg.generate.n
    seed = seed if seed is not None else cfg.seed
    out_path = Path(out_path) if out_path else data / f"generated_{ablation}.csv"
    city = load_city(data / "city.json")
    train_ds = load_dataset(data / "train.csv", city)
    ckpt = load_checkpoint(ckpt_path)
    flows = flows_from_dataset(train_ds)
    gen = run_generate(
        ckpt, city, flows, cfg.epr, n_traj, ablation, seed,
        profile=moving_probability(train_ds),
        guidance=cfg.generate.guidance,
        n_steps=cfg.diffusion.n_sample_steps,
        chunk=cfg.generate.chunk,
    )
    save_dataset(gen, out_path, seed)
    write_manifest(
        out_path.parent, "generate", config_to_dict(cfg),
        [config_path, ckpt_path, data / "train.csv"], [out_path],
        {"seed": seed, "ablation": ablation, "n": n_traj,
         "sample_steps": cfg.diffusion.n_sample_steps,
         "schedule_hash": ckpt.schedule.content_hash()},
        started,
    )
    click.echo(f"generated dataset written to {out_path}")


@main.command("evaluate")
@click.argument("real_path", type=click.Path(exists=True))
@click.argument("gen_path", type=click.Path(exists=True))
@click.option("--city", "city_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--plots", is_flag=True, help="also render SVG figures")
@_exit_codes
def cmd_evaluate(real_path, gen_path, city_path, out_dir, plots):
    """Metric report (JSON) plus distribution CSV dumps."""
    started = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    city = load_city(city_path)
    real = load_dataset(real_path, city)
    gen = load_dataset(gen_path, city)
    report = evaluate_all(real, gen)
    report_path = out / "metric_report.json"
    report_path.write_text(report.to_json() + "\n")
    dump_distributions(real, out, "real")
    dump_distributions(gen, out, "generated")
    outputs = [report_path]
    if plots:
        from .svgplot import heatmap

        outputs.append(heatmap(flows_from_dataset(real).counts, out / "flows_real.svg", "observed flows"))
        outputs.append(heatmap(flows_from_dataset(gen).counts, out / "flows_generated.svg", "generated flows"))
    write_manifest(out, "evaluate", None, [real_path, gen_path], outputs, {}, started)
    click.echo(report.to_json())


@main.command("privacy")
@click.option("--train", "train_path", required=True, type=click.Path(exists=True))
@click.option("--holdout", "holdout_path", required=True, type=click.Path(exists=True))
@click.option("--gen", "gen_path", required=True, type=click.Path(exists=True))
@click.option("--city", "city_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--n-members", type=int, default=500)
@click.option("--n-probe", type=int, default=1000, help="generated trajectories sampled for uniqueness")
@click.option("--seed", type=int, default=0)
@_exit_codes
def cmd_privacy(train_path, holdout_path, gen_path, city_path, out_dir, n_members, n_probe, seed):
    """Uniqueness ECDFs and membership-inference success rates."""
    started = time.time()
    out = Path(out_dir)
    city = load_city(city_path)
    train_ds = load_dataset(train_path, city)
    holdout_ds = load_dataset(holdout_path, city)
    gen = load_dataset(gen_path, city)
    seed = int(os.environ.get("MOBDIFF_SEED", seed))
    protocol = MiaProtocol(
        n_members=min(n_members, len(train_ds)),
        n_nonmembers=min(n_members, len(holdout_ds)),
        seed=seed,
    )
    ecdf = uniqueness_ecdf(gen, train_ds, n_probe=n_probe, seed=seed)
    mia = run_mia(protocol, train_ds, holdout_ds, gen)
    summary = save_privacy_report(ecdf, mia, out, protocol)
    write_manifest(
        out, "privacy", None, [train_path, holdout_path, gen_path],
        [out / "privacy_summary.json"], {"seed": seed}, started,
    )
    click.echo(json.dumps(summary, sort_keys=True, indent=1))


@main.command("analyze")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--city", "city_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--n-max", type=int, default=512, help="trajectories inverted")
@click.option("--sample-steps", type=int, default=100)
@click.option("--export-noise", is_flag=True, help="dump raw inverted-noise vectors")
@_exit_codes
def cmd_analyze(ckpt_path, dataset_path, city_path, out_dir, n_max, sample_steps, export_noise):
    """Noise-trajectory regressions and the variance rhythm."""
    from .diffusion import sub_schedule

    started = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    city = load_city(city_path)
    ds = load_dataset(dataset_path, city)
    ckpt = load_checkpoint(ckpt_path)
    sched_s = sub_schedule(ckpt.schedule, sample_steps)

    locs = ds.locs
    if n_max is not None and n_max < len(ds):
        idx = np.sort(np.random.default_rng(0).choice(len(ds), n_max, replace=False))
        locs = locs[idx]
    sub = type(ds)(city, locs, ds.split_tag, ds.affine)
    # condition on each trajectory's own start cell, inversion at w=1
    from .core import loc_to_coord

    sxy = ckpt.affine.to_model(loc_to_coord(city, locs[:, 0]))
    eps_fn = make_guided_eps_fn(ckpt, sched_s, sxy, 1.0)
    results = analyze_all(eps_fn, sub, sched_s, n_max=None, scatter_path=out / "noise_scatter.csv")
    (out / "analysis.json").write_text(json.dumps(results, sort_keys=True, indent=1) + "\n")
    outputs = [out / "analysis.json", out / "noise_scatter.csv"]
    if export_noise:
        outputs.append(export_noise_vectors(eps_fn, sub, sched_s, out / "noise_vectors.csv"))
    write_manifest(
        out, "analyze", None, [ckpt_path, dataset_path], outputs,
        {"sample_steps": sample_steps, "schedule_hash": ckpt.schedule.content_hash()},
        started,
    )
    click.echo(json.dumps(results["direction"], sort_keys=True))
    click.echo(json.dumps(results["distance"], sort_keys=True))
    click.echo(f"variance rhythm correlation: {results['variance_rhythm_corr']}")


@main.command("utility-probe")
@click.argument("real_path", type=click.Path(exists=True))
@click.argument("gen_path", type=click.Path(exists=True))
@click.argument("eval_path", type=click.Path(exists=True))
@click.option("--city", "city_path", required=True, type=click.Path(exists=True))
@click.option("--mix", "mixes", multiple=True, type=float, default=(1.0, 0.5, 0.0))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@_exit_codes
def cmd_utility_probe(real_path, gen_path, eval_path, city_path, mixes, out_dir, seed):
    """First-order Markov next-location probe on real/generated mixtures.

    An explicit stand-in for neural mobility prediction: it checks whether
    generated data carries usable transition structure, nothing more.
    """
    started = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    city = load_city(city_path)
    real = load_dataset(real_path, city)
    gen = load_dataset(gen_path, city)
    eval_ds = load_dataset(eval_path, city)
    results = [utility_probe(real, gen, eval_ds, mix, seed) for mix in mixes]
    (out / "utility_probe.json").write_text(json.dumps(results, sort_keys=True, indent=1) + "\n")
    write_manifest(
        out, "utility-probe", None, [real_path, gen_path, eval_path],
        [out / "utility_probe.json"], {"seed": seed}, started,
    )
    click.echo(json.dumps(results, sort_keys=True, indent=1))


if __name__ == "__main__":
    main()
