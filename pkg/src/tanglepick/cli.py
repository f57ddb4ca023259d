"""Command-line driver: every command reads a config and flags and writes into ``--out``.

Every plot is written next to the CSV it was drawn from.
"""

from __future__ import annotations

import functools
import os
import sys

import click
import numpy as np

from . import dataio, model, stats
from .config import Config, ConfigError, load_config
from .geometry import grain_catalog, target_catalog, write_catalog
from .pick import NoGrainsAttached, Protocol
from .simulate import NotConverged, SimulationUnstable
from .study import medians_by_type, run_integrity, run_pack, run_study
from .svg import bar_plot, scatter_plot

# error type -> module tag in the message
_TAGS = ((ConfigError, "config"), (dataio.SchemaError, "data-io"), (dataio.ChecksumError, "data-io"),
         (dataio.ProvenanceError, "data-io"), (model.DegenerateDesign, "model"), (stats.SingularDesign, "stats"),
         (NoGrainsAttached, "pick"), (SimulationUnstable, "simulate"), (NotConverged, "simulate"),
         (OSError, "io"), (ValueError, "input"))


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*a, **kw):
        try:
            return fn(*a, **kw)
        except click.ClickException:
            raise
        except tuple(t for t, _ in _TAGS) as exc:
            tag = next(name for t, name in _TAGS if isinstance(exc, t))
            click.echo(f"error [{tag}]: {exc}", err=True)
            sys.exit(2)
    return wrapper


def _config(path, **overrides) -> Config:
    cfg = load_config(path) if path else Config()
    return cfg.with_overrides(**overrides)


def _out(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write(out: str, name: str, text: str) -> str:
    p = os.path.join(out, name)
    with open(p, "w", newline="") as fh:
        fh.write(text)
    return p


config_opt = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                          help="flat key = value config file")
out_opt = click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True)
seed_opt = click.option("--seed", type=click.IntRange(0, 2**64 - 1), required=True, help="RNG seed (u64)")
dataset_arg = click.argument("dataset", type=click.Path(exists=True, dir_okay=False))


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Entangled-grain picking: packing, integrity, picking studies, model fits and statistics."""


@main.command()
@config_opt
@out_opt
@_guard
def gen(config_path, out):
    """Write the grain and target catalogues."""
    cfg = _config(config_path)
    out = _out(out)
    write_catalog(os.path.join(out, "grains.jsonl"), grain_catalog())
    write_catalog(os.path.join(out, "targets.jsonl"), target_catalog(cfg.targets()))
    click.echo(f"wrote {out}/grains.jsonl and {out}/targets.jsonl")


def _type_bars(out, stem, title, ylabel, rows, value):
    by: dict[str, list[float]] = {}
    for r in rows:
        by.setdefault(r.grain_type, []).append(value(r))
    labels = list(by)
    means = [float(np.mean(by[k])) for k in labels]
    stds = [float(np.std(by[k], ddof=1)) if len(by[k]) > 1 else 0.0 for k in labels]
    lines = ["grain_type,n,mean,std,median"]
    lines += [f"{k},{len(by[k])},{m!r},{s!r},{float(np.median(by[k]))!r}" for k, m, s in zip(labels, means, stds)]
    _write(out, f"{stem}_summary.csv", "\n".join(lines) + "\n")
    _write(out, f"{stem}.svg", bar_plot(labels, means, stds, title=title, xlabel="grain type", ylabel=ylabel))


@main.command()
@config_opt
@seed_opt
@out_opt
@_guard
def pack(config_path, seed, out):
    """Pour and shake each grain type into the cylinder; report h0 and packing fraction."""
    cfg = _config(config_path, seeds=(seed,))
    out = _out(out)
    rows = run_pack(cfg)
    lines = ["grain_type,seed,n_grains,h0_mm,packing_fraction,converged"]
    lines += [f"{r.grain_type},{r.seed},{r.n_grains},{r.h0!r},{r.packing_fraction!r},{int(r.converged)}"
              for r in rows]
    _write(out, "pack.csv", "\n".join(lines) + "\n")
    _type_bars(out, "packing_fraction", "Packing fraction", "V_g / V_c", rows, lambda r: r.packing_fraction)
    for r in rows:
        click.echo(f"{r.grain_type} seed {r.seed}: h0 {r.h0:.2f} mm, packing fraction {r.packing_fraction:.4f}")


@main.command()
@config_opt
@seed_opt
@click.option("--seeds", "n_seeds", type=click.IntRange(1), default=1, show_default=True,
              help="sweep seed, seed+1, ...")
@out_opt
@_guard
def integrity(config_path, seed, n_seeds, out):
    """Remove the confining cylinder and report retained column height per grain type."""
    cfg = _config(config_path, seeds=tuple(seed + i for i in range(n_seeds)))
    out = _out(out)
    rows = run_integrity(cfg)
    lines = ["grain_type,seed,h0_mm,h_after_mm,packing_fraction,integrity,converged"]
    lines += [f"{r.grain_type},{r.seed},{r.h0!r},{r.h_after!r},{r.packing_fraction!r},{r.integrity!r},"
              f"{int(r.converged)}" for r in rows]
    _write(out, "integrity.csv", "\n".join(lines) + "\n")
    _type_bars(out, "integrity", "Structural integrity", "(h0 - dh) / h0", rows, lambda r: r.integrity)
    for k, v in medians_by_type(rows).items():
        click.echo(f"{k}: median integrity {v:.4f}")


@main.command()
@config_opt
@seed_opt
@out_opt
@click.option("--iterations", type=click.IntRange(1))
@click.option("--grains", type=click.IntRange(0), help="grains deployed per magnet pick")
@click.option("--grid", type=click.Choice(["full", "single"]))
@click.option("--protocol", type=click.Choice([p.value for p in Protocol]))
@_guard
def pick(config_path, seed, out, iterations, grains, grid, protocol):
    """Run the picking protocol and store the run (config.txt, dataset.csv, checksum.txt)."""
    cfg = _config(config_path, seeds=(seed,), iterations=iterations, grain_count=grains, grid=grid,
                  protocol=protocol)
    ds = run_study(cfg)
    run = dataio.ExperimentRun(f"pick-{seed}", cfg, ds, dataio.Provenance.SIMULATED, dataio.now_utc())
    path = dataio.write_run_dir(run, _out(out))
    click.echo(f"{len(ds)} records -> {os.path.join(path, 'dataset.csv')}")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@_guard
def replay(run_dir):
    """Re-execute a stored simulated run and confirm the dataset is byte-identical."""
    ds = dataio.replay(run_dir)
    click.echo(f"replay identical: {len(ds)} records")


def _spiky(cohort_name: str) -> bool:
    return cohort_name == "spiky"


cohort_opt = click.option("--cohort", type=click.Choice(["spiky", "nonspiky"]), required=True)


@main.command()
@dataset_arg
@cohort_opt
@click.option("--seed", type=click.IntRange(0), default=0, show_default=True, help="train/test split seed")
@out_opt
@_guard
def fit(dataset, cohort, seed, out):
    """Fit the thickness-length model on one cohort; write model.txt and fit_report.csv."""
    rep = model.fit(dataio.ingest_csv(dataset), _spiky(cohort), split_seed=seed)
    out = _out(out)
    model.save_params(rep.params, os.path.join(out, "model.txt"))
    p = rep.params
    rows = [("cohort", cohort), ("omega1", p.omega1), ("omega2", p.omega2), ("theta1_per_mm", p.theta1),
            ("theta2_mm", p.theta2), ("nmse_train", rep.nmse_train), ("nmse_test", rep.nmse_test),
            ("loo_nmse", rep.loo_nmse), ("sigma_normalizer", rep.sigma_normalizer),
            ("n_train", len(rep.train_index)), ("n_test", len(rep.test_index))]
    _write(out, "fit_report.csv", "key,value\n" + "".join(f"{k},{v!r}\n" if isinstance(v, float) else f"{k},{v}\n"
                                                           for k, v in rows))
    click.echo(f"{cohort}: NMSE train {rep.nmse_train:.4f}, test {rep.nmse_test:.4f}")


@main.command()
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@dataset_arg
@out_opt
@_guard
def predict(model_file, dataset, out):
    """Posterior predictive mean and one-sigma band over length, per thickness."""
    params = model.load_params(model_file)
    ds = dataio.ingest_csv(dataset)
    post = model.bayes_fit(ds, params)
    c = model.cohort(ds.records, params.spiky)
    out = _out(out)
    lam_grid = np.linspace(float(c.lam.min()), float(c.lam.max()), 50)
    lines = ["tau_mm,lambda_mm,mean_units,std_units"]
    for tau in np.unique(c.tau).tolist():
        m, s = post.predictive(np.full_like(lam_grid, tau), lam_grid)
        lines += [f"{tau!r},{a!r},{b!r},{d!r}" for a, b, d in zip(lam_grid.tolist(), m.tolist(), s.tolist())]
        sel = c.tau == tau
        lams = np.unique(c.lam[sel])
        obs_m = [float(c.y[sel & (c.lam == v)].mean()) for v in lams]
        obs_s = [float(c.y[sel & (c.lam == v)].std(ddof=1)) if np.sum(sel & (c.lam == v)) > 1 else 0.0
                 for v in lams]
        obs = ["lambda_mm,mean_units,std_units"] + [f"{a!r},{b!r},{d!r}" for a, b, d in zip(lams.tolist(), obs_m,
                                                                                              obs_s)]
        _write(out, f"observed_tau{tau:g}.csv", "\n".join(obs) + "\n")
        _write(out, f"predict_tau{tau:g}.svg",
               scatter_plot(lams, obs_m, obs_s, title=f"tau = {tau:g} mm", xlabel="length (mm)",
                            ylabel="picked units", line=(lam_grid, m), band=(lam_grid, m - s, m + s)))
    _write(out, "predictions.csv", "\n".join(lines) + "\n")
    click.echo(f"noise std {post.noise_variance ** 0.5:.3f}; wrote {out}/predictions.csv")


@main.command()
@click.argument("dataset", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--predictors", default="length,thickness,spikes", show_default=True)
@click.option("--ids", help="interactional dominances, comma separated, in predictor order")
@click.option("--full-r2", type=float, help="full-model R^2 that --ids are normalized by")
@out_opt
@_guard
def dominance(dataset, predictors, ids, full_r2, out):
    """Dominance analysis on a dataset, or normalization of given dominances with --ids/--full-r2."""
    names = tuple(s.strip() for s in predictors.split(",") if s.strip())
    out = _out(out)
    if ids is not None:
        if full_r2 is None:
            raise click.UsageError("--ids needs --full-r2")
        vals = [float(v) for v in ids.split(",")]
        if len(vals) != len(names):
            raise click.UsageError(f"{len(vals)} ids for {len(names)} predictors")
        pct = stats.relative_importance(dict(zip(names, vals)), full_r2)
        lines = ["predictor,interactional_dominance,relative_importance_pct"]
        lines += [f"{p},{v!r},{pct[p]!r}" for p, v in zip(names, vals)] + [f"full_r2,{full_r2!r},"]
        text = "\n".join(lines) + "\n"
    elif dataset is not None:
        rep = stats.dominance_analysis(dataio.ingest_csv(dataset), names)
        pct = rep.relative_importance_pct
        text = rep.csv()
    else:
        raise click.UsageError("give a DATASET or --ids with --full-r2")
    _write(out, "dominance.csv", text)
    _write(out, "dominance.svg", bar_plot(list(names), [pct[p] for p in names], [0.0] * len(names),
                                          title="Relative importance", xlabel="predictor", ylabel="% of R^2"))
    for p in names:
        click.echo(f"{p}: {pct[p]:.2f}%")


def _two_samples(dataset, other, field):
    a = dataio.ingest_csv(dataset).records
    if other is not None:
        b = dataio.ingest_csv(other).records
    else:
        b = [r for r in a if r.protocol is Protocol.GRIPPER]
        a = [r for r in a if r.protocol is Protocol.MAGNET]
        if not a or not b:
            raise ValueError("one dataset must hold both Magnet and Gripper records, or give a second dataset")
    return [float(getattr(r, field)) for r in a], [float(getattr(r, field)) for r in b]


def _test_command(name, fn, doc):
    @main.command(name=name, help=doc)
    @dataset_arg
    @click.argument("other", required=False, type=click.Path(exists=True, dir_okay=False))
    @click.option("--field", type=click.Choice(["picked_units", "picked_mass_g"]), default="picked_units",
                  show_default=True)
    @out_opt
    @_guard
    def cmd(dataset, other, field, out):
        a, b = _two_samples(dataset, other, field)
        res = fn(a, b)
        _write(_out(out), f"{name}.csv", "kind,statistic,p_value,significant\n" + res.csv_line() + "\n")
        click.echo(res.csv_line())
    return cmd


_test_command("ttest", stats.t_test_mean, "Welch t test on mean picks: two datasets, or Magnet vs Gripper in one.")
_test_command("ftest", stats.f_test_variance, "Variance-ratio F test on picks: two datasets, or Magnet vs Gripper.")


@main.command()
@dataset_arg
@out_opt
@_guard
def report(dataset, out):
    """Per-configuration summary table with bar and grain-count plots."""
    ds = dataio.ingest_csv(dataset)
    summ = dataio.summarize(ds)
    out = _out(out)
    _write(out, "summary.csv", dataio.summary_csv(summ))
    keys = list(summ)
    labels = [f"{k[2]:g}/{k[3]:g}/{k[4]}" for k in keys]
    _write(out, "summary.svg", bar_plot(labels, [summ[k].mean for k in keys], [summ[k].std for k in keys],
                                        title="Picked units per target (tau/lambda/spikes)",
                                        xlabel="target", ylabel="picked units"))
    counts = sorted({k[1] for k in keys})
    if len(counts) > 1:
        # one series per grain count: pooled over targets of the same protocol
        lines = ["protocol,grain_count,n,mean_units,std_units"]
        for proto in sorted({k[0] for k in keys}):
            xs, ms, ss = [], [], []
            for g in counts:
                u = [r.picked_units for r in ds.records if r.grain_count == g and r.protocol.value == proto]
                if u:
                    xs.append(g)
                    ms.append(float(np.mean(u)))
                    ss.append(float(np.std(u, ddof=1)) if len(u) > 1 else 0.0)
                    lines.append(f"{proto},{g},{len(u)},{ms[-1]!r},{ss[-1]!r}")
            _write(out, f"grain_count_{proto}.svg",
                   scatter_plot(xs, ms, ss, title=f"{proto}: picks vs deployed grains", xlabel="grains",
                                ylabel="picked units"))
        _write(out, "grain_count.csv", "\n".join(lines) + "\n")
    click.echo(f"{len(keys)} configurations -> {out}/summary.csv")


if __name__ == "__main__":
    main()
