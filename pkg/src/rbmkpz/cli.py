"""Command-line interface: simulate, finite-cdf, limit-cdf, compare."""

from __future__ import annotations

import sys

import click
import numpy as np

from .airylim import cdf_limit
from .dynamics import rescaled_samples
from .finitet import finite_t_cdf
from .harness import (
    ExperimentConfig,
    meta_hash,
    run_experiment,
    write_cdf_csv,
    write_samples_csv,
)

_FLAVORS = ["packed", "flat", "stat", "half-flat", "half-stat", "stat-flat"]
_PROCESSES = ["airy2", "airy1", "airy2to1", "airy2tobm", "airybmto1",
              "finite-step", "airy-stat"]


def _csv_floats(_, __, value):
    if value is None:
        return None
    return tuple(float(x) for x in value.split(","))


@click.group()
def main():
    """Reflected-Brownian-motion KPZ toolkit: simulation, exact finite-time
    determinants, and limit-law evaluation."""


@main.command()
@click.option("--flavor", required=True, type=click.Choice(_FLAVORS))
@click.option("--t", "t", required=True, type=float)
@click.option("--r", "r", required=True, callback=_csv_floats,
              help="comma-separated scaled positions")
@click.option("--theta", callback=_csv_floats, default=None,
              help="comma-separated time offsets")
@click.option("--samples", required=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--dt", type=float, default=None)
@click.option("--lambda", "lam", type=float, default=None)
@click.option("--rho", type=float, default=None)
@click.option("--out", required=True, type=click.Path())
def simulate(flavor, t, r, theta, samples, seed, dt, lam, rho, out):
    """Monte Carlo samples of the rescaled observable; CSV columns
    replica,r,theta,value."""
    params = {}
    if lam is not None:
        params["lambda"] = lam
    if rho is not None:
        params["rho"] = rho
    theta = theta or (0.0,)
    reps = rescaled_samples(flavor, t, list(r), theta_list=list(theta),
                            n_samples=samples, seed=seed, dt=dt, params=params)
    rows = []
    for rep_idx, row in enumerate(reps):
        k = 0
        for ri in r:
            for th in theta:
                rows.append((rep_idx, ri, th, row[k].value))
                k += 1
    write_samples_csv(out, rows)
    click.echo(f"wrote {len(rows)} samples to {out}")


@main.command("finite-cdf")
@click.option("--flavor", required=True, type=click.Choice(_FLAVORS))
@click.option("--t", "t", required=True, type=float)
@click.option("--n", "n", required=True, callback=_csv_floats,
              help="comma-separated particle indices")
@click.option("--a", "a", required=True, callback=_csv_floats,
              help="comma-separated thresholds")
@click.option("--lambda", "lam", type=float, default=None)
@click.option("--rho", type=float, default=None)
@click.option("--order", type=int, default=60)
@click.option("--out", required=True, type=click.Path())
def finite_cdf(flavor, t, n, a, lam, rho, order, out):
    """Exact finite-time joint CDF from the Fredholm determinant.

    A single index with several thresholds emits one table row per
    threshold; several indices are interpreted as one joint event (the
    determinant over all of them) and emit a single row."""
    params = {"order": order}
    if lam is not None:
        params["lambda"] = lam
    if rho is not None:
        params["rho"] = rho
    cfg = ExperimentConfig(kind="finite-t-vs-limit", flavor=flavor,
                           t=(t,), a=tuple(a),
                           n_indices=tuple(int(x) for x in n),
                           order=order, lam=lam, rho=rho, seed=0, out=out)
    mhash = meta_hash(cfg)
    nn = [int(x) for x in n]
    if len(nn) == 1:
        rows = [((t, nn[0], ai), finite_t_cdf(flavor, t, nn, [ai], params))
                for ai in a]
        write_cdf_csv(out, ["t", "n", "a"], rows, order, mhash)
    else:
        if len(nn) != len(a):
            raise click.UsageError("--n and --a must have equal length "
                                   "for a joint event")
        val = finite_t_cdf(flavor, t, nn, list(a), params)
        coords = [t] + nn + list(a)
        names = (["t"] + [f"n_{i+1}" for i in range(len(nn))]
                 + [f"a_{i+1}" for i in range(len(a))])
        write_cdf_csv(out, names, [(tuple(coords), val)], order, mhash)
    click.echo(f"wrote CDF table to {out}")


@main.command("limit-cdf")
@click.option("--process", required=True, type=click.Choice(_PROCESSES))
@click.option("--delta", type=float, default=None,
              help="step parameter (finite-step process only)")
@click.option("--r", "r", required=True, callback=_csv_floats)
@click.option("--s", "s", required=True, callback=_csv_floats)
@click.option("--order", type=int, default=60)
@click.option("--lcut", type=float, default=10.0)
@click.option("--out", required=True, type=click.Path())
def limit_cdf(process, delta, r, s, order, lcut, out):
    """Limit-process joint CDF.  One r with several s values emits a
    one-point table; matched r/s lists emit a single joint value."""
    cfg = ExperimentConfig(kind="finite-t-vs-limit", process=process,
                           r=tuple(r), s=tuple(s), order=order, lcut=lcut,
                           delta=delta, seed=0, out=out)
    mhash = meta_hash(cfg)
    if len(r) == 1:
        rows = [((r[0], si), cdf_limit(process, [(r[0], si)], order=order,
                                       l_cut=lcut, delta=delta))
                for si in s]
        write_cdf_csv(out, ["r", "s"], rows, order, mhash)
    else:
        if len(r) != len(s):
            raise click.UsageError("--r and --s must have equal length "
                                   "for a joint event")
        val = cdf_limit(process, list(zip(r, s)), order=order, l_cut=lcut,
                        delta=delta)
        names = ([f"r_{i+1}" for i in range(len(r))]
                 + [f"s_{i+1}" for i in range(len(s))])
        write_cdf_csv(out, names, [(tuple(r) + tuple(s), val)], order, mhash)
    click.echo(f"wrote CDF table to {out}")


@main.command()
@click.option("--kind", required=True,
              type=click.Choice(["mc-vs-finite-t", "mc-vs-limit",
                                 "finite-t-vs-limit", "property-suite"]))
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
def compare(kind, config_path):
    """Run a cross-validation experiment from a JSON config; the exit
    status reflects the pass flag."""
    config = ExperimentConfig.from_json(config_path)
    if config.kind != kind:
        raise click.UsageError(
            f"--kind {kind} does not match config kind {config.kind}")
    report = run_experiment(config)
    click.echo(f"passed={report.passed} statistics={report.statistics}")
    if config.out:
        click.echo(f"report written to {config.out}")
    sys.exit(0 if report.passed else 1)


if __name__ == "__main__":
    main()
