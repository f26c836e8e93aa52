"""Experiment orchestration: configs, ECDFs, KS/DKW gates, report emission.

The three comparison kinds wire the layers of the package against each
other (Monte Carlo vs finite-time determinants vs limit laws); the
property suite checks structural facts of the dynamics directly.  Reports
are bit-reproducible for a fixed config: the only non-deterministic field
is the timestamp, which is isolated on its own line of the JSON output.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .airylim import cdf_limit
from .dynamics import (
    burke_check,
    rescaled_samples,
    scaled_index,
)
from .finitet import finite_t_cdf
from .paths import TimeGrid, make_initial_condition, sample_paths
from .dynamics import evolve_skorokhod

KINDS = ("mc-vs-finite-t", "mc-vs-limit", "finite-t-vs-limit", "property-suite")

_CONFIG_KEYS = ("kind", "flavor", "process", "t", "r", "theta", "s", "a",
                "n_indices", "samples", "seed", "dt", "order", "lcut",
                "delta", "lambda", "rho", "out")

_FLAVOR_PROCESS = {
    # flavor -> (limit process, params for finite_t_cdf)
    "packed": "airy2",
    "flat": "airy1",
    "half-flat": "airy2to1",
    "half-stat": "airy2tobm",
    "stat-flat": "airybmto1",
    "stat": "airy-stat",
}


def dkw_band(n: int, alpha: float = 0.01) -> float:
    """Two-sided Dvoretzky-Kiefer-Wolfowitz band width at confidence 1-alpha."""
    if n < 1:
        raise ValueError("need at least one sample")
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    flavor: str | None = None
    process: str | None = None
    t: tuple = ()
    r: tuple = (0.0,)
    theta: tuple = (0.0,)
    s: tuple = ()
    a: tuple = ()
    n_indices: tuple = ()
    samples: int = 1000
    seed: int = 0
    dt: float | None = None
    order: int = 60
    lcut: float = 10.0
    delta: float | None = None
    lam: float | None = None
    rho: float | None = None
    out: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.seed is None:
            raise ValueError("seed is mandatory")
        for name in ("samples", "order"):
            if getattr(self, name) is not None and getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for tv in self.t:
            if tv <= 0:
                raise ValueError("t must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(_CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "kind" not in d:
            raise ValueError("config requires 'kind'")
        if "seed" not in d:
            raise ValueError("config requires 'seed' (reports must be re-runnable)")

        def aslist(key):
            v = d.get(key)
            if v is None:
                return None
            if isinstance(v, (int, float)):
                return (float(v),)
            return tuple(float(x) for x in v)

        kw = dict(
            kind=d["kind"],
            flavor=d.get("flavor"),
            process=d.get("process"),
            samples=int(d.get("samples", 1000)),
            seed=int(d["seed"]),
            dt=None if d.get("dt") is None else float(d["dt"]),
            order=int(d.get("order", 60)),
            lcut=float(d.get("lcut", 10.0)),
            delta=None if d.get("delta") is None else float(d["delta"]),
            lam=None if d.get("lambda") is None else float(d["lambda"]),
            rho=None if d.get("rho") is None else float(d["rho"]),
            out=d.get("out"),
        )
        for key in ("t", "r", "theta", "s", "a"):
            v = aslist(key)
            if v is not None:
                kw[key] = v
        if d.get("n_indices") is not None:
            kw["n_indices"] = tuple(int(x) for x in d["n_indices"])
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        for key in ("t", "r", "theta", "s", "a", "n_indices"):
            d[key] = list(d[key])
        return {k: d[k] for k in _CONFIG_KEYS}

    def params(self) -> dict:
        p = {}
        if self.lam is not None:
            p["lambda"] = self.lam
        if self.rho is not None:
            p["rho"] = self.rho
        return p


def meta_hash(config: "ExperimentConfig") -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


# ---------------------------------------------------------------------------
# ECDF / KS machinery


@dataclass(frozen=True)
class EcdfTable:
    values: np.ndarray  # sorted
    n: int

    def eval_left(self, x) -> np.ndarray:
        """P(X < x): left limit of the right-continuous step function."""
        return np.searchsorted(self.values, np.asarray(x, float), "left") / self.n

    def eval_right(self, x) -> np.ndarray:
        """P(X <= x)."""
        return np.searchsorted(self.values, np.asarray(x, float), "right") / self.n


def ecdf(samples) -> EcdfTable:
    v = np.sort(np.asarray(samples, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("empty sample set")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite sample values")
    return EcdfTable(values=v, n=v.size)


def ks_distance(table: EcdfTable, cdf, grid) -> float:
    """sup over grid and sample points of |ECDF - cdf|, both step sides.

    cdf may be a callable (evaluated pointwise) or a precomputed array
    matching grid.
    """
    grid = np.asarray(grid, dtype=float)
    pts = np.unique(np.concatenate([grid, table.values[
        np.searchsorted(table.values, grid.min()):
        np.searchsorted(table.values, grid.max(), "right")]]))
    if callable(cdf):
        f = np.array([float(cdf(x)) for x in pts])
    else:
        f = np.asarray(cdf, dtype=float)
        pts = grid
    lo = table.eval_left(pts)
    hi = table.eval_right(pts)
    return float(max(np.abs(hi - f).max(), np.abs(f - lo).max()))


# ---------------------------------------------------------------------------
# Reports


@dataclass
class ComparisonReport:
    kind: str
    passed: bool
    statistics: dict
    band: float | None
    metadata: dict
    files: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "passed": bool(self.passed),
            "statistics": self.statistics,
            "band": self.band,
            "metadata": self.metadata,
            "files": list(self.files),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def write_samples_csv(path, rows) -> None:
    """rows: iterable of (replica, r, theta, value)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "r", "theta", "value"])
        for rep, r, th, val in rows:
            w.writerow([rep, f"{r:.17g}", f"{th:.17g}", f"{val:.17g}"])


def write_cdf_csv(path, coord_names, rows, order, mhash) -> None:
    """rows: iterable of (coords tuple, value)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(coord_names) + ["value", "order", "meta_hash"])
        for coords, val in rows:
            w.writerow([f"{c:.17g}" for c in coords]
                       + [f"{val:.17g}", order, mhash])


def _render_comparison_figure(path, panels, title):
    """panels: list of dicts with keys label, grid, exact, ecdf_x, ecdf_y."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 4),
                             squeeze=False)
    for ax, p in zip(axes[0], panels):
        if p.get("ecdf_x") is not None:
            ax.step(p["ecdf_x"], p["ecdf_y"], where="post", lw=1.0,
                    label="empirical", color="C0")
        ax.plot(p["grid"], p["exact"], lw=1.5, color="C1", label=p["label"])
        ax.set_xlabel("s")
        ax.set_ylabel("CDF")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="lower right", fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _render_sweep_figure(path, ts, dists, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(ts, dists, "o-")
    ax.set_xlabel("t")
    ax.set_ylabel("sup distance to limit law")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Experiment kinds


def _out_paths(config):
    if config.out is None:
        raise ValueError("config.out is required for run_experiment")
    out = Path(config.out)
    stem = out.parent / out.stem
    return out, stem


def _mc_vs_cdf(config: ExperimentConfig, exact_cdf_fn, label: str):
    """Shared core of mc-vs-finite-t and mc-vs-limit.

    exact_cdf_fn(r, s) -> probability of {X(r) <= s}.
    """
    out, stem = _out_paths(config)
    t = config.t[0]
    grid = np.asarray(config.s if config.s else np.linspace(-4.0, 4.0, 25))
    reps = rescaled_samples(config.flavor, t, list(config.r),
                            theta_list=list(config.theta),
                            n_samples=config.samples, seed=config.seed,
                            dt=config.dt, params=config.params())
    mhash = meta_hash(config)
    sample_rows = []
    panels = []
    stats = {}
    cdf_rows = []
    band = dkw_band(config.samples)
    passed = True
    n_th = len(config.theta)
    for i, r in enumerate(config.r):
        vals = np.array([row[i * n_th].value for row in reps])
        for rep_idx, row in enumerate(reps):
            for j, th in enumerate(config.theta):
                sample_rows.append((rep_idx, r, th, row[i * n_th + j].value))
        table = ecdf(vals)
        exact = np.array([exact_cdf_fn(r, s) for s in grid])
        ks = ks_distance(table, exact, grid)
        stats[f"ks_r={r:g}"] = ks
        passed = passed and (ks <= band)
        cdf_rows.extend([((r, s), v) for s, v in zip(grid, exact)])
        panels.append(dict(label=label, grid=grid, exact=exact,
                           ecdf_x=table.values, ecdf_y=np.arange(1, table.n + 1) / table.n))
    files = []
    write_samples_csv(f"{stem}.samples.csv", sample_rows)
    files.append(f"{stem}.samples.csv")
    write_cdf_csv(f"{stem}.cdf.csv", ["r", "s"], cdf_rows, config.order, mhash)
    files.append(f"{stem}.cdf.csv")
    fig = f"{stem}.png"
    _render_comparison_figure(fig, panels,
                              f"{config.kind}: {config.flavor}, t={t:g}")
    files.append(fig)
    return stats, band, passed, files


def _run_mc_vs_finite_t(config: ExperimentConfig):
    t = config.t[0]
    t13 = t ** (1.0 / 3.0)
    p = config.params()
    p["order"] = config.order
    p["l_cut"] = config.lcut

    def exact(r, s):
        n = scaled_index(t, r)
        a = 2.0 * t + 2.0 * r * t ** (2.0 / 3.0) + s * t13
        return finite_t_cdf(config.flavor, t, [n], [a], p)

    return _mc_vs_cdf(config, exact, "finite-t determinant")


def _run_mc_vs_limit(config: ExperimentConfig):
    process = config.process or _FLAVOR_PROCESS[config.flavor]

    def exact(r, s):
        return cdf_limit(process, [(r, s)], order=config.order,
                         l_cut=config.lcut, delta=config.delta)

    return _mc_vs_cdf(config, exact, f"{process} limit")


def _run_finite_t_vs_limit(config: ExperimentConfig):
    out, stem = _out_paths(config)
    flavor = config.flavor or "packed"
    process = config.process or _FLAVOR_PROCESS[flavor]
    ts = config.t if config.t else (25.0, 100.0, 400.0)
    svals = config.s if config.s else (-2.0, 0.0, 2.0)
    r = config.r[0]
    p = config.params()
    p["order"] = config.order
    p["l_cut"] = config.lcut
    mhash = meta_hash(config)
    lim = {s: cdf_limit(process, [(r, s)], order=config.order,
                        l_cut=config.lcut, delta=config.delta) for s in svals}
    dists = []
    rows = []
    for t in ts:
        t13 = t ** (1.0 / 3.0)
        worst = 0.0
        for s in svals:
            n = scaled_index(t, r)
            a = 2.0 * t + 2.0 * r * t ** (2.0 / 3.0) + s * t13
            v = finite_t_cdf(flavor, t, [n], [a], p)
            worst = max(worst, abs(v - lim[s]))
            rows.append(((t, r, s), v))
        dists.append(worst)
    passed = all(d2 <= d1 + 1e-12 for d1, d2 in zip(dists, dists[1:]))
    stats = {f"sup_dist_t={t:g}": d for t, d in zip(ts, dists)}
    files = []
    write_cdf_csv(f"{stem}.cdf.csv", ["t", "r", "s"], rows, config.order, mhash)
    files.append(f"{stem}.cdf.csv")
    fig = f"{stem}.png"
    _render_sweep_figure(fig, list(ts), dists,
                         f"{flavor} finite-t vs {process}")
    files.append(fig)
    return stats, None, passed, files


def _attractiveness_suite(config: ExperimentConfig):
    """Pathwise bound: two systems driven by the same noise stay within the
    sup-distance of their initial conditions."""
    n_pairs = config.samples
    window = (1, 10)
    t_end = config.t[0] if config.t else 4.0
    grid = TimeGrid(t_end=t_end, n_steps=max(1, int(round(t_end / (config.dt or 0.01)))))
    flavors = ["packed", "half-flat", "stat-flat", "half-stat"]
    violations = 0
    worst = -np.inf
    for k in range(n_pairs):
        fa = flavors[k % len(flavors)]
        fb = flavors[(k // len(flavors) + k + 1) % len(flavors)]
        win = window if (fa != "half-stat" and fb != "half-stat") else (1, 10)
        ic_a = make_initial_condition(fa, config.params(), win, config.seed, replica=k)
        ic_b = make_initial_condition(fb, config.params(), win, config.seed, replica=k)
        paths = sample_paths(config.seed, grid, win, replica=k)
        xa = evolve_skorokhod(ic_a, paths, bridge_correction=True)
        xb = evolve_skorokhod(ic_b, paths, bridge_correction=True)
        bound = np.abs(ic_a.zeta - ic_b.zeta).max()
        dist = np.abs(xa.x - xb.x).max()
        excess = dist - bound
        worst = max(worst, excess)
        if excess > 1e-9:
            violations += 1
    return {"pairs": n_pairs, "violations": violations,
            "worst_excess": float(worst)}, violations == 0


def _lln_suite(config: ExperimentConfig):
    """x_n(1)/sqrt(n) at large n for the packed initial condition."""
    n_top = config.n_indices[0] if config.n_indices else 400
    reps = config.samples
    grid = TimeGrid(t_end=1.0, n_steps=int(round(1.0 / (config.dt or 2e-3))))
    vals = np.empty(reps)
    for k in range(reps):
        ic = make_initial_condition("packed", {}, (1, n_top), config.seed, replica=k)
        p = sample_paths(config.seed, grid, (1, n_top), replica=k)
        traj = evolve_skorokhod(ic, p, bridge_correction=True)
        vals[k] = traj.x[-1, -1] / math.sqrt(n_top)
    mean = float(vals.mean())
    return {"n": n_top, "replicas": reps, "mean": mean,
            "target": 2.0, "rel_err": abs(mean - 2.0) / 2.0}, \
        abs(mean - 2.0) / 2.0 <= 0.05


def _run_property_suite(config: ExperimentConfig):
    suite = config.process or "burke"
    if suite == "burke":
        rho = config.rho if config.rho is not None else 1.0
        t = config.t[0] if config.t else 10.0
        st = burke_check(config.seed, rho, t, config.samples)
        ok = (abs(st["sup_mean"] - st["sup_mean_target"])
              <= 0.05 * st["sup_mean_target"]
              and st["gaps_ks"] <= st["gaps_dkw99"]
              and abs(st["departure_var"] - st["departure_var_target"])
              <= 0.05 * st["departure_var_target"])
        return st, None, ok, []
    if suite == "attract":
        st, ok = _attractiveness_suite(config)
        return st, None, ok, []
    if suite == "lln":
        st, ok = _lln_suite(config)
        return st, None, ok, []
    raise ValueError(f"unknown property suite {suite!r}; "
                     "expected burke, attract, or lln")


def run_experiment(config: ExperimentConfig) -> ComparisonReport:
    runners = {
        "mc-vs-finite-t": _run_mc_vs_finite_t,
        "mc-vs-limit": _run_mc_vs_limit,
        "finite-t-vs-limit": _run_finite_t_vs_limit,
        "property-suite": _run_property_suite,
    }
    stats, band, passed, files = runners[config.kind](config)
    report = ComparisonReport(
        kind=config.kind,
        passed=passed,
        statistics=stats,
        band=band,
        metadata={"config": config.to_dict(), "meta_hash": meta_hash(config)},
        files=files,
    )
    if config.out:
        report.write(config.out)
    return report
