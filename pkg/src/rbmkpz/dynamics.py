"""Evolution of the reflected particle system.

The core recursion is the Skorokhod representation: each particle is a
Brownian motion pushed up by the running maximum of its left neighbour,

    x_n(t) = max( zeta_n + B_n(t),  sup_{s<=t} ( x_{n-1}(s) + B_n(t) - B_n(s) ) ),

realized on the grid by one maximum.accumulate sweep per particle.  The
same quantity is recomputed independently through the variational (last
passage) formula as a consistency oracle.  Infinite systems are truncated
with a doubling window that reuses identical counter-based noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .paths import (
    BrownianPaths,
    HeightVector,
    TimeGrid,
    make_initial_condition,
    sample_paths,
)

__all__ = [
    "TrajectorySet",
    "ScaledSample",
    "ExitPointRecord",
    "evolve_skorokhod",
    "variational_value",
    "evolve_truncated_infinite",
    "exit_point",
    "rescaled_samples",
    "burke_check",
    "scaled_index",
]


@dataclass(frozen=True)
class TrajectorySet:
    index_range: tuple[int, int]
    grid: TimeGrid
    x: np.ndarray  # shape (n_indices, n_steps+1)
    ic: HeightVector
    truncation_M: int = 0
    converged: bool = True

    def values(self, n: int) -> np.ndarray:
        return self.x[n - self.index_range[0]]

    def at(self, n: int, j: int) -> float:
        return float(self.x[n - self.index_range[0], j])


@dataclass(frozen=True)
class ScaledSample:
    flavor: str
    t: float
    r: float
    theta: float
    value: float


@dataclass(frozen=True)
class ExitPointRecord:
    n: int
    t: float
    Z: float


def _bridge_maxima(values: np.ndarray, var: float, uniforms: np.ndarray) -> np.ndarray:
    """Per-step maxima of Brownian bridges with endpoint rows values[..., i],
    values[..., i+1] and variance ``var`` per step.  Exact conditional law:
    M = (a + b + sqrt((b-a)^2 - 2 var ln U)) / 2."""
    a = values[..., :-1]
    b = values[..., 1:]
    return 0.5 * (a + b + np.sqrt((b - a) ** 2 - 2.0 * var * np.log(uniforms)))


def evolve_skorokhod(
    ic: HeightVector,
    paths: BrownianPaths,
    leftmost_drift: float | None = None,
    bridge_correction: bool = False,
) -> TrajectorySet:
    """Forward sweep of the reflection recursion over the grid.

    The leftmost particle of the window is a free Brownian motion started at
    its initial height (plus ``leftmost_drift``*t if given — used for the
    boundary representation of half-infinite systems).  With
    ``bridge_correction`` the running maximum of x_{n-1}(s) - B_n(s) is taken
    over sampled within-step bridge maxima rather than grid values only,
    removing the O(sqrt(dt)) reflection bias (Monte Carlo use; the exact
    dual-algorithm identity holds only without it).
    """
    if ic.index_range != paths.index_range:
        raise ValueError(
            f"index ranges differ: ic {ic.index_range} vs paths {paths.index_range}"
        )
    n_min, n_max = ic.index_range
    J = paths.grid.n_steps
    x = np.empty((n_max - n_min + 1, J + 1))

    b = paths.path(n_min)
    x[0] = ic.zeta[0] + b
    if leftmost_drift is not None:
        x[0] += leftmost_drift * paths.grid.times()

    for i, n in enumerate(range(n_min + 1, n_max + 1), start=1):
        inc = paths.increments_for(n)
        s = np.empty(J + 1)
        s[0] = 0.0
        np.cumsum(inc, out=s[1:])
        d = x[i - 1] - s
        if bridge_correction:
            u = paths.bridge_uniforms_for(n)
            m = _bridge_maxima(d, 2.0 * paths.grid.dt, u)
            run = np.empty(J + 1)
            run[0] = d[0]
            np.maximum.accumulate(m, out=run[1:])
        else:
            run = np.maximum.accumulate(d)
        x[i] = s + np.maximum(ic.zeta[i], run)
        # enforce the ordering invariant exactly against FP re-rounding
        np.maximum(x[i], x[i - 1], out=x[i])
    return TrajectorySet(index_range=ic.index_range, grid=paths.grid, x=x, ic=ic)


def variational_value(
    paths: BrownianPaths,
    ic: HeightVector,
    k_min: int,
    n: int,
    t: float,
) -> float:
    """x_n(t) through the last-passage formula max_k { Y_{k,n}(t) + zeta_k }.

    Each Y_{k,n} is computed by its own layered dynamic program, a loop
    structure independent of the Skorokhod sweep; used as a self-oracle.
    """
    grid = paths.grid
    j = t / grid.dt
    jr = round(j)
    if abs(j - jr) > 1e-9:
        raise ValueError(f"t={t} is not on the grid (dt={grid.dt})")
    J = int(jr)
    if k_min > n:
        raise ValueError("k_min must be <= n")
    best = -math.inf
    cums = {}
    for m in range(k_min, n + 1):
        s = np.empty(J + 1)
        s[0] = 0.0
        np.cumsum(paths.increments_for(m)[:J], out=s[1:])
        cums[m] = s
    for k in range(k_min, n + 1):
        g = cums[k].copy()  # layer k contribution B_k(s_k)
        for m in range(k + 1, n + 1):
            bm = cums[m]
            g = bm + np.maximum.accumulate(g - bm)
        best = max(best, g[J] + ic.value(k))
    return best


def evolve_truncated_infinite(
    flavor: str,
    params: dict | None,
    seed: int,
    grid: TimeGrid,
    n_target: int,
    t: float,
    tol: float = 1e-9,
    m_start: int = 8,
    m_max: int = 4096,
    replica: int = 0,
) -> tuple[float, int, bool]:
    """x_{n_target}(t) for flavors unbounded below, by window doubling.

    The truncated system keeps particles [-M, n_target], its leftmost one a
    free Brownian motion (drift rho for stat-type lower tails); identical
    counter-based noise is reused across M so values stabilize monotonically.
    Stops after two consecutive agreements below tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    params = dict(params or {})
    j = int(round(t / grid.dt))

    def value_at(M: int) -> float:
        rng = (-M, n_target)
        ic = make_initial_condition(flavor, params, rng, seed, replica)
        p = sample_paths(seed, grid, rng, replica)
        drift = params.get("rho") if flavor == "stat" else None
        traj = evolve_skorokhod(ic, p, leftmost_drift=drift)
        return traj.at(n_target, j)

    if flavor in ("packed", "half-flat", "half-stat", "stat-flat"):
        lo = {"packed": 1, "half-flat": 1, "half-stat": 0, "stat-flat": 1}[flavor]
        rng = (lo, max(n_target, lo))
        ic = make_initial_condition(flavor, params, rng, seed, replica)
        p = sample_paths(seed, grid, rng, replica)
        drift = params.get("rho") if flavor == "stat-flat" else None
        traj = evolve_skorokhod(ic, p, leftmost_drift=drift)
        return traj.at(n_target, j), 0, True

    M = m_start
    prev = value_at(M)
    hits = 0
    while M < m_max:
        M *= 2
        cur = value_at(M)
        if abs(cur - prev) < tol:
            hits += 1
            if hits >= 2:
                return cur, M, True
        else:
            hits = 0
        prev = cur
    return prev, M, False


def exit_point(
    paths: BrownianPaths,
    boundary_drift: float,
    n: int,
    t: float,
) -> ExitPointRecord:
    """Argmax time of the boundary segment in the stationary-type dynamic
    program: Z = argmax_s ( B_0(s) + rho*s + best path (s,1) -> (t,n) ).

    Requires index 0 (the boundary line) in the window.  Grid-valued; ties
    broken toward the smallest grid time.
    """
    if paths.index_range[0] > 0:
        raise ValueError("paths must include the boundary index 0")
    grid = paths.grid
    J = int(round(t / grid.dt))
    times = grid.times()[: J + 1]

    # backward DP: g_i(j) = max over paths from (t_j, layer i) to (t_J, layer n)
    g = None
    for i in range(n, 0, -1):
        s = np.empty(J + 1)
        s[0] = 0.0
        np.cumsum(paths.increments_for(i)[:J], out=s[1:])
        if g is None:
            g = s[J] - s
        else:
            h = s + g
            rev = np.maximum.accumulate(h[::-1])[::-1]
            g = rev - s
    b0 = np.empty(J + 1)
    b0[0] = 0.0
    np.cumsum(paths.increments_for(0)[:J], out=b0[1:])
    total = b0 + boundary_drift * times + (g if g is not None else 0.0)
    jz = int(np.argmax(total))  # first occurrence = smallest time
    return ExitPointRecord(n=n, t=times[J], Z=float(times[jz]))


def scaled_index(t: float, r: float, theta: float = 0.0) -> int:
    """Particle index floor(t + 2 r t^{2/3} + theta)."""
    return math.floor(t + 2.0 * r * t ** (2.0 / 3.0) + theta)


def _window_for(flavor: str, t: float, r_list, theta_list) -> tuple[int, int]:
    lows = {"packed": 1, "half-flat": 1, "half-stat": 0, "stat": 0, "stat-flat": 1}
    idx = [scaled_index(t, r, th) for r in r_list for th in theta_list]
    n_hi = max(idx)
    if flavor == "flat":
        # two-sided flat: contributions from the left decay on the t^{2/3}
        # scale; truncate a wide margin below the lowest requested index
        return min(idx) - int(6.0 * t ** (2.0 / 3.0) + 20.0), n_hi
    n_lo = lows.get(flavor)
    if n_lo is None:
        raise ValueError(f"flavor {flavor!r} needs explicit truncation")
    if min(idx) < n_lo:
        raise IndexError(
            f"requested (t, r, theta) reaches index {min(idx)} below the "
            f"flavor minimum {n_lo}"
        )
    return n_lo, n_hi


def rescaled_samples(
    flavor: str,
    t: float,
    r_list,
    theta_list=None,
    n_samples: int = 1000,
    seed: int = 0,
    dt: float | None = None,
    params: dict | None = None,
    bridge_correction: bool = True,
) -> list[list[ScaledSample]]:
    """Monte Carlo replicas of the rescaled observable

        X_t(r, theta) = t^{-1/3} ( x_{floor(t+2rt^{2/3}+theta)}(t+theta)
                                   - 2t - 2theta - 2rt^{2/3} ).

    One replica shares its driving noise across all (r, theta), preserving
    the joint law.  The stat flavor runs in its boundary representation
    (drifted Brownian particle at index 0); stat-flat in its drifted-first-
    particle representation.
    """
    params = dict(params or {})
    theta_list = list(theta_list or [0.0])
    r_list = list(r_list)
    if dt is None:
        dt = 1e-3 * t
    t_max = t + max(theta_list)
    n_steps = max(1, int(round(t_max / dt)))
    grid = TimeGrid(t_end=t_max, n_steps=n_steps)
    n_lo, n_hi = _window_for(flavor, t, r_list, theta_list)

    drift = None
    if flavor == "stat":
        drift = params.get("rho", 1.0)
    elif flavor == "stat-flat":
        drift = params.get("rho", 1.0)

    t13 = t ** (1.0 / 3.0)
    out = []
    for rep in range(n_samples):
        ic = make_initial_condition(flavor, params, (n_lo, n_hi), seed, replica=rep)
        p = sample_paths(seed, grid, (n_lo, n_hi), replica=rep)
        traj = evolve_skorokhod(ic, p, leftmost_drift=drift,
                                bridge_correction=bridge_correction)
        row = []
        for r in r_list:
            for th in theta_list:
                n = scaled_index(t, r, th)
                j = int(round((t + th) / grid.dt))
                val = (traj.at(n, j) - 2.0 * t - 2.0 * th - 2.0 * r * t ** (2.0 / 3.0)) / t13
                row.append(ScaledSample(flavor=flavor, t=t, r=r, theta=th, value=val))
        out.append(row)
    return out


def burke_check(seed: int, rho: float, t: float, n_samples: int) -> dict:
    """Stationarity / Burke property statistics.

    * sup_{s<=t}(B(s) - rho s): sampled exactly via per-step bridge maxima
      (the within-step law of a drifted BM given its endpoints is a Brownian
      bridge, so no discretization bias); the limit law is Exp(2 rho).
    * departure variance: Var(x_m(t) - zeta_m - rho t) for a particle in the
      stationary boundary system, which should equal t.
    * gaps x_n(t) - x_{n-1}(t) at lambda = rho, which should be Exp(rho);
      returns a KS statistic against that law.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    rng = np.random.Generator(np.random.Philox(
        key=np.random.SeedSequence([int(seed), 0xB_52_CE]).generate_state(2, np.uint64)))

    # --- sup(B - rho s) ---
    n_steps = max(20, int(round(2.0 * t)))
    dtl = t / n_steps
    inc = rng.standard_normal((n_samples, n_steps)) * math.sqrt(dtl)
    drift = -rho * dtl
    v = np.concatenate(
        [np.zeros((n_samples, 1)), np.cumsum(inc + drift, axis=1)], axis=1
    )
    u = rng.random((n_samples, n_steps))
    m = _bridge_maxima(v, dtl, u)
    sups = np.maximum(m.max(axis=1), 0.0)
    sup_mean = float(sups.mean())

    # --- departure variance and gaps in a stationary system (batched) ---
    n_part = 12
    t_sys = min(t, 10.0)
    steps = max(200, int(round(t_sys / 1e-2)))
    dts = t_sys / steps
    sig = math.sqrt(dts)
    reps = max(8, n_samples)
    zeta = np.concatenate(
        [np.zeros((reps, 1)),
         np.cumsum(rng.exponential(1.0 / rho, (reps, n_part)), axis=1)], axis=1
    )
    x_prev = np.concatenate(
        [np.zeros((reps, 1)), np.cumsum(rng.standard_normal((reps, steps)) * sig, axis=1)],
        axis=1,
    ) + rho * np.linspace(0.0, t_sys, steps + 1)
    for i in range(1, n_part + 1):
        s = np.concatenate(
            [np.zeros((reps, 1)),
             np.cumsum(rng.standard_normal((reps, steps)) * sig, axis=1)], axis=1
        )
        d = x_prev - s
        mb = _bridge_maxima(d, 2.0 * dts, rng.random((reps, steps)))
        run = np.empty_like(d)
        run[:, 0] = d[:, 0]
        np.maximum.accumulate(mb, axis=1, out=run[:, 1:])
        x = s + np.maximum(zeta[:, i:i + 1], run)
        np.maximum(x, x_prev, out=x)
        if i == n_part // 2:
            dep = x[:, -1] - zeta[:, i] - rho * t_sys
        if i == 1:
            finals = [x[:, -1]]
        else:
            finals.append(x[:, -1])
        x_prev = x
    gaps = np.diff(np.stack(finals, axis=1), axis=1).ravel()
    gaps_sorted = np.sort(gaps)
    ecdf_hi = np.arange(1, gaps.size + 1) / gaps.size
    ecdf_lo = np.arange(0, gaps.size) / gaps.size
    f = 1.0 - np.exp(-rho * gaps_sorted)
    ks = float(max(np.abs(ecdf_hi - f).max(), np.abs(f - ecdf_lo).max()))
    dkw = math.sqrt(math.log(2.0 / 0.01) / (2.0 * gaps.size))

    return {
        "sup_mean": sup_mean,
        "sup_mean_target": 1.0 / (2.0 * rho),
        "departure_var": float(dep.var(ddof=1)),
        "departure_var_target": t_sys,
        "departure_t": t_sys,
        "gaps_ks": ks,
        "gaps_dkw99": dkw,
        "gaps_n": int(gaps.size),
    }
