"""Driving noise and initial conditions.

Brownian increments on a fixed time grid, generated from counter-based
(Philox) streams keyed by (seed, kind, replica, particle index), so that
enlarging an index window or a truncation level never perturbs noise that
has already been sampled.  Also builds the six supported initial height
vectors and a finite-window admissibility diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeGrid",
    "BrownianPaths",
    "HeightVector",
    "FLAVORS",
    "sample_paths",
    "make_initial_condition",
    "admissibility_diagnostic",
]

# Stream-kind tags mixed into the SeedSequence entropy so path noise and
# initial-condition noise can never collide.
_KIND_PATH = 0x706174
_KIND_IC = 0x696331

# Offset applied to (possibly negative) particle indices before keying.
_INDEX_OFFSET = 2**31

FLAVORS = ("packed", "flat", "stat", "half-flat", "half-stat", "stat-flat")

# Smallest legal particle index per flavor (None = unbounded below).
_MIN_INDEX = {
    "packed": 1,
    "flat": None,
    "stat": None,
    "half-flat": 1,
    "half-stat": 0,
    "stat-flat": 1,
}


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0, dt, 2*dt, ..., t_end with dt = t_end/n_steps."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be finite and > 0, got {self.t_end}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    def times(self) -> np.ndarray:
        # Fixed summation order j*dt: reproduces t_end to machine precision.
        return self.dt * np.arange(self.n_steps + 1)


def _particle_generator(seed: int, kind: int, replica: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), kind, int(replica), int(index) + _INDEX_OFFSET])
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


@dataclass(frozen=True)
class BrownianPaths:
    """Per-index Gaussian increments (variance dt) over a TimeGrid.

    increments[i, j] is the increment of B_{n_min+i} over (t_j, t_{j+1}].
    bridge_uniforms (lazily built) feed the within-step bridge-maximum
    correction used by the Monte Carlo sampler.
    """

    index_range: tuple[int, int]
    grid: TimeGrid
    increments: np.ndarray
    stream_id: dict = field(repr=False)
    _uniforms: dict = field(default_factory=dict, repr=False)

    @property
    def n_min(self) -> int:
        return self.index_range[0]

    @property
    def n_max(self) -> int:
        return self.index_range[1]

    def increments_for(self, n: int) -> np.ndarray:
        if not (self.n_min <= n <= self.n_max):
            raise IndexError(f"index {n} outside range {self.index_range}")
        return self.increments[n - self.n_min]

    def path(self, n: int) -> np.ndarray:
        """Cumulative path B_n(t_j), starting at 0."""
        out = np.empty(self.grid.n_steps + 1)
        out[0] = 0.0
        np.cumsum(self.increments_for(n), out=out[1:])
        return out

    def bridge_uniforms_for(self, n: int) -> np.ndarray:
        """Per-step uniforms for bridge-max sampling, drawn from the same
        particle stream *after* the Gaussian block (deterministic order)."""
        if n not in self._uniforms:
            gen = _particle_generator(
                self.stream_id["seed"], _KIND_PATH, self.stream_id["replica"], n
            )
            gen.standard_normal(self.grid.n_steps)  # skip the increment block
            self._uniforms[n] = gen.random(self.grid.n_steps)
        return self._uniforms[n]


def sample_paths(
    seed: int,
    grid: TimeGrid,
    index_range: tuple[int, int],
    replica: int = 0,
) -> BrownianPaths:
    """Sample driving increments for all indices in ``index_range``.

    Deterministic in (seed, grid, index_range, replica); each particle index
    owns a disjoint counter-based stream, so windows sharing an index share
    its path bit for bit.
    """
    n_min, n_max = int(index_range[0]), int(index_range[1])
    if n_max < n_min:
        raise ValueError(f"empty index range {index_range}")
    if not math.isfinite(grid.dt):
        raise ValueError("non-finite dt")
    sd = math.sqrt(grid.dt)
    inc = np.empty((n_max - n_min + 1, grid.n_steps))
    for i, n in enumerate(range(n_min, n_max + 1)):
        gen = _particle_generator(seed, _KIND_PATH, replica, n)
        inc[i] = gen.standard_normal(grid.n_steps)
    inc *= sd
    return BrownianPaths(
        index_range=(n_min, n_max),
        grid=grid,
        increments=inc,
        stream_id={"seed": int(seed), "replica": int(replica), "kind": "path"},
    )


def _exp_gaps(seed: int, replica: int, side: int, count: int, rate: float) -> np.ndarray:
    """First ``count`` Exp(rate) gaps of one IC stream (side 0=down, 1=up)."""
    gen = _particle_generator(seed, _KIND_IC, replica, side)
    u = gen.random(count)
    return -np.log1p(-u) / rate


@dataclass(frozen=True)
class HeightVector:
    """Initial condition ζ over an index window, with flavor metadata."""

    flavor: str
    index_range: tuple[int, int]
    zeta: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.zeta) < 0):
            raise ValueError("zeta must be non-decreasing in the index")

    @property
    def n_min(self) -> int:
        return self.index_range[0]

    def value(self, n: int) -> float:
        return float(self.zeta[n - self.index_range[0]])


def make_initial_condition(
    flavor: str,
    params: dict | None = None,
    index_range: tuple[int, int] = (1, 1),
    seed: int = 0,
    replica: int = 0,
) -> HeightVector:
    """Build ζ on ``index_range`` for one of the six flavors.

    packed:     ζ_n = 0 for n >= 1.
    flat:       ζ_n = n on all of Z.
    stat:       ζ_0 = 0; gaps Exp(λ) upward, Exp(ρ) downward.
    half-flat:  ζ_n = n for n >= 1.
    half-stat:  ζ_0 ~ Exp(λ); gaps Exp(λ) for n >= 1.
    stat-flat:  ζ_n = n for n >= 1 (the stationary left half is represented
                by giving the first particle drift ρ in the dynamics).

    Random flavors draw from streams keyed (seed, ic, replica, side) with a
    fixed per-index position, so enlarging the window extends the vector
    without altering already-generated entries.
    """
    params = dict(params or {})
    n_min, n_max = int(index_range[0]), int(index_range[1])
    if n_max < n_min:
        raise ValueError(f"empty index range {index_range}")
    if flavor not in FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}; expected one of {FLAVORS}")
    lo = _MIN_INDEX[flavor]
    if lo is not None and n_min < lo:
        raise ValueError(f"flavor {flavor!r} has no particles below index {lo}")
    lam = float(params.get("lam", params.get("lambda", 1.0)))
    rho = float(params.get("rho", 1.0))
    idx = np.arange(n_min, n_max + 1)

    if flavor == "packed":
        zeta = np.zeros(idx.size)
    elif flavor in ("flat", "half-flat"):
        zeta = idx.astype(float)
    elif flavor == "stat":
        if lam <= 0:
            raise ValueError("stat requires lambda > 0")
        if n_min < 0 and rho <= 0:
            raise ValueError("stat with negative indices requires rho > 0")
        zeta = np.zeros(idx.size)
        if n_max > 0:
            up = np.concatenate([[0.0], np.cumsum(_exp_gaps(seed, replica, 1, n_max, lam))])
        if n_min < 0:
            down = np.concatenate([[0.0], -np.cumsum(_exp_gaps(seed, replica, 0, -n_min, rho))])
        for i, n in enumerate(idx):
            if n > 0:
                zeta[i] = up[n]
            elif n < 0:
                zeta[i] = down[-n]
    elif flavor == "half-stat":
        if lam <= 0:
            raise ValueError("half-stat requires lambda > 0")
        gaps = _exp_gaps(seed, replica, 1, n_max + 1, lam)  # positions 0..n_max
        cum = np.cumsum(gaps)
        zeta = cum[idx]  # ζ_n = Exp_0/λ + ... + Exp_n/λ
    elif flavor == "stat-flat":
        if rho <= 0:
            raise ValueError("stat-flat requires rho > 0")
        zeta = idx.astype(float)
    else:  # pragma: no cover
        raise AssertionError

    params.setdefault("lam", lam)
    params.setdefault("rho", rho)
    return HeightVector(flavor=flavor, index_range=(n_min, n_max), zeta=zeta, params=params)


def admissibility_diagnostic(zeta: HeightVector, chi: float) -> dict:
    """Finite-window surrogate for the leftward-growth condition.

    Reports, for the reference index n = max index of the window, the
    margins ζ_n - ζ_{-M} - M^chi over all M >= 1 available in the window.
    pass requires the margin to be eventually positive and still growing at
    the window edge.  Heuristic only — a diagnostic, not a certificate.
    """
    if chi <= 0.5:
        raise ValueError("chi must exceed 1/2")
    n_min, n_max = zeta.index_range
    if n_min > -1:
        raise ValueError("window must extend to negative indices")
    ref = zeta.value(n_max)
    m_values = np.arange(1, -n_min + 1)
    margins = np.array([ref - zeta.value(-m) - float(m) ** chi for m in m_values])
    worst = float(margins.min())
    tail = margins[m_values >= max(1, m_values[-1] // 2)]
    growing = margins[-1] > margins[len(margins) // 2]
    ok = bool(np.all(tail > 0) and growing)
    return {"worst_margin": worst, "pass": ok, "m_values": m_values, "margins": margins}
