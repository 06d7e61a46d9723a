"""Noise schedules, descending time grids and DDIM step coefficients.

Everything here is a small immutable value type. Solvers in the sibling
modules only ever ask three questions of this module: what are
``alpha(t)`` / ``sigma(t)``, what time belongs to grid index ``i``, and
what are the linear DDIM coefficients ``(a_i, b_i)`` for the slot
``[t_i, t_{i-1}]``.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

SCHEDULE_KINDS = ("vp", "edm")
GRID_KINDS = ("uniform", "power_law")


class InvalidGridError(ValueError):
    """Raised for degenerate or non-monotonic time grids."""


# Mutation hooks used by ``bdia verify --inject-fault``. Never set in normal use.
_FAULTS: set[str] = set()


@contextlib.contextmanager
def inject_fault(name: str) -> Iterator[None]:
    """Temporarily corrupt a core computation so that verifiers can be shown to fail."""
    if name not in ("flip-b-sign",):
        raise ValueError(f"unknown fault {name!r}")
    _FAULTS.add(name)
    try:
        yield
    finally:
        _FAULTS.discard(name)


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward-process scales ``z_t = alpha(t) x + sigma(t) eps``.

    ``kind="edm"`` is ``alpha = 1, sigma = t`` on ``t >= 0``.
    ``kind="vp"`` is ``alpha = sqrt(1 - t), sigma = sqrt(t)`` on ``0 <= t < 1``.
    """

    kind: str = "vp"

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {SCHEDULE_KINDS}")

    def _check(self, t: float) -> float:
        t = float(t)
        if not math.isfinite(t) or t < 0.0:
            raise ValueError(f"time must be finite and >= 0, got {t}")
        if self.kind == "vp" and t >= 1.0:
            raise ValueError(f"VP schedule is defined on [0, 1), got t={t}")
        return t

    def alpha(self, t: float) -> float:
        t = self._check(t)
        return 1.0 if self.kind == "edm" else math.sqrt(1.0 - t)

    def sigma(self, t: float) -> float:
        t = self._check(t)
        return t if self.kind == "edm" else math.sqrt(t)

    def sigma_tilde(self, t: float) -> float:
        """Noise-to-signal ratio ``sigma / alpha``."""
        return self.sigma(t) / self.alpha(t)

    def alpha_dot(self, t: float) -> float:
        t = self._check(t)
        return 0.0 if self.kind == "edm" else -0.5 / math.sqrt(1.0 - t)

    def sigma_dot(self, t: float) -> float:
        t = self._check(t)
        if self.kind == "edm":
            return 1.0
        if t == 0.0:
            return math.inf
        return 0.5 / math.sqrt(t)

    def log_snr(self, t: float) -> float:
        """``lambda(t) = log(alpha / sigma)``; ``+inf`` where sigma vanishes."""
        s = self.sigma(t)
        if s == 0.0:
            return math.inf
        return math.log(self.alpha(t)) - math.log(s)

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class TimeGrid:
    """Sampling times stored in sampling order ``[t_N, t_{N-1}, ..., t_0]``.

    Grid index ``i`` addresses ``times[N - i]``, so ``t(N)`` is the noisiest
    time and ``t(0)`` the terminal one.
    """

    times: tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if len(times) < 2:
            raise InvalidGridError("a grid needs at least two times")
        if not all(math.isfinite(t) for t in times):
            raise InvalidGridError("grid times must be finite")
        if times[-1] < 0.0:
            raise InvalidGridError("t_0 must be >= 0")
        for hi, lo in zip(times, times[1:]):
            if not hi > lo:
                raise InvalidGridError(f"grid must be strictly decreasing, got {hi} then {lo}")

    @property
    def N(self) -> int:
        return len(self.times) - 1

    def t(self, i: int) -> float:
        if not 0 <= i <= self.N:
            raise IndexError(f"grid index {i} outside [0, {self.N}]")
        return self.times[self.N - i]

    def step_sizes(self) -> np.ndarray:
        """Positive slot widths ``t_i - t_{i-1}`` for ``i = N..1``."""
        return -np.diff(np.asarray(self.times))

    def __len__(self) -> int:
        return len(self.times)


def make_time_grid(
    kind: str, N: int, t_min: float, t_max: float, rho: float = 7.0, terminal_zero: bool = False
) -> TimeGrid:
    """Build a descending grid of ``N + 1`` times with exact endpoints.

    ``power_law`` interpolates linearly in ``t ** (1 / rho)``; ``rho = 1``
    is the uniform grid.  With ``terminal_zero`` the first ``N`` times span
    ``[t_max, t_min]`` and a final ``t_0 = 0`` is appended.
    """
    if kind not in GRID_KINDS:
        raise InvalidGridError(f"unknown grid kind {kind!r}; expected one of {GRID_KINDS}")
    if int(N) != N or N < 1:
        raise InvalidGridError(f"step count must be a positive integer, got {N}")
    N = int(N)
    t_min, t_max = float(t_min), float(t_max)
    if not (math.isfinite(t_min) and math.isfinite(t_max)) or t_min < 0.0 or not t_max > t_min:
        raise InvalidGridError(f"need t_max > t_min >= 0, got t_min={t_min}, t_max={t_max}")

    if terminal_zero:
        if not t_min > 0.0:
            raise InvalidGridError("terminal_zero needs t_min > 0")
        if N == 1:
            return TimeGrid((t_max, 0.0))
        return TimeGrid(make_time_grid(kind, N - 1, t_min, t_max, rho).times + (0.0,))

    j = np.arange(N + 1, dtype=np.float64)
    if kind == "uniform":
        times = t_max + (j / N) * (t_min - t_max)
    else:
        if not rho > 0:
            raise InvalidGridError(f"rho must be > 0, got {rho}")
        lo, hi = t_min ** (1.0 / rho), t_max ** (1.0 / rho)
        times = (hi + (j / N) * (lo - hi)) ** rho
    times[0], times[-1] = t_max, t_min
    return TimeGrid(tuple(times.tolist()))


@dataclass(frozen=True)
class DdimCoeffs:
    a: float
    b: float


def ddim_coeffs_between(schedule: NoiseSchedule, t_from: float, t_to: float) -> DdimCoeffs:
    """Coefficients of the DDIM map ``z(t_to) ~ a z(t_from) + b eps(z(t_from))``."""
    a = schedule.alpha(t_to) / schedule.alpha(t_from)
    b = schedule.sigma(t_to) - schedule.sigma(t_from) * a
    if "flip-b-sign" in _FAULTS:
        b = -b
    return DdimCoeffs(a, b)


def ddim_coeffs(schedule: NoiseSchedule, grid: TimeGrid, i: int) -> DdimCoeffs:
    """``(a_i, b_i)`` for the slot from ``t_i`` down to ``t_{i-1}``, ``1 <= i <= N``."""
    if not 1 <= i <= grid.N:
        raise IndexError(f"DDIM coefficients need 1 <= i <= {grid.N}, got {i}")
    return ddim_coeffs_between(schedule, grid.t(i), grid.t(i - 1))


def as_state(z) -> np.ndarray:
    """Coerce to a float64 array whose last axis is the state dimension."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0:
        raise ValueError("a state must be at least one-dimensional")
    return z


def schedule_from_dict(d: dict) -> NoiseSchedule:
    unknown = set(d) - {"kind"}
    if unknown:
        raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
    return NoiseSchedule(str(d.get("kind", "vp")).lower())


def grid_from_dict(d: dict) -> TimeGrid:
    unknown = set(d) - {"kind", "n", "t_min", "t_max", "rho", "terminal_zero"}
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")
    missing = {"n", "t_min", "t_max"} - set(d)
    if missing:
        raise ValueError(f"grid config missing keys: {sorted(missing)}")
    return make_time_grid(
        d.get("kind", "uniform"), d["n"], d["t_min"], d["t_max"], d.get("rho", 7.0),
        bool(d.get("terminal_zero", False)),
    )


def grid_to_dict(
    kind: str, N: int, t_min: float, t_max: float, rho: float = 7.0, terminal_zero: bool = False
) -> dict:
    return {
        "kind": kind, "n": int(N), "t_min": float(t_min), "t_max": float(t_max),
        "rho": float(rho), "terminal_zero": bool(terminal_zero),
    }


def check_times_in_domain(schedule: NoiseSchedule, times: Sequence[float]) -> None:
    for t in times:
        schedule.alpha(t)
