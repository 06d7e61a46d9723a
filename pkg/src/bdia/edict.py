"""EDICT and coupled BDIA (CBDIA) samplers, both exactly invertible at two NFEs per step.

Both carry a pair ``(z, y)`` started from ``z_N = y_N``.  EDICT alternates
two forward DDIM updates and mixes them with weight ``p``; CBDIA pairs a
forward increment (from ``y``) with a backward one (from the forward
result ``w``) and mixes ``(w, v)`` with ``(gamma1, gamma2)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import NoiseSchedule, TimeGrid, as_state, ddim_coeffs
from .ddim import backward_delta, forward_delta
from .models import Predictor
from .trace import SolverTrace

EDICT_DEFAULT_P = 0.93


@dataclass(frozen=True)
class CoupledState:
    z: np.ndarray
    y: np.ndarray
    index: int

    @classmethod
    def start(cls, z_N, index: int) -> "CoupledState":
        z = as_state(z_N)
        return cls(z, z.copy(), index)


@dataclass(frozen=True)
class CbdiaConfig:
    gamma1: float = 0.0
    gamma2: float = 1.0

    def __post_init__(self):
        for g in (self.gamma1, self.gamma2):
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"CBDIA weights must lie in [0, 1], got {g}")
        if self.gamma1 == self.gamma2:
            raise ValueError("CBDIA needs gamma1 != gamma2, otherwise the mixing matrix is singular")


def _check_p(p: float) -> None:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"EDICT mixing weight p must lie in (0, 1], got {p}")


def _check_step(grid: TimeGrid, i: int) -> None:
    if not 1 <= i <= grid.N:
        raise IndexError(f"step index must satisfy 1 <= i <= {grid.N}, got {i}")


# -- EDICT ------------------------------------------------------------------


def edict_step_internals(s: CoupledState, predictor: Predictor, p: float, schedule: NoiseSchedule, grid: TimeGrid):
    _check_p(p)
    i = s.index
    _check_step(grid, i)
    c = ddim_coeffs(schedule, grid, i)
    t = grid.t(i)
    z_inter = c.a * s.z + c.b * predictor(s.y, t)
    y_inter = c.a * s.y + c.b * predictor(z_inter, t)
    z_new = p * z_inter + (1.0 - p) * y_inter
    y_new = p * y_inter + (1.0 - p) * z_new
    return CoupledState(z_new, y_new, i - 1), z_inter, y_inter


def edict_step(s: CoupledState, predictor: Predictor, p: float, schedule: NoiseSchedule, grid: TimeGrid) -> CoupledState:
    return edict_step_internals(s, predictor, p, schedule, grid)[0]


def edict_invert_step(s: CoupledState, predictor: Predictor, p: float, schedule: NoiseSchedule, grid: TimeGrid) -> CoupledState:
    """Undo :func:`edict_step`: ``(z_{i-1}, y_{i-1}) -> (z_i, y_i)``."""
    _check_p(p)
    i = s.index + 1
    _check_step(grid, i)
    c = ddim_coeffs(schedule, grid, i)
    t = grid.t(i)
    y_inter = (s.y - (1.0 - p) * s.z) / p
    z_inter = (s.z - (1.0 - p) * y_inter) / p
    y = (y_inter - c.b * predictor(z_inter, t)) / c.a
    z = (z_inter - c.b * predictor(y, t)) / c.a
    return CoupledState(z, y, i)


def edict_sample(z_N, predictor: Predictor, p: float, schedule: NoiseSchedule, grid: TimeGrid, y_N=None) -> SolverTrace:
    s = CoupledState.start(z_N, grid.N) if y_N is None else CoupledState(as_state(z_N), as_state(y_N), grid.N)
    trace = SolverTrace("edict", grid)
    trace.append(s.index, s.z, s.y)
    while s.index > 0:
        i = s.index
        s, z_inter, y_inter = edict_step_internals(s, predictor, p, schedule, grid)
        trace.epsilon_calls += 2
        trace.record("z_inter", i, z_inter)
        trace.record("y_inter", i, y_inter)
        trace.append(s.index, s.z, s.y)
    return trace


def edict_invert_chain(x, predictor: Predictor, p: float, schedule: NoiseSchedule, grid: TimeGrid, y_0=None) -> SolverTrace:
    s = CoupledState.start(x, 0) if y_0 is None else CoupledState(as_state(x), as_state(y_0), 0)
    trace = SolverTrace("edict-inversion", grid)
    trace.append(0, s.z, s.y)
    while s.index < grid.N:
        s = edict_invert_step(s, predictor, p, schedule, grid)
        trace.epsilon_calls += 2
        trace.append(s.index, s.z, s.y)
    return trace


# -- CBDIA ------------------------------------------------------------------


def _cbdia_terms(s: CoupledState, predictor: Predictor, schedule: NoiseSchedule, grid: TimeGrid):
    i = s.index
    _check_step(grid, i)
    if schedule.sigma(grid.t(i - 1)) == 0.0:
        raise ValueError("CBDIA evaluates the predictor at t_{i-1}; grids must end at sigma(t_0) > 0")
    c = ddim_coeffs(schedule, grid, i)
    eps_y = predictor(s.y, grid.t(i))
    d_fwd = forward_delta(s.y, eps_y, c)
    w = s.z + d_fwd
    eps_w = predictor(w, grid.t(i - 1))
    d_bwd = backward_delta(w, eps_w, c)
    v = s.y - d_bwd
    return w, v, d_fwd, d_bwd


def cbdia_step_internals(s: CoupledState, predictor: Predictor, cfg: CbdiaConfig, schedule: NoiseSchedule, grid: TimeGrid):
    w, v, d_fwd, d_bwd = _cbdia_terms(s, predictor, schedule, grid)
    g1, g2 = cfg.gamma1, cfg.gamma2
    z_new = g1 * w + (1.0 - g1) * v
    y_new = g2 * w + (1.0 - g2) * v
    return CoupledState(z_new, y_new, s.index - 1), w, v, d_fwd, d_bwd


def cbdia_step(s: CoupledState, predictor: Predictor, cfg: CbdiaConfig, schedule: NoiseSchedule, grid: TimeGrid) -> CoupledState:
    return cbdia_step_internals(s, predictor, cfg, schedule, grid)[0]


def cbdia_unmix(z_new, y_new, cfg: CbdiaConfig) -> tuple[np.ndarray, np.ndarray]:
    """Solve the 2x2 mixing for ``(w, v)``."""
    g1, g2 = cfg.gamma1, cfg.gamma2
    v = (g1 * y_new - g2 * z_new) / (g1 - g2)
    w = ((1.0 - g1) * y_new - (1.0 - g2) * z_new) / (g2 - g1)
    return w, v


def cbdia_invert_step(s: CoupledState, predictor: Predictor, cfg: CbdiaConfig, schedule: NoiseSchedule, grid: TimeGrid) -> CoupledState:
    i = s.index + 1
    _check_step(grid, i)
    c = ddim_coeffs(schedule, grid, i)
    w, v = cbdia_unmix(s.z, s.y, cfg)
    y = v + backward_delta(w, predictor(w, grid.t(i - 1)), c)
    z = w - forward_delta(y, predictor(y, grid.t(i)), c)
    return CoupledState(z, y, i)


def cbdia_ddim_step(s: CoupledState, predictor: Predictor, cfg: CbdiaConfig, schedule: NoiseSchedule, grid: TimeGrid) -> CoupledState:
    """CBDIA written out with the explicit alpha/sigma DDIM updates rather than ``(a, b)``."""
    i = s.index
    t_i, t_im1 = grid.t(i), grid.t(i - 1)
    al_i, al_im1 = schedule.alpha(t_i), schedule.alpha(t_im1)
    sg_i, sg_im1 = schedule.sigma(t_i), schedule.sigma(t_im1)
    e_y = predictor(s.y, t_i)
    w = s.z + al_im1 * ((s.y - sg_i * e_y) / al_i) + sg_im1 * e_y - s.y
    e_w = predictor(w, t_im1)
    v = s.y - (al_i * ((w - sg_im1 * e_w) / al_im1) + sg_i * e_w - w)
    g1, g2 = cfg.gamma1, cfg.gamma2
    return CoupledState(g1 * w + (1.0 - g1) * v, g2 * w + (1.0 - g2) * v, i - 1)


def cbdia_sample(z_N, predictor: Predictor, cfg: CbdiaConfig, schedule: NoiseSchedule, grid: TimeGrid, y_N=None) -> SolverTrace:
    """Run CBDIA from ``t_N``.

    Recorded deltas follow the :class:`SolverTrace` keying: the forward
    increment of step ``i`` is conditioned on ``y_i`` and stored at ``i``; the
    backward increment is conditioned on ``w_{i-1}`` and stored at ``i-1``.
    """
    s = CoupledState.start(z_N, grid.N) if y_N is None else CoupledState(as_state(z_N), as_state(y_N), grid.N)
    trace = SolverTrace("cbdia", grid)
    trace.append(s.index, s.z, s.y)
    while s.index > 0:
        i = s.index
        s, w, v, d_fwd, d_bwd = cbdia_step_internals(s, predictor, cfg, schedule, grid)
        trace.epsilon_calls += 2
        trace.record("w", i - 1, w)
        trace.record("v", i - 1, v)
        trace.deltas_fwd[i] = d_fwd
        trace.deltas_bwd[i - 1] = d_bwd
        trace.append(s.index, s.z, s.y)
    return trace


def cbdia_invert_chain(x, predictor: Predictor, cfg: CbdiaConfig, schedule: NoiseSchedule, grid: TimeGrid, y_0=None) -> SolverTrace:
    s = CoupledState.start(x, 0) if y_0 is None else CoupledState(as_state(x), as_state(y_0), 0)
    trace = SolverTrace("cbdia-inversion", grid)
    trace.append(0, s.z, s.y)
    while s.index < grid.N:
        s = cbdia_invert_step(s, predictor, cfg, schedule, grid)
        trace.epsilon_calls += 2
        trace.append(s.index, s.z, s.y)
    return trace


# -- closed forms -----------------------------------------------------------


def _max_abs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def cbdia_bdia_equivalence(trace_cbdia: SolverTrace, trace_bdia: SolverTrace) -> float:
    """Largest deviation between the CBDIA(0, 1) ``y`` sequence and BDIA(gamma=1) states."""
    if trace_cbdia.grid != trace_bdia.grid:
        raise ValueError("traces were produced on different grids")
    if trace_cbdia.aux is None:
        raise ValueError("first trace must be a coupled (CBDIA) trace")
    common = [i for i in trace_cbdia.indices if i in trace_bdia.indices]
    return max(_max_abs(trace_cbdia.y(i), trace_bdia.state(i)) for i in common)


def alternating_closed_form(trace: SolverTrace, i: int) -> tuple[np.ndarray, np.ndarray]:
    """``(y_i, z_i)`` of a CBDIA(0, 1) run rebuilt from ``y_N`` and the recorded deltas."""
    N = trace.grid.N
    if not 0 <= i <= N - 1:
        raise IndexError(f"need 0 <= i <= N-1, got {i}")
    f, b = trace.deltas_fwd, trace.deltas_bwd
    y_N = trace.y(N)
    y = y_N + f[N] * ((N - i) % 2)
    for j in range(i + 1, N):
        y = y + (-b[j] + f[j]) * ((j - i) % 2)
    z = y_N + f[N] * ((N - i - 1) % 2)
    for j in range(i + 2, N):
        z = z + (-b[j] + f[j]) * ((j - i - 1) % 2)
    z = z - b[i]
    return y, z


def unmixed_closed_form(trace: SolverTrace, i: int) -> tuple[np.ndarray, np.ndarray]:
    """``(y_i, z_i)`` of a CBDIA(1, 0) run: plain sums of backward / forward increments."""
    N = trace.grid.N
    f, b = trace.deltas_fwd, trace.deltas_bwd
    y = trace.y(N) - sum((b[j] for j in range(i, N)), start=np.zeros_like(trace.y(N)))
    z = trace.state(N) + sum((f[j] for j in range(i + 1, N + 1)), start=np.zeros_like(trace.state(N)))
    return y, z


CLOSED_FORMS = {"alternating": alternating_closed_form, "unmixed": unmixed_closed_form}


def closed_form_discrepancy(trace: SolverTrace, regime: str) -> float:
    """Max deviation of the iterated states from the ``"alternating"`` (0, 1) or ``"unmixed"`` (1, 0) closed form."""
    if regime not in CLOSED_FORMS:
        raise ValueError(f"regime must be one of {sorted(CLOSED_FORMS)}, got {regime!r}")
    form = CLOSED_FORMS[regime]
    worst = 0.0
    for i in range(0, trace.grid.N):
        y, z = form(trace, i)
        worst = max(worst, _max_abs(y, trace.y(i)), _max_abs(z, trace.state(i)))
    return worst


def _slot_directions(coef: dict) -> dict[int, str]:
    """Map slot ``[t_k, t_{k-1}]`` to the direction of the single increment covering it."""
    dirs: dict[int, str] = {}
    for (kind, j), c in coef.items():
        if c == 0:
            continue
        slot = j if kind == "f" else j + 1
        if slot in dirs:
            raise AssertionError(f"slot {slot} covered twice")
        dirs[slot] = kind
    return dirs


def opposite_direction_check(N: int, i: int) -> bool:
    """Alternating-form structure: on every slot above ``t_i`` the increment used for ``z_i``
    runs in the opposite direction to the one used for ``y_i``."""
    y_coef = {("f", N): (N - i) % 2}
    z_coef = {("f", N): (N - i - 1) % 2, ("b", i): 1}
    for j in range(i + 1, N):
        y_coef[("f", j)] = y_coef[("b", j)] = (j - i) % 2
    for j in range(i + 2, N):
        z_coef[("f", j)] = z_coef[("b", j)] = (j - i - 1) % 2
    dy, dz = _slot_directions(y_coef), _slot_directions(z_coef)
    slots = set(range(i + 1, N + 1))
    return set(dy) == slots == set(dz) and all(dy[k] != dz[k] for k in slots)
