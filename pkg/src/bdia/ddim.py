"""DDIM, naive DDIM inversion and BDIA-DDIM with its exact inverse.

BDIA-DDIM replaces the one-sided DDIM increment over the previous slot by
a ``gamma``-weighted blend of the increment actually taken and a backward
DDIM step from the current state.  The resulting recurrence

    z_{i-1} = gamma (z_{i+1} - z_i) - gamma Delta_bwd(z_i) + (a_i z_i + b_i eps_i)

is linear in ``(z_{i+1}, z_i, eps_i)`` and therefore solvable for
``z_{i+1}`` given ``(z_i, z_{i-1})`` without any approximation.  Only one
predictor evaluation is needed per step.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DdimCoeffs, NoiseSchedule, TimeGrid, as_state, ddim_coeffs, ddim_coeffs_between
from .models import Predictor
from .trace import SolverTrace

__all__ = [
    "BdiaConfig",
    "SolverTrace",
    "backward_delta",
    "bdia_init_step",
    "bdia_invert_chain",
    "bdia_invert_step",
    "bdia_roundtrip",
    "bdia_sample",
    "bdia_step",
    "bdia_update",
    "ddim_invert_chain_naive",
    "ddim_invert_step_naive",
    "ddim_sample",
    "ddim_step",
    "forward_delta",
    "expansion_coefficients",
    "closed_form_expansion",
    "expansion_parity_form",
]


@dataclass(frozen=True)
class BdiaConfig:
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")


def ddim_step(z_i, eps, coeffs: DdimCoeffs) -> np.ndarray:
    return coeffs.a * as_state(z_i) + coeffs.b * eps


def forward_delta(z_i, eps_i, coeffs_i: DdimCoeffs) -> np.ndarray:
    """``Delta(t_i -> t_{i-1} | z_i) = a_i z_i + b_i eps_i - z_i``."""
    return coeffs_i.a * z_i + coeffs_i.b * eps_i - z_i


def backward_delta(z_i, eps_i, coeffs_ip1: DdimCoeffs) -> np.ndarray:
    """``Delta(t_i -> t_{i+1} | z_i) = z_i / a_{i+1} - (b_{i+1} / a_{i+1}) eps_i - z_i``."""
    return z_i / coeffs_ip1.a - (coeffs_ip1.b / coeffs_ip1.a) * eps_i - z_i


def ddim_sample(z_N, predictor: Predictor, schedule: NoiseSchedule, grid: TimeGrid) -> SolverTrace:
    trace = SolverTrace("ddim", grid)
    z = as_state(z_N)
    trace.append(grid.N, z)
    for i in range(grid.N, 0, -1):
        eps = predictor(z, grid.t(i))
        trace.epsilon_calls += 1
        c = ddim_coeffs(schedule, grid, i)
        trace.eps[i] = eps
        trace.deltas_fwd[i] = forward_delta(z, eps, c)
        z = ddim_step(z, eps, c)
        trace.append(i - 1, z)
    return trace


def ddim_invert_step_naive(z_prev, predictor: Predictor, schedule: NoiseSchedule, grid: TimeGrid, i: int) -> np.ndarray:
    """Approximate ``z_i`` from ``z_{i-1}`` by evaluating the predictor at ``(z_{i-1}, t_i)``.

    The exact relation needs ``eps(z_i)``, which is unknown; substituting
    ``z_{i-1}`` is what makes plain DDIM inversion inconsistent.
    """
    z_prev = as_state(z_prev)
    eps = predictor(z_prev, grid.t(i))
    c = ddim_coeffs(schedule, grid, i)
    # inverse DDIM map: z_i = (z_{i-1} - b_i eps) / a_i
    return (z_prev - c.b * eps) / c.a


def ddim_invert_chain_naive(z_0, predictor: Predictor, schedule: NoiseSchedule, grid: TimeGrid) -> SolverTrace:
    trace = SolverTrace("ddim-naive-inversion", grid)
    z = as_state(z_0)
    trace.append(0, z)
    for i in range(1, grid.N + 1):
        z = ddim_invert_step_naive(z, predictor, schedule, grid, i)
        trace.epsilon_calls += 1
        trace.append(i, z)
    return trace


def bdia_init_step(z_N, predictor: Predictor, schedule: NoiseSchedule, grid: TimeGrid) -> np.ndarray:
    z_N = as_state(z_N)
    return ddim_step(z_N, predictor(z_N, grid.t(grid.N)), ddim_coeffs(schedule, grid, grid.N))


def bdia_update(z_ip1, z_i, eps_i, gamma: float, schedule: NoiseSchedule, t_ip1: float, t_i: float, t_im1: float) -> np.ndarray:
    """One BDIA step with explicit slot times; ``bdia_step`` reads them off the grid."""
    c_i = ddim_coeffs_between(schedule, t_i, t_im1)
    c_ip1 = ddim_coeffs_between(schedule, t_ip1, t_i)
    z_ip1, z_i = as_state(z_ip1), as_state(z_i)
    # gamma multiplies whole terms so that gamma = 0 reproduces ddim_step bit for bit
    return (
        gamma * (z_ip1 - z_i)
        - gamma * backward_delta(z_i, eps_i, c_ip1)
        + (c_i.a * z_i + c_i.b * eps_i)
    )


def _check_inner_index(grid: TimeGrid, i: int) -> None:
    if not 1 <= i <= grid.N - 1:
        raise IndexError(f"BDIA steps need 1 <= i <= N-1 = {grid.N - 1}, got {i}")


def bdia_step(z_ip1, z_i, eps_i, cfg: BdiaConfig, schedule: NoiseSchedule, grid: TimeGrid, i: int) -> np.ndarray:
    _check_inner_index(grid, i)
    return bdia_update(z_ip1, z_i, eps_i, cfg.gamma, schedule, grid.t(i + 1), grid.t(i), grid.t(i - 1))


def bdia_invert_step(z_im1, z_i, eps_i, cfg: BdiaConfig, schedule: NoiseSchedule, grid: TimeGrid, i: int) -> np.ndarray:
    """Recover ``z_{i+1}`` from ``(z_{i-1}, z_i)``; exact algebraic inverse of :func:`bdia_step`."""
    _check_inner_index(grid, i)
    if cfg.gamma == 0.0:
        raise ValueError("BDIA with gamma = 0 is plain DDIM and has no exact inverse")
    g = cfg.gamma
    c_i = ddim_coeffs(schedule, grid, i)
    c_ip1 = ddim_coeffs(schedule, grid, i + 1)
    z_im1, z_i = as_state(z_im1), as_state(z_i)
    return z_im1 / g - (c_i.a * z_i + c_i.b * eps_i) / g + (z_i / c_ip1.a - (c_ip1.b / c_ip1.a) * eps_i)


def bdia_sample(
    z_N,
    predictor: Predictor,
    cfg: BdiaConfig,
    schedule: NoiseSchedule,
    grid: TimeGrid,
    z_prev: Optional[np.ndarray] = None,
) -> SolverTrace:
    """Run BDIA-DDIM from ``t_N`` to ``t_0``.

    Without ``z_prev`` the chain is started with one forward DDIM step.
    Passing ``z_prev = z_{N-1}`` anchors the recursion on a stored pair
    instead, which is how an inverted chain is replayed exactly.
    """
    trace = SolverTrace("bdia-ddim", grid)
    N = grid.N
    z_ip1 = as_state(z_N)
    trace.append(N, z_ip1)
    if z_prev is None:
        eps = predictor(z_ip1, grid.t(N))
        trace.epsilon_calls += 1
        c = ddim_coeffs(schedule, grid, N)
        trace.eps[N] = eps
        trace.deltas_fwd[N] = forward_delta(z_ip1, eps, c)
        z_i = ddim_step(z_ip1, eps, c)
    else:
        z_i = as_state(z_prev)
    trace.append(N - 1, z_i)

    for i in range(N - 1, 0, -1):
        eps = predictor(z_i, grid.t(i))
        trace.epsilon_calls += 1
        trace.eps[i] = eps
        trace.deltas_fwd[i] = forward_delta(z_i, eps, ddim_coeffs(schedule, grid, i))
        trace.deltas_bwd[i] = backward_delta(z_i, eps, ddim_coeffs(schedule, grid, i + 1))
        z_im1 = bdia_step(z_ip1, z_i, eps, cfg, schedule, grid, i)
        trace.append(i - 1, z_im1)
        z_ip1, z_i = z_i, z_im1
    return trace


def bdia_invert_chain(z_0, z_1, predictor: Predictor, cfg: BdiaConfig, schedule: NoiseSchedule, grid: TimeGrid) -> SolverTrace:
    """Ascend from the anchor pair ``(z_0, z_1)`` to ``z_N`` with the exact inverse step."""
    if cfg.gamma == 0.0:
        raise ValueError("BDIA with gamma = 0 is plain DDIM and has no exact inverse")
    trace = SolverTrace("bdia-ddim-inversion", grid)
    z_im1, z_i = as_state(z_0), as_state(z_1)
    trace.append(0, z_im1)
    trace.append(1, z_i)
    for i in range(1, grid.N):
        eps = predictor(z_i, grid.t(i))
        trace.epsilon_calls += 1
        trace.eps[i] = eps
        z_ip1 = bdia_invert_step(z_im1, z_i, eps, cfg, schedule, grid, i)
        trace.append(i + 1, z_ip1)
        z_im1, z_i = z_i, z_ip1
    return trace


def bdia_roundtrip(
    x,
    invert_predictor: Predictor,
    cfg: BdiaConfig,
    schedule: NoiseSchedule,
    grid: TimeGrid,
    regen_predictor: Optional[Predictor] = None,
) -> tuple[SolverTrace, SolverTrace]:
    """Data -> noise -> data.

    ``z_1`` is seeded by one naive DDIM inversion step from ``z_0 = x``; the
    ascent is exact from there on, and the descent is anchored at the top
    pair ``(z_N, z_{N-1})``.  Returns ``(ascent, descent)`` traces.
    """
    regen_predictor = invert_predictor if regen_predictor is None else regen_predictor
    x = as_state(x)
    z_1 = ddim_invert_step_naive(x, invert_predictor, schedule, grid, 1)
    up = bdia_invert_chain(x, z_1, invert_predictor, cfg, schedule, grid)
    up.epsilon_calls += 1
    down = bdia_sample(up.state(grid.N), regen_predictor, cfg, schedule, grid, z_prev=up.state(grid.N - 1))
    return up, down


def expansion_coefficients(gamma: float, j: int, i: int) -> tuple[float, float]:
    """Weights of ``Delta_fwd`` and ``Delta_bwd`` for slot ``[t_j, t_{j-1}]`` in the closed form of ``z_i``."""
    p = (-gamma) ** (j - i)
    return (1.0 - p) / (1.0 + gamma), (gamma + p) / (1.0 + gamma)


def _require(d: dict, j: int, what: str) -> np.ndarray:
    if j not in d:
        raise KeyError(f"trace is missing the recorded {what} at index {j}")
    return d[j]


def closed_form_expansion(trace: SolverTrace, cfg: BdiaConfig, i: int) -> np.ndarray:
    """Rebuild ``z_i`` (``i <= N-2``) from ``z_N`` and the recorded per-slot deltas only."""
    N = trace.grid.N
    if not 0 <= i <= N - 2:
        raise IndexError(f"closed form holds for 0 <= i <= N-2 = {N - 2}, got {i}")
    out = np.array(trace.state(N), copy=True)
    for j in range(i + 2, N + 1):
        cf, cb = expansion_coefficients(cfg.gamma, j, i)
        # Delta(t_{j-1} -> t_j | z_{j-1}) is the backward delta recorded at j-1
        out = out + cf * _require(trace.deltas_fwd, j, "forward delta") - cb * _require(trace.deltas_bwd, j - 1, "backward delta")
    return out + _require(trace.deltas_fwd, i + 1, "forward delta")


def expansion_parity_form(trace: SolverTrace, i: int) -> np.ndarray:
    """Parity form of the closed expansion, valid for ``gamma = 1`` only."""
    N = trace.grid.N
    if not 0 <= i <= N - 2:
        raise IndexError(f"closed form holds for 0 <= i <= N-2 = {N - 2}, got {i}")
    out = trace.state(N) + _require(trace.deltas_fwd, N, "forward delta") * ((N - i) % 2)
    for j in range(i + 1, N):
        if (j - i) % 2:
            out = out - _require(trace.deltas_bwd, j, "backward delta") + _require(trace.deltas_fwd, j, "forward delta")
    return out
