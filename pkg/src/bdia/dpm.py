"""Multistep second-order DPM-Solver++ (data prediction) and its BDIA wrapper.

The update is written in log-SNR ``lambda = log(alpha / sigma)``.  With
``h = lambda_{i-1} - lambda_i`` and data estimates ``x_i = x_hat(z_i, t_i)``:

    z_{i-1} = (sigma_{i-1} / sigma_i) z_i - alpha_{i-1} (exp(-h) - 1) D

where ``D = x_i`` for the first-order warm-up and
``D = (1 + 1/(2r)) x_i - 1/(2r) x_{i+1}``, ``r = h_prev / h``, afterwards.
A step that lands on ``sigma = 0`` drops to first order, where the
update degenerates to ``z_{i-1} = alpha_{i-1} x_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import NoiseSchedule, TimeGrid, as_state, ddim_coeffs
from .ddim import backward_delta
from .models import Predictor
from .trace import SolverTrace


@dataclass(frozen=True)
class DpmHistory:
    prev_x0: np.ndarray
    prev_index: int


def data_estimate(z, eps, schedule: NoiseSchedule, t: float) -> np.ndarray:
    return (z - schedule.sigma(t) * eps) / schedule.alpha(t)


def dpmpp_update(z_i, x0_i, history: Optional[DpmHistory], schedule: NoiseSchedule, grid: TimeGrid, i: int) -> np.ndarray:
    """``Gamma_{t_i -> t_{i-1}}`` given the data estimate at ``z_i`` (no predictor call)."""
    t_i, t_im1 = grid.t(i), grid.t(i - 1)
    s_i, s_im1 = schedule.sigma(t_i), schedule.sigma(t_im1)
    a_im1 = schedule.alpha(t_im1)
    if s_im1 == 0.0:
        return a_im1 * x0_i
    lam_i, lam_im1 = schedule.log_snr(t_i), schedule.log_snr(t_im1)
    h = lam_im1 - lam_i
    if history is None:
        D = x0_i
    else:
        if history.prev_index != i + 1:
            raise ValueError(f"history is for index {history.prev_index}, expected {i + 1}")
        h_prev = lam_i - schedule.log_snr(grid.t(i + 1))
        r = h_prev / h
        D = (1.0 + 0.5 / r) * x0_i - (0.5 / r) * history.prev_x0
    return (s_im1 / s_i) * z_i - a_im1 * math.expm1(-h) * D


def dpmpp_2m_step(z_i, history: Optional[DpmHistory], predictor: Predictor, schedule: NoiseSchedule, grid: TimeGrid, i: int):
    """One step; returns ``(z_{i-1}, new_history, eps_i)``."""
    z_i = as_state(z_i)
    t_i = grid.t(i)
    eps = predictor(z_i, t_i)
    x0 = data_estimate(z_i, eps, schedule, t_i)
    return dpmpp_update(z_i, x0, history, schedule, grid, i), DpmHistory(x0, i), eps


def dpmpp_sample(z_N, predictor: Predictor, schedule: NoiseSchedule, grid: TimeGrid) -> SolverTrace:
    trace = SolverTrace("dpmpp-2m", grid)
    z = as_state(z_N)
    trace.append(grid.N, z)
    hist = None
    for i in range(grid.N, 0, -1):
        z, hist, eps = dpmpp_2m_step(z, hist, predictor, schedule, grid, i)
        trace.epsilon_calls += 1
        trace.eps[i] = eps
        trace.append(i - 1, z)
    return trace


def bdia_dpmpp_step(z_ip1, z_i, history: Optional[DpmHistory], predictor: Predictor, gamma: float, schedule: NoiseSchedule, grid: TimeGrid, i: int):
    """BDIA around ``Gamma``; the backward DDIM increment reuses the step's single ``eps`` call.

    Returns ``(z_{i-1}, new_history, eps_i)``.
    """
    if not 1 <= i <= grid.N - 1:
        raise IndexError(f"BDIA-DPM-Solver++ steps need 1 <= i <= N-1, got {i}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    z_ip1, z_i = as_state(z_ip1), as_state(z_i)
    gam, hist, eps = dpmpp_2m_step(z_i, history, predictor, schedule, grid, i)
    d_bwd = backward_delta(z_i, eps, ddim_coeffs(schedule, grid, i + 1))
    # z_{i+1} + (1-g)(z_i - z_{i+1}) - g d_bwd + (Gamma - z_i), regrouped so g = 0 gives Gamma exactly
    return gamma * (z_ip1 - z_i) - gamma * d_bwd + gam, hist, eps


def bdia_dpmpp_sample(z_N, predictor: Predictor, gamma: float, schedule: NoiseSchedule, grid: TimeGrid, name: str = "bdia-dpmpp-2m") -> SolverTrace:
    trace = SolverTrace(name, grid)
    N = grid.N
    z = as_state(z_N)
    trace.append(N, z)
    z_new, hist, eps = dpmpp_2m_step(z, None, predictor, schedule, grid, N)
    trace.epsilon_calls += 1
    trace.eps[N] = eps
    trace.append(N - 1, z_new)
    z_ip1, z = z, z_new
    for i in range(N - 1, 0, -1):
        z_new, hist, eps = bdia_dpmpp_step(z_ip1, z, hist, predictor, gamma, schedule, grid, i)
        trace.epsilon_calls += 1
        trace.eps[i] = eps
        trace.append(i - 1, z_new)
        z_ip1, z = z, z_new
    return trace
