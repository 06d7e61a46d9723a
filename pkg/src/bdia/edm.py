"""EDM Heun sampling, BDIA-EDM, and a fixed-step RK4 reference integrator.

All functions here work in EDM time (``alpha = 1, sigma = t``) and take the
probability-flow field ``d(z, t)`` directly.  The terminal rule follows
the usual Heun sampler: when ``t_{i-1} = 0`` the corrector is skipped and
the Euler predictor is the step result.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .core import TimeGrid, as_state
from .trace import EdmTraceEntry, SolverTrace

Gradient = Callable[[np.ndarray, float], np.ndarray]


def edm_heun_step(z_i, gradient: Gradient, grid: TimeGrid, i: int, d_i=None):
    """One Heun step from ``t_i`` to ``t_{i-1}``.

    Returns ``(z_{i-1}, entry, n_evals)``; ``d_i`` may be supplied to avoid
    re-evaluating the field at ``z_i``.
    """
    t_i, t_im1 = grid.t(i), grid.t(i - 1)
    if not t_i > 0:
        raise ValueError("Heun step needs t_i > 0")
    z_i = as_state(z_i)
    n = 0
    if d_i is None:
        d_i = gradient(z_i, t_i)
        n += 1
    h = t_im1 - t_i
    z_tilde = z_i + h * d_i
    if t_im1 != 0.0:
        d_prime = gradient(z_tilde, t_im1)
        n += 1
        z_im1 = z_i + h * (0.5 * d_i + 0.5 * d_prime)
    else:
        d_prime = None
        z_im1 = z_tilde
    return z_im1, EdmTraceEntry(i, z_i, z_i, z_tilde, d_i, d_prime), n


def edm_sample(z_N, gradient: Gradient, grid: TimeGrid) -> SolverTrace:
    trace = SolverTrace("edm", grid)
    z = as_state(z_N)
    trace.append(grid.N, z)
    for i in range(grid.N, 0, -1):
        z, entry, n = edm_heun_step(z, gradient, grid, i)
        trace.epsilon_calls += n
        trace.entries.append(entry)
        trace.eps[i] = entry.d
        trace.append(i - 1, z)
    return trace


def bdia_edm_sample(z_N, gradient: Gradient, gamma: float, grid: TimeGrid, name: str = "bdia-edm") -> SolverTrace:
    """BDIA-EDM: before each Heun step the current state is refined to

        z_hat_i = z_i + gamma (z_{i+1} - z_i) + gamma (t_i - t_{i+1}) (d_{i+1} + d_i) / 2

    (algebraically ``z_{i+1} + (1 - gamma)(z_i - z_{i+1}) + ...``), reusing
    ``d_{i+1}`` from the previous index.  ``gamma = 0`` is plain Heun.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    trace = SolverTrace(name, grid)
    N = grid.N
    z = as_state(z_N)
    trace.append(N, z)
    z_ip1 = d_ip1 = None
    for i in range(N, 0, -1):
        t_i, t_im1 = grid.t(i), grid.t(i - 1)
        d_i = gradient(z, t_i)
        trace.epsilon_calls += 1
        if i < N:
            z_hat = z + gamma * (z_ip1 - z) + gamma * (t_i - grid.t(i + 1)) * (0.5 * d_ip1 + 0.5 * d_i)
        else:
            z_hat = z
        h = t_im1 - t_i
        z_tilde = z_hat + h * d_i
        if t_im1 != 0.0:
            d_prime = gradient(z_tilde, t_im1)
            trace.epsilon_calls += 1
            z_im1 = z_hat + h * (0.5 * d_i + 0.5 * d_prime)
        else:
            d_prime = None
            z_im1 = z_tilde
        trace.entries.append(EdmTraceEntry(i, z, z_hat, z_tilde, d_i, d_prime))
        trace.eps[i] = d_i
        trace.append(i - 1, z_im1)
        z_ip1, d_ip1, z = z, d_i, z_im1
    return trace


def rk4_reference(z_from, gradient: Gradient, t_from: float, t_to: float, n_steps: int) -> np.ndarray:
    """Classical fixed-step RK4 for ``dz/dt = d(z, t)`` from ``t_from`` to ``t_to``.

    If ``t_to == 0`` the last sub-step is a single Euler step so the field is
    never evaluated at zero noise.
    """
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError(f"n_steps must be a positive integer, got {n_steps}")
    z = np.array(as_state(z_from), copy=True)
    if t_to == t_from:
        return z
    n_steps = int(n_steps)
    ts = np.linspace(t_from, t_to, n_steps + 1)
    last = n_steps - 1 if t_to == 0.0 else n_steps
    for k in range(last):
        t, h = ts[k], ts[k + 1] - ts[k]
        k1 = gradient(z, t)
        k2 = gradient(z + 0.5 * h * k1, t + 0.5 * h)
        k3 = gradient(z + 0.5 * h * k2, t + 0.5 * h)
        k4 = gradient(z + h * k3, ts[k + 1])
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if last < n_steps:
        z = z + (ts[-1] - ts[-2]) * gradient(z, ts[-2])
    return z
