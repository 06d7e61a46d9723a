"""Analytic noise predictors for isotropic Gaussian-mixture data.

For data ``x ~ sum_k w_k N(mu_k, s2_k I)`` the forward marginal at time
``t`` is again a mixture, with means ``alpha_t mu_k`` and variances
``alpha_t^2 s2_k + sigma_t^2``.  The score of that marginal is available in
closed form, which gives an exact ``eps_hat`` and lets every solver be
checked against ground truth instead of a trained network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import NoiseSchedule, as_state

Predictor = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class Component:
    weight: float
    mean: np.ndarray
    variance: float


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Isotropic Gaussian mixture. Build with :meth:`from_params` or :meth:`from_dict`."""

    weights: np.ndarray
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        s2 = np.asarray(self.variances, dtype=np.float64).reshape(-1)
        if not (len(w) == len(mu) == len(s2)) or len(w) == 0:
            raise ValueError("weights, means and variances must describe the same non-empty component list")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must be non-negative and sum to 1, got sum {w.sum()!r}")
        if np.any(~(s2 > 0)):
            raise ValueError("component variances must be > 0")
        if not np.all(np.isfinite(mu)):
            raise ValueError("component means must be finite")
        for name, val in (("weights", w), ("means", mu), ("variances", s2)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GaussianMixture):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("weights", "means", "variances"))

    def __hash__(self) -> int:
        return hash((self.weights.tobytes(), self.means.tobytes(), self.means.shape, self.variances.tobytes()))

    @classmethod
    def from_params(cls, components: Sequence[tuple[float, Sequence[float], float]]) -> "GaussianMixture":
        w, mu, s2 = zip(*components)
        return cls(np.array(w, float), np.array([np.atleast_1d(m) for m in mu], float), np.array(s2, float))

    @classmethod
    def from_dict(cls, spec: Sequence[dict]) -> "GaussianMixture":
        comps = []
        for c in spec:
            unknown = set(c) - {"w", "mu", "s2"}
            if unknown:
                raise ValueError(f"unknown mixture component keys: {sorted(unknown)}")
            comps.append((float(c["w"]), [float(v) for v in c["mu"]], float(c["s2"])))
        return cls.from_params(comps)

    def to_dict(self) -> list[dict]:
        return [
            {"w": float(w), "mu": [float(v) for v in m], "s2": float(s)}
            for w, m, s in zip(self.weights, self.means, self.variances)
        ]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list[Component]:
        return [Component(float(w), m, float(s)) for w, m, s in zip(self.weights, self.means, self.variances)]

    def shifted(self, delta) -> "GaussianMixture":
        """Same mixture with every mean translated by ``delta`` (the editing analog)."""
        delta = np.broadcast_to(np.asarray(delta, dtype=np.float64), (self.dim,))
        return GaussianMixture(self.weights, self.means + delta, self.variances)


@dataclass(frozen=True)
class MixtureMarginal:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def log_density(self, z) -> np.ndarray:
        z = as_state(z)
        d = z.shape[-1]
        sq = np.sum((z[..., None, :] - self.means) ** 2, axis=-1)
        logc = np.log(self.weights) - 0.5 * d * np.log(2 * np.pi * self.variances) - 0.5 * sq / self.variances
        return logsumexp(logc, axis=-1)

    def score(self, z) -> np.ndarray:
        """``grad_z log q(z)`` with responsibilities normalised in log space."""
        z = as_state(z)
        d = z.shape[-1]
        diff = z[..., None, :] - self.means  # (..., K, d)
        sq = np.sum(diff**2, axis=-1)
        logc = np.log(self.weights) - 0.5 * d * np.log(self.variances) - 0.5 * sq / self.variances
        logc = logc - np.max(logc, axis=-1, keepdims=True)
        r = np.exp(logc)
        r /= np.sum(r, axis=-1, keepdims=True)
        return -np.sum((r / self.variances)[..., None] * diff, axis=-2)


def mixture_marginal(model: GaussianMixture, schedule: NoiseSchedule, t: float) -> MixtureMarginal:
    a, s = schedule.alpha(t), schedule.sigma(t)
    return MixtureMarginal(model.weights, a * model.means, a * a * model.variances + s * s)


def epsilon_hat_analytic(model: GaussianMixture, schedule: NoiseSchedule, z, t: float) -> np.ndarray:
    """Exact noise prediction ``-sigma(t) * grad log q_t(z)``.

    Undefined where ``sigma(t) = 0``; there the data-space value must be
    used instead, so this raises ``ZeroDivisionError``.
    """
    s = schedule.sigma(t)
    if s == 0.0:
        raise ZeroDivisionError(f"eps_hat is undefined at sigma(t)=0 (t={t})")
    z = as_state(z)
    if z.shape[-1] != model.dim:
        raise ValueError(f"state dimension {z.shape[-1]} does not match mixture dimension {model.dim}")
    return -s * mixture_marginal(model, schedule, t).score(z)


_EDM = NoiseSchedule("edm")


def edm_gradient(model: GaussianMixture, z, t: float) -> np.ndarray:
    """Probability-flow field ``dz/dt`` under ``alpha = 1, sigma = t``; equals ``eps_hat``."""
    if not t > 0:
        raise ValueError(f"EDM gradient needs t > 0, got {t}")
    return epsilon_hat_analytic(model, _EDM, z, t)


def probability_flow_gradient(eps: Predictor, schedule: NoiseSchedule, z, t: float) -> np.ndarray:
    """General ``d(z, t) = f(t) z - g(t)^2 / 2 * score`` written through ``eps_hat``.

    With ``score = -eps / sigma`` this is
    ``(alpha'/alpha) z + (sigma' - alpha' sigma / alpha) eps``.
    """
    a, s = schedule.alpha(t), schedule.sigma(t)
    da, ds = schedule.alpha_dot(t), schedule.sigma_dot(t)
    z = as_state(z)
    return (da / a) * z + (ds - da * s / a) * eps(z, t)


def exact_sample(model: GaussianMixture, schedule: NoiseSchedule, t: float, seed, n: int) -> np.ndarray:
    """``n`` i.i.d. draws from the marginal at time ``t``; shape ``(n, d)``."""
    if int(n) != n or n < 1:
        raise ValueError(f"sample count must be a positive integer, got {n}")
    marg = mixture_marginal(model, schedule, t)
    rng = np.random.default_rng(seed)
    k = rng.choice(len(marg.weights), size=int(n), p=marg.weights)
    noise = rng.standard_normal((int(n), model.dim))
    return marg.means[k] + np.sqrt(marg.variances[k])[:, None] * noise


def analytic_ode_solution(s2: float, z_T, t_from: float, t_to: float) -> np.ndarray:
    """Closed-form flow of ``dz/dt = t z / (s2 + t^2)`` (single zero-mean Gaussian, EDM)."""
    return as_state(z_T) * math.sqrt((s2 + t_to * t_to) / (s2 + t_from * t_from))


@dataclass
class MixturePredictor:
    """Callable ``eps_hat(z, t)`` bound to a mixture and schedule."""

    mixture: GaussianMixture
    schedule: NoiseSchedule

    def __call__(self, z, t: float) -> np.ndarray:
        return epsilon_hat_analytic(self.mixture, self.schedule, z, t)

    def gradient(self, z, t: float) -> np.ndarray:
        return probability_flow_gradient(self, self.schedule, z, t)

    def x0(self, z, t: float) -> np.ndarray:
        z = as_state(z)
        return (z - self.schedule.sigma(t) * self(z, t)) / self.schedule.alpha(t)


@dataclass
class LinearPredictor:
    """``eps_hat(z, t) = c z``; with ``c = 0`` the zero predictor."""

    c: float = 0.0

    def __call__(self, z, t: float) -> np.ndarray:
        return self.c * as_state(z)


@dataclass
class CountingPredictor:
    """Wraps any predictor and counts evaluations (counts a batch as one call)."""

    inner: Predictor
    calls: int = field(default=0)

    def __call__(self, z, t: float) -> np.ndarray:
        self.calls += 1
        return self.inner(z, t)

    def gradient(self, z, t: float) -> np.ndarray:
        self.calls += 1
        return self.inner.gradient(z, t)
