"""Numeric mean estimation: stochastic rounding, the piecewise mechanism and their hybrid."""
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyInputError, InvalidConfigError

HM_SWITCH = 0.61


@dataclass(frozen=True)
class MeanMechParams:
    epsilon: float
    kind: str = "HM"
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.kind not in ("SR", "PM", "HM"):
            raise InvalidConfigError(f"unknown mean mechanism {self.kind!r}")
        if not self.high > self.low:
            raise InvalidConfigError("empty domain")


def sr_bound(epsilon) -> float:
    """Magnitude of the two SR outputs."""
    return float((np.exp(epsilon) + 1) / np.expm1(epsilon))


def pm_bound(epsilon) -> float:
    """Half-width of the PM output range."""
    return float((np.exp(epsilon / 2) + 1) / np.expm1(epsilon / 2))


def pm_probability(epsilon) -> float:
    """Probability that HM routes a user to PM."""
    return float(-np.expm1(-epsilon / 2)) if epsilon > HM_SWITCH else 0.0


def output_bound(epsilon) -> float:
    """Largest magnitude an HM report can take at this budget."""
    return pm_bound(epsilon) if epsilon > HM_SWITCH else sr_bound(epsilon)


def _sr(v, epsilon, rng):
    c = sr_bound(epsilon)
    prob_hi = 0.5 + v / (2 * c)
    return np.where(rng.random(v.shape) < prob_hi, c, -c)


def _pm(v, epsilon, rng):
    c = pm_bound(epsilon)
    left = (c + 1) / 2 * v - (c - 1) / 2
    right = left + c - 1
    e_half = np.exp(epsilon / 2)
    central = rng.random(v.shape) < e_half / (e_half + 1)
    u = rng.random(v.shape)
    inner = left + u * (c - 1)
    # tails [-c, left) and (right, c] have total length c + 1
    t = u * (c + 1)
    outer = np.where(t < left + c, -c + t, right + (t - (left + c)))
    return np.where(central, inner, outer)


def mean_perturb(params: MeanMechParams, v, rng: np.random.Generator):
    """Unbiased randomized report(s) of value(s) v in the declared domain."""
    scalar = np.ndim(v) == 0
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size and (v.min() < params.low or v.max() > params.high):
        raise DomainError(f"values must lie in [{params.low}, {params.high}]")
    mid = (params.high + params.low) / 2
    half = (params.high - params.low) / 2
    x = (v - mid) / half
    eps = params.epsilon
    if params.kind == "SR":
        y = _sr(x, eps, rng)
    elif params.kind == "PM":
        y = _pm(x, eps, rng)
    else:
        use_pm = rng.random(x.shape) < pm_probability(eps)
        y = _sr(x, eps, rng)
        if use_pm.any():
            y[use_pm] = _pm(x[use_pm], eps, rng)
    y = mid + half * y
    return float(y[0]) if scalar else y


def hm_worst_variance(epsilon) -> float:
    """Per-report variance used as Var(n, eps) * n for HM-based mean estimation."""
    if not epsilon > 0:
        raise InvalidConfigError(f"epsilon must be positive, got {epsilon}")
    sr_sq = sr_bound(epsilon) ** 2
    if epsilon <= HM_SWITCH:
        return sr_sq
    e_half = np.exp(epsilon / 2)
    return float(np.exp(-epsilon / 2) * (sr_sq + (e_half + 3) / (3 * np.expm1(epsilon / 2) ** 2)))


def hm_exact_variance(epsilon) -> float:
    """Exact HM report variance at input 0.

    Above the switch point the PM share makes it the same for every input;
    below it SR alone gives sr_bound**2 - v**2.
    """
    sr_sq = sr_bound(epsilon) ** 2
    alpha = pm_probability(epsilon)
    pm_zero = (np.exp(epsilon / 2) + 3) / (3 * np.expm1(epsilon / 2) ** 2)
    return float(alpha * pm_zero + (1 - alpha) * sr_sq)


def mean_aggregate(reports) -> float:
    reports = np.asarray(reports, dtype=float)
    if reports.size == 0:
        raise EmptyInputError("cannot aggregate an empty report set")
    return float(reports.mean())
