"""Frequency oracles: kRR, OUE and the variance-based chooser Ada.

Items are 0-based indices in ``range(d)``. A kRR report is an item index and
an OUE report is a length-d 0/1 vector. Estimates are never clipped.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError, EmptyInputError, InvalidConfigError

KINDS = ("kRR", "OUE", "Ada")


@dataclass(frozen=True)
class FoParams:
    kind: str
    epsilon: float
    d: int
    p: float
    q: float

    @property
    def gap(self) -> float:
        """p - q computed without cancellation at tiny budgets."""
        em1 = np.expm1(self.epsilon)
        if self.kind == "kRR":
            return float(em1 / (em1 + self.d))
        return float(em1 / (2.0 * (em1 + 2.0)))

    @property
    def output_mode(self) -> str:
        return "output-kRR" if self.kind == "kRR" else "output-OUE"


def _check(epsilon, d):
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise InvalidConfigError(f"epsilon must be positive, got {epsilon}")
    if int(d) != d or d < 2:
        raise InvalidConfigError(f"domain size must be an integer >= 2, got {d}")


def fo_variance(kind, n, epsilon, d) -> float:
    """Item-averaged estimator variance Var(n, eps) of an FO with n reports."""
    _check(epsilon, d)
    if not n > 0:
        raise InvalidConfigError(f"population must be positive, got {n}")
    e = np.exp(epsilon)
    em1 = np.expm1(epsilon)
    if kind == "kRR":
        return float((d - 2 + e) / (n * em1**2) + (d - 2) / (n * d * em1))
    if kind == "OUE":
        return float(4 * e / (n * em1**2) + 1 / (n * d))
    if kind == "Ada":
        return min(fo_variance("kRR", n, epsilon, d), fo_variance("OUE", n, epsilon, d))
    raise InvalidConfigError(f"unknown FO kind {kind!r}")


def resolve_kind(kind, epsilon, d) -> str:
    if kind != "Ada":
        if kind not in KINDS:
            raise InvalidConfigError(f"unknown FO kind {kind!r}")
        return kind
    # variances scale as 1/n, so n=1 decides for every n; ties go to kRR
    v_krr = fo_variance("kRR", 1, epsilon, d)
    v_oue = fo_variance("OUE", 1, epsilon, d)
    return "kRR" if v_krr <= v_oue else "OUE"


def fo_params(kind, epsilon, d) -> FoParams:
    _check(epsilon, d)
    kind = resolve_kind(kind, epsilon, int(d))
    d = int(d)
    e = float(np.exp(epsilon))
    if kind == "kRR":
        p, q = e / (e + d - 1), 1.0 / (e + d - 1)
    else:
        p, q = 0.5, 1.0 / (e + 1)
    if not p > q or p / q > e * (1 + 1e-12):
        raise InvalidConfigError(f"parameters p={p}, q={q} violate eps={epsilon}")
    return FoParams(kind, float(epsilon), d, p, q)


def _as_items(params, values):
    values = np.asarray(values)
    if values.size and (values.min() < 0 or values.max() >= params.d):
        raise DomainError(f"item indices must lie in [0, {params.d})")
    return values.astype(np.int64, copy=False)


def fo_perturb(params: FoParams, value_index, rng: np.random.Generator):
    """Perturb one item index or an array of them."""
    scalar = np.ndim(value_index) == 0
    values = _as_items(params, np.atleast_1d(value_index))
    if params.kind == "kRR":
        out = kernels.krr_perturb(values, rng.random(len(values)), params.p, params.q, params.d)
    else:
        out = kernels.oue_perturb(values, rng.random((len(values), params.d)), params.p, params.q)
    return out[0] if scalar else out


def support_counts(params: FoParams, reports) -> np.ndarray:
    """Number of reports supporting each item."""
    reports = np.asarray(reports)
    if params.kind == "kRR":
        return np.bincount(reports.astype(np.int64), minlength=params.d)[: params.d]
    if reports.ndim != 2 or reports.shape[1] != params.d:
        raise DomainError(f"OUE reports must have shape (n, {params.d})")
    return reports.sum(axis=0, dtype=np.int64)


def estimate_from_counts(params: FoParams, counts, n) -> np.ndarray:
    if not n > 0:
        raise EmptyInputError("cannot aggregate an empty report set")
    return (np.asarray(counts, dtype=float) / n - params.q) / params.gap


def fo_aggregate(params: FoParams, reports, n_total=None) -> np.ndarray:
    """Unbiased frequency estimate from a report set."""
    reports = np.asarray(reports)
    n = len(reports) if n_total is None else n_total
    if n == 0 or len(reports) == 0:
        raise EmptyInputError("cannot aggregate an empty report set")
    return estimate_from_counts(params, support_counts(params, reports), n)


def sample_support_counts(params: FoParams, input_counts, rng: np.random.Generator) -> np.ndarray:
    """Draw support counts for a population with the given input histogram.

    Same distribution as perturbing every user and counting, at O(d) cost.
    kRR: each user keeps its item w.p. p - q and otherwise reports a uniform
    item. OUE: bits are independent across users and coordinates.
    """
    h = np.asarray(input_counts, dtype=np.int64)
    if params.kind == "kRR":
        kept = rng.binomial(h, params.gap)
        rest = int(h.sum() - kept.sum())
        return kept + rng.multinomial(rest, np.full(params.d, 1.0 / params.d))
    total = int(h.sum())
    return rng.binomial(h, params.p) + rng.binomial(total - h, params.q)


def effective_sample_size(params: FoParams, n) -> float:
    """Size of a plain multinomial sample whose averaged variance matches Var(n, eps).

    Uses the uniform-distribution variance (1 - 1/d)/(d n_eff), the largest a
    multinomial estimate can have, so the match is conservative.
    """
    return (1.0 - 1.0 / params.d) / (params.d * fo_variance(params.kind, n, params.epsilon, params.d))
