"""Attack primitives: publication manipulation (input/output), dissimilarity
manipulation (input/output), their gap formulas and sufficient fake-user counts.

Allocations are per-item fake counts m[k]. Input mode means fake users hold
those raw items and perturb honestly; output mode means the fake reports are
crafted directly.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidAllocationError, InvalidConfigError
from .freq_oracle import FoParams, fo_perturb, fo_variance, sample_support_counts
from .stream_protocols import APPROXIMATION, PUBLICATION, ReportBatch

MAXIMIZE = "maximize"
MINIMIZE = "minimize"


@dataclass(frozen=True)
class Knowledge:
    """What the attacker believes about the genuine users at one timestamp."""

    n_e: float
    f_e: np.ndarray
    mode: str = "full"
    rho: float = 1.0


@dataclass
class FakeAllocation:
    counts: np.ndarray
    total: float
    mode: str
    fractional: np.ndarray | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        tol = 1e-7 * max(1.0, self.total)
        if np.any(self.counts < -tol) or np.any(self.counts > self.total + tol):
            raise InvalidAllocationError("every m[k] must lie in [0, m]")
        if self.mode in ("input", "output-kRR") and abs(float(self.counts.sum()) - self.total) > tol:
            raise InvalidAllocationError(
                f"{self.mode} allocation must place exactly m={self.total} fake users")


@dataclass(frozen=True)
class GapEstimate:
    value: float
    bias: float
    variance: float

    @classmethod
    def of(cls, bias, variance):
        return cls(float(bias + variance), float(bias), float(variance))


def project_box_simplex(c, total, upper) -> np.ndarray:
    """Euclidean projection of c onto {x : sum(x) = total, 0 <= x <= upper}.

    x = clip(c - tau, 0, upper) where tau solves a monotone piecewise-linear
    equation; its breakpoints are c and c - upper, so sorting them and one
    linear solve inside the right segment is exact.
    """
    c = np.asarray(c, dtype=float)
    d = len(c)
    if total < 0 or total > d * upper + 1e-9 * max(1.0, total):
        raise InvalidConfigError(f"infeasible mass {total} for {d} coordinates capped at {upper}")
    if total == 0 or upper == 0:
        return np.zeros(d)

    def mass(tau):
        return float(np.clip(c - tau, 0.0, upper).sum())

    bps = np.unique(np.concatenate([c, c - upper]))
    lo, hi = 0, len(bps) - 1
    if mass(bps[hi]) >= total:
        tau = bps[hi] + (mass(bps[hi]) - total) / d
        return np.clip(c - tau, 0.0, upper)
    if mass(bps[lo]) <= total:
        tau = bps[lo] - (total - mass(bps[lo])) / d
        return np.clip(c - tau, 0.0, upper)
    # invariant: mass(bps[lo]) > total > mass(bps[hi])
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mass(bps[mid]) > total:
            lo = mid
        else:
            hi = mid
    m_lo, m_hi = mass(bps[lo]), mass(bps[hi])
    tau = bps[lo] + (m_lo - total) * (bps[hi] - bps[lo]) / (m_lo - m_hi)
    return np.clip(c - tau, 0.0, upper)


def largest_remainder(x, total) -> np.ndarray:
    """Integer vector with the given sum, closest to x; ties go to the lowest index."""
    x = np.asarray(x, dtype=float)
    floors = np.floor(x + 1e-9).astype(np.int64)
    floors = np.maximum(floors, 0)
    short = int(round(total - floors.sum()))
    rem = x - floors
    out = floors.copy()
    if short > 0:
        order = np.argsort(-rem, kind="stable")
        out[order[:short]] += 1
    elif short < 0:
        order = np.argsort(rem, kind="stable")
        take = [k for k in order if out[k] > 0][: -short]
        out[take] -= 1
    return out


def _vec(x, d=None):
    x = np.asarray(x, dtype=float)
    if d is not None and len(x) != d:
        raise DimensionMismatchError(f"expected length {d}, got {len(x)}")
    return x


def ipma_objective(counts, knowledge: Knowledge, target, m) -> float:
    f_e = _vec(knowledge.f_e)
    target = _vec(target, len(f_e))
    denom = knowledge.n_e + m
    if denom <= 0:
        return float(np.mean(target**2))
    return float(np.mean(((np.asarray(counts, float) + knowledge.n_e * f_e) / denom - target) ** 2))


def ipma_solve(knowledge: Knowledge, target, m, integral=True) -> FakeAllocation:
    """Input allocation of m fake users that brings the mixture closest to target."""
    f_e = _vec(knowledge.f_e)
    target = _vec(target, len(f_e))
    if m < 0:
        raise InvalidConfigError("m must be non-negative")
    c = (m + knowledge.n_e) * target - knowledge.n_e * f_e
    x = project_box_simplex(c, m, m)
    counts = largest_remainder(x, m) if integral else x
    return FakeAllocation(counts, m, "input", fractional=x)


def ipma_gap(alloc: FakeAllocation, n, f_true, target, fo_kind, epsilon, m) -> GapEstimate:
    f_true = _vec(f_true)
    target = _vec(target, len(f_true))
    bias = np.mean(((np.asarray(alloc.counts, float) + n * f_true) / (n + m) - target) ** 2)
    return GapEstimate.of(bias, fo_variance(fo_kind, n + m, epsilon, len(f_true)))


def ipma_sufficient_m(n, f_true, target):
    """Smallest m (rounded up) for which the input target is reachable exactly; inf if never."""
    f = _vec(f_true)
    g = _vec(target, len(f))
    need = 0.0
    for fk, gk in zip(f, g):
        if gk <= 0:
            if fk > 0:
                return math.inf
            continue
        need = max(need, n * fk / gk - n)
        if gk >= 1:
            if fk < 1:
                return math.inf
            continue
        need = max(need, (n * gk - n * fk) / (1 - gk))
    return int(math.ceil(need - 1e-9))


def opma_coefficients(knowledge: Knowledge, target, m, params: FoParams) -> np.ndarray:
    """C_k of the output objective sum_k |m[k] + C_k|."""
    f_e = _vec(knowledge.f_e, params.d)
    target = _vec(target, params.d)
    a = knowledge.n_e * params.gap * f_e - m * params.q
    return a - target * params.gap * (m + knowledge.n_e)


def opma_objective(counts, coeffs) -> float:
    return float(np.abs(np.asarray(counts, float) + coeffs).sum())


def opma_solve(knowledge: Knowledge, target, m, params: FoParams, integral=True) -> FakeAllocation:
    """Output allocation minimizing sum_k |m[k] + C_k| over the feasible box.

    The unconstrained minimizer is m[k] = -C_k; clipping gives the box optimum.
    Under kRR the clipped vector may miss sum = m. At that point every
    coordinate sits at its kink or at a bound, so each unit moved in the
    needed direction costs exactly +1 and any monotone redistribution is
    optimal. We redistribute by water-filling, which is one such move and
    also keeps the squared error as small as possible.
    """
    coeffs = opma_coefficients(knowledge, target, m, params)
    x = np.clip(-coeffs, 0.0, m)
    if params.kind == "kRR" and abs(x.sum() - m) > 1e-9 * max(1.0, m):
        x = project_box_simplex(-coeffs, m, m)
    mode = params.output_mode
    if not integral:
        return FakeAllocation(x, m, mode, fractional=x)
    total = m if params.kind == "kRR" else int(round(float(x.sum())))
    return FakeAllocation(largest_remainder(x, total), m, mode, fractional=x)


def opma_gap(alloc: FakeAllocation, n, f_true, target, params: FoParams, m) -> GapEstimate:
    f_true = _vec(f_true, params.d)
    target = _vec(target, params.d)
    gap = params.gap
    mixed = (n * f_true * gap + np.asarray(alloc.counts, float) - m * params.q) / ((m + n) * gap)
    bias = np.mean((mixed - target) ** 2)
    var = n**2 * fo_variance(params.kind, n, params.epsilon, params.d) / (m + n) ** 2 if n > 0 else 0.0
    return GapEstimate.of(bias, var)


def opma_sufficient_m(n, f_true, target, params: FoParams):
    """Smallest m (rounded up) for which the clipped output solution needs no clipping."""
    f = _vec(f_true, params.d)
    g = _vec(target, params.d)
    gap, q = params.gap, params.q
    need = 0.0
    for fk, gk in zip(f, g):
        up = (1 - q) / gap - gk
        down = q / gap + gk
        for num, den in ((n * gk - n * fk, up), (n * fk - n * gk, down)):
            if den <= 0:
                if num > 0:
                    return math.inf
                continue
            need = max(need, num / den)
    return int(math.ceil(need - 1e-9))


def _one_hot(d, k, m):
    out = np.zeros(d, dtype=np.int64)
    out[k] = m
    return out


def idma_objective(counts, knowledge: Knowledge, f_last, m) -> float:
    """Mixture-to-last-release distance that input dissimilarity manipulation steers."""
    return ipma_objective(counts, knowledge, f_last, m)


def idma_extreme(knowledge: Knowledge, f_last, m, direction) -> FakeAllocation:
    f_e = _vec(knowledge.f_e)
    f_last = _vec(f_last, len(f_e))
    if direction == MINIMIZE:
        return ipma_solve(knowledge, f_last, m)
    if direction != MAXIMIZE:
        raise InvalidConfigError(f"unknown direction {direction!r}")
    b = knowledge.n_e * f_e / (m + knowledge.n_e) - f_last
    return FakeAllocation(_one_hot(len(f_e), int(np.argmax(b)), m), m, "input")


def odma_lower_objective(counts, knowledge: Knowledge, f_last, m, params: FoParams) -> float:
    """m-dependent part of the lower bound on the expected output dissimilarity."""
    f_last = _vec(f_last, params.d)
    size = m + knowledge.n_e
    coef = -2 * (f_last * size * params.gap + size * params.q) / (params.gap**2 * size**2)
    return float(np.dot(coef, np.asarray(counts, float)))


def odma_extreme(knowledge: Knowledge, f_last, m, direction, params: FoParams) -> FakeAllocation:
    f_last = _vec(f_last, params.d)
    if direction == MINIMIZE:
        return opma_solve(knowledge, f_last, m, params)
    if direction != MAXIMIZE:
        raise InvalidConfigError(f"unknown direction {direction!r}")
    return FakeAllocation(_one_hot(params.d, int(np.argmin(f_last)), m), m, params.output_mode)


def msd_choose(dis_attack, potential_gap) -> str:
    return PUBLICATION if dis_attack > potential_gap else APPROXIMATION


def _integral_counts(alloc: FakeAllocation) -> np.ndarray:
    counts = np.asarray(alloc.counts)
    rounded = np.rint(counts)
    if np.any(np.abs(counts - rounded) > 1e-9):
        raise InvalidAllocationError(f"{alloc.mode} allocation must be integer-valued")
    return rounded.astype(np.int64)


def _oue_rows(counts, m, d) -> np.ndarray:
    """m bit vectors with the given column sums, ones spread cyclically across rows."""
    out = np.zeros((m, d), dtype=np.uint8)
    start = 0
    for k in range(d):
        c = int(counts[k])
        rows = (start + np.arange(c)) % m
        out[rows, k] = 1
        start = (start + c) % m
    return out


def allocation_to_reports(alloc: FakeAllocation, params: FoParams, rng: np.random.Generator):
    """Materialize the fake users' reports for an allocation."""
    m = int(round(alloc.total))
    if alloc.mode == "output-OUE":
        counts = np.asarray(alloc.counts)
        if np.any(np.abs(counts - np.rint(counts)) > 1e-9):
            counts = largest_remainder(counts, int(round(float(counts.sum()))))
        return _oue_rows(np.rint(counts).astype(np.int64), m, params.d)
    counts = _integral_counts(alloc)
    if counts.sum() != m:
        raise InvalidAllocationError(f"allocation places {counts.sum()} users, expected {m}")
    items = np.repeat(np.arange(len(counts)), counts)
    if alloc.mode == "output-kRR":
        return items
    return fo_perturb(params, items, rng) if m else np.zeros(0, dtype=np.int64)


def allocation_to_batch(alloc: FakeAllocation, params: FoParams, rng: np.random.Generator,
                        materialize=False) -> ReportBatch:
    """Fake contribution as aggregated support counts, optionally with the reports."""
    m = int(round(alloc.total))
    if materialize:
        reports = allocation_to_reports(alloc, params, rng)
        if params.kind == "kRR":
            totals = np.bincount(reports, minlength=params.d).astype(np.int64)
        else:
            totals = reports.sum(axis=0, dtype=np.int64)
        return ReportBatch(totals, m, reports)
    if alloc.mode == "input":
        counts = _integral_counts(alloc)
        return ReportBatch(sample_support_counts(params, counts, rng), m)
    if alloc.mode == "output-kRR":
        return ReportBatch(_integral_counts(alloc), m)
    counts = np.asarray(alloc.counts)
    if np.any(np.abs(counts - np.rint(counts)) > 1e-9):
        counts = largest_remainder(counts, int(round(float(counts.sum()))))
    return ReportBatch(np.rint(counts).astype(np.int64), m)
