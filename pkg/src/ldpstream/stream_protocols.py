"""w-event streaming protocols: the adaptive LBD/LBA/LPD/LPA family and LBU/LPU/LSP.

A protocol never touches user data directly. At each timestamp it asks a
report source for reports under a (budget, sub-population) request; genuine
users and fake users both answer through that seam.
"""
import csv
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DimensionMismatchError, InvalidConfigError
from .freq_oracle import estimate_from_counts, fo_params, fo_variance
from .mean_mech import hm_worst_variance

PUBLICATION = "publication"
APPROXIMATION = "approximation"
DISSIMILARITY_PHASE = "dissimilarity"
PUBLICATION_PHASE = "publication"


class ProtocolKind(str, Enum):
    LBD = "LBD"
    LBA = "LBA"
    LPD = "LPD"
    LPA = "LPA"
    LBU = "LBU"
    LPU = "LPU"
    LSP = "LSP"

    @property
    def budget_division(self) -> bool:
        return self in (ProtocolKind.LBD, ProtocolKind.LBA, ProtocolKind.LBU, ProtocolKind.LSP)

    @property
    def population_division(self) -> bool:
        return self in (ProtocolKind.LPD, ProtocolKind.LPA, ProtocolKind.LPU)

    @property
    def two_phase(self) -> bool:
        return self in (ProtocolKind.LBD, ProtocolKind.LBA, ProtocolKind.LPD, ProtocolKind.LPA)

    @property
    def absorbing(self) -> bool:
        return self in (ProtocolKind.LBA, ProtocolKind.LPA)


@dataclass
class ReportRequest:
    t: int
    phase: str
    epsilon: float
    users: np.ndarray | None = None
    materialize: bool = False


@dataclass
class ReportBatch:
    """Aggregated reports: support counts per item, or the report sum for means."""

    totals: np.ndarray
    size: int
    reports: np.ndarray | None = None

    def merge(self, other: "ReportBatch") -> "ReportBatch":
        if other.size == 0:
            return self
        if self.size == 0:
            return other
        reports = None
        if self.reports is not None and other.reports is not None:
            reports = np.concatenate([self.reports, other.reports])
        return ReportBatch(self.totals + other.totals, self.size + other.size, reports)


class FrequencyTask:
    """Frequency estimation with one of the frequency oracles."""

    kind = "frequency"

    def __init__(self, d: int, fo_kind: str = "Ada"):
        self.d = d
        self.dim = d
        self.fo_kind = fo_kind
        self._params = {}

    def params(self, epsilon):
        if epsilon not in self._params:
            self._params[epsilon] = fo_params(self.fo_kind, epsilon, self.d)
        return self._params[epsilon]

    def variance(self, n, epsilon) -> float:
        return fo_variance(self.fo_kind, n, epsilon, self.d)

    def estimate(self, batch: ReportBatch, epsilon) -> np.ndarray:
        return estimate_from_counts(self.params(epsilon), batch.totals, batch.size)

    def initial_release(self) -> np.ndarray:
        return np.full(self.d, 1.0 / self.d)


class MeanTask:
    """Mean estimation with the hybrid mechanism; releases are length-1 vectors."""

    kind = "mean"
    dim = 1

    def variance(self, n, epsilon) -> float:
        return hm_worst_variance(epsilon) / n

    def estimate(self, batch: ReportBatch, epsilon) -> np.ndarray:
        return np.array([batch.totals[0] / batch.size])

    def initial_release(self) -> np.ndarray:
        return np.zeros(1)


def dissimilarity(f_bar, f_last, var_term) -> float:
    """Private dissimilarity: mean squared difference minus the FO variance, unclamped."""
    f_bar = np.asarray(f_bar, dtype=float)
    f_last = np.asarray(f_last, dtype=float)
    if f_bar.shape != f_last.shape:
        raise DimensionMismatchError(f"{f_bar.shape} vs {f_last.shape}")
    return float(np.mean((f_bar - f_last) ** 2) - var_term)


def absorption_units(t, last_publication, w) -> int:
    """Uniform slots a publication at t may spend under absorption; 0 if t is nullified.

    A publication that spent u slots nullifies the next u - 1 timestamps.
    After that, every skipped slot since the nullified stretch can be
    absorbed, up to w slots.
    """
    if last_publication is None:
        return min(t + 1, w)
    t_last, units_last = last_publication
    nullified = units_last - 1
    if t - t_last <= nullified:
        return 0
    return min(t - (t_last + nullified), w)


def publication_allocation(kind, t, epsilon, w, n_total, history, last_publication):
    """Budget (budget-division) or user count (population-division) for a publication at t."""
    kind = ProtocolKind(kind)
    spent = float(sum(history))
    if kind is ProtocolKind.LBD:
        return max((epsilon / 2 - spent) / 2, 0.0)
    if kind is ProtocolKind.LPD:
        raw = (n_total / 2 - spent) / 2
        return max(int(math.floor(raw)), 1) if raw > 0 else 0
    if kind is ProtocolKind.LBA:
        return absorption_units(t, last_publication, w) * epsilon / (2 * w)
    if kind is ProtocolKind.LPA:
        units = absorption_units(t, last_publication, w)
        return max(int(math.floor(units * n_total / (2 * w))), 1) if units else 0
    if kind is ProtocolKind.LBU:
        return epsilon / w
    if kind is ProtocolKind.LPU:
        return max(int(math.floor(n_total / w)), 1)
    return epsilon if t % w == 0 else 0.0


def dissimilarity_population(n_total, w) -> int:
    return max(int(math.floor(n_total / (2 * w))), 1)


@dataclass
class StepOutcome:
    t: int
    strategy: str
    release: np.ndarray
    dis_bar: float
    err: float
    budget_used: float
    population_used: int
    publication_budget: float = 0.0
    publication_population: int = 0
    f_bar: np.ndarray | None = None
    detected: bool | None = None
    defense_score: float | None = None


@dataclass
class ProtocolState:
    w: int
    epsilon: float
    n_total: int
    last_release: np.ndarray
    window_history: deque
    rng: np.random.Generator
    last_publication: tuple | None = None
    last_used: np.ndarray | None = None
    outcomes: list = field(default_factory=list)


class StreamProtocol:
    """One protocol instance over one stream."""

    def __init__(self, kind, task, epsilon, w, n_total, rng, defense=None):
        self.kind = ProtocolKind(kind)
        if not epsilon > 0:
            raise InvalidConfigError("epsilon must be positive")
        if int(w) != w or w < 1:
            raise InvalidConfigError("window size must be a positive integer")
        if n_total < 1:
            raise InvalidConfigError("population must be positive")
        self.task = task
        self.defense = defense
        last_used = None
        if self.kind.population_division:
            last_used = np.full(n_total, -(w + 1), dtype=np.int64)
        self.state = ProtocolState(
            w=int(w), epsilon=float(epsilon), n_total=int(n_total),
            last_release=task.initial_release(),
            window_history=deque([0] * (int(w) - 1), maxlen=max(int(w) - 1, 0)),
            rng=rng, last_used=last_used,
        )

    @property
    def last_release(self) -> np.ndarray:
        return self.state.last_release

    @property
    def outcomes(self):
        return self.state.outcomes

    def _available(self, t) -> np.ndarray:
        return np.flatnonzero(self.state.last_used <= t - self.state.w)

    def _draw(self, t, size):
        pool = self._available(t)
        if len(pool) < size:
            return None
        chosen = self.state.rng.choice(pool, size=size, replace=False)
        self.state.last_used[chosen] = t
        return chosen

    def _finish(self, outcome: StepOutcome) -> StepOutcome:
        st = self.state
        if outcome.strategy == PUBLICATION:
            st.last_release = outcome.release
        else:
            outcome.release = st.last_release
        spent = outcome.publication_population if self.kind.population_division else outcome.publication_budget
        if st.w > 1:
            st.window_history.append(spent)
        st.outcomes.append(outcome)
        return outcome

    def _release(self, t, source, epsilon, users, f_bar=None, n_bar=None, eps_bar=None):
        batch = source.collect(ReportRequest(t, PUBLICATION_PHASE, epsilon, users,
                                             materialize=self.defense is not None))
        f_hat = self.task.estimate(batch, epsilon)
        detected, score = None, None
        if self.defense is not None:
            f_hat, detected, score = self.defense.review(
                self.task, batch, f_hat, epsilon, f_bar=f_bar, n_bar=n_bar,
                eps_bar=eps_bar, rng=self.state.rng)
        return f_hat, batch.size, detected, score

    def step(self, t, source) -> StepOutcome:
        if self.kind.two_phase:
            return self._finish(self._two_phase(t, source))
        return self._finish(self._single_phase(t, source))

    def _single_phase(self, t, source) -> StepOutcome:
        st = self.state
        kind = self.kind
        quantity = publication_allocation(kind, t, st.epsilon, st.w, st.n_total,
                                          st.window_history, st.last_publication)
        if kind is ProtocolKind.LPU:
            users = self._draw(t, quantity)
            if users is None:
                return StepOutcome(t, APPROXIMATION, st.last_release, math.nan, math.inf, 0.0, 0)
            err = self.task.variance(quantity, st.epsilon)
            release, _, detected, score = self._release(t, source, st.epsilon, users)
            return StepOutcome(t, PUBLICATION, release, math.nan, err, 0.0, quantity,
                               publication_population=quantity, detected=detected,
                               defense_score=score)
        if quantity <= 0:
            return StepOutcome(t, APPROXIMATION, st.last_release, math.nan, math.nan, 0.0, 0)
        err = self.task.variance(st.n_total, quantity)
        release, _, detected, score = self._release(t, source, quantity, None)
        return StepOutcome(t, PUBLICATION, release, math.nan, err, quantity, 0,
                           publication_budget=quantity, detected=detected, defense_score=score)

    def _two_phase(self, t, source) -> StepOutcome:
        st = self.state
        kind = self.kind
        w = st.w
        if kind.budget_division:
            eps1, users1 = st.epsilon / (2 * w), None
        else:
            eps1 = st.epsilon
            users1 = self._draw(t, dissimilarity_population(st.n_total, w))
            if users1 is None:
                return StepOutcome(t, APPROXIMATION, st.last_release, math.nan, math.inf, 0.0, 0)
        batch1 = source.collect(ReportRequest(t, DISSIMILARITY_PHASE, eps1, users1))
        f_bar = self.task.estimate(batch1, eps1)
        dis = dissimilarity(f_bar, st.last_release, self.task.variance(batch1.size, eps1))
        quantity = publication_allocation(kind, t, st.epsilon, w, st.n_total,
                                          st.window_history, st.last_publication)
        if kind.budget_division:
            err = self.task.variance(st.n_total, quantity) if quantity > 0 else math.inf
            used1 = (eps1, 0)
        else:
            feasible = quantity >= 1 and len(self._available(t)) >= quantity
            err = self.task.variance(quantity, st.epsilon) if feasible else math.inf
            used1 = (0.0, batch1.size if users1 is None else len(users1))
        if not dis > err:
            return StepOutcome(t, APPROXIMATION, st.last_release, dis, err, used1[0], used1[1],
                               f_bar=f_bar)
        if kind.budget_division:
            eps2, users2, pop2 = quantity, None, 0
        else:
            eps2, users2, pop2 = st.epsilon, self._draw(t, quantity), quantity
        release, _, detected, score = self._release(
            t, source, eps2, users2, f_bar=f_bar, n_bar=batch1.size, eps_bar=eps1)
        if kind.absorbing:
            st.last_publication = (t, absorption_units(t, st.last_publication, w))
        if kind.budget_division:
            return StepOutcome(t, PUBLICATION, release, dis, err, eps1 + eps2, 0,
                               publication_budget=eps2, f_bar=f_bar, detected=detected,
                               defense_score=score)
        return StepOutcome(t, PUBLICATION, release, dis, err, 0.0, used1[1] + pop2,
                           publication_population=pop2, f_bar=f_bar, detected=detected,
                           defense_score=score)


def protocol_step(protocol: StreamProtocol, report_source, t) -> StepOutcome:
    return protocol.step(t, report_source)


def window_budget_audit(outcomes, epsilon, w, n_total, tol=1e-9) -> bool:
    """True iff every length-w window stays within eps (budget) and n_total (users)."""
    budget = np.array([o.budget_used for o in outcomes], dtype=float)
    users = np.array([o.population_used for o in outcomes], dtype=float)
    if len(outcomes) == 0:
        return True
    span = min(w, len(outcomes))
    kernel = np.ones(span)
    b_win = np.convolve(budget, kernel, mode="valid")
    u_win = np.convolve(users, kernel, mode="valid")
    return bool(np.all(b_win <= epsilon * (1 + tol) + tol) and np.all(u_win <= n_total))


def write_trace_csv(path, outcomes):
    d = len(outcomes[0].release) if outcomes else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "strategy", "dis_bar", "err", "budget_used", "population_used"]
                        + [f"release_{k}" for k in range(d)])
        for o in outcomes:
            writer.writerow([o.t, o.strategy, repr(o.dis_bar), repr(o.err), repr(o.budget_used),
                             o.population_used] + [repr(float(x)) for x in o.release])
