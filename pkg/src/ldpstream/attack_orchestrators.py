"""Stream-level attack strategies in input and output form, with their reference
gap bounds. Numeric-mean variants live at the bottom.

An attacker sees the protocol only the way its fake users would: the requests
routed to them (budget, whether they were sampled) and the public releases.
"""
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .attack_core import (MAXIMIZE, MINIMIZE, Knowledge, allocation_to_batch, idma_extreme,
                          ipma_gap, ipma_solve, msd_choose, odma_extreme, opma_gap, opma_solve)
from .errors import InvalidConfigError
from .freq_oracle import estimate_from_counts, fo_variance, sample_support_counts
from .mean_mech import HM_SWITCH, output_bound, sr_bound
from .stream_protocols import (DISSIMILARITY_PHASE, PUBLICATION, ProtocolKind, ReportBatch,
                               absorption_units, publication_allocation)


class AttackKind(str, Enum):
    IUA = "IUA"
    OUA = "OUA"
    ISA = "ISA"
    OSA = "OSA"
    IAA = "IAA"
    OAA = "OAA"

    @property
    def mode(self) -> str:
        return "input" if self.value[0] == "I" else "output"

    @property
    def strategy(self) -> str:
        return {"U": "uniform", "S": "sampling", "A": "adaptive"}[self.value[1]]


def estimate_knowledge(mode, values_t, fo_params=None, rng=None, rho=1.0, subset=None,
                       n_e=None, d=None) -> Knowledge:
    """Attacker's estimate of the genuine distribution at one timestamp.

    values_t holds the genuine users' items. Partial and mitm modes look only
    at ``subset`` (a fixed set of compromised users); one is drawn with
    fraction rho when it is not given.
    """
    values_t = np.asarray(values_t)
    n = len(values_t)
    d = d if d is not None else (fo_params.d if fo_params is not None else int(values_t.max()) + 1)
    n_e = n if n_e is None else n_e
    if mode == "full":
        return Knowledge(n_e, np.bincount(values_t, minlength=d) / n, "full", 1.0)
    if mode not in ("partial", "mitm"):
        raise InvalidConfigError(f"unknown knowledge mode {mode!r}")
    if not 0 < rho <= 1:
        raise InvalidConfigError(f"observed fraction must lie in (0, 1], got {rho}")
    if subset is None:
        subset = rng.choice(n, size=max(1, int(round(rho * n))), replace=False)
    hist = np.bincount(values_t[subset], minlength=d)
    if mode == "partial":
        return Knowledge(n_e, hist / len(subset), "partial", rho)
    counts = sample_support_counts(fo_params, hist, rng)
    return Knowledge(n_e, estimate_from_counts(fo_params, counts, len(subset)), "mitm", rho)


@dataclass
class AttackerState:
    target_stream: np.ndarray
    knowledge: object
    q_m: deque
    beta: float
    rng: np.random.Generator
    last_publication: tuple | None = None
    trace: list = field(default_factory=list)


@dataclass
class AttackTraceRow:
    t: int
    msd_choice: str
    dma_direction: str
    dma_success: bool | None
    gap_t: float


class _StreamAttackerBase:
    """Per-step attack loop shared by the frequency and mean attackers.

    Subclasses supply the task-specific pieces.
    """

    def __init__(self, kind, targets, m, n, epsilon, w, model, rng, ne_offset=0.0,
                 exact_allocations=False):
        self.kind = AttackKind(kind)
        self.exact_allocations = exact_allocations
        self.model = ProtocolKind(model)
        self.m = int(m)
        self.n = int(n)
        self.n_e = float(round(n * (1.0 + ne_offset)))
        self.epsilon = float(epsilon)
        self.w = int(w)
        targets = np.asarray(targets, dtype=float)
        self.state = AttackerState(
            target_stream=targets if targets.ndim == 2 else targets[:, None],
            knowledge=None,
            q_m=deque([0.0] * (self.w - 1), maxlen=max(self.w - 1, 0)),
            beta=self.m / (self.m + self.n) if self.m + self.n else 0.0,
            rng=rng,
        )
        self._t = None
        self._last_release = None
        self._direction = None
        self._choice = None
        self._dma_launched = False
        self._pub_epsilon = None
        self._pub_fakes = 0

    @property
    def trace(self):
        return self.state.trace

    @property
    def n_total_estimate(self) -> float:
        return self.n_e + self.m

    def expected_allocation(self, t) -> float:
        """Mirror of the protocol's publication budget/population, computed from Q_m."""
        return publication_allocation(self.model, t, self.epsilon, self.w, self.n_total_estimate,
                                      self.state.q_m, self.state.last_publication)

    def _publication_sizes(self, t):
        """(fake users, genuine users, budget) expected at a publication at t."""
        quantity = self.expected_allocation(t)
        if self.model.budget_division:
            return (self.m, self.n_e, quantity) if quantity > 0 else None
        if quantity < 1:
            return None
        share = quantity / (self.m + self.n_e)
        return self.m * share, self.n_e * share, self.epsilon

    def begin_step(self, t, last_release):
        self._t = t
        self._last_release = np.asarray(last_release, dtype=float).copy()
        self.state.knowledge = self._knowledge(t)
        self._dma_launched = False
        self._pub_epsilon = None
        self._pub_fakes = 0
        target = self.state.target_stream[t]
        strategy = self.kind.strategy
        if strategy == "uniform":
            self._choice = PUBLICATION
        elif strategy == "sampling":
            self._choice = PUBLICATION if t % self.w == 0 else "approximation"
        else:
            sizes = self._publication_sizes(t) if self.m > 0 else None
            gap = math.inf if sizes is None else self._potential_gap(*sizes, target)
            dis_attack = float(np.mean((self._last_release - target) ** 2))
            self._choice = msd_choose(dis_attack, gap)
        self._direction = MAXIMIZE if self._choice == PUBLICATION else MINIMIZE

    def respond(self, request, n_fake) -> ReportBatch:
        t = self._t
        whole = request.users is None
        if request.phase == DISSIMILARITY_PHASE:
            self._dma_launched = True
            n_present = self.n_e if whole else self.n_e * n_fake / self.m
            return self._dma_batch(request, n_fake, n_present, self._direction)
        self._pub_epsilon = request.epsilon
        self._pub_fakes = n_fake
        n_present = self.n_e if whole else self.n_e * n_fake / self.m
        return self._pma_batch(request, n_fake, n_present, self.state.target_stream[t])

    def end_step(self, outcome):
        st = self.state
        published = outcome.strategy == PUBLICATION
        value = 0.0
        if published and self.exact_allocations:
            value = (outcome.publication_budget if self.model.budget_division
                     else outcome.publication_population)
        elif published:
            if self.model.budget_division:
                value = (self._pub_epsilon if self._pub_epsilon is not None
                         else self.expected_allocation(outcome.t))
            elif self._pub_fakes > 0:
                value = self._pub_fakes * self.n_total_estimate / self.m
            else:
                value = float(self.expected_allocation(outcome.t))
        if published and self.model.absorbing:
            total = self.epsilon if self.model.budget_division else self.n_total_estimate
            st.last_publication = (outcome.t, max(int(round(value * 2 * self.w / total)), 1))
        if self.w > 1:
            st.q_m.append(value)
        success = None
        if self._dma_launched:
            success = published == (self._direction == MAXIMIZE)
        target = st.target_stream[outcome.t]
        gap = float(np.mean((np.asarray(outcome.release, dtype=float) - target) ** 2))
        st.trace.append(AttackTraceRow(outcome.t, self._choice,
                                       self._direction if self._dma_launched else "",
                                       success, gap))

    def success_rate(self) -> float:
        flags = [r.dma_success for r in self.state.trace if r.dma_success is not None]
        return float(np.mean(flags)) if flags else math.nan


class StreamAttacker(_StreamAttackerBase):
    """Frequency-estimation attacker driving fake users through the report seam."""

    def __init__(self, kind, task, targets, m, stream, epsilon, w, model, rng,
                 knowledge_mode="full", rho=0.01, ne_offset=0.0, exact_allocations=False):
        super().__init__(kind, targets, m, stream.n, epsilon, w, model, rng, ne_offset,
                         exact_allocations)
        self.task = task
        self.stream = stream
        self.knowledge_mode = knowledge_mode
        self.rho = rho
        self._subset = None
        if knowledge_mode in ("partial", "mitm"):
            self._subset = rng.choice(stream.n, size=max(1, int(round(rho * stream.n))), replace=False)

    def _knowledge(self, t):
        params = self.task.params(self.epsilon)
        return estimate_knowledge(self.knowledge_mode, self.stream.values[:, t], params,
                                  self.state.rng, self.rho, self._subset, self.n_e, self.task.d)

    def _potential_gap(self, m_pub, n_pub, eps, target):
        know = Knowledge(n_pub, self.state.knowledge.f_e)
        if self.kind.mode == "input":
            alloc = ipma_solve(know, target, m_pub, integral=False)
            return ipma_gap(alloc, n_pub, know.f_e, target, self.task.fo_kind, eps, m_pub).value
        params = self.task.params(eps)
        alloc = opma_solve(know, target, m_pub, params, integral=False)
        return opma_gap(alloc, n_pub, know.f_e, target, params, m_pub).value

    def _dma_batch(self, request, n_fake, n_present, direction):
        params = self.task.params(request.epsilon)
        know = Knowledge(n_present, self.state.knowledge.f_e)
        if self.kind.mode == "input":
            alloc = idma_extreme(know, self._last_release, n_fake, direction)
        else:
            alloc = odma_extreme(know, self._last_release, n_fake, direction, params)
        return allocation_to_batch(alloc, params, self.state.rng, request.materialize)

    def _pma_batch(self, request, n_fake, n_present, target):
        params = self.task.params(request.epsilon)
        know = Knowledge(n_present, self.state.knowledge.f_e)
        if self.kind.mode == "input":
            alloc = ipma_solve(know, target, n_fake)
        else:
            alloc = opma_solve(know, target, n_fake, params)
        return allocation_to_batch(alloc, params, self.state.rng, request.materialize)


# numeric mean estimation

@dataclass(frozen=True)
class MeanKnowledge:
    S1_e: float
    S2: float
    mu_t: float
    n_e: float

    @property
    def mean_e(self) -> float:
        return self.S1_e / self.n_e if self.n_e else 0.0


def _mean_bias(m, n, s1, s1_e, n_e, mu):
    total = m + n
    return ((n_e - n) / total * mu + (s1 - s1_e) / total) ** 2


def opa_gap_sr(m, n, epsilon, s1, s1_e, s2, n_e, mu) -> float:
    """Output-poisoning mean gap when reports follow stochastic rounding."""
    p = math.exp(epsilon) / (1 + math.exp(epsilon))
    g = 2 * p - 1
    total = m + n
    var = (2 * n - 2 * g**2 * s2) / (total**2 * g**2) + s2 / total**2
    return var + _mean_bias(m, n, s1, s1_e, n_e, mu)


def opa_gap_pm(m, n, epsilon, s1, s1_e, s2, n_e, mu) -> float:
    """Output-poisoning mean gap when reports follow the piecewise mechanism."""
    eh = math.exp(epsilon / 2)
    total = m + n
    var = (2 * n * (eh + 3) / (3 * total**2 * (eh - 1) ** 2)
           + (1 + eh) * s2 / (total**2 * (eh - 1)))
    return var + _mean_bias(m, n, s1, s1_e, n_e, mu)


def mean_attack_gap(m, n, epsilon, s1, s1_e, s2, n_e, mu, double=True) -> float:
    """Mean gap with the half-population correction (m and n doubled)."""
    if double:
        m, n, n_e = 2 * m, 2 * n, 2 * n_e
    fn = opa_gap_sr if epsilon <= HM_SWITCH else opa_gap_pm
    return fn(m, n, epsilon, s1, s1_e, s2, n_e, mu)


def cgm_attack(knowledge_mean, target_mean, m, domain=(-1.0, 1.0)) -> np.ndarray:
    """Fake values that pull the mixture mean onto target_mean.

    knowledge_mean is (n_e, attacker-estimated genuine mean).
    """
    n_e, f_e = knowledge_mean
    if m <= 0:
        return np.zeros(0)
    z = ((n_e + m) * target_mean - n_e * f_e) / m
    return np.full(int(m), float(np.clip(z, domain[0], domain[1])))


def opa_fake_outputs(n_present, mean_e, target, m, epsilon) -> np.ndarray:
    """Crafted reports of m fake users aiming the aggregate mean at target.

    With SR alone the only valid outputs are +-bound, so the attacker picks how
    many send each sign; otherwise any value in the PM range is plausible.
    """
    m = int(m)
    if m <= 0:
        return np.zeros(0)
    z = ((n_present + m) * target - n_present * mean_e) / m
    if epsilon <= HM_SWITCH:
        c = sr_bound(epsilon)
        plus = int(np.clip(round(m * (z / c + 1) / 2), 0, m))
        return np.concatenate([np.full(plus, c), np.full(m - plus, -c)])
    c = output_bound(epsilon)
    return np.full(m, float(np.clip(z, -c, c)))


def dma_mean_target(last_release, direction) -> float:
    """Farther domain endpoint when maximizing, the last release when minimizing."""
    if direction == MINIMIZE:
        return float(last_release)
    return -1.0 if last_release >= 0 else 1.0


class MeanStreamAttacker(_StreamAttackerBase):
    """Output-poisoning attacker for numeric mean streams."""

    def __init__(self, kind, targets, m, stream, epsilon, w, model, rng,
                 knowledge_mode="full", rho=0.01, ne_offset=0.0, exact_allocations=False):
        kind = AttackKind(kind)
        if kind.mode != "output":
            raise InvalidConfigError("mean-stream attacks poison outputs only (OUA, OSA, OAA)")
        super().__init__(kind, targets, m, stream.n, epsilon, w, model, rng, ne_offset,
                         exact_allocations)
        self.stream = stream
        self.knowledge_mode = knowledge_mode
        self.rho = rho
        self._subset = None
        if knowledge_mode != "full":
            if knowledge_mode != "partial":
                raise InvalidConfigError("mean-stream attackers support full or partial knowledge")
            self._subset = rng.choice(stream.n, size=max(1, int(round(rho * stream.n))), replace=False)

    def _knowledge(self, t):
        col = self.stream.values[:, t]
        mu = float(col.mean())
        seen = col if self._subset is None else col[self._subset]
        return MeanKnowledge(self.n_e * float(seen.mean()), self.n_e * float(np.mean(seen**2)),
                             mu, self.n_e)

    def _potential_gap(self, m_pub, n_pub, eps, target):
        k = self.state.knowledge
        scale = n_pub / self.n_e if self.n_e else 0.0
        s1_e = k.S1_e * scale
        s2 = k.S2 * scale
        return mean_attack_gap(m_pub, n_pub, eps, s1_e, s1_e, s2, n_pub, k.mean_e)

    def _batch(self, request, n_fake, n_present, target):
        out = opa_fake_outputs(n_present, self.state.knowledge.mean_e, target, n_fake,
                               request.epsilon)
        return ReportBatch(np.array([out.sum()]), len(out), out if request.materialize else None)

    def _dma_batch(self, request, n_fake, n_present, direction):
        target = dma_mean_target(self._last_release[0], direction)
        return self._batch(request, n_fake, n_present, target)

    def _pma_batch(self, request, n_fake, n_present, target):
        return self._batch(request, n_fake, n_present, float(target[0]))


# theoretical bound tables

def _gap_function(mode, fo, d, f_stream=None, target_stream=None):
    def star(m, n, eps):
        if mode == "input":
            return fo_variance(fo, n + m, eps, d)
        return (n / (m + n)) ** 2 * fo_variance(fo, n, eps, d)

    if f_stream is None or target_stream is None:
        return star

    from .freq_oracle import fo_params

    def averaged(m, n, eps):
        vals = []
        for f, g in zip(f_stream, target_stream):
            know = Knowledge(n, f)
            if mode == "input":
                alloc = ipma_solve(know, g, m, integral=False)
                vals.append(ipma_gap(alloc, n, f, g, fo, eps, m).value)
            else:
                params = fo_params(fo, eps, d)
                alloc = opma_solve(know, g, m, params, integral=False)
                vals.append(opma_gap(alloc, n, f, g, params, m).value)
        return float(np.mean(vals))

    return averaged


def sampling_average(gap_value, target_stream, w) -> float:
    """Expected per-step gap when only the first slot of every window publishes.

    An approximated slot re-releases the window head, so in expectation it
    costs the head's gap plus the squared target drift since the head.
    """
    if target_stream is None:
        return gap_value
    target_stream = np.asarray(target_stream, dtype=float)
    T = len(target_stream)
    total = 0.0
    for start in range(0, T, w):
        block = target_stream[start:start + w]
        total += len(block) * gap_value + float(np.sum(np.mean((block[1:] - block[0]) ** 2, axis=1)))
    return total / T


def bound_table(protocol_kind, attack_kind, m, n, epsilon, w, fo, d=2, f_stream=None,
                target_stream=None):
    """Theoretical average manipulation gap as a (low, high) pair; equal ends for single values.

    Without f_stream/target_stream the sufficient-m closed forms are used.
    """
    kind = ProtocolKind(protocol_kind)
    attack = AttackKind(attack_kind)
    G = _gap_function(attack.mode, fo, d, f_stream, target_stream)
    eps = epsilon
    strat = attack.strategy

    def pair(a, b):
        return (min(a, b), max(a, b))

    def single(v):
        return (v, v)

    def sampled(v):
        return single(sampling_average(v, target_stream, w))

    if kind is ProtocolKind.LBD:
        if strat == "sampling":
            return sampled(G(m, n, eps / 4))
        return pair(G(m, n, eps / 4), G(m, n, eps / 2 ** (w + 1)))
    if kind is ProtocolKind.LBA:
        if strat == "sampling":
            return sampled(G(m, n, eps / 2))
        if strat == "uniform":
            return single(G(m, n, eps / (2 * w)))
        return pair(G(m, n, eps / 2), G(m, n, eps / (2 * w)))
    if kind is ProtocolKind.LPD:
        if strat == "sampling":
            return sampled(G(m / 4, n / 4, eps))
        s = 2 ** (w + 1)
        return pair(G(m / 4, n / 4, eps), G(m / s, n / s, eps))
    if kind is ProtocolKind.LPA:
        if strat == "sampling":
            return sampled(G(m / 2, n / 2, eps))
        if strat == "uniform":
            return single(G(m / (2 * w), n / (2 * w), eps))
        return pair(G(m / 2, n / 2, eps), G(m / (2 * w), n / (2 * w), eps))
    if kind is ProtocolKind.LBU:
        return single(G(m, n, eps / w))
    if kind is ProtocolKind.LPU:
        return single(G(m / w, n / w, eps))
    return sampled(G(m, n, eps))


__all__ = [
    "AttackKind", "AttackerState", "AttackTraceRow", "MeanKnowledge", "MeanStreamAttacker",
    "StreamAttacker", "absorption_units", "bound_table", "cgm_attack", "dma_mean_target",
    "estimate_knowledge", "mean_attack_gap", "opa_fake_outputs", "opa_gap_pm", "opa_gap_sr",
    "sampling_average",
]
