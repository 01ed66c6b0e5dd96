"""Report sources and the per-run stream loop.

Users 0..n-1 are genuine and n..n+m-1 are fake. A protocol only sees the
merged reports returned by ``StreamSource.collect``.
"""
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..freq_oracle import fo_perturb, sample_support_counts
from ..mean_mech import MeanMechParams, mean_perturb
from ..stream_protocols import ReportBatch


class FrequencyPopulation:
    """Genuine users of a categorical stream answering report requests honestly."""

    def __init__(self, stream, task, rng):
        self.stream = stream
        self.task = task
        self.rng = rng

    @property
    def n(self) -> int:
        return self.stream.n

    def collect(self, t, epsilon, users, materialize) -> ReportBatch:
        params = self.task.params(epsilon)
        col = self.stream.values[:, t] if users is None else self.stream.values[users, t]
        if len(col) == 0:
            return ReportBatch(np.zeros(self.task.d, dtype=np.int64), 0)
        if materialize:
            reports = fo_perturb(params, col, self.rng)
            if params.kind == "kRR":
                totals = np.bincount(reports, minlength=params.d).astype(np.int64)
            else:
                totals = reports.sum(axis=0, dtype=np.int64)
            return ReportBatch(totals, len(col), reports)
        hist = np.bincount(col, minlength=self.task.d)
        return ReportBatch(sample_support_counts(params, hist, self.rng), len(col))


class NumericPopulation:
    """Genuine users of a numeric stream reporting through the hybrid mechanism."""

    def __init__(self, stream, rng):
        self.stream = stream
        self.rng = rng

    @property
    def n(self) -> int:
        return self.stream.n

    def collect(self, t, epsilon, users, materialize) -> ReportBatch:
        col = self.stream.values[:, t] if users is None else self.stream.values[users, t]
        if len(col) == 0:
            return ReportBatch(np.zeros(1), 0)
        params = MeanMechParams(epsilon, "HM", self.stream.low, self.stream.high)
        reports = mean_perturb(params, col, self.rng)
        return ReportBatch(np.array([reports.sum()]), len(col), reports if materialize else None)


@dataclass
class StreamSource:
    """Routes a protocol's report request to genuine users and, if present, the attacker."""

    population: object
    attacker: object = None
    m: int = 0
    materialize: bool = False
    fake_counts: list = field(default_factory=list)

    def collect(self, request) -> ReportBatch:
        n = self.population.n
        materialize = request.materialize or self.materialize
        if request.users is None:
            genuine_users, n_fake = None, self.m
        else:
            users = np.asarray(request.users)
            genuine_users = users[users < n]
            n_fake = int(len(users) - len(genuine_users))
        batch = self.population.collect(request.t, request.epsilon, genuine_users, materialize)
        self.fake_counts.append((request.t, request.phase, n_fake))
        if self.attacker is None or n_fake == 0:
            return batch
        if materialize and not request.materialize:
            request = dataclasses.replace(request, materialize=True)
        fake = self.attacker.respond(request, n_fake)
        if materialize and fake.reports is None:
            raise RuntimeError("attacker returned no reports for a materialized request")
        return batch.merge(fake)


def run_stream(protocol, source, T, attacker=None):
    """Drive a protocol over T timestamps; returns its outcomes."""
    for t in range(T):
        if attacker is not None:
            attacker.begin_step(t, protocol.last_release)
        outcome = protocol.step(t, source)
        if attacker is not None:
            attacker.end_step(outcome)
    return protocol.outcomes
