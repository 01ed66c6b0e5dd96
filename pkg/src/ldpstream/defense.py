"""Poisoning countermeasure: subsampled re-estimation scored by an isolation
forest, gated by a KS consistency check between the two per-step estimates."""
import csv
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatchError, EmptyInputError, InvalidConfigError
from .freq_oracle import FoParams, effective_sample_size, estimate_from_counts, support_counts


@dataclass(frozen=True)
class DefenseConfig:
    r: float = 0.5
    s: int = 20
    trees: int = 100
    subsample_size: int = 16
    ks_alpha: float = 0.05

    def __post_init__(self):
        if not 0 < self.r <= 1:
            raise InvalidConfigError(f"subsample fraction must lie in (0, 1], got {self.r}")
        if self.s < 2:
            raise InvalidConfigError("need at least two subsets")
        if self.trees < 1 or self.subsample_size < 2:
            raise InvalidConfigError("iForest needs >= 1 tree and a per-tree sample >= 2")
        if not 0 < self.ks_alpha < 1:
            raise InvalidConfigError("KS significance must lie in (0, 1)")


def subsample_estimates(reports, fo_params: FoParams, r, s, rng: np.random.Generator):
    """s frequency estimates, each from a uniform subset of round(r N) reports.

    kRR reports are exchangeable item labels, so a subset's support counts are
    drawn directly from the multivariate hypergeometric law; OUE subsets are
    drawn row-wise.
    """
    reports = np.asarray(reports)
    N = len(reports)
    if N == 0:
        raise EmptyInputError("no reports to subsample")
    size = int(round(r * N))
    if size < 1:
        raise InvalidConfigError(f"r * N = {r * N} leaves empty subsets")
    out = []
    if fo_params.kind == "kRR":
        counts = support_counts(fo_params, reports)
        for _ in range(s):
            sub = rng.multivariate_hypergeometric(counts, size)
            out.append(estimate_from_counts(fo_params, sub, size))
        return out
    for _ in range(s):
        idx = rng.choice(N, size=size, replace=False)
        out.append(estimate_from_counts(fo_params, reports[idx].sum(axis=0, dtype=np.int64), size))
    return out


def iforest_scores(vectors, config: DefenseConfig, rng: np.random.Generator) -> np.ndarray:
    """Isolation-forest scores oriented so that larger means less anomalous.

    Score = 1 - 2^(-E[h]/c(psi)), the complement of the usual anomaly score.
    """
    X = np.atleast_2d(np.asarray(vectors, dtype=float))
    n = X.shape[0]
    if n == 0:
        raise EmptyInputError("no vectors to score")
    psi = min(config.subsample_size, n)
    limit = max(int(math.ceil(math.log2(psi))), 1) if psi > 1 else 1
    if psi < n:
        samples = np.stack([rng.choice(n, size=psi, replace=False) for _ in range(config.trees)])
    else:
        samples = np.tile(np.arange(n), (config.trees, 1))
    uniforms = rng.random((config.trees, 2 * (2**limit - 1)))
    mean_path = kernels.iforest_path_lengths(X, samples, uniforms, limit)
    norm = kernels.average_path_length(psi)
    if norm == 0:
        return np.ones(n)
    return 1.0 - 2.0 ** (-mean_path / norm)


def defended_release(estimates, scores):
    """Estimate with the largest score; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=float)
    if len(estimates) != len(scores):
        raise DimensionMismatchError("one score per estimate required")
    k = int(np.argmax(scores))
    return np.asarray(estimates[k]), float(scores[k])


def _as_cdf(f):
    f = np.clip(np.asarray(f, dtype=float), 0.0, None)
    total = f.sum()
    f = f / total if total > 0 else np.full(len(f), 1.0 / len(f))
    return np.cumsum(f)


def ks_statistic(est_a, est_b) -> float:
    return float(np.max(np.abs(_as_cdf(est_a) - _as_cdf(est_b))))


def ks_critical(alpha, n_a, n_b) -> float:
    return math.sqrt(-math.log(alpha / 2) / 2) * math.sqrt((n_a + n_b) / (n_a * n_b))


def ks_consistency(est_a, est_b, effective_n_a, effective_n_b, alpha) -> bool:
    """True when the two estimates disagree beyond the KS critical value (attack suspected)."""
    if len(est_a) != len(est_b):
        raise DimensionMismatchError(f"{len(est_a)} vs {len(est_b)}")
    if not (effective_n_a > 0 and effective_n_b > 0):
        raise InvalidConfigError("effective sample sizes must be positive")
    return ks_statistic(est_a, est_b) > ks_critical(alpha, effective_n_a, effective_n_b)


def stream_mse(released, truth) -> float:
    released = np.asarray(released, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if released.shape != truth.shape:
        raise DimensionMismatchError(f"{released.shape} vs {truth.shape}")
    return float(np.mean((released - truth) ** 2))


def accuracy_gain(released_before, released_after, truth_stream) -> float:
    """MSE without the defense minus MSE with it, both against the truth."""
    return stream_mse(released_before, truth_stream) - stream_mse(released_after, truth_stream)


class FoDefense:
    """Publication-time reviewer plugged into a protocol.

    Two-phase protocols run the KS gate between the dissimilarity-phase and
    publication-phase estimates. Single-phase protocols have no second
    estimate, so every publication goes through the subsample defense.
    """

    def __init__(self, config: DefenseConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng

    def review(self, task, batch, f_hat, epsilon, f_bar=None, n_bar=None, eps_bar=None, rng=None):
        if task.kind != "frequency":
            return f_hat, None, None
        params = task.params(epsilon)
        if f_bar is None:
            detected = True
        else:
            n_a = effective_sample_size(task.params(eps_bar), n_bar)
            n_b = effective_sample_size(params, batch.size)
            detected = ks_consistency(f_bar, f_hat, n_a, n_b, self.config.ks_alpha)
        if not detected:
            return f_hat, False, None
        if batch.reports is None:
            raise InvalidConfigError("the defense needs materialized reports")
        ests = subsample_estimates(batch.reports, params, self.config.r, self.config.s, self.rng)
        scores = iforest_scores(np.stack(ests), self.config, self.rng)
        release, score = defended_release(ests, scores)
        return release, True, score


def write_defense_trace(path, outcomes, ag_running):
    """Rows (t, detected, chosen_subset_score, AG_running) for publication steps."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "detected", "chosen_subset_score", "AG_running"])
        for o, ag in zip(outcomes, ag_running):
            if o.detected is None:
                continue
            score = "" if o.defense_score is None else repr(float(o.defense_score))
            writer.writerow([o.t, int(o.detected), score, repr(float(ag))])
