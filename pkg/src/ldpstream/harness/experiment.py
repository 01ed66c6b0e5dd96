"""Experiment configuration, per-seed runs, grids, mismatch matrices and CSV output."""
import configparser
import csv
import dataclasses
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..attack_core import ipma_sufficient_m, opma_sufficient_m
from ..attack_orchestrators import (AttackKind, MeanStreamAttacker, StreamAttacker,
                                    bound_table)
from ..data_targets import (MODELS, CsvSchema, GeneratorConfig, gen_numeric, gen_synthetic,
                            gen_target, ingest_csv)
from ..defense import DefenseConfig, FoDefense, stream_mse, write_defense_trace
from ..errors import InvalidConfigError
from ..freq_oracle import fo_params
from ..stream_protocols import (FrequencyTask, MeanTask, ProtocolKind, StreamProtocol,
                                window_budget_audit, write_trace_csv)
from .simulate import FrequencyPopulation, NumericPopulation, StreamSource, run_stream

log = logging.getLogger("ldpstream")

SCHEMA_LINE = "# schema=run-metrics/1"
COLUMNS = ["run_id", "seed", "protocol", "attack", "epsilon", "w", "beta", "target", "knowledge",
           "d", "n", "T", "mse_attack", "mse_utility", "dma_success_rate", "ag", "bound_lo",
           "bound_hi", "wall_ms"]
NE_OFFSETS = (-0.5, -0.25, 0.0, 0.25, 0.5)


def default_beta(target) -> float:
    """Fake fraction used when none is given: harder targets get more fake users."""
    return 0.3 if target in ("Pulse", "Sigmoid") else 0.2


@dataclass
class ExperimentConfig:
    protocol: str = "LBA"
    fo: str = "Ada"
    attack: str = "OAA"
    model: str | None = None
    defense: bool = False
    defense_config: DefenseConfig = field(default_factory=DefenseConfig)
    epsilon: float = 1.0
    w: int = 20
    beta: float | None = None
    n: int = 100_000
    T: int = 200
    dataset: str = "LNS"
    task: str = "frequency"
    target: str = "Gaussian"
    target_item: int = 0
    pulse_order: str = "round-robin"
    mean_target: float = 0.5
    knowledge: str = "partial"
    ne_offset: float = 0.0
    rho: float = 0.01
    seeds: tuple = (0,)
    exact_allocations: bool = False

    def __post_init__(self):
        ProtocolKind(self.protocol)
        if self.model is not None:
            ProtocolKind(self.model)
        if self.attack != "none":
            AttackKind(self.attack)
        if self.beta is None:
            self.beta = default_beta(self.target)
        if not 0 <= self.beta < 1:
            raise InvalidConfigError(f"beta must lie in [0, 1), got {self.beta}")
        if self.task not in ("frequency", "mean"):
            raise InvalidConfigError(f"unknown task {self.task!r}")
        if self.knowledge not in ("full", "partial", "mitm"):
            raise InvalidConfigError(f"unknown knowledge mode {self.knowledge!r}")
        if not -1 < self.ne_offset:
            raise InvalidConfigError("n^e offset must exceed -100%")
        self.seeds = tuple(int(s) for s in self.seeds)

    def fake_users(self, n=None) -> int:
        """Fake users so that m / (m + n) is beta, rounded to an integer."""
        n = self.n if n is None else n
        return int(round(self.beta * n / (1 - self.beta)))

    @property
    def m(self) -> int:
        return self.fake_users()

    @property
    def attack_model(self) -> str:
        return self.model or self.protocol

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class RunResult:
    record: dict
    outcomes: list
    attack_trace: list
    releases: np.ndarray
    truth: np.ndarray
    target: np.ndarray
    audit_ok: bool
    sufficient_m: float
    defended_outcomes: list | None = None
    ag_running: np.ndarray | None = None


def load_stream(config: ExperimentConfig, seed):
    if config.dataset in MODELS:
        gen = GeneratorConfig(model=config.dataset, seed=seed)
        if config.task == "mean":
            return gen_numeric(gen, config.n, config.T)
        return gen_synthetic(gen, config.n, config.T)
    kind = "numeric" if config.task == "mean" else "categorical"
    stream = ingest_csv(config.dataset, CsvSchema(kind=kind))
    if stream.T < config.T:
        raise InvalidConfigError(f"{config.dataset} has {stream.T} timestamps, need {config.T}")
    return stream


def _target_stream(config, d, seed, truth):
    if config.task == "mean":
        return np.full((config.T, 1), float(config.mean_target))
    if config.target == "Truth":
        return truth.copy()
    return gen_target(config.target, d, config.T, seed=seed, item=config.target_item,
                      pulse_order=config.pulse_order)


def _simulate(config, stream, task, target, seq, n, m, defense, materialize):
    rng_protocol, rng_users, rng_attack, rng_defense = (np.random.default_rng(s) for s in seq)
    if config.task == "mean":
        population = NumericPopulation(stream, rng_users)
    else:
        population = FrequencyPopulation(stream, task, rng_users)
    attacker = None
    if config.attack != "none":
        common = dict(m=m, stream=stream, epsilon=config.epsilon, w=config.w,
                      model=config.attack_model, rng=rng_attack, knowledge_mode=config.knowledge,
                      rho=config.rho, ne_offset=config.ne_offset,
                      exact_allocations=config.exact_allocations)
        if config.task == "mean":
            attacker = MeanStreamAttacker(config.attack, target, **common)
        else:
            attacker = StreamAttacker(config.attack, task, target, **common)
    fo_defense = FoDefense(config.defense_config, rng_defense) if defense else None
    protocol = StreamProtocol(config.protocol, task, config.epsilon, config.w, n + m,
                              rng_protocol, defense=fo_defense)
    source = StreamSource(population, attacker, m, materialize=materialize)
    outcomes = run_stream(protocol, source, config.T, attacker)
    return outcomes, attacker


def _releases(outcomes):
    return np.stack([np.asarray(o.release, dtype=float) for o in outcomes])


def sufficient_fake_users(config, stream_truth, target, n) -> float:
    """Largest per-step sufficient m of the configured attack mode over the stream."""
    if config.task != "frequency" or config.attack == "none":
        return math.nan
    mode = AttackKind(config.attack).mode
    d = stream_truth.shape[1]
    params = fo_params(config.fo, config.epsilon, d)
    need = 0.0
    for f, g in zip(stream_truth, target):
        need = max(need, ipma_sufficient_m(n, f, g) if mode == "input"
                   else opma_sufficient_m(n, f, g, params))
    return need


def run_single(config: ExperimentConfig, seed, run_id=0, deterministic=False,
               with_bound=True) -> RunResult:
    """One seeded simulation of the configured stream, protocol, attack and defense."""
    start = time.perf_counter()
    stream = load_stream(config, seed)
    n = stream.n
    m = config.fake_users(n) if config.attack != "none" else 0
    if config.task == "mean":
        task = MeanTask()
        truth = stream.means()[: config.T, None]
        d = 1
    else:
        task = FrequencyTask(stream.d, config.fo)
        truth = stream.frequencies()[: config.T]
        d = stream.d
    target = _target_stream(config, d, seed, truth)
    seq = np.random.SeedSequence(seed).spawn(4)
    outcomes, attacker = _simulate(config, stream, task, target, seq, n, m, False,
                                   materialize=config.defense)
    releases = _releases(outcomes)
    mse_utility = stream_mse(releases, truth)
    ag = math.nan
    defended, ag_running = None, None
    if config.defense:
        defended, _ = _simulate(config, stream, task, target, seq, n, m, True, materialize=True)
        after = _releases(defended)
        ag = mse_utility - stream_mse(after, truth)
        err_before = np.cumsum(np.mean((releases - truth) ** 2, axis=1))
        err_after = np.cumsum(np.mean((after - truth) ** 2, axis=1))
        ag_running = (err_before - err_after) / np.arange(1, config.T + 1)
        outcomes_for_metrics, releases_for_metrics = defended, after
        mse_utility = stream_mse(after, truth)
    else:
        outcomes_for_metrics, releases_for_metrics = outcomes, releases
    suff = sufficient_fake_users(config, truth, target, n)
    if m < suff:
        log.warning("m=%d is below the sufficient fake-user count %s; the run proceeds", m, suff)
    lo = hi = math.nan
    if with_bound and config.task == "frequency" and config.attack != "none" and m > 0:
        lo, hi = bound_table(config.protocol, config.attack, m, n, config.epsilon, config.w,
                             config.fo, d, f_stream=truth, target_stream=target)
    audit = window_budget_audit(outcomes_for_metrics, config.epsilon, config.w, n + m)
    record = dict(
        run_id=run_id, seed=seed, protocol=config.protocol, attack=config.attack,
        epsilon=config.epsilon, w=config.w, beta=config.beta,
        target=config.target if config.task == "frequency" else f"const:{config.mean_target}",
        knowledge=config.knowledge, d=d, n=n, T=config.T,
        mse_attack=stream_mse(releases_for_metrics, target), mse_utility=mse_utility,
        dma_success_rate=attacker.success_rate() if attacker is not None else math.nan,
        ag=ag, bound_lo=lo, bound_hi=hi,
        wall_ms=0.0 if deterministic else round((time.perf_counter() - start) * 1000, 3),
    )
    return RunResult(record, outcomes_for_metrics,
                     attacker.trace if attacker is not None else [], releases_for_metrics,
                     truth, target, audit, suff, defended, ag_running)


def _run_task(args):
    config, seed, run_id, deterministic = args
    return run_single(config, seed, run_id, deterministic).record


def _map(tasks, threads):
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_run_task, tasks))
    return [_run_task(t) for t in tasks]


def aggregate_records(records):
    """Seed-mean row per run_id, in run_id order."""
    out = []
    for run_id, group in itertools.groupby(sorted(records, key=lambda r: r["run_id"]),
                                           key=lambda r: r["run_id"]):
        group = list(group)
        row = dict(group[0])
        row["seed"] = "mean"
        for col in ("mse_attack", "mse_utility", "dma_success_rate", "ag", "wall_ms"):
            vals = np.array([r[col] for r in group], dtype=float)
            row[col] = float(np.nanmean(vals)) if np.any(~np.isnan(vals)) else math.nan
        out.append(row)
    return out


def run_experiment(config: ExperimentConfig, threads=1, deterministic=False):
    """Per-seed records plus one aggregate row."""
    records = _map([(config, s, 0, deterministic) for s in config.seeds], threads)
    return records, aggregate_records(records)[0]


def run_grid(base: ExperimentConfig, axes: dict, threads=1, deterministic=False):
    """Cross product over the given config fields; rows ordered by (grid point, seed)."""
    names = list(axes)
    configs = [base.replace(**dict(zip(names, values)))
               for values in itertools.product(*(axes[k] for k in names))]
    tasks = [(c, s, i, deterministic) for i, c in enumerate(configs) for s in c.seeds]
    records = _map(tasks, threads)
    return records, aggregate_records(records)


def mismatch_matrix(protocols, models, base: ExperimentConfig, threads=1, deterministic=False):
    """Seed-mean attack MSE of attacks tuned for each model against each protocol.

    Returns (rows, matrix) where matrix[i][j] is protocol i attacked by model j.
    """
    configs = [base.replace(protocol=p, model=mdl) for p in protocols for mdl in models]
    tasks = [(c, s, i, deterministic) for i, c in enumerate(configs) for s in c.seeds]
    records = _map(tasks, threads)
    agg = aggregate_records(records)
    matrix = np.array([r["mse_attack"] for r in agg]).reshape(len(protocols), len(models))
    rows = []
    for i, p in enumerate(protocols):
        for j, mdl in enumerate(models):
            rows.append(dict(protocol=p, attack_model=mdl, mse_attack=matrix[i, j],
                             matched=int(p == mdl)))
    return rows, matrix


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_metrics_csv(path_or_file, records):
    """Versioned metrics CSV: a schema comment line, the header, then rows."""
    own = isinstance(path_or_file, str)
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        fh.write(SCHEMA_LINE + "\n")
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for r in records:
            writer.writerow([_fmt(r[c]) for c in COLUMNS])
    finally:
        if own:
            fh.close()


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != SCHEMA_LINE:
            raise InvalidConfigError(f"unexpected schema line {first!r}")
        return list(csv.DictReader(fh))


def write_matrix_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["protocol", "attack_model", "mse_attack", "matched"])
        for r in rows:
            writer.writerow([r["protocol"], r["attack_model"], _fmt(float(r["mse_attack"])),
                             r["matched"]])


def write_attack_trace(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "msd_choice", "dma_direction", "dma_success", "gap_t"])
        for row in trace:
            success = "" if row.dma_success is None else int(row.dma_success)
            writer.writerow([row.t, row.msd_choice, row.dma_direction, success, repr(row.gap_t)])


def write_run_traces(prefix, result: RunResult):
    """Protocol, attack and (when on) defense traces next to the metrics file."""
    write_trace_csv(f"{prefix}.protocol.csv", result.outcomes)
    if result.attack_trace:
        write_attack_trace(f"{prefix}.attack.csv", result.attack_trace)
    if result.ag_running is not None:
        write_defense_trace(f"{prefix}.defense.csv", result.defended_outcomes, result.ag_running)


_FLOAT = {"epsilon", "beta", "mean_target", "ne_offset", "rho"}
_INT = {"w", "n", "T", "target_item"}
_DEFENSE_FIELDS = {f.name: f.type for f in dataclasses.fields(DefenseConfig)}


def _parse_list(raw, cast):
    return [cast(x) for x in raw.replace(",", " ").split()]


def load_config(path):
    """Read an INI file with [experiment], optional [defense] and [grid] sections.

    Returns (ExperimentConfig, grid axes dict).
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path):
        raise InvalidConfigError(f"cannot read config {path}")
    values = {}
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            values[key] = _cast_field(key, raw)
    if parser.has_section("defense"):
        dcfg = {}
        for key, raw in parser.items("defense"):
            if key not in _DEFENSE_FIELDS:
                raise InvalidConfigError(f"unknown defense key {key!r}")
            dcfg[key] = float(raw) if key in ("r", "ks_alpha") else int(raw)
        values["defense_config"] = DefenseConfig(**dcfg)
    axes = {}
    if parser.has_section("grid"):
        for key, raw in parser.items("grid"):
            axes[key] = [_cast_field(key, x) for x in raw.replace(",", " ").split()]
    return ExperimentConfig(**values), axes


def _cast_field(key, raw):
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    if key not in names:
        raise InvalidConfigError(f"unknown config key {key!r}")
    raw = raw.strip()
    if key in _FLOAT:
        return float(raw)
    if key in _INT:
        return int(raw)
    if key in ("defense", "exact_allocations"):
        return raw.lower() in ("1", "true", "yes", "on")
    if key == "seeds":
        return tuple(_parse_list(raw, int))
    if key == "model" and raw.lower() in ("", "none"):
        return None
    return raw
