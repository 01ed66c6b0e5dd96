"""Synthetic streams, CSV ingestion and attacker target streams."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HoleError, InvalidConfigError, ParseError

MODELS = ("LNS", "Sin", "Log", "Pulse")
TARGETS = ("Uniform", "Pulse", "Gaussian", "Sigmoid")


@dataclass
class CategoricalStream:
    """n users by T timestamps of item indices in range(d)."""

    values: np.ndarray
    d: int

    def __post_init__(self):
        if self.values.ndim != 2:
            raise InvalidConfigError("stream values must be an n x T matrix")
        if self.values.size and (self.values.min() < 0 or self.values.max() >= self.d):
            raise InvalidConfigError(f"stream values must lie in [0, {self.d})")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def histogram(self, t, users=None) -> np.ndarray:
        col = self.values[:, t] if users is None else self.values[users, t]
        return np.bincount(col, minlength=self.d).astype(np.int64)

    def frequencies(self) -> np.ndarray:
        """T x d matrix of true frequency vectors."""
        return np.stack([self.histogram(t) / self.n for t in range(self.T)])


@dataclass
class NumericStream:
    """n users by T timestamps of reals inside [low, high]."""

    values: np.ndarray
    low: float = -1.0
    high: float = 1.0

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def means(self) -> np.ndarray:
        return self.values.mean(axis=0)


@dataclass
class GeneratorConfig:
    model: str = "LNS"
    p0: float = 0.5
    noise_std: float = 0.025
    amplitude: float | None = None
    rate: float = 0.01
    offset: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise InvalidConfigError(f"unknown generator model {self.model!r}")


def probability_process(config: GeneratorConfig, T: int) -> np.ndarray:
    """Per-timestamp probability p_t that a user holds item 1."""
    t = np.arange(T, dtype=float)
    rng = np.random.default_rng(config.seed)
    if config.model == "LNS":
        p = np.empty(T)
        prev = config.p0
        for i in range(T):
            prev = float(np.clip(prev + rng.normal(0.0, config.noise_std), 0.0, 1.0))
            p[i] = prev
        return p
    if config.model == "Sin":
        a = 0.05 if config.amplitude is None else config.amplitude
        return np.clip(a * np.sin(config.rate * t) + config.offset, 0.0, 1.0)
    if config.model == "Log":
        a = 0.75 if config.amplitude is None else config.amplitude
        return np.clip(a / (1.0 + np.exp(-config.rate * t)), 0.0, 1.0)
    return rng.integers(0, 2, size=T).astype(float)


def gen_synthetic(config: GeneratorConfig, n: int, T: int) -> CategoricalStream:
    """Binary stream where exactly round(p_t n) random users hold item 1 at t."""
    p = probability_process(config, T)
    rng = np.random.default_rng([config.seed, 1])
    values = np.zeros((n, T), dtype=np.uint8)
    for t in range(T):
        ones = int(round(p[t] * n))
        values[rng.permutation(n)[:ones], t] = 1
    return CategoricalStream(values, 2)


def gen_numeric(config: GeneratorConfig, n: int, T: int, spread: float = 0.3) -> NumericStream:
    """Values in [-1, 1] centred on 2 p_t - 1 with Gaussian spread, clipped."""
    p = probability_process(config, T)
    rng = np.random.default_rng([config.seed, 2])
    values = np.clip(rng.normal(2 * p - 1, spread, size=(n, T)), -1.0, 1.0)
    return NumericStream(values)


def _normal_cdf(x, scale):
    if scale == 0:
        return np.where(x > 0, 1.0, np.where(x < 0, 0.0, 0.5))
    return 0.5 * (1.0 + np.vectorize(math.erf)(x / (scale * math.sqrt(2.0))))


def gen_target(kind, d, T, seed=0, item=0, pulse_order="round-robin",
               sigma=0.5, rate=0.01) -> np.ndarray:
    """T x d target stream on the probability simplex."""
    if d < 2:
        raise InvalidConfigError("target streams need d >= 2")
    t = np.arange(T, dtype=float)
    if kind == "Uniform":
        return np.full((T, d), 1.0 / d)
    if kind == "Pulse":
        if pulse_order == "round-robin":
            hot = (np.arange(T) + item) % d
        elif pulse_order == "random":
            hot = np.random.default_rng(seed).integers(0, d, size=T)
        else:
            raise InvalidConfigError(f"unknown pulse order {pulse_order!r}")
        out = np.zeros((T, d))
        out[np.arange(T), hot] = 1.0
        return out
    if kind == "Gaussian":
        half = 3 * sigma * math.sqrt(T)
        edges = np.linspace(-half, half, d + 1)
        out = np.empty((T, d))
        for i in range(T):
            cdf = _normal_cdf(edges, sigma * math.sqrt(t[i]))
            mass = np.diff(cdf)
            out[i] = mass / mass.sum()
        return out
    if kind == "Sigmoid":
        chosen = 2.0 / (1.0 + np.exp(-rate * t)) - 1.0
        out = np.repeat(((1.0 - chosen) / (d - 1))[:, None], d, axis=1)
        out[:, item] = chosen
        return out
    raise InvalidConfigError(f"unknown target kind {kind!r}")


@dataclass
class CsvSchema:
    kind: str = "categorical"
    d: int | None = None
    grouping: dict = field(default_factory=dict)
    normalize: str | None = "unit"
    bound: float = 1.0
    header: bool | None = None


def _read_rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and header is not False:
                try:
                    int(row[1])
                except (ValueError, IndexError):
                    continue
            if len(row) < 3:
                raise ParseError(lineno, "expected user_id, timestamp_index, value")
            yield lineno, row[0].strip(), row[1].strip(), row[2].strip()


def ingest_csv(path, schema: CsvSchema | None = None):
    """Load a (user_id, timestamp_index, value) file into a rectangular stream."""
    schema = schema or CsvSchema()
    if schema.kind not in ("categorical", "numeric"):
        raise InvalidConfigError(f"unknown stream kind {schema.kind!r}")
    cells = {}
    for lineno, user, ts, raw in _read_rows(path, schema.header):
        try:
            t = int(ts)
        except ValueError:
            raise ParseError(lineno, f"timestamp {ts!r} is not an integer") from None
        if schema.kind == "categorical":
            try:
                value = int(raw)
            except ValueError:
                raise ParseError(lineno, f"category {raw!r} is not an integer") from None
            value = schema.grouping.get(value, value)
        else:
            try:
                value = float(raw)
            except ValueError:
                raise ParseError(lineno, f"value {raw!r} is not numeric") from None
        cells[(user, t)] = value
    if not cells:
        raise InvalidConfigError(f"{path} holds no rows")
    users = sorted({u for u, _ in cells})
    t_lo = min(t for _, t in cells)
    t_hi = max(t for _, t in cells)
    times = range(t_lo, t_hi + 1)
    missing = [(u, t) for u in users for t in times if (u, t) not in cells]
    if missing:
        raise HoleError(missing)
    grid = np.array([[cells[(u, t)] for t in times] for u in users])
    if schema.kind == "categorical":
        labels = np.unique(grid)
        codes = np.searchsorted(labels, grid)
        d = schema.d if schema.d is not None else max(len(labels), 2)
        if len(labels) > d:
            raise InvalidConfigError(f"{len(labels)} categories exceed d={d}")
        dtype = np.uint8 if d <= 256 else np.int32
        return CategoricalStream(codes.astype(dtype), d)
    lo, hi = float(grid.min()), float(grid.max())
    span = hi - lo if hi > lo else 1.0
    if schema.normalize == "unit":
        return NumericStream(2 * (grid - lo) / span - 1, -1.0, 1.0)
    if schema.normalize == "bounded":
        return NumericStream(schema.bound * (grid - lo) / span, 0.0, schema.bound)
    return NumericStream(grid.astype(float), lo, hi)
