"""Exogenous processes: Kou jump-diffusion log increments and CSV replay.

Streams are addressed by (seed, index): ``RngStream(seed, i)`` always yields
the same numbers regardless of how many other streams were created, which is
what lets a run give identical results alone or inside a batch.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, ParseError


@dataclass(frozen=True)
class JumpDiffusionParams:
    mu: float = 0.0
    sigma: float = 0.02
    jump_rate: float = 0.0
    p_up: float = 0.3
    eta_up: float = 10.0
    eta_down: float = 5.0

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidArgument("sigma must be >= 0")
        if self.jump_rate < 0:
            raise InvalidArgument("jump_rate must be >= 0")
        if not 0.0 <= self.p_up <= 1.0:
            raise InvalidArgument("p_up must lie in [0, 1]")
        if not self.eta_up > 1.0:
            raise InvalidArgument("eta_up must be > 1")
        if not self.eta_down > 0.0:
            raise InvalidArgument("eta_down must be > 0")

    def mean(self) -> float:
        """Analytic mean of one epoch's log increment."""
        return (self.mu - 0.5 * self.sigma**2
                + self.jump_rate * (self.p_up / self.eta_up - (1 - self.p_up) / self.eta_down))

    def variance(self) -> float:
        return (self.sigma**2
                + self.jump_rate * (2 * self.p_up / self.eta_up**2 + 2 * (1 - self.p_up) / self.eta_down**2))


@dataclass(frozen=True)
class CorrelationSpec:
    rho: float = 0.0

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise InvalidArgument("rho must lie in [-1, 1]")


class RngStream:
    """PCG64 generator keyed by (seed, index) through numpy's SeedSequence."""

    def __init__(self, seed: int, index: int = 0):
        if seed < 0 or index < 0:
            raise InvalidArgument("seed and index must be >= 0")
        self.seed = int(seed)
        self.index = int(index)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(self.index,))))

    def child(self, name: int) -> RngStream:
        """Independent sub-stream, e.g. one per process within a run."""
        s = RngStream.__new__(RngStream)
        s.seed, s.index = self.seed, self.index
        s.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(self.index, int(name)))))
        return s


def _jumps(params: JumpDiffusionParams, n: int, g: np.random.Generator) -> np.ndarray:
    counts = g.poisson(params.jump_rate, size=n) if params.jump_rate > 0 else np.zeros(n, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(n)
    up = g.random(total) < params.p_up
    size = np.where(up, g.exponential(1.0 / params.eta_up, total), -g.exponential(1.0 / params.eta_down, total))
    owner = np.repeat(np.arange(n), counts)
    return np.bincount(owner, weights=size, minlength=n)


def gen_path(params: JumpDiffusionParams, n: int, rng: RngStream) -> np.ndarray:
    """n log increments: (mu - sigma^2/2) + sigma Z + compound Kou jumps."""
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    g = rng.generator
    z = g.standard_normal(n)
    return (params.mu - 0.5 * params.sigma**2) + params.sigma * z + _jumps(params, n, g)


def gen_correlated(params_d: JumpDiffusionParams, params_p: JumpDiffusionParams, corr: CorrelationSpec,
                   n: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Demand and price-shock increments whose Brownian parts have correlation rho."""
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    if not isinstance(corr, CorrelationSpec):
        corr = CorrelationSpec(float(corr))
    g = rng.generator
    z1 = g.standard_normal(n)
    z2 = g.standard_normal(n)
    zp = corr.rho * z1 + math.sqrt(max(0.0, 1.0 - corr.rho**2)) * z2
    jd = _jumps(params_d, n, g)
    jp = _jumps(params_p, n, g)
    d = (params_d.mu - 0.5 * params_d.sigma**2) + params_d.sigma * z1 + jd
    p = (params_p.mu - 0.5 * params_p.sigma**2) + params_p.sigma * zp + jp
    return d, p


def replay_csv(path, column: str = "price", timestamp_column: str = "timestamp") -> np.ndarray:
    """Log increments of a price column.

    Rows with an empty price are forward-filled from the previous row.
    Timestamps must be ISO-8601 and strictly increasing.
    """
    p = Path(path)
    if not p.is_file():
        raise ParseError(f"no such file: {p}")
    prices = []
    last_ts = None
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError("empty file", line=1)
        for name in (column, timestamp_column):
            if name not in reader.fieldnames:
                raise ParseError(f"missing column {name!r}", line=1)
        for row in reader:
            line = reader.line_num
            try:
                ts = datetime.fromisoformat(row[timestamp_column].strip())
            except (ValueError, AttributeError) as exc:
                raise ParseError(f"bad timestamp {row.get(timestamp_column)!r}", line=line) from exc
            if last_ts is not None and ts <= last_ts:
                raise ParseError("timestamps must be strictly increasing", line=line)
            last_ts = ts
            raw = (row[column] or "").strip()
            if raw == "":
                if not prices:
                    raise ParseError("first price is missing", line=line)
                prices.append(prices[-1])
                continue
            try:
                v = float(raw)
            except ValueError as exc:
                raise ParseError(f"bad price {raw!r}", line=line) from exc
            if not (math.isfinite(v) and v > 0):
                raise ParseError(f"price must be positive, got {raw}", line=line)
            prices.append(v)
    if len(prices) < 2:
        raise ParseError("need at least 2 price rows")
    return np.diff(np.log(prices))
