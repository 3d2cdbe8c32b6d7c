"""Simulation designs and experiment runners for size and estimation studies.

Every replication draws from its own Philox stream keyed by
``(seed, replication index)``, so results do not depend on how the
replications are scheduled across workers.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError, NpthreshError
from .estimators import RegimeInterval, RegimePartition, Sample, Smoother
from .inference import DEFAULT_M, sequential_test
from .kernels import DEFAULT_DELTA, KernelConfig, WeightBox
from .search import SearchConfig, estimate_one_threshold

log = logging.getLogger(__name__)

THREE_THRESHOLDS = (-0.7, 0.15, 0.5)
# truths in the order the sequential method is expected to discover them
DISCOVERY_ORDER = (0.5, 0.15, -0.7)
DEFAULT_ALPHAS = (0.01, 0.05, 0.10)
_TWO53 = float(2 ** 53)


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent counter-based stream for replication ``rep`` of master ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(rep),))
    return np.random.Generator(np.random.Philox(ss))


def standard_normals(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard normals by inverse CDF of open-interval uniforms."""
    u = (rng.integers(0, 2 ** 53, size=size, dtype=np.int64).astype(float) + 0.5) / _TWO53
    return special.ndtri(u)


def dgp_null(n: int, rng: np.random.Generator) -> Sample:
    """No-threshold design with X correlated with Q and heteroskedastic noise."""
    if n < 1:
        raise DomainError("n must be >= 1", n=n)
    z = standard_normals(rng, 3 * n)
    q, u, eps = z[:n], z[n:2 * n], z[2 * n:]
    x = math.sqrt(0.2) * q + math.sqrt(0.8) * u
    y = np.exp(-0.25 * x) + np.sqrt(np.exp(-0.2 * (x + q) ** 2)) * eps
    return Sample(y=y, x=x[:, None], q=q)


def _regime_functions(x: np.ndarray) -> list[np.ndarray]:
    return [np.exp(-0.25 * x), 1.0 + np.exp(-0.5 * x), 2.0 + np.exp(-0.1 * x), 0.5 + np.exp(-0.8 * x)]


def three_threshold_mean(x: np.ndarray, q: np.ndarray, layout: str = "nested") -> np.ndarray:
    """Conditional mean of the three-threshold design.

    ``"nested"``: term ``j`` is active for ``Q < gamma_j``, so the mean drops
    by roughly 1, 2 and 3 at -0.7, 0.15 and 0.5. ``"disjoint"``: term ``j``
    applies only on ``[gamma_{j-1}, gamma_j)``.
    """
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    terms = _regime_functions(x)
    if layout == "nested":
        out = terms[3].copy()
        for g, t in zip(THREE_THRESHOLDS, terms):
            out += t * (q < g)
        return out
    if layout == "disjoint":
        g1, g2, g3 = THREE_THRESHOLDS
        return np.select([q < g1, q < g2, q < g3], terms[:3], terms[3])
    raise DomainError("layout must be 'nested' or 'disjoint'", layout=layout)


def dgp_three_thresholds(n: int, rng: np.random.Generator, layout: str = "nested") -> Sample:
    """Four regimes in Q split at -0.7, 0.15 and 0.5; X, Q and noise independent N(0, 1)."""
    if n < 1:
        raise DomainError("n must be >= 1", n=n)
    z = standard_normals(rng, 3 * n)
    x, q, eps = z[:n], z[n:2 * n], z[2 * n:]
    y = three_threshold_mean(x, q, layout) + np.sqrt(0.5625 * np.exp(-x * x)) * eps
    return Sample(y=y, x=x[:, None], q=q)


def default_box(dim: int = 1) -> WeightBox:
    """Weighting box used by the simulation designs, ``[-2, 2]`` per covariate."""
    return WeightBox((-2.0,) * dim, (2.0,) * dim)


@dataclass(frozen=True)
class SimConfig:
    """Settings shared by the experiment runners.

    ``threads`` only controls scheduling; results are identical for any value.
    """

    n: int
    reps: int = 200
    seed: int = 0
    c: float = 1.0
    delta: float = DEFAULT_DELTA
    m: int = DEFAULT_M
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    threads: int = 1
    search: SearchConfig = field(default_factory=SearchConfig)
    layout: str = "nested"

    def __post_init__(self):
        if self.layout not in ("nested", "disjoint"):
            raise DomainError("layout must be 'nested' or 'disjoint'", layout=self.layout)
        if int(self.n) != self.n or self.n < 50:
            raise DomainError("n must be an integer >= 50", n=self.n)
        if int(self.reps) != self.reps or self.reps < 1:
            raise DomainError("reps must be an integer >= 1", reps=self.reps)
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DomainError("seed must be a 64-bit unsigned integer", seed=self.seed)
        for name in ("c", "delta"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise DomainError(f"{name} must be positive", **{name: val})
        if self.m < 1:
            raise DomainError("m must be >= 1", m=self.m)
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas or any(not 0.0 < a < 1.0 for a in alphas):
            raise DomainError("alphas must lie in (0, 1)", alphas=list(alphas))
        if self.threads < 1:
            raise DomainError("threads must be >= 1", threads=self.threads)
        object.__setattr__(self, "alphas", alphas)

    def kernel(self) -> KernelConfig:
        return KernelConfig.from_rule(self.n, c=self.c, delta=self.delta)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "search"}
        out["alphas"] = list(self.alphas)
        out["search"] = self.search.to_dict()
        out["h"] = self.kernel().h
        out["box"] = default_box().to_dict()
        return out


@dataclass
class SizeTable:
    n: int
    reps: int
    alphas: tuple[float, ...]
    rejection_rate: dict[float, float]
    monte_carlo_se: dict[float, float]
    errors: int = 0
    error_messages: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": "size", "n": self.n, "reps": self.reps, "errors": self.errors,
            "error_messages": dict(self.error_messages),
            "cells": [{"alpha": a, "rejection_rate": self.rejection_rate[a],
                       "monte_carlo_se": self.monte_carlo_se[a]} for a in self.alphas],
        }

    def to_text(self) -> str:
        head = f"{'n':>6}" + "".join(f"{f'{a:g}':>10}" for a in self.alphas)
        row = f"{self.n:>6}" + "".join(f"{self.rejection_rate[a]:>10.3f}" for a in self.alphas)
        se = f"{'(se)':>6}" + "".join(f"{self.monte_carlo_se[a]:>10.3f}" for a in self.alphas)
        lines = ["Empirical size", head, row, se, f"reps={self.reps} errors={self.errors}"]
        return "\n".join(lines)


@dataclass
class RoundSummary:
    truth: float
    mean: float
    se: float
    mse: float
    count: int


@dataclass
class EstimationTable:
    n: int
    reps: int
    rounds: list[RoundSummary]
    errors: int = 0
    error_messages: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": "estimation", "n": self.n, "reps": self.reps, "errors": self.errors,
            "error_messages": dict(self.error_messages),
            "rounds": [dict(round=i + 1, **asdict(r)) for i, r in enumerate(self.rounds)],
        }

    def to_text(self) -> str:
        lines = ["Threshold estimates", f"{'round':>6}{'truth':>9}{'mean':>10}{'se':>10}{'MSE':>10}"]
        for i, r in enumerate(self.rounds, 1):
            lines.append(f"{i:>6}{r.truth:>9.2f}{r.mean:>10.4f}{r.se:>10.4f}{r.mse:>10.4f}")
        lines.append(f"n={self.n} reps={self.reps} errors={self.errors}")
        return "\n".join(lines)


def summarize_round(values, truth: float) -> RoundSummary:
    """Mean, standard deviation across replications and ``MSE = bias^2 + se^2``."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return RoundSummary(truth, math.nan, math.nan, math.nan, 0)
    mean = float(v.mean())
    se = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return RoundSummary(truth, mean, se, (mean - truth) ** 2 + se ** 2, int(v.size))


def _size_rep(sim: SimConfig, rep: int):
    sample = dgp_null(sim.n, replication_rng(sim.seed, rep))
    try:
        report = sequential_test(sample, RegimePartition(), sim.m, sim.alphas[0],
                                 sim.kernel(), default_box(), grid_trim=sim.search.grid_trim)
    except NpthreshError as exc:
        return None, str(exc)
    return report.p_value, None


def _estimation_rep(sim: SimConfig, rep: int, rounds: int = 3):
    sample = dgp_three_thresholds(sim.n, replication_rng(sim.seed, rep), sim.layout)
    config = sim.kernel()
    sm = Smoother(sample, config)
    partition = RegimePartition()
    found = []
    try:
        for _ in range(rounds):
            best = None
            for regime in partition.regimes():
                try:
                    gamma, value = estimate_one_threshold(sample, partition, regime, config,
                                                          sim.search, sm)
                except NpthreshError:
                    continue
                if best is None or value < best[1]:
                    best = (gamma, value)
            if best is None:
                return found, "no feasible split"
            found.append(best[0])
            partition = partition.insert(best[0])
    except NpthreshError as exc:
        return found, str(exc)
    return found, None


def _run_chunk(kind: str, sim: SimConfig, reps: list[int]):
    fn = _size_rep if kind == "size" else _estimation_rep
    return [fn(sim, r) for r in reps]


def run_replications(kind: str, sim: SimConfig) -> list:
    """Per-replication outcomes in replication order, serial or across processes."""
    idx = list(range(sim.reps))
    workers = min(sim.threads, sim.reps, os.cpu_count() or 1) if sim.threads > 1 else 1
    if workers <= 1:
        return _run_chunk(kind, sim, idx)
    chunks = [idx[i::workers] for i in range(workers)]
    out = [None] * sim.reps
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, kind, sim, ch) for ch in chunks]
        for ch, fut in zip(chunks, futures):
            for r, res in zip(ch, fut.result()):
                out[r] = res
    return out


def _tally(messages) -> dict[str, int]:
    counts: dict[str, int] = {}
    for msg in messages:
        if msg is not None:
            counts[msg] = counts.get(msg, 0) + 1
    return counts


def size_experiment(sim: SimConfig) -> SizeTable:
    """Rejection frequency of the no-threshold test on the null design.

    Replications whose test fails count as non-rejections and are tallied in
    ``errors``.
    """
    results = run_replications("size", sim)
    pvals = np.array([np.nan if p is None else p for p, _ in results])
    msgs = _tally(m for _, m in results)
    rates, ses = {}, {}
    for a in sim.alphas:
        rate = float(np.sum(pvals <= a) / sim.reps)
        rates[a] = rate
        ses[a] = math.sqrt(rate * (1.0 - rate) / sim.reps)
    errors = sum(msgs.values())
    if errors:
        log.warning("%d of %d size replications failed", errors, sim.reps)
    return SizeTable(sim.n, sim.reps, sim.alphas, rates, ses, errors, msgs)


def estimation_experiment(sim: SimConfig, truths=DISCOVERY_ORDER) -> EstimationTable:
    """Three rounds of SSR estimation per replication, summarised per round.

    Round ``r`` estimates are compared against ``truths[r]`` (the order in
    which the thresholds are expected to be found).
    """
    results = run_replications("estimation", sim)
    msgs = _tally(m for _, m in results)
    rounds = []
    for r, truth in enumerate(truths):
        vals = [found[r] for found, _ in results if len(found) > r]
        rounds.append(summarize_round(vals, truth))
    errors = sum(msgs.values())
    if errors:
        log.warning("%d of %d estimation replications failed", errors, sim.reps)
    return EstimationTable(sim.n, sim.reps, rounds, errors, msgs)
