"""Closed forms and Monte Carlo for the 2-hop voting model.

Model: the sensor class is always right. An edge fed the right class outputs
it with probability ``p``, otherwise a uniformly chosen wrong class. An edge
fed a wrong class outputs a class drawn uniformly from all ``C``. The ensemble
takes the plurality over ``N`` independent paths, breaking ties uniformly.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from . import _kernels

CHUNK_TRIALS = 8192


class DomainError(ValueError):
    pass


def _check(p, C):
    if not (0.0 < p <= 1.0):
        raise DomainError(f"p must be in (0, 1], got {p}")
    if int(C) != C or C < 2:
        raise DomainError(f"C must be an integer >= 2, got {C}")


def pe_plus(p, C):
    """Probability that one 2-hop path outputs the correct class."""
    _check(p, C)
    return p * p + (1.0 - p) / C


def pe_minus(p, C):
    """Probability that one 2-hop path outputs a wrong class: (1-p)(p + (C-1)/C)."""
    _check(p, C)
    return (1.0 - p) * (p + (C - 1.0) / C)


def vote_moments(p, C, N):
    """(E[v_c], E[v_w], Var(v_c), Var(v_w)) for N independent 2-hop paths.

    ``v_w`` is the vote fraction of one given wrong class, so its mean is
    pe_minus/(C-1). Its variance is reported as pe_minus(1-pe_minus)/N, the
    form that enters the Chebyshev bound.
    """
    if N < 1:
        raise DomainError("N must be >= 1")
    pp, pm = pe_plus(p, C), pe_minus(p, C)
    return pp, pm / (C - 1), pp * (1 - pp) / N, pm * (1 - pm) / N


def chebyshev_bound(p, C, N, variant="mu-squared"):
    """Upper bound on ensemble error.

    ``as-printed`` divides by (pe_plus + pe_minus)^2, which is 1.
    ``mu-squared`` divides by (pe_plus - pe_minus)^2; infinite when that gap is <= 0.
    """
    _check(p, C)
    if not p > 1.0 / C:
        raise DomainError(f"bound needs p > 1/C (better than random); got p={p}, C={C}")
    if N < 1:
        raise DomainError("N must be >= 1")
    pp, pm = pe_plus(p, C), pe_minus(p, C)
    num = pp * (1 - pp) + pm * (1 - pm)
    if variant == "as-printed":
        return num / ((pp + pm) ** 2) / N
    if variant == "mu-squared":
        mu = pp - pm
        if mu <= 0:
            return math.inf
        return num / (mu * mu) / N
    raise ValueError(f"unknown variant {variant!r}")


def wilson_interval(successes, trials, confidence=0.95):
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence, method="wilson")
    return ci.low, ci.high


@dataclass
class EnsembleSimConfig:
    p: float
    C: int
    N: int
    trials: int = 10_000
    seed: int = 0
    hops: int = 2

    def __post_init__(self):
        _check(self.p, self.C)
        if self.N < 1 or self.trials < 1 or self.hops < 1:
            raise DomainError("N, trials and hops must be >= 1")


@dataclass
class SimResult:
    config: EnsembleSimConfig
    pe_plus: float
    pe_minus: float
    mean_vc: float
    mean_vw: float
    var_vc: float
    var_vw: float
    bound_printed: float
    bound_mu2: float
    hits: int
    accuracy: float
    ci_low: float
    ci_high: float
    empirical_vc: float
    empirical_vw: float

    @property
    def std_error(self):
        a, n = self.accuracy, self.config.trials
        return math.sqrt(max(a * (1 - a), 1e-300) / n)

    def csv_row(self):
        c = self.config
        return [c.p, c.C, c.N, self.pe_plus, self.accuracy, self.ci_low, self.ci_high, self.bound_printed, self.bound_mu2]


CSV_HEADER = ["p", "C", "N", "analytic_pe_plus", "empirical_acc", "ci_low", "ci_high", "bound_printed", "bound_mu2"]


def draw_votes(rng, p, C, N, trials, hops=2):
    """Path outputs for ``trials`` ensembles of ``N`` paths; class 0 is the truth."""
    state = np.zeros((trials, N), dtype=np.int64)
    for _ in range(hops):
        u = rng.random((trials, N))
        wrong_pick = rng.integers(1, C, size=(trials, N)) if C > 1 else np.zeros((trials, N), np.int64)
        any_pick = rng.integers(0, C, size=(trials, N))
        ok = state == 0
        state = np.where(ok, np.where(u < p, 0, wrong_pick), any_pick)
    return state


def _chunk_counts(args):
    p, C, N, n, seed_seq, hops, use_numba = args
    rng = np.random.default_rng(seed_seq)
    votes = draw_votes(rng, p, C, N, n, hops)
    tie_u = rng.random(n)
    hits = _kernels.plurality_hits(votes, tie_u, C, use_numba=use_numba)
    correct = (votes == 0).sum()
    return int(hits.sum()), int(correct), int(votes.size)


def _workers():
    try:
        return max(1, int(os.environ.get("NGC_THREADS", "1")))
    except ValueError:
        return 1


def simulate_ensemble(config, use_numba=None):
    """Monte Carlo estimate of plurality-vote accuracy, alongside the closed forms.

    Trials are split into fixed-size chunks with seeds spawned from ``config.seed``,
    so results do not depend on the worker count.
    """
    c = config
    n_chunks = -(-c.trials // CHUNK_TRIALS)
    seeds = np.random.SeedSequence(c.seed).spawn(n_chunks)
    jobs = []
    for i, s in enumerate(seeds):
        n = min(CHUNK_TRIALS, c.trials - i * CHUNK_TRIALS)
        jobs.append((c.p, c.C, c.N, n, s, c.hops, use_numba))
    workers = min(_workers(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(_chunk_counts, jobs))
    else:
        parts = [_chunk_counts(j) for j in jobs]
    hits = sum(h for h, _, _ in parts)
    correct = sum(k for _, k, _ in parts)
    total = sum(t for _, _, t in parts)

    mvc, mvw, vvc, vvw = vote_moments(c.p, c.C, c.N)
    p_over = c.p > 1.0 / c.C
    lo, hi = wilson_interval(hits, c.trials)
    emp_vc = correct / total
    return SimResult(
        config=c,
        pe_plus=pe_plus(c.p, c.C),
        pe_minus=pe_minus(c.p, c.C),
        mean_vc=mvc,
        mean_vw=mvw,
        var_vc=vvc,
        var_vw=vvw,
        bound_printed=chebyshev_bound(c.p, c.C, c.N, "as-printed") if p_over else math.nan,
        bound_mu2=chebyshev_bound(c.p, c.C, c.N, "mu-squared") if p_over else math.nan,
        hits=hits,
        accuracy=hits / c.trials,
        ci_low=lo,
        ci_high=hi,
        empirical_vc=emp_vc,
        empirical_vw=(1.0 - emp_vc) / (c.C - 1),
    )


@dataclass
class GenerationSimConfig:
    p0: float
    C: int
    N: list
    generations: int = 10
    recovery: float = 0.2
    trials: int = 10_000
    seed: int = 0

    def __post_init__(self):
        _check(self.p0, self.C)
        if not (0.0 < self.recovery <= 1.0):
            raise DomainError("recovery fraction must be in (0, 1]")
        if self.generations < 1:
            raise DomainError("generations must be >= 1")
        if isinstance(self.N, int):
            self.N = [self.N] * self.generations
        self.N = list(self.N)
        if len(self.N) != self.generations:
            raise DomainError("need one N per generation")


@dataclass
class GenerationStep:
    generation: int
    student_p: float
    teacher: SimResult = field(repr=False)

    @property
    def teacher_accuracy(self):
        return self.teacher.accuracy


def recover(p, teacher, r):
    """Student after one generation: closes fraction ``r`` of the gap to its teacher."""
    return p + r * (teacher - p)


def simulate_generations(config, use_numba=None):
    """Alternate teacher simulation and the recovery rule; one step per generation."""
    steps = []
    p = config.p0
    seeds = np.random.SeedSequence(config.seed).generate_state(config.generations)
    for k in range(config.generations):
        res = simulate_ensemble(
            EnsembleSimConfig(min(p, 1.0), config.C, config.N[k], config.trials, int(seeds[k])),
            use_numba=use_numba,
        )
        steps.append(GenerationStep(k, p, res))
        p = recover(p, res.accuracy, config.recovery)
    return steps


def sweep_classes(p, N, class_counts, trials=10_000, seed=0, use_numba=None):
    """Ensemble accuracy per class count, every point using the same seed."""
    return [simulate_ensemble(EnsembleSimConfig(p, C, N, trials, seed), use_numba=use_numba) for C in class_counts]
