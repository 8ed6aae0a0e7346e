"""
mctailor Tailored Sampling

The tailored distribution P_Tailor(x) ~ P_Model(x) * prod_k 1 / max(gamma_k(x), 1)
and its three samplers:

- rejection_sample (RS): ancestral proposal, accept iff r <= a(x)
- smc_sample (SMC): particles resampled every step with prefix-ratio weights
- ers_sample (ERS): RS with early kills once the prefix ratio exceeds 1/r

RS and ERS run independent particles in fixed-size blocks. Block b draws from
its own stream default_rng([seed, b]) and blocks merge in index order, so the
output does not depend on the worker count.
"""

from __future__ import annotations
from typing import Callable, Dict, List, Optional, Sequence, Tuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np

from ..schemas.corpus import Sentence, EOS_ID
from ..schemas.errors import DataError, StarvationError
from ..schemas.sampling import (
    Particle,
    SampleBatch,
    SampleStats,
    SamplingAlgorithm,
    distinct_fraction,
)
from .lm import NGramModel, sentence_logprob
from .ratio import EstimatorStack


logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 10_000_000
DEFAULT_BLOCK_SIZE = 512
MIN_IS_SAMPLES = 1000


# =============================================================================
# Tailored Distribution
# =============================================================================

@dataclass
class TailoredDistribution:
    """Sampling target: model, estimator stack, length cap and optional log Z."""
    model: NGramModel
    stack: EstimatorStack
    max_len: int = 20
    log_Z: Optional[float] = None
    Z_stderr: Optional[float] = None
    log_Z_stderr: Optional[float] = None

    def acceptance(self, sentence: Sentence) -> float:
        return self.stack.acceptance(sentence)

    def unnormalized_logprob(self, sentence: Sentence) -> float:
        """log u(x) = log P_Model(x) + log a(x)."""
        return sentence_logprob(self.model, sentence, self.max_len) + math.log(
            self.stack.acceptance(sentence)
        )


@dataclass
class SamplingBudget:
    """Proposal allowance shared by the blocks of one run."""
    max_proposals: int = DEFAULT_BUDGET
    proposals: int = 0

    def take(self, n: int) -> int:
        """Reserve up to n proposals; returns how many were granted."""
        granted = max(0, min(n, self.max_proposals - self.proposals))
        self.proposals += granted
        return granted

    @property
    def exhausted(self) -> bool:
        return self.proposals >= self.max_proposals


def acceptance_prob(stack: EstimatorStack, sentence: Sentence) -> float:
    """a(x) = prod_k 1 / max(gamma_k(x), 1), in (0, 1]."""
    return stack.acceptance(sentence)


# =============================================================================
# Block driver (RS / ERS)
# =============================================================================

@dataclass
class _BlockResult:
    sentences: List[Optional[Sentence]] = field(default_factory=list)
    steps: List[int] = field(default_factory=list)
    killed: List[bool] = field(default_factory=list)


ProposalFn = Callable[[np.ndarray, float], Tuple[Optional[Sentence], int, bool]]


def _draw_steps(sentence: Sentence, max_len: int) -> int:
    """Token draws behind a sentence; a forced EOS is not a draw."""
    return min(len(sentence), max_len)


def _run_block(
    propose: ProposalFn,
    seed: int,
    block: int,
    size: int,
    max_len: int,
) -> _BlockResult:
    rng = np.random.default_rng([seed, block])
    uniforms = rng.random((size, max_len + 1))
    result = _BlockResult()
    for row in uniforms:
        sentence, steps, killed = propose(row[:max_len], 1.0 - float(row[max_len]))
        result.sentences.append(sentence)
        result.steps.append(steps)
        result.killed.append(killed)
    return result


def _run_blocks(
    propose: ProposalFn,
    algorithm: SamplingAlgorithm,
    max_len: int,
    n_accept: int,
    seed: int,
    budget: int,
    workers: int,
    block_size: int,
) -> SampleBatch:
    if n_accept < 1:
        raise DataError("E_N_ACCEPT", f"n_accept must be >= 1, got {n_accept}")
    allowance = SamplingBudget(max_proposals=budget)
    stats = SampleStats()
    accepted: List[Sentence] = []
    next_block = 0

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        while len(accepted) < n_accept and not allowance.exhausted:
            wave = []
            for _ in range(max(1, workers)):
                size = allowance.take(block_size)
                if size == 0:
                    break
                wave.append(pool.submit(_run_block, propose, seed, next_block, size, max_len))
                next_block += 1
            for future in wave:
                result = future.result()
                for sentence, steps, killed in zip(result.sentences, result.steps, result.killed):
                    if len(accepted) >= n_accept:
                        break
                    stats.proposals += 1
                    stats.token_steps_total += steps
                    if sentence is None:
                        stats.token_steps_wasted += steps
                        stats.kills += int(killed)
                    else:
                        accepted.append(sentence)

    stats.accepted = len(accepted)
    stats.distinct_fraction = distinct_fraction(accepted)
    if len(accepted) < n_accept:
        stats.budget_exhausted = True
        logger.warning(
            f"{algorithm.value.upper()} budget of {budget} proposals exhausted with "
            f"{len(accepted)}/{n_accept} accepted"
        )
    logger.info(
        f"{algorithm.value.upper()}: accepted={stats.accepted} proposals={stats.proposals} "
        f"rate={stats.acceptance_rate:.4f} wasted={stats.token_steps_wasted}/"
        f"{stats.token_steps_total}"
    )
    return SampleBatch(accepted, stats, algorithm)


# =============================================================================
# Rejection Sampling
# =============================================================================

def rejection_sample(
    t: TailoredDistribution,
    n_accept: int,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> SampleBatch:
    """
    Propose x ~ P_Model, draw r ~ U(0, 1], accept iff r <= a(x).

    Stops at n_accept acceptances or when the proposal budget runs out, in
    which case the partial batch is returned with budget_exhausted set.
    """

    def propose(uniforms: np.ndarray, r: float) -> Tuple[Optional[Sentence], int, bool]:
        sentence = t.model.generate(uniforms, t.max_len)
        steps = _draw_steps(sentence, t.max_len)
        if r <= t.stack.acceptance(sentence):
            return sentence, steps, False
        return None, steps, False

    return _run_blocks(
        propose, SamplingAlgorithm.RS, t.max_len, n_accept, seed, budget, workers, block_size
    )


# =============================================================================
# Early Rejection Sampling
# =============================================================================

def _ers_walk(
    stack: EstimatorStack,
    next_token: Callable[[List[int]], int],
    r: float,
    max_len: int,
    final_check: bool,
) -> Tuple[Optional[Sentence], int, bool]:
    bound = 1.0 / r
    prefix: List[int] = []
    steps = 0
    while len(prefix) < max_len:
        token = next_token(prefix)
        steps += 1
        prefix.append(token)
        if stack.prefix_gamma(prefix) > bound:
            return None, steps, True
        if token == EOS_ID:
            break
    else:
        prefix.append(EOS_ID)

    sentence = tuple(prefix)
    if final_check and r > stack.acceptance(sentence):
        return None, steps, False
    return sentence, steps, False


def ers_decision(
    stack: EstimatorStack,
    sentence: Sentence,
    r: float,
    max_len: int,
    final_check: bool = True,
) -> Tuple[bool, int, bool]:
    """
    Replay ERS on a fixed sentence and survival draw r.

    Returns:
        (accepted, token steps consumed, killed early)
    """
    out, steps, killed = _ers_walk(
        stack, lambda prefix: sentence[len(prefix)], r, max_len, final_check
    )
    return out is not None, steps, killed


def ers_sample(
    t: TailoredDistribution,
    n_accept: int,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    final_check: bool = True,
) -> SampleBatch:
    """
    Independent particles with early rejection.

    After every drawn token the composite prefix ratio prod_k gamma'_k is
    compared with 1/r and the particle is killed when it is larger. A finished
    sentence is accepted iff r <= a(x) (or on survival alone when final_check
    is off). Uses the same proposal streams as rejection_sample.
    """
    if not t.stack.has_duals:
        raise DataError("E_NO_DUAL", "ERS requires a dual estimator on every stack layer")

    def propose(uniforms: np.ndarray, r: float) -> Tuple[Optional[Sentence], int, bool]:
        return _ers_walk(
            t.stack,
            lambda prefix: t.model.draw_token(prefix, float(uniforms[len(prefix)])),
            r,
            t.max_len,
            final_check,
        )

    return _run_blocks(
        propose, SamplingAlgorithm.ERS, t.max_len, n_accept, seed, budget, workers, block_size
    )


# =============================================================================
# Sequential Monte Carlo
# =============================================================================

@dataclass
class _Lineage:
    """Token-step tree: node i was drawn from parent[i]."""
    parent: List[int] = field(default_factory=list)

    def add(self, parent: int) -> int:
        self.parent.append(parent)
        return len(self.parent) - 1

    def useful(self, leaves: Sequence[int]) -> int:
        seen = set()
        for node in leaves:
            while node >= 0 and node not in seen:
                seen.add(node)
                node = self.parent[node]
        return len(seen)


def _clone(p: Particle) -> Particle:
    return replace(p, prefix=list(p.prefix), step_log_weights=list(p.step_log_weights))


def _resampling_probs(logw: np.ndarray, stage: str) -> Tuple[np.ndarray, float]:
    """Normalised weights and the log of their mean; degenerate weights raise."""
    top = float(logw.max())
    if not math.isfinite(top):
        raise StarvationError(
            "E_SMC_WEIGHTS",
            f"SMC {stage} weights are all zero or non-finite",
            {"max_log_weight": top, "particles": int(logw.size)},
        )
    w = np.exp(logw - top)
    total = float(w.sum())
    return w / total, top + math.log(total / logw.size)


def smc_sample(t: TailoredDistribution, n_particles: int, seed: int = 0) -> SampleBatch:
    """
    Sequential Monte Carlo over token steps.

    Each step advances every active particle by one token and multiplies its
    weight by gamma'(x[:i-1]) / gamma'(x[:i]) (composite over layers). Active
    particles are then multinomially resampled and share their mean weight;
    finished particles are frozen. A final importance resampling over the
    finished particles, corrected to the tailored target, returns n_particles
    equally weighted sentences.
    """
    if n_particles < 2:
        raise DataError("E_SMC_PARTICLES", f"SMC needs at least 2 particles, got {n_particles}")
    if not t.stack.has_duals:
        raise DataError("E_NO_DUAL", "SMC requires a dual estimator on every stack layer")

    rng = np.random.default_rng(seed)
    stack = t.stack
    lineage = _Lineage()
    g_empty = stack.prefix_gamma(())
    particles = [Particle(last_gamma=g_empty) for _ in range(n_particles)]
    stats = SampleStats(proposals=n_particles)

    while True:
        active = [i for i, p in enumerate(particles) if not p.finished]
        if not active:
            break
        for i in active:
            p = particles[i]
            token = t.model.draw_token(p.prefix, float(rng.random()))
            p.advance(token)
            p.node = lineage.add(p.node)
            stats.token_steps_total += 1
            g = stack.prefix_gamma(p.prefix)
            step = math.log(p.last_gamma) - math.log(g)
            p.step_log_weights.append(step)
            p.log_weight += step
            p.last_gamma = g
            if token == EOS_ID:
                p.finished = True
            elif len(p.prefix) == t.max_len:
                p.prefix.append(EOS_ID)
                p.finished = True

        still = [i for i in active if not particles[i].finished]
        if len(still) < 2:
            continue
        logw = np.array([particles[i].log_weight for i in still])
        probs, mean_logw = _resampling_probs(logw, "step")
        picks = rng.choice(len(still), size=len(still), p=probs)
        stats.kills += len(still) - len(set(picks.tolist()))
        copies = [_clone(particles[still[int(j)]]) for j in picks]
        for i, copy in zip(still, copies):
            copy.log_weight = mean_logw
            particles[i] = copy

    # final weights target u(x) = P(x) a(x): undo the last prefix ratio, apply a(x)
    final = np.array([
        p.log_weight + math.log(p.last_gamma) + math.log(stack.acceptance(tuple(p.prefix)))
        for p in particles
    ])
    probs, _ = _resampling_probs(final, "final")
    picks = rng.choice(n_particles, size=n_particles, p=probs)
    chosen = [particles[int(j)] for j in picks]
    accepted = [tuple(p.prefix) for p in chosen]

    stats.accepted = len(accepted)
    stats.token_steps_wasted = stats.token_steps_total - lineage.useful([p.node for p in chosen])
    stats.distinct_fraction = distinct_fraction(accepted)
    logger.info(
        f"SMC: particles={n_particles} distinct={stats.distinct_fraction:.3f} "
        f"wasted={stats.token_steps_wasted}/{stats.token_steps_total}"
    )
    return SampleBatch(accepted, stats, SamplingAlgorithm.SMC, particles=chosen)


# =============================================================================
# Normalizer / Densities
# =============================================================================

def estimate_log_normalizer(
    t: TailoredDistribution,
    n_is: int,
    seed: int = 0,
) -> Tuple[float, float]:
    """
    Importance-sampling estimate of Z = E_{x ~ P_Model}[a(x)].

    Stores log Z, the standard error of Z and its delta-method log-scale
    error on t.

    Returns:
        (log Z, standard error of Z)
    """
    if n_is < MIN_IS_SAMPLES:
        raise DataError("E_IS_SAMPLES", f"n_is must be >= {MIN_IS_SAMPLES}, got {n_is}")
    rng = np.random.default_rng(seed)
    uniforms = rng.random((n_is, t.max_len))
    a = np.array([t.stack.acceptance(t.model.generate(row, t.max_len)) for row in uniforms])
    z = float(a.mean())
    stderr = float(a.std(ddof=1) / math.sqrt(n_is))
    t.log_Z = math.log(z)
    t.Z_stderr = stderr
    t.log_Z_stderr = stderr / z
    logger.info(f"log Z = {t.log_Z:.6f} (Z = {z:.6f} +/- {stderr:.2e}, n_is={n_is})")
    return t.log_Z, stderr


def tailored_logprob(t: TailoredDistribution, sentence: Sentence) -> float:
    """log P_Tailor(x) = log P_Model(x) + log a(x) - log Z."""
    if t.log_Z is None:
        raise DataError("E_NO_LOG_Z", "Estimate the normalizer before scoring sentences")
    return t.unnormalized_logprob(sentence) - t.log_Z


# =============================================================================
# Dispatch / Comparison
# =============================================================================

def sample(
    t: TailoredDistribution,
    algorithm: SamplingAlgorithm,
    n: int,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
    workers: int = 1,
    final_check: bool = True,
) -> SampleBatch:
    """Draw n sentences with the named algorithm."""
    if algorithm == SamplingAlgorithm.RS:
        return rejection_sample(t, n, seed, budget, workers)
    if algorithm == SamplingAlgorithm.ERS:
        return ers_sample(t, n, seed, budget, workers, final_check=final_check)
    return smc_sample(t, n, seed)


@dataclass
class ComputeComparison:
    """Wasted-computation reduction of ERS relative to RS."""
    rs_wasted: int
    ers_wasted: int
    rs_total: int
    ers_total: int

    @property
    def wasted_reduction(self) -> float:
        return 1.0 - self.ers_wasted / self.rs_wasted if self.rs_wasted else 0.0

    @property
    def speedup(self) -> float:
        return self.rs_total / self.ers_total if self.ers_total else float("inf")

    def to_dict(self) -> Dict[str, float]:
        return {
            "rs_wasted": self.rs_wasted,
            "ers_wasted": self.ers_wasted,
            "rs_total": self.rs_total,
            "ers_total": self.ers_total,
            "wasted_reduction": self.wasted_reduction,
            "speedup": self.speedup,
        }


def compare_compute(rs: SampleStats, ers: SampleStats) -> ComputeComparison:
    if rs.accepted != ers.accepted:
        logger.warning(
            f"Comparing runs with unequal accepted counts ({rs.accepted} vs {ers.accepted})"
        )
    return ComputeComparison(
        rs.token_steps_wasted, ers.token_steps_wasted, rs.token_steps_total, ers.token_steps_total
    )
