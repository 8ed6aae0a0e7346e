"""
mctailor Pipeline

Stage commands (pretrain, finetune, build-tailor, sample, evaluate, verify)
over a shared artifact store, and the runner that executes several stages
in dependency order and records a run log.

Artifacts (relative to the output directory):
    vocab.txt, base.mctl                      pretrain
    finetuned.mctl, finetune.json, data/      finetune
    stack/                                    build-tailor
    samples.txt, sample_stats.json            sample
    metrics.json, metrics.txt, nll.txt,
    compute.json                              evaluate
    verify.json, verify.txt                   verify
    run_log.json                              every invocation
"""

from __future__ import annotations
from typing import Any, Callable, Dict, List, Optional, Sequence, Set, Tuple
from collections import deque
from datetime import datetime, timezone
import logging
import math
import time
import uuid

import numpy as np

from ..config import RunConfig
from ..persistence import ArtifactStore, get_artifact_store
from ..schemas.corpus import Corpus, Vocab, make_sentence
from ..schemas.errors import (
    BudgetExceededError,
    DataError,
    MCTailorError,
    UsageError,
    VerificationError,
)
from ..schemas.pipeline import (
    STAGE_DEPENDENCIES,
    RunLog,
    Stage,
    StageOutput,
    StageResult,
    StageStatus,
)
from ..schemas.reports import (
    VerificationIssue,
    VerificationReport,
    VerificationSeverity,
    render_nll_table,
)
from ..schemas.sampling import SamplingAlgorithm, distinct_fraction
from . import lm, oracle
from .corpus import load_corpus, split, vocab_from_files
from .lm import NGramModel
from .metrics import evaluate, metric_summary, nll_table
from .ratio import EstimatorStack, build_stack
from .tailor import (
    TailoredDistribution,
    compare_compute,
    ers_decision,
    ers_sample,
    estimate_log_normalizer,
    rejection_sample,
    sample,
    smc_sample,
)


logger = logging.getLogger(__name__)

VOCAB = "vocab.txt"
BASE_MODEL = "base.mctl"
FINETUNED_MODEL = "finetuned.mctl"
FINETUNE_RECORD = "finetune.json"
STACK_PREFIX = "stack"
SAMPLES = "samples.txt"
SAMPLE_STATS = "sample_stats.json"
METRICS = "metrics.json"
METRICS_TEXT = "metrics.txt"
NLL_TABLE = "nll.txt"
COMPUTE = "compute.json"
VERIFY = "verify.json"
VERIFY_TEXT = "verify.txt"
RUN_LOG = "run_log.json"

MASS_TOLERANCE = 1e-9
IS_SIGMAS = 3.0
COUPLED_SAMPLES = 10_000
SMC_PARTICLES = 5000


def split_name(role: str) -> str:
    return f"data/domain.{role}.txt"


# =============================================================================
# Stage context
# =============================================================================

class PipelineContext:
    """Config plus store, with loaders for upstream artifacts."""

    def __init__(self, config: RunConfig, store: ArtifactStore):
        self.config = config
        self.store = store

    def require_path(self, field_name: str) -> str:
        path = getattr(self.config, field_name)
        if not path:
            raise UsageError("E_CONFIG_PATH", f"{field_name} must be set for this command")
        return str(path)

    def vocab(self) -> Vocab:
        return self.store.load_vocab(VOCAB, hint="run pretrain first")

    def base_model(self) -> NGramModel:
        return self.store.load_model(BASE_MODEL, hint="run pretrain first")

    def finetuned_model(self) -> NGramModel:
        return self.store.load_model(FINETUNED_MODEL, hint="run finetune first")

    def stack(self) -> EstimatorStack:
        return self.store.load_stack(STACK_PREFIX, hint="run build-tailor first")

    def domain_split(self, role: str, vocab: Vocab) -> Corpus:
        name = split_name(role)
        if not self.store.exists(name):
            raise DataError("E_ARTIFACT_MISSING", f"Missing artifact {name}; run finetune first")
        sentences = self.store.load_samples(name, vocab, self.config.max_len)
        return Corpus.of(sentences, source_path=name)

    def tailored(self) -> TailoredDistribution:
        return TailoredDistribution(self.finetuned_model(), self.stack(), self.config.max_len)


# =============================================================================
# Commands
# =============================================================================

def cmd_pretrain(ctx: PipelineContext) -> StageOutput:
    """Train the base n-gram model on the general corpus."""
    cfg = ctx.config
    general_path = ctx.require_path("general_corpus")
    paths = [general_path]
    if cfg.domain_corpus:
        paths.append(cfg.domain_corpus)
    vocab = vocab_from_files(paths, cfg.min_count, cfg.lowercase)
    general, _ = load_corpus(general_path, vocab, cfg.max_len, lowercase=cfg.lowercase)

    model = lm.train(general, vocab, cfg.order, cfg.alpha, cfg.lambdas)
    ctx.store.save_vocab(VOCAB, vocab)
    ctx.store.save_model(BASE_MODEL, model)
    train_ppl = lm.perplexity(model, general, cfg.max_len)
    logger.info(f"Pretrained order-{cfg.order} model on {len(general)} sentences")

    payload = {"vocab_size": len(vocab), "sentences": len(general), "train_ppl": train_ppl}
    text = f"vocab_size: {len(vocab)}\nsentences: {len(general)}\ntrain_ppl: {train_ppl:.4f}\n"
    return StageOutput(text, payload, [VOCAB, BASE_MODEL])


def cmd_finetune(ctx: PipelineContext) -> StageOutput:
    """Split the domain corpus and interpolate a domain model into the base model."""
    cfg = ctx.config
    vocab = ctx.vocab()
    base = ctx.base_model()
    domain, _ = load_corpus(ctx.require_path("domain_corpus"), vocab, cfg.max_len,
                            lowercase=cfg.lowercase)
    train_set, eval_set, test_set = split(domain, cfg.fractions, cfg.seed)
    for role, part in (("train", train_set), ("eval", eval_set), ("test", test_set)):
        ctx.store.save_samples(split_name(role), part.sentences, vocab)

    mu = cfg.mu
    sweep: Dict[float, float] = {}
    if cfg.tune_mu:
        if len(eval_set) == 0:
            raise DataError("E_SPLIT_EMPTY", "tune_mu needs a non-empty eval split")
        mu, sweep = lm.select_mu(base, train_set, eval_set)
    model = lm.finetune(base, train_set, mu)
    ctx.store.save_model(FINETUNED_MODEL, model)

    eval_ppl = lm.perplexity(model, eval_set, cfg.max_len) if len(eval_set) else None
    record = {
        "mu": mu,
        "sweep": {f"{m:.2f}": p for m, p in sweep.items()},
        "eval_ppl": eval_ppl,
        "split_sizes": [len(train_set), len(eval_set), len(test_set)],
    }
    ctx.store.save_json(FINETUNE_RECORD, record)

    lines = [f"mu: {mu}"]
    lines += [f"mu={m:.2f} eval_ppl={p:.4f}" for m, p in sweep.items()]
    if eval_ppl is not None:
        lines.append(f"eval_ppl: {eval_ppl:.4f}")
    artifacts = [FINETUNED_MODEL, FINETUNE_RECORD]
    artifacts += [split_name(r) for r in ("train", "eval", "test")]
    return StageOutput("\n".join(lines) + "\n", record, artifacts)


def cmd_build_tailor(ctx: PipelineContext) -> StageOutput:
    """Train the estimator stack against the fine-tuned model."""
    cfg = ctx.config
    model = ctx.finetuned_model()
    real = ctx.domain_split("train", model.vocab)
    stack = build_stack(
        model,
        real,
        cfg.n_layers,
        cfg.estimator_config(),
        seed=cfg.seed,
        max_len=cfg.max_len,
        with_duals=cfg.dual,
        budget=cfg.budget,
        workers=cfg.workers,
    )
    ctx.store.save_stack(STACK_PREFIX, stack)
    layers = [lr.to_dict() for lr in stack.report.layers]
    lines = []
    for lr in stack.report.layers:
        acc = lr.ratio.holdout_accuracy if lr.ratio else float("nan")
        lines.append(
            f"layer {lr.layer}: holdout_accuracy={acc:.4f} "
            f"negative_acceptance_rate={lr.negative_acceptance_rate:.4f}"
        )
    return StageOutput("\n".join(lines) + "\n", {"layers": layers}, [STACK_PREFIX])


def _require_duals(stack: EstimatorStack, algorithm: SamplingAlgorithm) -> None:
    if algorithm != SamplingAlgorithm.RS and not stack.has_duals:
        raise DataError(
            "E_NO_DUAL",
            f"algorithm={algorithm.value} needs a dual estimator on every stack layer; "
            f"rebuild the tailor with dual=true or use algorithm=rs",
        )


def cmd_sample(ctx: PipelineContext) -> StageOutput:
    """Draw n_samples sentences from the tailored distribution."""
    cfg = ctx.config
    t = ctx.tailored()
    _require_duals(t.stack, cfg.algorithm)
    estimate_log_normalizer(t, cfg.n_is, cfg.seed)
    batch = sample(
        t, cfg.algorithm, cfg.n_samples, cfg.seed, cfg.budget, cfg.workers, cfg.ers_final_check
    )
    batch.stats.log_Z = t.log_Z
    batch.stats.log_Z_stderr = t.log_Z_stderr
    ctx.store.save_samples(SAMPLES, batch.accepted, t.model.vocab)
    ctx.store.save_json(SAMPLE_STATS, batch.stats.to_dict())
    if batch.stats.budget_exhausted:
        raise BudgetExceededError(
            "E_BUDGET",
            f"{cfg.algorithm.value} accepted {batch.stats.accepted}/{cfg.n_samples} "
            f"within {cfg.budget} proposals; partial samples written to {SAMPLES}",
            batch.stats.to_dict(),
        )
    return StageOutput(batch.stats.to_text(), batch.stats.to_dict(), [SAMPLES, SAMPLE_STATS])


def _compute_by_depth(ctx: PipelineContext, t: TailoredDistribution) -> List[Dict[str, Any]]:
    """RS against ERS at every stack depth, equal accepted counts."""
    cfg = ctx.config
    rows = []
    for depth in range(1, len(t.stack) + 1):
        partial = TailoredDistribution(t.model, t.stack.truncated(depth), t.max_len)
        rs = rejection_sample(partial, cfg.n_samples, cfg.seed, cfg.budget, cfg.workers)
        ers = ers_sample(partial, cfg.n_samples, cfg.seed, cfg.budget, cfg.workers)
        if rs.stats.budget_exhausted or ers.stats.budget_exhausted:
            logger.warning(f"Skipping compute comparison at depth {depth}: budget exhausted")
            continue
        rows.append({"depth": depth, **compare_compute(rs.stats, ers.stats).to_dict()})
    return rows


def cmd_evaluate(ctx: PipelineContext) -> StageOutput:
    """Metrics for the fine-tuned model and its tailored distribution."""
    cfg = ctx.config
    t = ctx.tailored()
    model = t.model
    test = ctx.domain_split("test", model.vocab)
    if len(test) == 0:
        raise DataError("E_SPLIT_EMPTY", "evaluate needs a non-empty test split")
    algorithm = cfg.algorithm
    if algorithm != SamplingAlgorithm.RS and not t.stack.has_duals:
        logger.warning(f"Stack has no duals; evaluating with rs instead of {algorithm.value}")
        algorithm = SamplingAlgorithm.RS

    common: Dict[str, Any] = dict(
        seed=cfg.seed,
        max_len=cfg.max_len,
        lm_config=cfg.eval_lm_config(),
        n_is=cfg.n_is,
        budget=cfg.budget,
        workers=cfg.workers,
        fingerprint=cfg.fingerprint(),
    )
    reports = {
        "finetuned": evaluate(model, test, SamplingAlgorithm.RS, cfg.n_samples, **common),
        "tailored": evaluate(t, test, algorithm, cfg.n_samples, **common),
    }
    payload: Dict[str, Any] = {k: r.model_dump() for k, r in reports.items()}
    ctx.store.save_json(METRICS, payload)
    text = metric_summary(reports)
    ctx.store.save_text(METRICS_TEXT, text)
    artifacts = [METRICS, METRICS_TEXT]

    texts = [p.strip() for p in cfg.nll_sentences.split("|") if p.strip()]
    if texts:
        sentences = [make_sentence(model.vocab.encode(p.split()), cfg.max_len) for p in texts]
        table = render_nll_table(nll_table(model, t, sentences))
        ctx.store.save_text(NLL_TABLE, table)
        artifacts.append(NLL_TABLE)
        text += "\n" + table

    if t.stack.has_duals:
        rows = _compute_by_depth(ctx, t)
        ctx.store.save_json(COMPUTE, rows)
        artifacts.append(COMPUTE)
        payload["compute"] = rows
        for row in rows:
            text += (
                f"depth {row['depth']}: wasted_reduction={row['wasted_reduction']:.4f} "
                f"speedup={row['speedup']:.4f}\n"
            )
    return StageOutput(text, payload, artifacts)


# =============================================================================
# Verification
# =============================================================================

def _check(
    report: VerificationReport,
    code: str,
    ok: bool,
    message: str,
    value: Optional[float] = None,
    threshold: Optional[float] = None,
) -> None:
    severity = VerificationSeverity.INFO if ok else VerificationSeverity.BREACH
    report.add(VerificationIssue(code, severity, message, value, threshold))


def _ers_exactness(stack: EstimatorStack, exact: oracle.ExactDistribution, max_len: int) -> int:
    """Count (sentence, r) pairs where oracle-dual ERS and RS disagree."""
    grid = np.linspace(0.02, 1.0, 50)
    mismatches = 0
    for s in exact.support:
        a = stack.acceptance(s)
        cases = list(grid) + [a * (1.0 - 1e-9), min(1.0, a * (1.0 + 1e-9))]
        for r in cases:
            accepted, _, _ = ers_decision(stack, s, float(r), max_len)
            if accepted != (r <= a):
                mismatches += 1
    return mismatches


def _savings_by_depth(
    report: VerificationReport,
    model: NGramModel,
    stack: EstimatorStack,
    max_len: int,
    n: int,
    cfg: RunConfig,
) -> None:
    """Coupled ERS savings for every truncated stack; a drop with depth is a warning."""
    previous: Optional[float] = None
    for depth in range(1, len(stack) + 1):
        partial = stack.truncated(depth)
        duals = oracle.with_oracle_duals(partial, model, max_len)
        rs = rejection_sample(TailoredDistribution(model, partial, max_len), n, cfg.seed,
                              cfg.budget, cfg.workers)
        ers = ers_sample(TailoredDistribution(model, duals, max_len), n, cfg.seed,
                         cfg.budget, cfg.workers)
        reduction = compare_compute(rs.stats, ers.stats).wasted_reduction
        ok = previous is None or reduction >= previous
        report.add(VerificationIssue(
            "ERS_SAVINGS_DEPTH",
            VerificationSeverity.INFO if ok else VerificationSeverity.WARNING,
            f"ERS wasted-step reduction with {depth} layer(s)",
            reduction, previous,
        ))
        previous = reduction


def run_oracle_suite(
    model: NGramModel,
    stack: EstimatorStack,
    config: RunConfig,
) -> VerificationReport:
    """
    Exhaustive checks of the tailored law and its samplers on an enumerable model.

    Raises:
        EnumerationGuardError: |V|^max_len exceeds the enumeration guard
    """
    cfg = config
    max_len = cfg.max_len
    report = VerificationReport()

    base = oracle.enumerate_model(model, max_len)
    _check(report, "MODEL_MASS", abs(base.leftover_mass) <= MASS_TOLERANCE,
           "Enumerated model probabilities sum to 1", abs(base.leftover_mass), MASS_TOLERANCE)
    forced = base.forced_eos_mass
    if cfg.verify_max_forced_mass is None:
        report.add(VerificationIssue(
            "FORCED_EOS_MASS", VerificationSeverity.INFO,
            f"Model mass past max_len={max_len} folded into cap-length sentences", forced,
        ))
    else:
        _check(report, "FORCED_EOS_MASS", forced < cfg.verify_max_forced_mass,
               f"Model mass past max_len={max_len} is below the accepted bound",
               forced, cfg.verify_max_forced_mass)

    exact = oracle.exact_tailored(model, stack, max_len)
    z = float(exact.Z or 0.0)
    _check(report, "NORMALIZER_RANGE", 0.0 < z <= 1.0 + MASS_TOLERANCE,
           "Exact normalizer lies in (0, 1]", z, 1.0)
    worst = max(exact.entries[s] * z - base.entries[s] for s in exact.support)
    _check(report, "TAILOR_DOMINATED", worst <= MASS_TOLERANCE,
           "Z * P_Tailor(x) <= P_Model(x) for every sentence", worst, MASS_TOLERANCE)

    log_z = math.log(z)
    t = TailoredDistribution(model, stack, max_len, log_Z=log_z)
    density_gap = max(
        abs(math.exp(t.unnormalized_logprob(s) - log_z) - exact.entries[s])
        for s in exact.support
    )
    _check(report, "DENSITY_CONSISTENT", density_gap <= MASS_TOLERANCE,
           "Closed-form tailored density matches enumeration", density_gap, MASS_TOLERANCE)

    n = cfg.verify_samples
    rs = rejection_sample(t, n, cfg.seed, cfg.budget, cfg.workers)
    _check(report, "RS_BUDGET", not rs.stats.budget_exhausted,
           f"RS accepted {rs.stats.accepted}/{n}")
    tv_rs = oracle.tv_distance(rs, exact)
    _check(report, "RS_TV", tv_rs < cfg.verify_tv_threshold,
           "RS total variation to the exact tailored law", tv_rs, cfg.verify_tv_threshold)
    _, p_rs = oracle.chi_square_gof(rs, exact)
    _check(report, "RS_CHI2", p_rs > cfg.verify_p_threshold,
           "RS chi-square goodness of fit p-value", p_rs, cfg.verify_p_threshold)

    oracle_stack = oracle.with_oracle_duals(stack, model, max_len)
    mismatches = _ers_exactness(oracle_stack, exact, max_len)
    _check(report, "ERS_EXACT", mismatches == 0,
           "ERS with exact prefix minima decides like RS on every (x, r) pair",
           float(mismatches), 0.0)

    to = TailoredDistribution(model, oracle_stack, max_len)
    m = min(n, COUPLED_SAMPLES)
    coupled_rs = rejection_sample(t, m, cfg.seed, cfg.budget, cfg.workers)
    coupled_ers = ers_sample(to, m, cfg.seed, cfg.budget, cfg.workers)
    _check(report, "ERS_RS_COUPLED", coupled_rs.accepted == coupled_ers.accepted,
           "ERS and RS accept the same sentences from the same proposal streams")
    saving = compare_compute(coupled_rs.stats, coupled_ers.stats)
    _check(report, "ERS_SAVINGS",
           coupled_ers.stats.token_steps_wasted <= coupled_rs.stats.token_steps_wasted,
           f"ERS wasted-step reduction on coupled streams (speedup {saving.speedup:.3f})",
           saving.wasted_reduction, 0.0)
    _savings_by_depth(report, model, stack, max_len, m, cfg)

    ers = ers_sample(to, n, cfg.seed + 1, cfg.budget, cfg.workers)
    tv_ers = oracle.tv_distance(ers, exact)
    _check(report, "ERS_TV", tv_ers < cfg.verify_tv_threshold,
           "ERS total variation to the exact tailored law", tv_ers, cfg.verify_tv_threshold)
    _, p_two = oracle.chi_square_two_sample(rs, ers)
    _check(report, "ERS_RS_CHI2", p_two > cfg.verify_p_threshold,
           "Two-sample chi-square of ERS against RS", p_two, cfg.verify_p_threshold)

    estimate = TailoredDistribution(model, stack, max_len)
    log_z_hat, stderr = estimate_log_normalizer(estimate, cfg.n_is, cfg.seed)
    gap = abs(math.exp(log_z_hat) - z)
    limit = IS_SIGMAS * stderr if stderr > 0 else MASS_TOLERANCE
    _check(report, "IS_NORMALIZER", gap <= limit,
           f"Importance-sampled Z within {IS_SIGMAS:g} standard errors of the exact Z",
           gap, limit)

    if stack.has_duals:
        violations = oracle.prefix_violation_report(stack, model, max_len)
        report.add(VerificationIssue(
            "DUAL_VIOLATIONS", VerificationSeverity.INFO,
            f"Learned prefix ratio above the exact minimum on "
            f"{violations.n_violations}/{violations.n_prefixes} prefixes (model-mass rate)",
            violations.mass_rate,
        ))
    m_smc = min(n, SMC_PARTICLES)
    smc = smc_sample(to, m_smc, cfg.seed)
    report.add(VerificationIssue(
        "SMC_TV", VerificationSeverity.INFO,
        "SMC (exact prefix minima) total variation to the exact tailored law",
        oracle.tv_distance(smc, exact),
    ))
    smc_distinct = smc.stats.distinct_fraction
    ers_distinct = distinct_fraction(ers.accepted[:m_smc])
    report.add(VerificationIssue(
        "SMC_DEGENERACY",
        VerificationSeverity.INFO if smc_distinct < ers_distinct else VerificationSeverity.WARNING,
        f"SMC distinct fraction against ERS at {m_smc} samples",
        smc_distinct, ers_distinct,
    ))
    return report


def cmd_verify(ctx: PipelineContext) -> StageOutput:
    """Run the oracle suite; any breach raises VerificationError after the report is saved."""
    report = run_oracle_suite(ctx.finetuned_model(), ctx.stack(), ctx.config)
    ctx.store.save_json(VERIFY, report.to_dict())
    ctx.store.save_text(VERIFY_TEXT, report.to_text())
    if not report.passed:
        codes = ", ".join(c.code for c in report.breaches)
        raise VerificationError(
            "E_VERIFY",
            f"{len(report.breaches)} oracle check(s) failed: {codes}",
            report.to_dict(),
        )
    return StageOutput(report.to_text(), report.to_dict(), [VERIFY, VERIFY_TEXT])


StageHandler = Callable[[PipelineContext], StageOutput]

STAGE_HANDLERS: Dict[Stage, StageHandler] = {
    Stage.PRETRAIN: cmd_pretrain,
    Stage.FINETUNE: cmd_finetune,
    Stage.BUILD_TAILOR: cmd_build_tailor,
    Stage.SAMPLE: cmd_sample,
    Stage.EVALUATE: cmd_evaluate,
    Stage.VERIFY: cmd_verify,
}


# =============================================================================
# Runner
# =============================================================================

def parse_stages(text: str) -> List[Stage]:
    stages = []
    for name in (s.strip() for s in text.split(",")):
        if not name:
            continue
        try:
            stages.append(Stage(name))
        except ValueError:
            known = ", ".join(s.value for s in Stage)
            raise UsageError("E_STAGE", f"Unknown stage {name!r}; choose from {known}") from None
    if not stages:
        raise UsageError("E_STAGE", "No stages given")
    return stages


class PipelineRunner:
    """
    Executes pipeline stages.

    Requested stages run in dependency order (ties in canonical order); a
    stage whose upstream stage was not requested reads that stage's
    artifacts from the store. The first failure stops the run.
    """

    def __init__(
        self,
        config: RunConfig,
        store: Optional[ArtifactStore] = None,
        handlers: Optional[Dict[Stage, StageHandler]] = None,
    ):
        self.config = config
        self.store = store or get_artifact_store(config.store_backend.value, config.out_dir)
        self.handlers = dict(handlers or STAGE_HANDLERS)
        self.context = PipelineContext(config, self.store)

    @staticmethod
    def upstream(stage: Stage) -> Set[Stage]:
        """Every stage whose artifacts stage reads, directly or through others."""
        seen: Set[Stage] = set()
        pending = list(STAGE_DEPENDENCIES[stage])
        while pending:
            dep = pending.pop()
            if dep not in seen:
                seen.add(dep)
                pending.extend(STAGE_DEPENDENCIES[dep])
        return seen

    def order(self, stages: Sequence[Stage]) -> List[Stage]:
        """Topological order of the requested stages."""
        requested: Set[Stage] = set(stages)
        canonical = list(Stage)
        deps = {s: self.upstream(s) & requested for s in requested}
        in_degree = {s: len(deps[s]) for s in requested}
        dependents: Dict[Stage, List[Stage]] = {s: [] for s in requested}
        for s in requested:
            for dep in deps[s]:
                dependents[dep].append(s)

        ready = deque(sorted((s for s, d in in_degree.items() if d == 0), key=canonical.index))
        ordered: List[Stage] = []
        while ready:
            stage = ready.popleft()
            ordered.append(stage)
            for dependent in sorted(dependents[stage], key=canonical.index):
                in_degree[dependent] -= 1
                if in_degree[dependent] == 0:
                    ready.append(dependent)
        return ordered

    def run(self, stages: Sequence[Stage]) -> Tuple[RunLog, Dict[Stage, StageOutput]]:
        log = RunLog(
            run_id=f"run_{uuid.uuid4().hex[:12]}",
            fingerprint=self.config.fingerprint(),
            started_at=datetime.now(timezone.utc),
            status=StageStatus.RUNNING,
        )
        outputs: Dict[Stage, StageOutput] = {}
        try:
            for stage in self.order(stages):
                outputs[stage] = self._run_stage(stage, log)
            log.status = StageStatus.COMPLETED
        except Exception:
            log.status = StageStatus.FAILED
            raise
        finally:
            log.completed_at = datetime.now(timezone.utc)
            self.store.save_json(RUN_LOG, log.to_dict(), "run_log")
        return log, outputs

    def _run_stage(self, stage: Stage, log: RunLog) -> StageOutput:
        result = StageResult(stage, StageStatus.RUNNING, datetime.now(timezone.utc))
        log.stages.append(result)
        logger.info(f"Stage {stage.value} started")
        start = time.perf_counter()
        try:
            output = self.handlers[stage](self.context)
            result.status = StageStatus.COMPLETED
            result.artifacts = list(output.artifacts)
            return output
        except MCTailorError as e:
            result.status = StageStatus.FAILED
            result.error = e.to_dict()
            logger.error(f"Stage {stage.value} failed: {e.code}: {e.message}")
            raise
        except Exception as e:
            result.status = StageStatus.FAILED
            result.error = {"code": "E_INTERNAL", "message": str(e), "details": {}}
            logger.exception(f"Stage {stage.value} failed")
            raise
        finally:
            result.completed_at = datetime.now(timezone.utc)
            result.duration_ms = int((time.perf_counter() - start) * 1000)
            if result.status == StageStatus.COMPLETED:
                logger.info(f"Stage {stage.value} completed in {result.duration_ms} ms")
