"""Grid search, multi-run experiments with significance testing, and the
in-domain generative fine-tuning workflow."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product
from typing import Callable

from .checkpoint import Checkpoint
from .corpus import Corpus, make_splits, subsample_training
from .erc import ErcModel, RunResult, TrainErcConfig, train_erc
from .errors import ContractError
from .hred import PretrainConfig, model_from_checkpoint, pretrain
from .metrics import RunAggregate, aggregate_runs, wilcoxon_ranksum
from .transfer import TransferSpec, apply_adaptation, init_target


# ---------------------------------------------------------------------------
# hyper-parameter grid


@dataclass(frozen=True)
class GridCell:
    lr: float
    optimizer: str
    batch_size: int
    dropout: float


@dataclass
class GridSpec:
    lrs: tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    optimizers: tuple[str, ...] = ("adam", "rmsprop")
    batch_sizes: tuple[int, ...] = (2, 8, 32)
    dropouts: tuple[float, ...] = (0.0, 0.5)

    def __post_init__(self):
        if not (self.lrs and self.optimizers and self.batch_sizes and self.dropouts):
            raise ContractError("grid axes must be non-empty")
        if any(not 2 <= b <= 40 for b in self.batch_sizes):
            raise ContractError("batch sizes must lie in [2, 40]")

    def cells(self) -> list[GridCell]:
        return [GridCell(lr, opt, bs, dr)
                for lr, opt, bs, dr in product(self.lrs, self.optimizers,
                                               self.batch_sizes, self.dropouts)]


DEFAULT_CELL = ("adam", 1e-4)


@dataclass
class GridSearchResult:
    best: GridCell
    leaderboard: list[tuple[GridCell, float]]
    failures: dict[GridCell, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "best": vars(self.best),
            "leaderboard": [{"cell": vars(c), "score": s} for c, s in self.leaderboard],
            "failures": [{"cell": vars(c), "error": e} for c, e in self.failures.items()],
        }


def grid_search(grid: GridSpec, train_fn: Callable[[GridCell], object],
                val_metric: Callable[[object], float] = float) -> GridSearchResult:
    """Evaluate every cell once; pick the argmax validation score.

    ``train_fn`` trains at a cell; ``val_metric`` extracts the score to
    maximize from its result (identity by default). Exact ties prefer the
    default (Adam, lr 1e-4) cell when it is among the tied leaders, then
    earliest enumeration order. A cell whose training raises is recorded
    as a failure; if every cell fails the search itself fails.
    """
    scored: list[tuple[GridCell, float]] = []
    failures: dict[GridCell, str] = {}
    for cell in grid.cells():
        try:
            scored.append((cell, float(val_metric(train_fn(cell)))))
        except Exception as e:  # noqa: BLE001 - diagnostics are the point
            failures[cell] = f"{type(e).__name__}: {e}"
    if not scored:
        lines = "; ".join(f"{vars(c)} -> {msg}" for c, msg in failures.items())
        raise ContractError(f"every grid cell failed: {lines}")

    best_score = max(s for _, s in scored)
    tied = [c for c, s in scored if s == best_score]
    best = tied[0]
    for c in tied:
        if (c.optimizer, c.lr) == DEFAULT_CELL:
            best = c
            break
    leaderboard = sorted(scored, key=lambda cs: -cs[1])
    return GridSearchResult(best=best, leaderboard=leaderboard, failures=failures)


# ---------------------------------------------------------------------------
# multi-run experiments


@dataclass
class ExperimentVariant:
    name: str
    transfer_variant: str
    adaptation: str = "finetune_all"


@dataclass
class ExperimentSpec:
    train: Corpus
    val: Corpus
    test: Corpus
    build_model: Callable[[int], ErcModel]
    variants: list[ExperimentVariant]
    seeds: tuple[int, ...]
    train_config: TrainErcConfig
    source: Checkpoint | None = None
    fractions: tuple[float, ...] = (1.0,)
    baseline: str = "random"
    subsample_seed: int = 0


@dataclass
class VariantOutcome:
    runs: list[RunResult] = field(default_factory=list)
    aggregate: RunAggregate | None = None
    error: str | None = None

    @property
    def complete(self) -> bool:
        return self.error is None


@dataclass
class ExperimentReport:
    results: dict[float, dict[str, VariantOutcome]]
    significance: dict[float, dict[str, dict]]
    seeds: tuple[int, ...]
    baseline: str

    def to_dict(self) -> dict:
        out: dict = {"seeds": list(self.seeds), "baseline": self.baseline,
                     "results": {}, "significance": {}}
        for fraction, by_variant in sorted(self.results.items()):
            frac_key = repr(fraction)
            out["results"][frac_key] = {}
            for name, outcome in sorted(by_variant.items()):
                entry = {
                    "complete": outcome.complete,
                    "runs": [r.to_dict() for r in outcome.runs],
                }
                if outcome.error:
                    entry["error"] = outcome.error
                if outcome.aggregate:
                    entry["aggregate"] = outcome.aggregate.to_dict()
                out["results"][frac_key][name] = entry
        for fraction, by_variant in sorted(self.significance.items()):
            out["significance"][repr(fraction)] = {
                name: dict(stats) for name, stats in sorted(by_variant.items())
            }
        return out


def run_single(spec: ExperimentSpec, variant: ExperimentVariant, seed: int,
               train_corpus: Corpus) -> RunResult:
    model = spec.build_model(seed)
    source = None if variant.transfer_variant == "random" else spec.source
    init_target(model, TransferSpec(variant=variant.transfer_variant, source=source),
                seed=seed)
    mask = apply_adaptation(model, variant.adaptation)
    config = replace(spec.train_config, seed=seed, freeze_mask=mask, test=spec.test)
    return train_erc(model, train_corpus, spec.val, config)


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    """Train every variant at every fraction with every seed.

    Aggregates carry mean, standard error and mean best epoch; every
    non-baseline variant gets a two-tailed rank-sum comparison against
    the baseline's per-run metrics. A variant whose run raises is marked
    incomplete; the others proceed.
    """
    results: dict[float, dict[str, VariantOutcome]] = {}
    significance: dict[float, dict[str, dict]] = {}
    for fraction in spec.fractions:
        subset = subsample_training(spec.train, fraction, seed=spec.subsample_seed)
        by_variant: dict[str, VariantOutcome] = {}
        for variant in spec.variants:
            outcome = VariantOutcome()
            try:
                for seed in spec.seeds:
                    outcome.runs.append(run_single(spec, variant, seed, subset))
                outcome.aggregate = aggregate_runs(
                    [r.metric_value for r in outcome.runs],
                    seeds=list(spec.seeds),
                    best_epochs=[r.best_epoch for r in outcome.runs],
                )
            except Exception as e:  # noqa: BLE001 - incomplete variants are reported
                outcome.error = f"{type(e).__name__}: {e}"
            by_variant[variant.name] = outcome
        results[fraction] = by_variant

        base = by_variant.get(spec.baseline)
        sig: dict[str, dict] = {}
        if base is not None and base.complete and len(spec.seeds) >= 2:
            base_values = [r.metric_value for r in base.runs]
            for name, outcome in by_variant.items():
                if name == spec.baseline or not outcome.complete:
                    continue
                values = [r.metric_value for r in outcome.runs]
                u, p = wilcoxon_ranksum(values, base_values, two_tailed=True)
                sig[name] = {"U": u, "p": p, "vs": spec.baseline}
        significance[fraction] = sig
    return ExperimentReport(results=results, significance=significance,
                            seeds=spec.seeds, baseline=spec.baseline)


# ---------------------------------------------------------------------------
# in-domain generative fine-tuning


@dataclass
class InDomainConfig:
    epochs: int
    lr: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 8
    seed: int = 0
    val_fraction: float = 0.2
    split_seed: int = 0


def in_domain_finetune(source_ckpt: Checkpoint, target_corpus: Corpus,
                       config: InDomainConfig) -> Checkpoint:
    """Continue conversation modeling on the target corpus (labels are
    ignored; tokens fall back to UNK under the source vocabulary) and
    return the re-selected checkpoint."""
    model = model_from_checkpoint(source_ckpt)
    if config.epochs == 0:
        from .hred import checkpoint_from_model
        return checkpoint_from_model(model)
    train, val = make_splits(target_corpus, config.val_fraction, seed=config.split_seed)
    result = pretrain(model, train, val,
                      PretrainConfig(epochs=config.epochs, lr=config.lr,
                                     optimizer=config.optimizer,
                                     batch_size=config.batch_size, seed=config.seed))
    return result.checkpoint
