"""Evaluation metrics and cross-run statistics.

All functions are pure. The rank-sum test enumerates the exact null
distribution for small tie-free samples and otherwise falls back to the
normal approximation with tie and continuity corrections.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

from .errors import ContractError, UndefinedCorrelationError


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalResult:
    metric_name: str
    value: float
    per_class: dict[str, ClassScores] = field(default_factory=dict)
    excluded: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "metric": self.metric_name,
            "value": self.value,
            "excluded": list(self.excluded),
            "per_class": {
                lab: {"precision": s.precision, "recall": s.recall,
                      "f1": s.f1, "support": s.support}
                for lab, s in sorted(self.per_class.items())
            },
        }


def weighted_fscore(gold, pred, exclude=(), mode: str = "weighted") -> EvalResult:
    """Support-weighted F1 over classes, with gold-side class exclusion.

    Instances whose gold label is excluded are dropped before anything is
    counted; predicting an excluded label on a retained instance simply
    counts as a miss for its gold class. ``mode="micro"`` switches to
    pooled precision/recall over the non-excluded classes.
    """
    gold = list(gold)
    pred = list(pred)
    if len(gold) != len(pred):
        raise ContractError(f"label lists differ in length: {len(gold)} vs {len(pred)}")
    exclude = tuple(exclude)
    retained = [(g, p) for g, p in zip(gold, pred) if g not in exclude]
    if not retained:
        raise ContractError("every instance was excluded; nothing to score")
    if mode not in ("weighted", "micro"):
        raise ContractError(f"unknown mode {mode!r}")

    classes = sorted({g for g, _ in retained} | {p for _, p in retained if p not in exclude})
    per_class = {}
    total = len(retained)
    tp_sum = fp_sum = fn_sum = 0
    value = 0.0
    for c in classes:
        tp = sum(1 for g, p in retained if g == c and p == c)
        fp = sum(1 for g, p in retained if g != c and p == c)
        fn = sum(1 for g, p in retained if g == c and p != c)
        support = tp + fn
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[c] = ClassScores(precision, recall, f1, support)
        tp_sum += tp
        fp_sum += fp
        fn_sum += fn
        value += (support / total) * f1

    if mode == "micro":
        p = tp_sum / (tp_sum + fp_sum) if tp_sum + fp_sum else 0.0
        r = tp_sum / (tp_sum + fn_sum) if tp_sum + fn_sum else 0.0
        value = 2 * p * r / (p + r) if p + r else 0.0
        name = "micro_f"
    else:
        name = "weighted_f"
    return EvalResult(metric_name=name, value=value, per_class=per_class, excluded=exclude)


def pearson_r(x, y) -> float:
    """Two-pass product-moment correlation."""
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    n = len(x)
    if n != len(y):
        raise ContractError(f"series differ in length: {n} vs {len(y)}")
    if n < 2:
        raise ContractError("pearson_r needs at least 2 points")
    mx = sum(x) / n
    my = sum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = sum(v * v for v in dx)
    syy = sum(v * v for v in dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("zero variance in at least one series")
    sxy = sum(a * b for a, b in zip(dx, dy))
    return sxy / math.sqrt(sxx * syy)


# ---------------------------------------------------------------------------
# Wilcoxon rank-sum / Mann-Whitney U


def _midranks(values):
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _u_from_rank_sum(rank_sum: float, n_a: int) -> float:
    # U_a counts (a_i, b_j) pairs with a_i > b_j
    return rank_sum - n_a * (n_a + 1) / 2.0


def _exact_two_tailed(u_a: float, n_a: int, n_b: int) -> float:
    """Enumerate every assignment of ranks to the first sample.

    Two-tailed p is twice the lower-tail mass of min(U_a, U_b); by the
    symmetry of the tie-free null distribution this counts each tail
    exactly once.
    """
    n = n_a + n_b
    u_min = min(u_a, n_a * n_b - u_a)
    at_or_below = 0
    total = 0
    for combo in combinations(range(1, n + 1), n_a):
        u = _u_from_rank_sum(float(sum(combo)), n_a)
        total += 1
        if u <= u_min + 1e-9:
            at_or_below += 1
    return min(1.0, 2.0 * at_or_below / total)


def _approx_two_tailed(u_a: float, ranks, n_a: int, n_b: int) -> float:
    n = n_a + n_b
    tie_term = 0.0
    seen = sorted(ranks)
    i = 0
    while i < len(seen):
        j = i
        while j + 1 < len(seen) and seen[j + 1] == seen[i]:
            j += 1
        t = j - i + 1
        tie_term += t ** 3 - t
        i = j + 1
    correction = 1.0 - tie_term / (n ** 3 - n)
    if correction <= 0.0:
        return 1.0
    sigma = math.sqrt(correction * n_a * n_b * (n + 1) / 12.0)
    mu = n_a * n_b / 2.0
    z = max(0.0, (abs(u_a - mu) - 0.5) / sigma)
    return min(1.0, 2.0 * _norm_sf(z))


def wilcoxon_ranksum(a, b, two_tailed: bool = True):
    """Mann-Whitney U with midrank ties; returns (U of sample a, p).

    Exact p by enumeration when n_a + n_b <= 12 and there are no ties,
    otherwise the normal approximation with tie and continuity
    corrections.
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    if not a or not b:
        raise ContractError("both samples must be non-empty")
    n_a, n_b = len(a), len(b)
    ranks = _midranks(a + b)
    u_a = _u_from_rank_sum(sum(ranks[:n_a]), n_a)

    has_ties = len(set(a + b)) < n_a + n_b
    if two_tailed:
        if n_a + n_b <= 12 and not has_ties:
            p = _exact_two_tailed(u_a, n_a, n_b)
        else:
            p = _approx_two_tailed(u_a, ranks, n_a, n_b)
    else:
        # one-tailed, alternative "a tends lower than b"
        if n_a + n_b <= 12 and not has_ties:
            at_or_below = 0
            total = 0
            for combo in combinations(range(1, n_a + n_b + 1), n_a):
                u = _u_from_rank_sum(float(sum(combo)), n_a)
                total += 1
                if u <= u_a + 1e-9:
                    at_or_below += 1
            p = at_or_below / total
        else:
            n = n_a + n_b
            sigma = math.sqrt(n_a * n_b * (n + 1) / 12.0)
            mu = n_a * n_b / 2.0
            z = (u_a - mu + 0.5) / sigma
            p = min(1.0, max(0.0, 1.0 - _norm_sf(z)))
    return u_a, p


# ---------------------------------------------------------------------------
# cross-run aggregation


@dataclass
class RunAggregate:
    values: list[float]
    seeds: list[int]
    mean: float
    stderr: float | None
    mean_best_epoch: float | None

    def to_dict(self) -> dict:
        return {
            "values": self.values,
            "seeds": self.seeds,
            "mean": self.mean,
            "stderr": self.stderr,
            "mean_best_epoch": self.mean_best_epoch,
        }


def aggregate_runs(values, seeds=None, best_epochs=None) -> RunAggregate:
    """Mean, standard error (n >= 2) and mean best epoch across runs.

    ``values`` may be raw metric numbers or per-run result objects with
    ``metric_value`` / ``best_epoch`` / ``seed`` attributes.
    """
    values = list(values)
    if values and hasattr(values[0], "metric_value"):
        runs = values
        values = [r.metric_value for r in runs]
        if best_epochs is None:
            best_epochs = [r.best_epoch for r in runs]
        if seeds is None:
            seeds = [r.seed for r in runs]
    values = [float(v) for v in values]
    if not values:
        raise ContractError("aggregate_runs needs at least one run")
    n = len(values)
    mean = sum(values) / n
    stderr = None
    if n >= 2:
        var = sum((v - mean) ** 2 for v in values) / (n - 1)
        stderr = math.sqrt(var) / math.sqrt(n)
    mean_be = None
    if best_epochs is not None:
        bes = [float(b) for b in best_epochs]
        if len(bes) != n:
            raise ContractError("best_epochs length must match values")
        mean_be = sum(bes) / n
    return RunAggregate(values=values, seeds=list(seeds) if seeds else list(range(n)),
                        mean=mean, stderr=stderr, mean_best_epoch=mean_be)
