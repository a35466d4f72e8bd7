"""Classification and fairness metrics, plus exact mutual information on discrete tables.

The discrete part works on fully tabulated joints, so every quantity is an
exact finite sum. It is used to certify the identities the training
objective relies on, independently of any trained model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple, Sequence

import numpy as np

MASS_TOL = 1e-12


class MetricError(ValueError):
    """Inputs violate a metric's preconditions."""


# ---------------------------------------------------------------------------
# classification / fairness metrics


def confusion_matrix(pred: Sequence[int], true: Sequence[int], n_classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise MetricError(f"length mismatch: {pred.size} predictions vs {true.size} labels")
    for arr in (pred, true):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise MetricError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def micro_macro_f1(pred: Sequence[int], true: Sequence[int], n_classes: int) -> tuple[float, float]:
    """Micro and macro F1; a class whose F1 has a zero denominator scores 0."""
    cm = confusion_matrix(pred, true, n_classes)
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    total = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = float(2 * tp.sum() / total) if total > 0 else 0.0
    return micro, float(per_class.mean())


def acceptance_rates(pred: Sequence[int], groups: Sequence[int], n_classes: int, n_groups: int) -> np.ndarray:
    """``rates[g, c] = Pr(pred = c | group = g)``; every group must be non-empty."""
    pred = np.asarray(pred, dtype=np.int64)
    groups = np.asarray(groups, dtype=np.int64)
    if pred.shape != groups.shape:
        raise MetricError("predictions and group ids differ in length")
    if groups.size and (groups.min() < 0 or groups.max() >= n_groups):
        raise MetricError(f"group ids must lie in [0, {n_groups})")
    counts = np.zeros((n_groups, n_classes))
    np.add.at(counts, (groups, pred), 1)
    sizes = counts.sum(axis=1)
    empty = np.flatnonzero(sizes == 0)
    if empty.size:
        raise MetricError(f"empty demographic group(s): {empty.tolist()}")
    return counts / sizes[:, None]


def imparity(pred: Sequence[int], groups: Sequence[int], n_classes: int, n_groups: int) -> float:
    """Average |Pr(pred=c | g1) - Pr(pred=c | g2)| over classes and unordered group pairs."""
    if n_groups < 2:
        raise MetricError("imparity needs at least two groups")
    rates = acceptance_rates(pred, groups, n_classes, n_groups)
    i, j = np.triu_indices(n_groups, k=1)
    return float(np.abs(rates[i] - rates[j]).mean())


def reduction(imparity_vanilla: float, imparity_debiased: float) -> float:
    if imparity_vanilla <= 0:
        raise MetricError("reduction is undefined for a zero vanilla imparity")
    return 1.0 - imparity_debiased / imparity_vanilla


def eo_disparity(pred: Sequence[int], groups: Sequence[int], true: Sequence[int]) -> float:
    """Mean absolute pairwise gap of true-positive rates across groups (binary labels)."""
    pred = np.asarray(pred, dtype=np.int64)
    groups = np.asarray(groups, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if not (pred.shape == groups.shape == true.shape):
        raise MetricError("predictions, groups and labels differ in length")
    if np.any((true != 0) & (true != 1)):
        raise MetricError("equal opportunity is defined for binary labels only")
    ids = np.unique(groups)
    if ids.size < 2:
        raise MetricError("need at least two groups")
    tpr = []
    for g in ids:
        pos = (groups == g) & (true == 1)
        if not pos.any():
            raise MetricError(f"group {int(g)} has no positive samples")
        tpr.append(float((pred[pos] == 1).mean()))
    return float(np.mean([abs(a - b) for a, b in combinations(tpr, 2)]))


@dataclass
class MetricsReport:
    micro_f1: float
    macro_f1: float
    imparity: float
    acceptance: list[list[float]] = field(default_factory=list)
    reduction: float | None = None

    def to_dict(self) -> dict:
        return {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "imparity": self.imparity,
            "reduction": self.reduction,
            "acceptance": self.acceptance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(d["micro_f1"], d["macro_f1"], d["imparity"], d.get("acceptance", []), d.get("reduction"))


def evaluate_predictions(
    pred: Sequence[int],
    true: Sequence[int],
    groups: Sequence[int],
    n_classes: int,
    n_groups: int,
    imparity_vanilla: float | None = None,
) -> MetricsReport:
    micro, macro = micro_macro_f1(pred, true, n_classes)
    rates = acceptance_rates(pred, groups, n_classes, n_groups)
    imp = imparity(pred, groups, n_classes, n_groups)
    red = reduction(imparity_vanilla, imp) if imparity_vanilla is not None else None
    return MetricsReport(micro, macro, imp, rates.tolist(), red)


# ---------------------------------------------------------------------------
# exact discrete oracle


class DiscreteJoint:
    """A probability table over (outcome a, group b)."""

    def __init__(self, table):
        p = np.array(table, dtype=np.float64)
        if p.ndim != 2 or min(p.shape) < 1:
            raise MetricError(f"joint must be a non-empty 2-D table, got shape {p.shape}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise MetricError("joint has negative or non-finite entries")
        if abs(p.sum() - 1.0) > MASS_TOL:
            raise MetricError(f"joint mass is {p.sum()!r}, expected 1")
        self.p = p

    @property
    def shape(self) -> tuple[int, int]:
        return self.p.shape

    def marginal_outcome(self) -> np.ndarray:
        return self.p.sum(axis=1)

    def marginal_group(self) -> np.ndarray:
        return self.p.sum(axis=0)

    @property
    def T(self) -> "DiscreteJoint":
        return DiscreteJoint(self.p.T)

    def conditional_group(self) -> np.ndarray:
        """p(b | a); rows with zero outcome mass are left uniform."""
        pa = self.marginal_outcome()
        out = np.full(self.p.shape, 1.0 / self.p.shape[1])
        nz = pa > 0
        out[nz] = self.p[nz] / pa[nz, None]
        return out

    # plain-text format: "A B" header then A rows of B numbers
    def dumps(self) -> str:
        a, b = self.p.shape
        rows = [" ".join(repr(float(v)) for v in row) for row in self.p]
        return f"{a} {b}\n" + "\n".join(rows) + "\n"

    @classmethod
    def loads(cls, text: str) -> "DiscreteJoint":
        return cls(parse_table(text))


def parse_table(text: str) -> np.ndarray:
    tokens = text.split()
    if len(tokens) < 2:
        raise MetricError("table needs a dimensions header")
    try:
        a, b = int(tokens[0]), int(tokens[1])
        vals = [float(t) for t in tokens[2:]]
    except ValueError as exc:
        raise MetricError(f"malformed table: {exc}") from None
    if a < 1 or b < 1 or len(vals) != a * b:
        raise MetricError(f"header says {a}x{b} but {len(vals)} values follow")
    return np.array(vals).reshape(a, b)


def _plogp_ratio(p: np.ndarray, denom: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / denom[nz])))


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def brute_mi(joint: DiscreteJoint) -> float:
    """Mutual information in nats by direct summation over the table."""
    p = joint.p
    outer = np.outer(joint.marginal_outcome(), joint.marginal_group())
    mi = _plogp_ratio(p, outer)
    assert mi >= -1e-12, mi
    return max(mi, 0.0)


class Decomposition(NamedTuple):
    entropy_group: float
    term_loglik: float
    term_ratio: float
    total: float


def variational_decomposition(joint: DiscreteJoint, q) -> Decomposition:
    """Split I(a; b) into H(b) + E[log q(b|a)] + E[log p(a,b) / (p(a) q(b|a))].

    The decomposition holds for any conditional ``q`` that is positive on the
    support of the joint; the log q contributions cancel between the last two
    terms.
    """
    q = np.asarray(q, dtype=np.float64)
    p = joint.p
    if q.shape != p.shape:
        raise MetricError(f"q has shape {q.shape}, joint has {p.shape}")
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise MetricError("q has negative or non-finite entries")
    if np.any(np.abs(q.sum(axis=1) - 1.0) > 1e-9):
        raise MetricError("each row q(.|a) must sum to 1")
    support = p > 0
    if np.any(q[support] <= 0):
        bad = np.argwhere(support & (q <= 0))[0]
        raise MetricError(f"q(b={bad[1]} | a={bad[0]}) is zero where the joint has mass")
    h = entropy(joint.marginal_group())
    loglik = float(np.sum(p[support] * np.log(q[support])))
    denom = joint.marginal_outcome()[:, None] * q
    ratio = _plogp_ratio(p, denom)
    return Decomposition(h, loglik, ratio, h + loglik + ratio)


class SubsetMI(NamedTuple):
    mi_first: float
    mi_second: float
    mi_joint: float
    monotone: bool


def subset_mi_monotone(table3) -> SubsetMI:
    """MI of the outcome against each attribute alone and against the pair.

    ``table3[a, b1, b2]`` is a probability table. Projection onto a subset of
    attributes can never increase MI, so both single-attribute values must
    stay below the pair value.
    """
    p = np.asarray(table3, dtype=np.float64)
    if p.ndim != 3:
        raise MetricError("expected a 3-way table")
    a, b1, b2 = p.shape
    mi_joint = brute_mi(DiscreteJoint(p.reshape(a, b1 * b2)))
    mi_1 = brute_mi(DiscreteJoint(p.sum(axis=2)))
    mi_2 = brute_mi(DiscreteJoint(p.sum(axis=1)))
    ok = mi_1 <= mi_joint + 1e-12 and mi_2 <= mi_joint + 1e-12
    return SubsetMI(mi_1, mi_2, mi_joint, ok)


def empirical_joint(
    pred: Sequence[int],
    groups: Sequence[int],
    n_classes: int | None = None,
    n_groups: int | None = None,
) -> DiscreteJoint:
    pred = np.asarray(pred, dtype=np.int64)
    groups = np.asarray(groups, dtype=np.int64)
    if pred.shape != groups.shape:
        raise MetricError("predictions and group ids differ in length")
    if pred.size == 0:
        raise MetricError("no samples")
    n_classes = int(pred.max()) + 1 if n_classes is None else n_classes
    n_groups = int(groups.max()) + 1 if n_groups is None else n_groups
    counts = np.zeros((n_classes, n_groups))
    np.add.at(counts, (pred, groups), 1.0)
    return DiscreteJoint(counts / counts.sum())


# ---------------------------------------------------------------------------
# randomized suites (shared by the CLI oracle command and the tests)


def random_joint(rng: np.random.Generator, shape, sparsity: float = 0.0) -> np.ndarray:
    p = rng.dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)
    if sparsity:
        p = np.where(rng.random(shape) < sparsity, 0.0, p)
        if p.sum() == 0:
            p.flat[0] = 1.0
        p = p / p.sum()
    return p


def random_conditional(rng: np.random.Generator, a: int, b: int) -> np.ndarray:
    return rng.dirichlet(np.ones(b), size=a)


def decomposition_suite(n: int = 100, seed: int = 0, max_a: int = 4, max_b: int = 6) -> float:
    """Worst |decomposition total - brute MI| over random (joint, q) pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        a, b = int(rng.integers(1, max_a + 1)), int(rng.integers(1, max_b + 1))
        joint = DiscreteJoint(random_joint(rng, (a, b), sparsity=0.2))
        q = random_conditional(rng, a, b)
        d = variational_decomposition(joint, q)
        worst = max(worst, abs(d.total - brute_mi(joint)))
    return worst


def monotonicity_suite(n: int = 100, seed: int = 0, max_size: int = 3) -> float:
    """Largest violation max(I(a;b_i) - I(a;(b1,b2))) over random 3-way tables (<= 0 when monotone)."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(n):
        shape = tuple(int(v) for v in rng.integers(1, max_size + 1, size=3))
        r = subset_mi_monotone(random_joint(rng, shape, sparsity=0.2))
        worst = max(worst, r.mi_first - r.mi_joint, r.mi_second - r.mi_joint)
    return float(worst)


def independence_suite(n: int = 100, seed: int = 0, max_a: int = 4, max_b: int = 6) -> float:
    """Worst |MI| over random product joints."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        a, b = int(rng.integers(1, max_a + 1)), int(rng.integers(1, max_b + 1))
        pa, pb = rng.dirichlet(np.ones(a)), rng.dirichlet(np.ones(b))
        p = np.outer(pa, pb)
        worst = max(worst, abs(brute_mi(DiscreteJoint(p / p.sum()))))
    return worst
