"""Private decision trees and random forests.

``build_diffp_id3`` grows a greedy ID3 tree under a total budget ``epsilon``.
Each of the ``depth + 1`` levels spends ``epsilon / (2 (depth + 1))`` on a
noisy node size and the same again on either the split choice or the leaf
class counts. Nodes on the same level hold disjoint rows, so a level's cost is
paid once.

``build_random_forest`` draws every tree's shape without looking at the data
and spends the whole budget on leaf labels. Each tree sees a disjoint chunk of
the rows.

Split and leaf choices made with smooth noisy max score the indicator of the
current winner (top MaxOp attribute, top class). Its smooth sensitivity
decays with the gap between the winner and the runner-up. The
``sensitivity_rule`` argument picks how that decay is computed:

``"sound"``
    ``exp(-(D - 1) beta)`` where ``D`` counts the edits needed before the
    winner can change, including the lowest-index tie rule. This is exact for
    class counts and an upper bound for MaxOp.
``"published"``
    ``exp(-gap * beta)``. It matches ``"sound"`` when the runner-up has a
    higher index than the winner. Otherwise it is smaller by a factor
    ``e^beta``, which is not a valid bound.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from dpselect import analysis
from dpselect.mechanisms import (
    ExponentialMechanism,
    PermuteAndFlip,
    SmoothNoisyMax,
    UnsafeSmoothExponentialMechanism,
)
from dpselect.noise import PrivacyBudget, calibrate_laplace, calibrate_lln, calibrate_student_t
from dpselect.sensitivity import (
    SmoothSensitivityValue,
    UtilityModel,
    argmax_indicator_smooth_sensitivity,
)
from dpselect.tabular import Attribute, TabularDataset, discretize

SPLIT_MECHANISMS = ("EM-InfoGain", "PF-InfoGain", "SNM-MaxOp-Lap", "SNM-MaxOp-T", "SNM-MaxOp-LLN")
LEAF_MECHANISMS = ("EM", "PF", "SNM-Lap", "SNM-T", "SNM-LLN", "majority")
SENSITIVITY_RULES = ("sound", "published")
STOP_RATIO = math.sqrt(2.0) / 2.0


# scores and sensitivities ------------------------------------------------


def _contingency(data: TabularDataset, attribute: str) -> np.ndarray:
    attr = data.schema.attribute(attribute)
    if not attr.is_discrete:
        raise ValueError(f"attribute {attribute!r} must be discretized first")
    table = np.zeros((len(attr.domain), len(data.schema.labels)), dtype=np.int64)
    np.add.at(table, (data.columns[attribute], data.y), 1)
    return table


def max_op(data: TabularDataset, attribute: str) -> int:
    """Sum over the attribute's values of the largest class count."""
    if data.n_rows == 0:
        return 0
    return int(_contingency(data, attribute).max(axis=1).sum())


def maxop_scores(data: TabularDataset, attributes: Sequence[str]) -> np.ndarray:
    return np.array([max_op(data, a) for a in attributes], dtype=float)


def _indicator(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    out = np.zeros(s.size)
    out[int(np.argmax(s))] = 1.0
    return out


def utility_max_op(data: TabularDataset, attributes: Sequence[str]) -> np.ndarray:
    """1 for the (lowest-index) attribute with the largest MaxOp, 0 elsewhere."""
    return _indicator(maxop_scores(data, attributes))


def top_gap(scores) -> int:
    s = np.sort(np.asarray(scores, dtype=float))[::-1]
    if s.size < 2:
        return 0
    return int(round(s[0] - s[1]))


def maxop_gap(data: TabularDataset, attributes: Sequence[str]) -> int:
    """Largest MaxOp minus the second largest (0 on ties)."""
    if len(attributes) < 2:
        warnings.warn("gap needs two candidate attributes; treating it as 0", stacklevel=2)
        return 0
    return top_gap(maxop_scores(data, attributes))


def tree_smooth_sensitivity(k: int, beta: float) -> SmoothSensitivityValue:
    """``exp(-k beta)`` for a MaxOp gap of ``k``."""
    if k < 0 or beta < 0:
        raise ValueError("need k >= 0 and beta >= 0")
    return SmoothSensitivityValue(math.exp(-k * beta), beta, int(k))


def leaf_smooth_sensitivity(label_counts, beta: float) -> SmoothSensitivityValue:
    """``exp(-j beta)`` with ``j`` the gap between the top two class counts.

    A single label gives 1 by convention.
    """
    counts = np.asarray(label_counts)
    if counts.size == 0:
        raise ValueError("need at least one label")
    j = top_gap(counts) if counts.size > 1 else 0
    return SmoothSensitivityValue(math.exp(-j * beta), beta, j)


def winner_smooth_sensitivity(scores, beta: float, rule: str = "sound") -> SmoothSensitivityValue:
    """Smooth sensitivity of the winner indicator under either rule."""
    if rule == "sound":
        return argmax_indicator_smooth_sensitivity(scores, beta)
    if rule == "published":
        return tree_smooth_sensitivity(top_gap(scores), beta)
    raise ValueError(f"unknown sensitivity rule {rule!r}; expected one of {SENSITIVITY_RULES}")


def leaf_count_model(n_labels: int, rule: str = "sound") -> UtilityModel:
    """Winner indicator over class counts; records are label indices."""

    def evaluate(db):
        return _indicator(np.bincount(np.asarray(db, dtype=np.int64), minlength=n_labels))

    def smooth(db, beta):
        counts = np.bincount(np.asarray(db, dtype=np.int64), minlength=n_labels)
        if rule == "published":
            return leaf_smooth_sensitivity(counts, beta)
        return winner_smooth_sensitivity(counts, beta, "sound")

    return UtilityModel(tuple(range(n_labels)), evaluate, 1.0, False, smooth=smooth, name=f"leaf({rule})")


def maxop_utility_model(arities: Sequence[int], n_labels: int, rule: str = "sound") -> tuple[UtilityModel, tuple]:
    """Winner indicator over attributes scored by MaxOp, and its record universe.

    A record is a tuple of attribute codes followed by a label code.
    """
    arities = tuple(int(a) for a in arities)
    universe = tuple(itertools.product(*(range(a) for a in arities), range(n_labels)))

    def scores(db):
        out = []
        for i, arity in enumerate(arities):
            table = np.zeros((arity, n_labels), dtype=np.int64)
            for rec in db:
                table[rec[i], rec[-1]] += 1
            out.append(table.max(axis=1).sum())
        return np.asarray(out, dtype=float)

    def evaluate(db):
        return _indicator(scores(db))

    def smooth(db, beta):
        return winner_smooth_sensitivity(scores(db), beta, rule)

    model = UtilityModel(
        tuple(f"a{i}" for i in range(len(arities))), evaluate, 1.0, False, smooth=smooth, name=f"maxop({rule})"
    )
    return model, universe


def noisy_count(count: float, epsilon: float, rng) -> float:
    """``count`` plus Laplace noise of scale ``1/epsilon``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return float(count + rng.laplace(0.0, 1.0 / epsilon))


def info_gain_scores(data: TabularDataset, attributes: Sequence[str]) -> np.ndarray:
    """Negative conditional class entropy times the node size, in bits, per attribute."""
    out = []
    for a in attributes:
        table = _contingency(data, a).astype(float)
        rows = table.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(table > 0, table * np.log2(table / rows), 0.0)
        out.append(terms.sum())
    return np.asarray(out, dtype=float)


def info_gain_sensitivity(node_size: float) -> float:
    """``log2(N + 1) + 1/ln 2`` for a node of (noisy) size ``N``, floored at one row."""
    return math.log2(max(node_size, 1.0) + 1.0) + 1.0 / math.log(2.0)


# tree nodes -----------------------------------------------------------------


@dataclass
class TreeNode:
    attribute: Optional[str] = None
    threshold: Optional[float] = None
    children: list = field(default_factory=list)
    label: Optional[int] = None
    label_counts: Optional[np.ndarray] = None

    @property
    def is_leaf(self) -> bool:
        return self.attribute is None

    def leaves(self):
        if self.is_leaf:
            yield self
        else:
            for c in self.children:
                yield from c.leaves()

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(c.depth() for c in self.children)

    def to_dict(self, labels: bool = True) -> dict:
        if self.is_leaf:
            return {"leaf": True, "label": self.label} if labels else {"leaf": True}
        out = {"attribute": self.attribute, "children": [c.to_dict(labels) for c in self.children]}
        if self.threshold is not None:
            out["threshold"] = self.threshold
        return out

    def structure_json(self) -> str:
        """Canonical JSON of the shape only, for byte-level comparisons."""
        return json.dumps(self.to_dict(labels=False), sort_keys=True, separators=(",", ":"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(labels=True), sort_keys=True, separators=(",", ":"))

    def release(self) -> None:
        """Drop the raw leaf counts so only labels remain."""
        for leaf in self.leaves():
            leaf.label_counts = None


def _route(node: TreeNode, data: TabularDataset, idx: np.ndarray, visit) -> None:
    if node.is_leaf:
        visit(node, idx)
        return
    col = data.columns[node.attribute][idx]
    if node.threshold is not None:
        left = col <= node.threshold
        _route(node.children[0], data, idx[left], visit)
        _route(node.children[1], data, idx[~left], visit)
    else:
        for code, child in enumerate(node.children):
            _route(child, data, idx[col == code], visit)


def predict_tree(node: TreeNode, data: TabularDataset) -> np.ndarray:
    out = np.full(data.n_rows, -1, dtype=np.int64)

    def visit(leaf, idx):
        out[idx] = leaf.label

    _route(node, data, np.arange(data.n_rows), visit)
    return out


# privacy ledger -------------------------------------------------------------


@dataclass
class PrivacyLedger:
    """Budget bookkeeping in exact rational arithmetic."""

    total: Fraction
    entries: list = field(default_factory=list)

    def spend(self, level: int, operation: str, amount: Fraction) -> None:
        self.entries.append((level, operation, amount))

    def allocated(self, per_level: Fraction, levels: int) -> Fraction:
        return per_level * levels

    def consumed(self) -> Fraction:
        """Sequential over levels, parallel within a level (disjoint rows)."""
        by_level: dict = {}
        for level, op, amount in self.entries:
            key = (level, "count" if op == "count" else "choice")
            by_level[key] = max(by_level.get(key, Fraction(0)), amount)
        return sum(by_level.values(), Fraction(0))


# differentially private ID3 ------------------------------------------------


@dataclass
class DecisionTree:
    root: TreeNode
    schema_names: tuple
    bins: int
    ledger: Optional[PrivacyLedger] = None
    allocated: Optional[Fraction] = None

    def predict(self, data: TabularDataset) -> np.ndarray:
        return predict_tree(self.root, discretize(data, self.bins))

    def accuracy(self, data: TabularDataset) -> float:
        return float(np.mean(self.predict(data) == data.y)) if data.n_rows else float("nan")


def _split_noise(name: str, budget: PrivacyBudget, dof: int, sigma: float):
    if name == "SNM-MaxOp-Lap":
        return calibrate_laplace(budget)
    if name == "SNM-MaxOp-T":
        return calibrate_student_t(budget, dof)
    if name == "SNM-MaxOp-LLN":
        return calibrate_lln(budget, sigma)
    raise ValueError(name)


def build_diffp_id3(
    data: TabularDataset,
    attributes: Optional[Sequence[str]] = None,
    depth: int = 3,
    epsilon: float = 1.0,
    split_mechanism: str = "SNM-MaxOp-Lap",
    seed: int = 0,
    *,
    delta: float = 0.01,
    dof: int = 3,
    sigma: float = 1.0,
    bins: int = 8,
    sensitivity_rule: str = "sound",
) -> DecisionTree:
    """Greedy ID3 under ``(epsilon, delta)``; ``delta`` is split evenly across levels."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    if split_mechanism not in SPLIT_MECHANISMS:
        raise ValueError(f"unknown split mechanism {split_mechanism!r}; expected one of {SPLIT_MECHANISMS}")
    if sensitivity_rule not in SENSITIVITY_RULES:
        raise ValueError(f"unknown sensitivity rule {sensitivity_rule!r}")
    binned = discretize(data, bins)
    attrs = list(binned.schema.names if attributes is None else attributes)
    eps_level = Fraction(epsilon) / (2 * (depth + 1))
    ledger = PrivacyLedger(Fraction(epsilon))
    rng = np.random.default_rng(seed)
    n_labels = len(binned.schema.labels)
    t_size = max((len(binned.schema.attribute(a).domain) for a in attrs), default=1)
    eps_f = float(eps_level)
    level_budget = PrivacyBudget(eps_f, delta / (depth + 1)) if delta > 0 else None
    snm = None
    if split_mechanism.startswith("SNM"):
        if level_budget is None and not split_mechanism.endswith("-T"):
            raise ValueError("Laplace and LLN split selection need delta > 0")
        budget = level_budget or PrivacyBudget(eps_f)
        snm = SmoothNoisyMax(_split_noise(split_mechanism, budget, dof, sigma))

    def grow(idx: np.ndarray, remaining: list, d: int, level: int) -> TreeNode:
        node_data = binned.subset(idx)
        size = noisy_count(len(idx), eps_f, rng)
        ledger.spend(level, "count", eps_level)
        if not remaining or d == 0 or size / (t_size * n_labels) < STOP_RATIO:
            counts = node_data.class_counts()
            noisy = counts + rng.laplace(0.0, 1.0 / eps_f, counts.size)
            ledger.spend(level, "leaf", eps_level)
            return TreeNode(label=int(np.argmax(noisy)), label_counts=counts)
        if snm is not None:
            scores = maxop_scores(node_data, remaining)
            smooth = winner_smooth_sensitivity(scores, snm.beta, sensitivity_rule)
            choice = snm.select(_indicator(scores), rng, smooth).index
        else:
            scores = info_gain_scores(node_data, remaining)
            mech_cls = ExponentialMechanism if split_mechanism == "EM-InfoGain" else PermuteAndFlip
            choice = mech_cls(eps_f, info_gain_sensitivity(size)).select(scores, rng).index
        ledger.spend(level, "split", eps_level)
        attr = remaining[choice]
        rest = [a for a in remaining if a != attr]
        col = binned.columns[attr][idx]
        children = [
            grow(idx[col == code], rest, d - 1, level + 1)
            for code in range(len(binned.schema.attribute(attr).domain))
        ]
        return TreeNode(attribute=attr, children=children)

    root = grow(np.arange(binned.n_rows), attrs, depth, 0)
    return DecisionTree(root, tuple(attrs), bins, ledger, eps_level * 2 * (depth + 1))


def build_greedy_id3(
    data: TabularDataset,
    attributes: Optional[Sequence[str]] = None,
    depth: int = 3,
    criterion: str = "maxop",
    *,
    bins: int = 8,
) -> DecisionTree:
    """Noiseless counterpart of :func:`build_diffp_id3` with exact counts and argmax splits."""
    binned = discretize(data, bins)
    attrs = list(binned.schema.names if attributes is None else attributes)
    n_labels = len(binned.schema.labels)
    t_size = max((len(binned.schema.attribute(a).domain) for a in attrs), default=1)

    def grow(idx, remaining, d):
        node_data = binned.subset(idx)
        if not remaining or d == 0 or len(idx) / (t_size * n_labels) < STOP_RATIO:
            counts = node_data.class_counts()
            return TreeNode(label=int(np.argmax(counts)), label_counts=counts)
        if criterion == "maxop":
            scores = maxop_scores(node_data, remaining)
        elif criterion == "infogain":
            scores = info_gain_scores(node_data, remaining)
        else:
            raise ValueError(f"unknown criterion {criterion!r}")
        attr = remaining[int(np.argmax(scores))]
        rest = [a for a in remaining if a != attr]
        col = binned.columns[attr][idx]
        children = [grow(idx[col == c], rest, d - 1) for c in range(len(binned.schema.attribute(attr).domain))]
        return TreeNode(attribute=attr, children=children)

    return DecisionTree(grow(np.arange(binned.n_rows), attrs, depth), tuple(attrs), bins)


# random forest -------------------------------------------------------------


def random_tree_structure(attributes: Sequence[Attribute], depth: int, rng: np.random.Generator) -> TreeNode:
    """Shape of one random tree, drawn without looking at any data.

    A continuous attribute gets a binary split at a point drawn uniformly from
    the interval still open for it on the current path and stays available
    below. A discrete attribute gets one child per domain value and is used
    up.
    """

    def grow(avail: list, intervals: dict, d: int) -> TreeNode:
        if d >= depth or not avail:
            return TreeNode()
        attr = avail[int(rng.integers(len(avail)))]
        if attr.is_discrete:
            rest = [a for a in avail if a.name != attr.name]
            return TreeNode(attribute=attr.name, children=[grow(rest, intervals, d + 1) for _ in attr.domain])
        lo, hi = intervals[attr.name]
        point = float(rng.uniform(lo, hi))
        left = dict(intervals)
        left[attr.name] = (lo, point)
        right = dict(intervals)
        right[attr.name] = (point, hi)
        return TreeNode(attribute=attr.name, threshold=point, children=[grow(avail, left, d + 1), grow(avail, right, d + 1)])

    intervals = {a.name: tuple(a.bounds) for a in attributes if not a.is_discrete}
    return grow(list(attributes), intervals, 0)


def _leaf_mechanism(name: str, epsilon: float, delta: float, dof: int, sigma: float):
    budget = PrivacyBudget(epsilon, delta)
    if name == "EM":
        return ExponentialMechanism(epsilon, 1.0)
    if name == "PF":
        return PermuteAndFlip(epsilon, 1.0)
    if name == "SNM-Lap":
        return SmoothNoisyMax(calibrate_laplace(budget))
    if name == "SNM-T":
        return SmoothNoisyMax(calibrate_student_t(PrivacyBudget(epsilon), dof))
    if name == "SNM-LLN":
        return SmoothNoisyMax(calibrate_lln(budget, sigma))
    if name == "majority":
        return None
    raise ValueError(f"unknown leaf mechanism {name!r}; expected one of {LEAF_MECHANISMS}")


def set_majority_labels(
    tree: TreeNode,
    data: TabularDataset,
    leaf_mechanism: str,
    epsilon: float,
    rng: np.random.Generator,
    *,
    delta: float = 0.01,
    dof: int = 3,
    sigma: float = 1.0,
    sensitivity_rule: str = "sound",
) -> None:
    """Label every leaf of ``tree`` from the rows of ``data`` that reach it.

    EM and PF score classes by their counts. Smooth noisy max scores the
    indicator of the top class and scales noise by the leaf's smooth
    sensitivity. A leaf with no rows gets a uniformly random label.
    """
    n_labels = len(data.schema.labels)
    mech = _leaf_mechanism(leaf_mechanism, epsilon, delta, dof, sigma)
    leaves = []

    def visit(leaf, idx):
        leaves.append((leaf, idx))

    _route(tree, data, np.arange(data.n_rows), visit)
    for leaf, idx in leaves:
        counts = np.bincount(data.y[idx], minlength=n_labels)
        leaf.label_counts = counts
        if len(idx) == 0:
            leaf.label = int(rng.integers(n_labels))
        elif mech is None:
            leaf.label = int(np.argmax(counts))
        elif isinstance(mech, SmoothNoisyMax):
            smooth = winner_smooth_sensitivity(counts, mech.beta, sensitivity_rule)
            leaf.label = mech.select(_indicator(counts), rng, smooth).index
        else:
            leaf.label = mech.select(counts.astype(float), rng).index


@dataclass
class Forest:
    trees: list
    chunks: list
    leaf_mechanism: str
    epsilon: float
    seed: int

    def predict(self, data: TabularDataset) -> np.ndarray:
        # ties go to the lowest label code
        tally = np.zeros((data.n_rows, len(data.schema.labels)), dtype=np.int64)
        rows = np.arange(data.n_rows)
        for tree in self.trees:
            tally[rows, predict_tree(tree, data)] += 1
        return np.argmax(tally, axis=1)

    def accuracy(self, data: TabularDataset) -> float:
        return float(np.mean(self.predict(data) == data.y)) if data.n_rows else float("nan")

    def structure_json(self) -> str:
        return json.dumps([json.loads(t.structure_json()) for t in self.trees], separators=(",", ":"))

    def to_json(self) -> str:
        payload = {
            "leaf_mechanism": self.leaf_mechanism,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "trees": [t.to_dict(labels=True) for t in self.trees],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def build_random_forest(
    data: TabularDataset,
    n_trees: int,
    attributes: Optional[Sequence[str]] = None,
    depth: int = 5,
    epsilon: float = 1.0,
    leaf_mechanism: str = "SNM-Lap",
    seed: int = 0,
    *,
    delta: float = 0.01,
    dof: int = 3,
    sigma: float = 1.0,
    sensitivity_rule: str = "sound",
) -> Forest:
    """Random forest whose only data-dependent step is leaf labelling.

    Rows are shuffled with a seed-derived permutation and cut into
    ``n_trees`` disjoint chunks. Tree shapes come from their own seed stream,
    so they are the same for every epsilon and leaf mechanism.
    """
    if n_trees < 1:
        raise ValueError("need at least one tree")
    if n_trees > data.n_rows:
        raise ValueError(f"cannot split {data.n_rows} rows into {n_trees} chunks")
    names = data.schema.names if attributes is None else list(attributes)
    attrs = [data.schema.attribute(a) for a in names]
    split_ss, shape_ss, label_ss = np.random.SeedSequence(seed).spawn(3)
    order = np.random.default_rng(split_ss).permutation(data.n_rows)
    chunks = [np.sort(c) for c in np.array_split(order, n_trees)]
    shape_streams = shape_ss.spawn(n_trees)
    label_streams = label_ss.spawn(n_trees)
    trees = []
    for chunk, s_ss, l_ss in zip(chunks, shape_streams, label_streams):
        tree = random_tree_structure(attrs, depth, np.random.default_rng(s_ss))
        set_majority_labels(
            tree, data.subset(chunk), leaf_mechanism, epsilon, np.random.default_rng(l_ss),
            delta=delta, dof=dof, sigma=sigma, sensitivity_rule=sensitivity_rule,
        )
        trees.append(tree)
    return Forest(trees, chunks, leaf_mechanism, epsilon, seed)


# counterexample --------------------------------------------------------------


VOTING_X = (22, 8, 17, 4, 0)
VOTING_Y = (22, 8, 18, 4, 0)


def reproduce_voting_counterexample(epsilon: float = 0.5) -> dict:
    """Exponential weights scaled by smooth sensitivity leak more than ``e^epsilon`` on a voting pair.

    Candidate C3 (index 2) trails the leader by 5 votes; one extra C3 vote
    shrinks the gap to 4. With the indicator utility and smooth sensitivity
    ``exp(-gap * epsilon)``, the exact probabilities of C3 differ by more
    than a factor ``e^epsilon``.
    """
    mech = UnsafeSmoothExponentialMechanism(epsilon, acknowledge_unsafe=True, beta=epsilon)
    out = {"epsilon": epsilon, "votes_x": list(VOTING_X), "votes_y": list(VOTING_Y)}
    for tag, votes in (("x", VOTING_X), ("y", VOTING_Y)):
        s = leaf_smooth_sensitivity(votes, epsilon)
        pmf = mech.pmf(_indicator(votes), s)
        out[f"smooth_{tag}"] = s.value
        out[f"pmf_{tag}"] = [float(v) for v in pmf.probabilities]
        out[f"pr_{tag}_c3"] = float(pmf.probabilities[2])
    out["bound"] = math.exp(epsilon) * out["pr_x_c3"]
    out["violated"] = out["pr_y_c3"] > out["bound"]
    out["within_tolerance"] = abs(out["pr_x_c3"] - 0.04) <= 0.005 and abs(out["pr_y_c3"] - 0.10) <= 0.005
    out["reproduced"] = bool(out["violated"] and out["within_tolerance"])
    return out
