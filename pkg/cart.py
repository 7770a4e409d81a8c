"""CART regression trees with minimal cost-complexity pruning and CV tuning."""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import Config
from errors import EmptyTrainingSet, InvalidValue, MissingFeature

logger = logging.getLogger(__name__)

LEAF = -1


@dataclass(frozen=True)
class TreeNode:
    """A tree node; leaves have feature == LEAF.

    value is the mean of the training targets routed to the node and sse their
    squared error around it, so any node can be collapsed into a leaf.
    """

    feature: int = LEAF
    threshold: float = 0.0
    left: int = LEAF
    right: int = LEAF
    value: float = 0.0
    n_train: int = 0
    sse: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature == LEAF


@dataclass(frozen=True)
class RegressionTree:
    nodes: Tuple[TreeNode, ...]
    root: int = 0
    min_samples_leaf: int = 1
    alpha: float = 0.0
    fallback: bool = False

    @property
    def n_leaves(self) -> int:
        return sum(1 for node in self.nodes if node.is_leaf)

    @property
    def is_leaf_only(self) -> bool:
        return self.nodes[self.root].is_leaf

    def leaves(self) -> List[TreeNode]:
        return [node for node in self.nodes if node.is_leaf]


@dataclass(frozen=True)
class PruningPath:
    """Strictly increasing complexity parameters and their nested subtrees."""

    alphas: Tuple[float, ...]
    trees: Tuple[RegressionTree, ...]

    def subtree_at(self, alpha: float) -> RegressionTree:
        """The subtree that minimizes cost-complexity at the given alpha."""
        chosen = self.trees[0]
        for path_alpha, tree in zip(self.alphas, self.trees):
            if path_alpha <= alpha + 1e-12 * max(1.0, abs(alpha)):
                chosen = tree
            else:
                break
        return chosen


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


def _best_split(X: np.ndarray, y: np.ndarray, min_samples_leaf: int,
                parent_sse: float) -> Optional[Tuple[int, float]]:
    """Lowest-SSE split; ties go to the lowest feature index, then lowest threshold."""
    n = y.size
    if n < 2 * min_samples_leaf:
        return None

    tol = 1e-12 * max(1.0, parent_sse)
    best_sse = parent_sse
    best = None
    for feature in range(X.shape[1]):
        order = np.argsort(X[:, feature], kind='mergesort')
        xs = X[order, feature]
        ts = y[order]
        csum = np.cumsum(ts)
        csq = np.cumsum(ts * ts)

        # split after position i puts i + 1 rows on the left
        positions = np.arange(min_samples_leaf - 1, n - min_samples_leaf)
        positions = positions[xs[positions] != xs[positions + 1]]
        if positions.size == 0:
            continue

        n_left = positions + 1.0
        n_right = n - n_left
        sse_left = csq[positions] - csum[positions] ** 2 / n_left
        sse_right = (csq[-1] - csq[positions]) - (csum[-1] - csum[positions]) ** 2 / n_right
        totals = np.clip(sse_left, 0, None) + np.clip(sse_right, 0, None)

        first = int(np.flatnonzero(totals <= totals.min() + tol)[0])
        if totals[first] < best_sse - tol:
            best_sse = float(totals[first])
            i = positions[first]
            threshold = float((xs[i] + xs[i + 1]) / 2.0)
            # adjacent doubles have no midpoint between them
            if threshold <= xs[i]:
                threshold = float(xs[i + 1])
            best = (feature, threshold)
    return best


def grow_tree(X, y, min_samples_leaf: int = 1) -> RegressionTree:
    """Grow an unpruned CART regression tree on rows of X (samples x features)."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise EmptyTrainingSet("cannot grow a tree on zero rows")
    if X.shape[0] != y.size:
        raise InvalidValue(f"X has {X.shape[0]} rows but y has {y.size}")
    if np.isnan(X).any():
        raise InvalidValue("X contains missing values; impute before fitting")
    if min_samples_leaf < 1:
        raise InvalidValue(f"min_samples_leaf must be >= 1, got {min_samples_leaf}")

    nodes: List[Optional[TreeNode]] = []

    def build(rows: np.ndarray) -> int:
        index = len(nodes)
        nodes.append(None)
        targets = y[rows]
        value = float(np.mean(targets))
        sse = float(np.sum((targets - value) ** 2))

        split = _best_split(X[rows], targets, min_samples_leaf, sse)
        if split is None:
            nodes[index] = TreeNode(value=value, n_train=int(rows.size), sse=sse)
            return index

        feature, threshold = split
        goes_right = X[rows, feature] >= threshold
        left = build(rows[~goes_right])
        right = build(rows[goes_right])
        nodes[index] = TreeNode(feature, threshold, left, right, value, int(rows.size), sse)
        return index

    build(np.arange(y.size))
    return RegressionTree(nodes=tuple(nodes), min_samples_leaf=min_samples_leaf)


def _subtree_stats(tree: RegressionTree) -> Dict[int, Tuple[float, int]]:
    """Per node: (SSE summed over the leaves below it, number of those leaves)."""
    stats: Dict[int, Tuple[float, int]] = {}

    def visit(index: int) -> Tuple[float, int]:
        node = tree.nodes[index]
        if node.is_leaf:
            stats[index] = (node.sse, 1)
        else:
            left_sse, left_leaves = visit(node.left)
            right_sse, right_leaves = visit(node.right)
            stats[index] = (left_sse + right_sse, left_leaves + right_leaves)
        return stats[index]

    visit(tree.root)
    return stats


def _collapse(tree: RegressionTree, collapsed: set, alpha: float) -> RegressionTree:
    """Copy of the tree with the given internal nodes turned into leaves, reindexed."""
    nodes: List[Optional[TreeNode]] = []

    def copy(index: int) -> int:
        node = tree.nodes[index]
        new_index = len(nodes)
        nodes.append(None)
        if node.is_leaf or index in collapsed:
            nodes[new_index] = TreeNode(value=node.value, n_train=node.n_train, sse=node.sse)
        else:
            left = copy(node.left)
            right = copy(node.right)
            nodes[new_index] = replace(node, left=left, right=right)
        return new_index

    copy(tree.root)
    return replace(tree, nodes=tuple(nodes), root=0, alpha=alpha)


def prune_path(tree: RegressionTree) -> PruningPath:
    """Weakest-link pruning sequence, from the full tree (alpha 0) to the root leaf."""
    alphas = [0.0]
    trees = [replace(tree, alpha=0.0)]
    current = trees[0]

    while not current.is_leaf_only:
        stats = _subtree_stats(current)
        strengths = {}
        for index, node in enumerate(current.nodes):
            if node.is_leaf or index not in stats:
                continue
            leaf_sse, n_leaves = stats[index]
            strengths[index] = (node.sse - leaf_sse) / (n_leaves - 1)

        weakest = min(strengths.values())
        tol = 1e-12 * max(1.0, abs(weakest))
        collapsed = {index for index, strength in strengths.items() if strength <= weakest + tol}
        alpha = max(weakest, alphas[-1])
        current = _collapse(current, collapsed, alpha)

        if len(alphas) > 1 and alpha <= alphas[-1] + tol:
            trees[-1] = replace(current, alpha=alphas[-1])
        else:
            alphas.append(alpha)
            trees.append(current)

    return PruningPath(alphas=tuple(alphas), trees=tuple(trees))


def _mean_leaf(y: np.ndarray, fallback: bool) -> RegressionTree:
    value = float(np.mean(y))
    sse = float(np.sum((y - value) ** 2))
    return RegressionTree(nodes=(TreeNode(value=value, n_train=int(y.size), sse=sse),), fallback=fallback)


def tune_and_fit(X, y, seed: int, leaf_grid: Optional[Sequence[int]] = None,
                 n_folds: Optional[int] = None) -> RegressionTree:
    """Pick min_samples_leaf and alpha by k-fold CV on MSE, then refit on all rows.

    Ties go to the larger alpha, then the larger min_samples_leaf. With fewer rows
    than folds the result is a mean leaf with fallback=True.
    """
    leaf_grid = sorted(leaf_grid or Config.MIN_SAMPLES_LEAF)
    n_folds = n_folds or Config.CV_FOLDS
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        raise EmptyTrainingSet("cannot tune a tree on zero rows")
    if n < n_folds:
        logger.debug(f"Only {n} rows for {n_folds}-fold CV; using a mean leaf")
        return _mean_leaf(y, fallback=True)

    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(n), n_folds)
    trains = [np.setdiff1d(np.arange(n), fold, assume_unique=True) for fold in folds]

    candidates = []  # (mse, alpha, min_samples_leaf, tree)
    for min_samples_leaf in leaf_grid:
        full_path = prune_path(grow_tree(X, y, min_samples_leaf))
        fold_paths = [prune_path(grow_tree(X[train], y[train], min_samples_leaf)) for train in trains]
        for alpha, tree in zip(full_path.alphas, full_path.trees):
            fold_errors = [
                float(np.mean((predict_many(path.subtree_at(alpha), X[fold]) - y[fold]) ** 2))
                for fold, path in zip(folds, fold_paths)
            ]
            candidates.append((float(np.mean(fold_errors)), alpha, min_samples_leaf, tree))

    best_mse = min(candidate[0] for candidate in candidates)
    tol = 1e-12 * max(1.0, best_mse)
    tied = [candidate for candidate in candidates if candidate[0] <= best_mse + tol]
    mse, alpha, min_samples_leaf, tree = max(tied, key=lambda candidate: (candidate[1], candidate[2]))

    logger.debug(f"CV chose min_samples_leaf={min_samples_leaf}, alpha={alpha:.6g} (mse={mse:.6g})")
    return replace(tree, min_samples_leaf=min_samples_leaf, alpha=alpha)


def predict(tree: RegressionTree, x) -> float:
    """Value of the leaf reached by x; a row goes right iff x[feature] >= threshold."""
    x = np.asarray(x, dtype=float).ravel()
    node = tree.nodes[tree.root]
    while not node.is_leaf:
        if node.feature >= x.size or np.isnan(x[node.feature]):
            raise MissingFeature(f"feature {node.feature} is required by the tree")
        node = tree.nodes[node.right] if x[node.feature] >= node.threshold else tree.nodes[node.left]
    return node.value


def predict_many(tree: RegressionTree, X) -> np.ndarray:
    X = _as_matrix(X)
    return np.array([predict(tree, row) for row in X], dtype=float)


def tree_to_dict(tree: RegressionTree) -> Dict:
    return {
        'root': tree.root,
        'min_samples_leaf': tree.min_samples_leaf,
        'alpha': tree.alpha,
        'fallback': tree.fallback,
        'nodes': [
            {
                'feature': node.feature,
                'threshold': node.threshold,
                'left': node.left,
                'right': node.right,
                'value': node.value,
                'n_train': node.n_train,
                'sse': node.sse,
            }
            for node in tree.nodes
        ],
    }


def tree_from_dict(data: Mapping) -> RegressionTree:
    try:
        nodes = tuple(
            TreeNode(
                feature=int(node['feature']),
                threshold=float(node['threshold']),
                left=int(node['left']),
                right=int(node['right']),
                value=float(node['value']),
                n_train=int(node['n_train']),
                sse=float(node['sse']),
            )
            for node in data['nodes']
        )
        return RegressionTree(
            nodes=nodes,
            root=int(data['root']),
            min_samples_leaf=int(data['min_samples_leaf']),
            alpha=float(data['alpha']),
            fallback=bool(data['fallback']),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidValue(f"Malformed tree: {e}") from e


def describe_tree(tree: RegressionTree, feature_names: Optional[Sequence[str]] = None) -> str:
    """Render the tree as indented if/else rules."""
    lines = []

    def name(feature: int) -> str:
        if feature_names is not None and feature < len(feature_names):
            return feature_names[feature]
        return f"x[{feature}]"

    def visit(index: int, depth: int):
        node = tree.nodes[index]
        pad = '  ' * depth
        if node.is_leaf:
            lines.append(f"{pad}predict {node.value:.6g} (n={node.n_train})")
            return
        lines.append(f"{pad}if {name(node.feature)} < {node.threshold:.6g}:")
        visit(node.left, depth + 1)
        lines.append(f"{pad}else:")
        visit(node.right, depth + 1)

    visit(tree.root, 0)
    return '\n'.join(lines)
