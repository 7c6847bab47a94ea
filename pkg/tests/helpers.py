"""Shared builders and independent oracles for the test suite.

Every oracle here recomputes the expected result by a different route than
the library (explicit matrix products, brute-force reachability, raw JSON
walks), so tests never check an implementation against itself.
"""

from __future__ import annotations

import numpy as np

from statelens.feature_extract import (
    EdgeTuple,
    EdgeType,
    NodeTuple,
    label_set_from_rules,
)
from statelens.gcn_core import GcnParams, loss_and_grads
from statelens.graph_pipeline import ContractGraph, NormalizedGraph

LABEL_PAIRS = sorted(label_set_from_rules().entries, key=lambda p: (p[0], p[1].value))

CONTROL_TYPES = {"IfStatement", "ForStatement", "WhileStatement"}


def random_contract_graph(rng: np.random.Generator, n_min=3, n_max=10, edge_p=0.35) -> ContractGraph:
    """A structurally valid random graph over real (type, category) pairs."""
    n = int(rng.integers(n_min, n_max + 1))
    pairs = [LABEL_PAIRS[int(i)] for i in rng.integers(0, len(LABEL_PAIRS), size=n)]
    node_ids = [100 + i for i in range(n)]
    tuples = [
        NodeTuple(n_id=node_ids[i], n_name=f"v{i}", n_type=pairs[i][0], n_value="", category=pairs[i][1])
        for i in range(n)
    ]
    edges = []
    adjacency = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < edge_p:
                adjacency[i, j] = adjacency[j, i] = 1.0
                edges.append(EdgeTuple(e_s=node_ids[i], e_e=node_ids[j], e_t=EdgeType.AST_CHILD))
    return ContractGraph(
        node_ids=node_ids,
        tuples=tuples,
        spans=[(i * 10, 5, 0) for i in range(n)],
        adjacency=adjacency,
        edges=edges,
    )


def random_label_subset(rng: np.random.Generator):
    from statelens.feature_extract import LabelSet

    mask = rng.random(len(LABEL_PAIRS)) < 0.6
    return LabelSet(entries=frozenset(p for p, keep in zip(LABEL_PAIRS, mask) if keep))


def brute_force_normalize(adjacency: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Independent dense computation of (A+I, D^-1/2 (A+I) D^-1/2)."""
    n = adjacency.shape[0]
    a_hat = adjacency + np.identity(n)
    d_hat = np.diag(a_hat.sum(axis=1))
    d_inv_sqrt = np.diag(1.0 / np.sqrt(np.diag(d_hat)))
    return a_hat, d_inv_sqrt @ a_hat @ d_inv_sqrt


def brute_force_component(n: int, undirected_pairs: set[tuple[int, int]], start: int) -> set[int]:
    """Reachable set by explicit breadth-first expansion over an edge set."""
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for i in frontier:
            for a, b in undirected_pairs:
                other = b if a == i else a if b == i else None
                if other is not None and other not in seen:
                    seen.add(other)
                    nxt.append(other)
        frontier = nxt
    return seen


def random_normalized_graph(
    rng: np.random.Generator, n: int, dim: int, label: str | None = None
) -> NormalizedGraph:
    adjacency = (rng.random((n, n)) < 0.4).astype(float)
    adjacency = np.triu(adjacency, 1)
    adjacency = adjacency + adjacency.T
    a_hat, s_hat = brute_force_normalize(adjacency)
    return NormalizedGraph(
        features=rng.normal(size=(n, dim)),
        s_hat=s_hat,
        a_hat=a_hat,
        node_ids=list(range(n)),
        spans=[(0, 0, 0)] * n,
        label=label,
    )


def random_params(rng: np.random.Generator, dim: int, hidden: int, scale=1.0) -> GcnParams:
    return GcnParams(
        w1=rng.normal(scale=scale, size=(dim, hidden)),
        w2=rng.normal(scale=scale, size=(hidden, hidden)),
        w_out=rng.normal(scale=scale, size=(hidden, 2)),
        b_out=rng.normal(scale=scale, size=2),
    )


def finite_difference_grads(
    params: GcnParams, graph: NormalizedGraph, label: str, l2: float, step: float = 1e-5
) -> GcnParams:
    """Central differences through the full loss, one parameter at a time."""

    def loss_only() -> float:
        return loss_and_grads(params, graph, label, l2)[0]

    out = {}
    for name, arr in params.arrays().items():
        grad = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            original = arr[idx]
            arr[idx] = original + step
            plus = loss_only()
            arr[idx] = original - step
            minus = loss_only()
            arr[idx] = original
            grad[idx] = (plus - minus) / (2 * step)
        out[name] = grad
    return GcnParams(**out)


def max_relative_grad_error(analytic: GcnParams, numeric: GcnParams) -> float:
    worst = 0.0
    for name, a in analytic.arrays().items():
        b = numeric.arrays()[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


def brute_force_confusion(verdicts: list[str], labels: list[str]) -> tuple[int, int, int, int]:
    """Explicit per-pair counting, independent of Metrics.from_counts."""
    tp = sum(1 for v, l in zip(verdicts, labels) if v == "defective" and l == "defective")
    fp = sum(1 for v, l in zip(verdicts, labels) if v == "defective" and l == "clean")
    tn = sum(1 for v, l in zip(verdicts, labels) if v == "clean" and l == "clean")
    fn = sum(1 for v, l in zip(verdicts, labels) if v == "clean" and l == "defective")
    return tp, fp, tn, fn


# ---------------------------------------------------------------------------
# Independent walkers over raw AST JSON (never using feature_extract).
# ---------------------------------------------------------------------------


def walk_json_nodes(obj):
    """Yield every nodeType-bearing object in a raw compact-AST document."""
    if isinstance(obj, dict):
        if "nodeType" in obj:
            yield obj
        for value in obj.values():
            yield from walk_json_nodes(value)
    elif isinstance(obj, list):
        for item in obj:
            yield from walk_json_nodes(item)


def json_shape(obj) -> tuple:
    """Nested (nodeType, children-shapes) signature, ignoring names/ids/values."""
    children = []
    for key, value in obj.items():
        if key in ("id", "nodeType", "name", "src"):
            continue
        stack = [value]
        while stack:
            item = stack.pop(0)
            if isinstance(item, dict):
                if "nodeType" in item:
                    children.append(json_shape(item))
                else:
                    stack = list(item.values()) + stack
            elif isinstance(item, list):
                stack = list(item) + stack
    return (obj["nodeType"], tuple(children))


def is_defective_shaped(doc: dict) -> bool:
    """True when some public function writes contract state with no
    enclosing control statement. Pure JSON walk with its own parent logic;
    tolerates both raw documents (bool/int scalars) and reserialized trees
    (stringified scalars)."""

    def as_int(value):
        try:
            return int(value)
        except (TypeError, ValueError):
            return None

    state_ids = {
        node["id"]
        for node in walk_json_nodes(doc)
        if node["nodeType"] == "VariableDeclaration"
        and node.get("stateVariable") in (True, "true")
    }

    def assignment_writes_state(assignment: dict) -> bool:
        lhs = assignment.get("leftHandSide", {})
        for node in walk_json_nodes(lhs):
            if node["nodeType"] == "Identifier" and as_int(node.get("referencedDeclaration")) in state_ids:
                return True
        return False

    def scan(node, inside_control: bool) -> bool:
        """Any unguarded state write in this subtree?"""
        found = False
        if isinstance(node, dict):
            if node.get("nodeType") == "Assignment" and not inside_control:
                if assignment_writes_state(node):
                    return True
            nested_control = inside_control or node.get("nodeType") in CONTROL_TYPES
            for value in node.values():
                found = found or scan(value, nested_control)
        elif isinstance(node, list):
            for item in node:
                found = found or scan(item, inside_control)
        return found

    for node in walk_json_nodes(doc):
        if node["nodeType"] == "FunctionDefinition" and node.get("visibility") == "public":
            if scan(node.get("body", {}), inside_control=False):
                return True
    return False
