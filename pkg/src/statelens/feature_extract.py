"""Classify AST nodes into dependency categories and emit node/edge tuples.

Five node roles drive the contract graph: Declaration (inputs, outputs,
state variables), Expression (logic and computation), Control (execution
flow), Data (parts depending on other parts' state or output), and
Function (relationships between functions). The nodeType-to-category
mapping ships as an editable rule file so experiments can vary it; see
``data/default.rules`` for the format.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .ast_ingest import AstNode, AstTree, parent_map, subtree_preorder
from .errors import SchemaViolationError


class DependencyCategory(Enum):
    DECLARATION = "Declaration"
    EXPRESSION = "Expression"
    CONTROL = "Control"
    DATA = "Data"
    FUNCTION = "Function"


class EdgeType(Enum):
    AST_CHILD = "AstChild"
    CONTROL_FLOW = "ControlFlow"
    DATA_DEP = "DataDep"
    FUNC_CALL = "FuncCall"
    DECL_REF = "DeclRef"


# DataDep/FuncCall/DeclRef relate two distinct program points; AstChild and
# ControlFlow cannot self-loop by construction but are listed for clarity.
_NO_SELF_LOOP = frozenset({EdgeType.DATA_DEP, EdgeType.FUNC_CALL, EdgeType.DECL_REF})


@dataclass(frozen=True)
class NodeTuple:
    n_id: int
    n_name: str
    n_type: str
    n_value: str
    category: DependencyCategory


@dataclass(frozen=True)
class EdgeTuple:
    e_s: int
    e_e: int
    e_t: EdgeType

    def __post_init__(self):
        if self.e_t in _NO_SELF_LOOP and self.e_s == self.e_e:
            raise ValueError(f"{self.e_t.value} edge may not self-loop (node {self.e_s})")


@dataclass(frozen=True)
class Rule:
    pattern: str
    attrs: tuple[tuple[str, str], ...]
    category: DependencyCategory

    def matches(self, node_type: str, attributes: dict[str, str]) -> bool:
        if not fnmatch.fnmatchcase(node_type, self.pattern):
            return False
        return all(attributes.get(key) == value for key, value in self.attrs)


@dataclass(frozen=True)
class LabelSet:
    """(node_type, category) pairs a graph node must match to survive pruning."""

    entries: frozenset[tuple[str, DependencyCategory]]

    def __contains__(self, pair: tuple[str, DependencyCategory]) -> bool:
        return pair in self.entries


def parse_rules(text: str) -> list[Rule]:
    rules: list[Rule] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" not in line:
            raise SchemaViolationError(f"rules line {lineno}: missing '->' in {raw!r}")
        lhs, _, rhs = line.partition("->")
        parts = lhs.split()
        if not parts:
            raise SchemaViolationError(f"rules line {lineno}: missing node type pattern")
        pattern, predicates = parts[0], parts[1:]
        attrs = []
        for predicate in predicates:
            if "=" not in predicate:
                raise SchemaViolationError(
                    f"rules line {lineno}: predicate {predicate!r} is not key=value"
                )
            key, _, value = predicate.partition("=")
            attrs.append((key, value))
        try:
            category = DependencyCategory(rhs.strip())
        except ValueError:
            raise SchemaViolationError(
                f"rules line {lineno}: unknown category {rhs.strip()!r}"
            ) from None
        rules.append(Rule(pattern=pattern, attrs=tuple(attrs), category=category))
    return rules


def load_rules(path: str | Path) -> list[Rule]:
    return parse_rules(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=1)
def default_rules() -> tuple[Rule, ...]:
    text = resources.files("statelens").joinpath("data/default.rules").read_text("utf-8")
    return tuple(parse_rules(text))


def label_set_from_rules(rules=None) -> LabelSet:
    """All concrete (node_type, category) pairs the rule table can produce."""
    rules = default_rules() if rules is None else rules
    entries = {
        (rule.pattern, rule.category)
        for rule in rules
        if not any(ch in rule.pattern for ch in "*?[")
    }
    return LabelSet(entries=frozenset(entries))


def resolve_reference_kinds(tree: AstTree) -> dict[int, str]:
    """Map node id -> kind of its referencedDeclaration target, when in-tree."""
    kinds: dict[int, str] = {}
    for node in tree.nodes.values():
        target_id = referenced_declaration(node)
        if target_id is None:
            continue
        target = tree.nodes.get(target_id)
        if target is None:
            continue
        if target.node_type in ("VariableDeclaration", "StateVariableDeclaration"):
            kinds[node.id] = "variable"
        elif target.node_type == "FunctionDefinition":
            kinds[node.id] = "function"
        elif target.node_type == "ModifierDefinition":
            kinds[node.id] = "modifier"
        elif target.node_type == "EventDefinition":
            kinds[node.id] = "event"
        else:
            kinds[node.id] = "other"
    return kinds


def referenced_declaration(node: AstNode) -> int | None:
    raw = node.attributes.get("referencedDeclaration")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        return None


def categorize_node(node: AstNode, rules=None, ref_kind: str | None = None):
    """First-match category for one node, or None when no rule applies.

    Pure in (node_type, attributes): `ref_kind` joins the attribute view as
    a pseudo-attribute so callers resolving references stay deterministic.
    """
    rules = default_rules() if rules is None else rules
    attributes = node.attributes
    if ref_kind is not None:
        attributes = {**node.attributes, "ref_kind": ref_kind}
    for rule in rules:
        if rule.matches(node.node_type, attributes):
            return rule.category
    return None


def _node_value(tree: AstTree, node: AstNode) -> str:
    value = node.attributes.get("value")
    if value:
        return value
    # Initializer literal, e.g. the `5` in `uint x = 5;`.
    for child_id in node.children:
        child = tree.nodes[child_id]
        if child.node_type == "Literal":
            literal = child.attributes.get("value")
            if literal:
                return literal
    return ""


def extract_node_tuples(tree: AstTree, rules=None) -> list[NodeTuple]:
    """One tuple per categorized node, in DFS preorder."""
    rules = default_rules() if rules is None else rules
    ref_kinds = resolve_reference_kinds(tree)
    tuples: list[NodeTuple] = []
    for node in subtree_preorder(tree, tree.root_id):
        category = categorize_node(node, rules, ref_kind=ref_kinds.get(node.id))
        if category is None:
            continue
        tuples.append(
            NodeTuple(
                n_id=node.id,
                n_name=node.name or "",
                n_type=node.node_type,
                n_value=_node_value(tree, node),
                category=category,
            )
        )
    return tuples


def _first_categorized(tree: AstTree, root_id: int, categorized: set[int]) -> int | None:
    for node in subtree_preorder(tree, root_id):
        if node.id in categorized:
            return node.id
    return None


def _resolve_callee(tree: AstTree, call: AstNode) -> int | None:
    """The FunctionDefinition a FunctionCall invokes, when it lives in this tree."""
    for child_id in call.children:
        target_id = referenced_declaration(tree.nodes[child_id])
        if target_id is None:
            continue
        target = tree.nodes.get(target_id)
        if target is not None and target.node_type == "FunctionDefinition":
            return target_id
    return None


def extract_edges(tree: AstTree, tuples: list[NodeTuple]) -> list[EdgeTuple]:
    """Typed directed edges between categorized nodes, sorted by (e_s, e_e, e_t).

    AstChild edges project the tree onto categorized nodes: each node links
    to its nearest categorized ancestor, and nodes with none (top-level
    contract members, whose ancestors are all uncategorized scaffolding)
    link to the first categorized node in preorder. The projection is
    therefore always a single tree, so pruning uncategorized syntax never
    disconnects a function from its contract.
    """
    categorized = {t.n_id for t in tuples}
    category_of = {t.n_id: t.category for t in tuples}
    parents = parent_map(tree)
    first_id = tuples[0].n_id if tuples else None
    edges: set[tuple[int, int, EdgeType]] = set()

    for node_id in categorized:
        ancestor = parents.get(node_id)
        while ancestor is not None and ancestor not in categorized:
            ancestor = parents.get(ancestor)
        if ancestor is None and node_id != first_id:
            ancestor = first_id
        if ancestor is not None:
            edges.add((ancestor, node_id, EdgeType.AST_CHILD))

    for node_id in categorized:
        node = tree.nodes[node_id]

        target = referenced_declaration(node)
        if target is not None and target in categorized and target != node_id:
            edges.add((node_id, target, EdgeType.DECL_REF))

        if node.node_type == "FunctionCall":
            callee = _resolve_callee(tree, node)
            if callee is not None and callee in categorized and callee != node_id:
                edges.add((node_id, callee, EdgeType.FUNC_CALL))

        if category_of[node_id] is DependencyCategory.CONTROL:
            for child_id in node.children:
                first = _first_categorized(tree, child_id, categorized)
                if first is not None and first != node_id:
                    edges.add((node_id, first, EdgeType.CONTROL_FLOW))

        if node.node_type == "Assignment" and node.children:
            lhs, rhs_roots = node.children[0], node.children[1:]
            target = _first_categorized(tree, lhs, categorized)
            if target is not None:
                for rhs_root in rhs_roots:
                    for descendant in subtree_preorder(tree, rhs_root):
                        if (
                            descendant.node_type == "Identifier"
                            and descendant.id in categorized
                            and descendant.id != target
                        ):
                            edges.add((descendant.id, target, EdgeType.DATA_DEP))

    return [
        EdgeTuple(e_s=s, e_e=e, e_t=t)
        for s, e, t in sorted(edges, key=lambda item: (item[0], item[1], item[2].value))
    ]
