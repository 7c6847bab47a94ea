"""Load, validate, and index compiler-emitted AST JSON.

The input format is the compact AST a Solidity compiler emits per source
unit: a single JSON object in which every node carries an integer ``id``
and a string ``nodeType``, and children appear as nested objects (under
keys such as ``nodes``, ``body``, ``statements``, ``expression``, ...).
Parsing does not assume a fixed key set; any nested object bearing a
``nodeType`` becomes a child, in document order, so new compiler dialects
pass through unchanged. Node types outside the classification rules are
kept verbatim and simply ignored downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Iterator

from .errors import (
    EmptyDocumentError,
    MalformedJsonError,
    OutOfBoundsError,
    SchemaViolationError,
    UnknownNodeError,
)

# Keys handled structurally rather than stored as attributes.
_RESERVED_KEYS = ("id", "nodeType", "name", "src")


@dataclass(frozen=True)
class AstNode:
    id: int
    node_type: str
    name: str | None
    attributes: dict[str, str]
    src_span: tuple[int, int, int]  # (byte offset, byte length, file index)
    children: tuple[int, ...]


@dataclass(frozen=True)
class AstTree:
    root_id: int
    nodes: dict[int, AstNode]
    source_unit: str = "<memory>"
    compiler_version: str = ""

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> AstNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"no node with id {node_id}") from None


@dataclass(frozen=True)
class Diagnostic:
    """One invariant violation found by validate_tree."""

    code: str
    node_id: int | None
    message: str

    def to_json_dict(self) -> dict[str, Any]:
        return {"code": self.code, "node_id": self.node_id, "message": self.message}


def _format_scalar(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse_src(raw: Any, path: str) -> tuple[int, int, int]:
    if raw is None:
        return (0, 0, 0)
    if not isinstance(raw, str):
        raise SchemaViolationError(f"{path}: src must be a string, got {type(raw).__name__}")
    parts = raw.split(":")
    if len(parts) != 3:
        raise SchemaViolationError(f"{path}: src must look like 'offset:length:file', got {raw!r}")
    try:
        offset, length, file_index = (int(p) for p in parts)
    except ValueError:
        raise SchemaViolationError(f"{path}: non-integer src component in {raw!r}") from None
    if offset < 0 or length < 0:
        raise SchemaViolationError(f"{path}: negative src span {raw!r}")
    return (offset, length, file_index)


def _collect(value: Any, key: str, attrs: dict[str, str], child_objs: list[dict]) -> None:
    """Walk one JSON value, splitting it into scalar attributes and child nodes."""
    if isinstance(value, dict):
        if "nodeType" in value:
            child_objs.append(value)
        else:
            for sub_key, sub_value in value.items():
                _collect(sub_value, f"{key}.{sub_key}", attrs, child_objs)
    elif isinstance(value, list):
        scalars = []
        for item in value:
            if isinstance(item, (dict, list)):
                _collect(item, key, attrs, child_objs)
            elif item is not None:
                scalars.append(_format_scalar(item))
        if scalars:
            attrs[key] = " ".join(scalars)
    elif value is not None:
        attrs[key] = _format_scalar(value)


def parse_ast_json(document: str, source_unit: str = "<memory>") -> AstTree:
    """Parse one compact-AST JSON document into an AstTree.

    Every JSON object bearing a ``nodeType`` becomes exactly one node;
    nesting order decides the child order. Raises EmptyDocumentError,
    MalformedJsonError (with byte offset), or SchemaViolationError.
    """
    if not document or not document.strip():
        raise EmptyDocumentError(f"{source_unit}: empty document")
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise MalformedJsonError(
            f"{source_unit}: invalid JSON at byte {exc.pos}: {exc.msg}", offset=exc.pos
        ) from None
    if not isinstance(data, dict):
        raise SchemaViolationError(f"{source_unit}: document root must be a JSON object")
    if "nodeType" not in data:
        raise SchemaViolationError(f"{source_unit}: document root has no nodeType")

    nodes: dict[int, AstNode] = {}

    def build(obj: dict, path: str) -> int:
        node_type = obj.get("nodeType")
        if not isinstance(node_type, str) or not node_type:
            raise SchemaViolationError(f"{path}: nodeType must be a non-empty string")
        node_id = obj.get("id")
        if not isinstance(node_id, int) or isinstance(node_id, bool):
            raise SchemaViolationError(f"{path}: missing or non-integer id on {node_type}")
        if node_id in nodes:
            raise SchemaViolationError(f"{path}: duplicate id {node_id}")
        # Reserve the slot before recursing so nested duplicates are caught.
        nodes[node_id] = None  # type: ignore[assignment]

        raw_name = obj.get("name")
        name = raw_name if isinstance(raw_name, str) else None
        attrs: dict[str, str] = {}
        child_objs: list[dict] = []
        for key, value in obj.items():
            if key in _RESERVED_KEYS:
                continue
            _collect(value, key, attrs, child_objs)

        children = tuple(
            build(child, f"{path}/{node_type}[{node_id}]") for child in child_objs
        )
        nodes[node_id] = AstNode(
            id=node_id,
            node_type=node_type,
            name=name,
            attributes=attrs,
            src_span=_parse_src(obj.get("src"), path),
            children=children,
        )
        return node_id

    root_id = build(data, source_unit)
    compiler_version = data.get("compilerVersion", "")
    return AstTree(
        root_id=root_id,
        nodes=nodes,
        source_unit=source_unit,
        compiler_version=compiler_version if isinstance(compiler_version, str) else "",
    )


def preorder(tree: AstTree) -> Iterator[AstNode]:
    """DFS preorder over the tree, following recorded child order."""
    stack = [tree.root_id]
    while stack:
        node = tree.nodes.get(stack.pop())
        if node is None:
            continue
        yield node
        stack.extend(reversed(node.children))


def subtree_preorder(tree: AstTree, node_id: int) -> Iterator[AstNode]:
    stack = [node_id]
    while stack:
        node = tree.nodes.get(stack.pop())
        if node is None:
            continue
        yield node
        stack.extend(reversed(node.children))


def parent_map(tree: AstTree) -> dict[int, int]:
    parents: dict[int, int] = {}
    for node in tree.nodes.values():
        for child in node.children:
            parents[child] = node.id
    return parents


def validate_tree(tree: AstTree) -> list[Diagnostic]:
    """Check every tree invariant; returns one diagnostic per violation."""
    diags: list[Diagnostic] = []

    id_counts: dict[int, int] = {}
    for node in tree.nodes.values():
        id_counts[node.id] = id_counts.get(node.id, 0) + 1
    duplicated = {i for i, c in id_counts.items() if c > 1}
    for dup in sorted(duplicated):
        diags.append(Diagnostic("duplicate-id", dup, f"{id_counts[dup]} nodes share id {dup}"))
    for key, node in tree.nodes.items():
        if key != node.id and node.id not in duplicated:
            diags.append(
                Diagnostic("id-mismatch", key, f"node stored under key {key} carries id {node.id}")
            )

    if tree.root_id not in tree.nodes:
        diags.append(Diagnostic("missing-root", tree.root_id, "root id not present in nodes"))
        return diags

    parent_count: dict[int, int] = {}
    for node in tree.nodes.values():
        for child in node.children:
            if child not in tree.nodes:
                diags.append(
                    Diagnostic("dangling-child", node.id, f"child id {child} has no node")
                )
            else:
                parent_count[child] = parent_count.get(child, 0) + 1

    for node_id, count in sorted(parent_count.items()):
        if count > 1:
            diags.append(Diagnostic("multiple-parents", node_id, f"{count} parents"))
    if parent_count.get(tree.root_id):
        diags.append(Diagnostic("rooted-root", tree.root_id, "root appears as a child"))

    reachable: set[int] = set()
    stack = [tree.root_id]
    while stack:
        current = stack.pop()
        if current in reachable or current not in tree.nodes:
            continue
        reachable.add(current)
        stack.extend(tree.nodes[current].children)
    for node_id in sorted(set(tree.nodes) - reachable):
        diags.append(Diagnostic("unreachable-node", node_id, "not reachable from root"))

    for node in tree.nodes.values():
        offset, length, _ = node.src_span
        if offset < 0 or length < 0:
            diags.append(Diagnostic("negative-span", node.id, f"span {node.src_span}"))

    return diags


def span_to_source(tree: AstTree, node_id: int, source_text: str | bytes) -> str:
    """Return the exact byte slice the node's src span addresses."""
    node = tree.node(node_id)
    raw = source_text.encode("utf-8") if isinstance(source_text, str) else source_text
    offset, length, _ = node.src_span
    if offset + length > len(raw):
        raise OutOfBoundsError(
            f"span ({offset}, {length}) exceeds {len(raw)}-byte source of {tree.source_unit}"
        )
    return raw[offset : offset + length].decode("utf-8", errors="replace")


def tree_to_json(tree: AstTree, indent: int | None = None) -> str:
    """Serialize back to the compact schema; reparsing yields an isomorphic tree."""

    def encode(node_id: int) -> dict[str, Any]:
        node = tree.node(node_id)
        obj: dict[str, Any] = {"id": node.id, "nodeType": node.node_type}
        if node.name is not None:
            obj["name"] = node.name
        obj["src"] = ":".join(str(p) for p in node.src_span)
        for key, value in node.attributes.items():
            if key not in _RESERVED_KEYS and key != "nodes":
                obj[key] = value
        if node.children:
            obj["nodes"] = [encode(child) for child in node.children]
        return obj

    return json.dumps(encode(tree.root_id), indent=indent)
