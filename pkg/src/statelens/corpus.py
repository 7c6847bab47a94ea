"""Labeled corpora: manifest loading, deterministic splits, synthetic fixtures.

The synthetic generator emits compact AST JSON directly (no compiler
needed). Each pair shares one structural skeleton: the defective side has
a public function that writes contract state with no guard at all, the
clean side wraps the same write in a caller-equals-owner check. Names are
randomized per contract so the classifier cannot key on strings.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence, TypeVar

from .ast_ingest import AstTree, parse_ast_json
from .errors import (
    BadLabelError,
    MissingFileError,
    SchemaViolationError,
    TooSmallError,
)

LABELS = ("defective", "clean")

T = TypeVar("T")


@dataclass
class LabeledContract:
    path: str
    tree: AstTree
    label: str
    provenance: str  # "synthetic" or "external"


def load_corpus(manifest_path: str | Path) -> list[LabeledContract]:
    """Read a JSON-lines manifest of {ast_path, label} records.

    ast_path is resolved relative to the manifest. Raises MissingFileError,
    BadLabelError (naming the line), or SchemaViolationError for malformed
    records; AST parse errors propagate with the record line attached.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingFileError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    contracts: list[LabeledContract] = []
    for lineno, raw in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolationError(
                f"{manifest_path}:{lineno}: manifest line is not JSON: {exc.msg}"
            ) from None
        if not isinstance(record, dict) or "ast_path" not in record or "label" not in record:
            raise SchemaViolationError(
                f"{manifest_path}:{lineno}: record needs ast_path and label fields"
            )
        label = record["label"]
        if label not in LABELS:
            raise BadLabelError(
                f"{manifest_path}:{lineno}: label must be one of {LABELS}, got {label!r}"
            )
        ast_path = Path(record["ast_path"])
        if not ast_path.is_absolute():
            ast_path = base / ast_path
        if not ast_path.exists():
            raise MissingFileError(f"{manifest_path}:{lineno}: AST file not found: {ast_path}")
        tree = parse_ast_json(ast_path.read_text(encoding="utf-8"), source_unit=str(ast_path))
        contracts.append(
            LabeledContract(path=str(ast_path), tree=tree, label=label, provenance="external")
        )
    return contracts


def split_items(
    items: Sequence[T],
    labels: Sequence[str] | None,
    train_fraction: float = 0.9,
    seed: int = 42,
) -> tuple[list[T], list[T]]:
    """Seeded shuffle then prefix split, stratified by label when possible.

    Returns a partition (train, test); both sides are non-empty whenever
    len(items) >= 2.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(items)
    if n < 2:
        raise TooSmallError(f"need at least 2 items to split, got {n}")
    if labels is not None and len(labels) != n:
        raise ValueError("labels must align with items")

    order = list(range(n))
    random.Random(seed).shuffle(order)

    if labels is not None and len(set(labels)) > 1:
        per_class = {label: sum(1 for l in labels if l == label) for label in set(labels)}
        quota = {label: round(train_fraction * count) for label, count in per_class.items()}
        taken = {label: 0 for label in per_class}
        train_idx, test_idx = [], []
        for i in order:
            label = labels[i]
            if taken[label] < quota[label]:
                taken[label] += 1
                train_idx.append(i)
            else:
                test_idx.append(i)
    else:
        cut = round(train_fraction * n)
        train_idx, test_idx = order[:cut], order[cut:]

    if not test_idx:
        test_idx.append(train_idx.pop())
    if not train_idx:
        train_idx.append(test_idx.pop())
    return [items[i] for i in train_idx], [items[i] for i in test_idx]


def split(
    corpus: Sequence[LabeledContract], train_fraction: float = 0.9, seed: int = 42
) -> tuple[list[LabeledContract], list[LabeledContract]]:
    return split_items(corpus, [c.label for c in corpus], train_fraction, seed)


def kfold_indices(n: int, folds: int, seed: int = 42) -> list[tuple[list[int], list[int]]]:
    """Shuffled contiguous folds; each item lands in exactly one test fold."""
    if folds < 2 or folds > n:
        raise ValueError(f"folds must be in [2, {n}], got {folds}")
    order = list(range(n))
    random.Random(seed).shuffle(order)
    chunks = [order[i::folds] for i in range(folds)]
    out = []
    for k in range(folds):
        test = sorted(chunks[k])
        train = sorted(i for j, chunk in enumerate(chunks) if j != k for i in chunk)
        out.append((train, test))
    return out


# ---------------------------------------------------------------------------
# Synthetic fixture generator
# ---------------------------------------------------------------------------

_VERBS = ["set", "sync", "apply", "push", "commit", "update", "write", "move"]
_NOUNS = ["Balance", "Ledger", "Quota", "Stake", "Share", "Credit", "Supply", "Reserve"]
_CONTRACT_SUFFIX = ["Vault", "Pool", "Market", "Router", "Exchange", "Bridge"]
_BENIGN_KINDS = ["getter", "compute", "loop"]


class _IdGen:
    def __init__(self):
        self.next_id = 0

    def __call__(self) -> int:
        self.next_id += 1
        return self.next_id


def _src(node_id: int) -> str:
    # Synthetic fixtures have no real source text; spans are distinct and valid.
    return f"{node_id * 16}:12:0"


def _node(node_id: int, node_type: str, name: str | None = None, **fields: Any) -> dict:
    obj: dict[str, Any] = {"id": node_id, "nodeType": node_type}
    if name is not None:
        obj["name"] = name
    obj["src"] = _src(node_id)
    obj.update(fields)
    return obj


class _Names:
    """Per-contract identifier pool drawn from one RNG, collision free."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()

    def fresh(self, lower: bool = True) -> str:
        while True:
            name = self.rng.choice(_VERBS) + self.rng.choice(_NOUNS)
            if lower:
                name = name[0].lower() + name[1:]
            if name not in self.used:
                self.used.add(name)
                return name

    def contract(self) -> str:
        return self.rng.choice(_NOUNS) + self.rng.choice(_CONTRACT_SUFFIX)


def _var_decl(gen: _IdGen, name: str, type_string: str, state: bool, value: dict | None = None) -> dict:
    fields: dict[str, Any] = {
        "stateVariable": state,
        "visibility": "internal",
        "typeDescriptions": {"typeString": type_string},
    }
    if value is not None:
        fields["value"] = value
    return _node(gen(), "VariableDeclaration", name, **fields)


def _identifier(gen: _IdGen, name: str, decl_id: int) -> dict:
    return _node(gen(), "Identifier", name, referencedDeclaration=decl_id)


def _literal(gen: _IdGen, value: str) -> dict:
    return _node(gen(), "Literal", kind="number", value=value)


def _binary(gen: _IdGen, operator: str, left: dict, right: dict) -> dict:
    return _node(
        gen(), "BinaryOperation", operator=operator, leftExpression=left, rightExpression=right
    )


@dataclass(frozen=True)
class _PairSpec:
    """Structure choices shared by both halves of a minimal pair."""

    extra_state_vars: tuple[str, ...]  # initializer values, e.g. ("5", "120")
    benign_kinds: tuple[str, ...]
    benign_targets: tuple[int, ...]  # index into [owner, *extras] per benign fn


def _draw_spec(rng: random.Random) -> _PairSpec:
    extras = tuple(str(rng.randint(1, 900)) for _ in range(rng.randint(0, 2)))
    kinds = tuple(rng.choice(_BENIGN_KINDS) for _ in range(rng.randint(0, 2)))
    targets = tuple(rng.randrange(1 + len(extras)) for _ in kinds)
    return _PairSpec(extra_state_vars=extras, benign_kinds=kinds, benign_targets=targets)


def _benign_function(gen: _IdGen, names: _Names, kind: str, state_var: dict) -> dict:
    if kind == "getter":
        ret_param = _var_decl(gen, "", "uint256", state=False)
        body = _node(
            gen(),
            "Return",
            expression=_identifier(gen, state_var["name"], state_var["id"]),
        )
        return _node(
            gen(),
            "FunctionDefinition",
            names.fresh(),
            visibility="public",
            stateMutability="view",
            parameters=_node(gen(), "ParameterList", parameters=[]),
            returnParameters=_node(gen(), "ParameterList", parameters=[ret_param]),
            body=_node(gen(), "Block", statements=[body]),
        )
    if kind == "compute":
        a = _var_decl(gen, names.fresh(), "uint256", state=False)
        b = _var_decl(gen, names.fresh(), "uint256", state=False)
        expr = _binary(
            gen, "+", _identifier(gen, a["name"], a["id"]), _identifier(gen, b["name"], b["id"])
        )
        return _node(
            gen(),
            "FunctionDefinition",
            names.fresh(),
            visibility="internal",
            stateMutability="pure",
            parameters=_node(gen(), "ParameterList", parameters=[a, b]),
            returnParameters=_node(
                gen(), "ParameterList", parameters=[_var_decl(gen, "", "uint256", state=False)]
            ),
            body=_node(gen(), "Block", statements=[_node(gen(), "Return", expression=expr)]),
        )
    # "loop": counts up to a parameter inside a while loop; writes only locals.
    limit = _var_decl(gen, names.fresh(), "uint256", state=False)
    counter = _var_decl(gen, names.fresh(), "uint256", state=False)
    decl_stmt = _node(
        gen(),
        "VariableDeclarationStatement",
        declarations=[counter],
        initialValue=_literal(gen, "0"),
    )
    step = _node(
        gen(),
        "ExpressionStatement",
        expression=_node(
            gen(),
            "Assignment",
            operator="=",
            leftHandSide=_identifier(gen, counter["name"], counter["id"]),
            rightHandSide=_binary(
                gen,
                "+",
                _identifier(gen, counter["name"], counter["id"]),
                _literal(gen, "1"),
            ),
        ),
    )
    loop = _node(
        gen(),
        "WhileStatement",
        condition=_binary(
            gen,
            "<",
            _identifier(gen, counter["name"], counter["id"]),
            _identifier(gen, limit["name"], limit["id"]),
        ),
        body=_node(gen(), "Block", statements=[step]),
    )
    ret = _node(gen(), "Return", expression=_identifier(gen, counter["name"], counter["id"]))
    return _node(
        gen(),
        "FunctionDefinition",
        names.fresh(),
        visibility="internal",
        stateMutability="pure",
        parameters=_node(gen(), "ParameterList", parameters=[limit]),
        returnParameters=_node(
            gen(), "ParameterList", parameters=[_var_decl(gen, "", "uint256", state=False)]
        ),
        body=_node(gen(), "Block", statements=[decl_stmt, loop, ret]),
    )


def _build_contract_doc(spec: _PairSpec, rng: random.Random, guarded: bool) -> dict:
    gen = _IdGen()
    names = _Names(rng)

    owner = _var_decl(gen, names.fresh(), "address", state=True)
    balances = _var_decl(gen, names.fresh(), "mapping(address => uint256)", state=True)
    extras = [
        _var_decl(gen, names.fresh(), "uint256", state=True, value=_literal(gen, init))
        for init in spec.extra_state_vars
    ]
    readable = [owner, *extras]
    benign = [
        _benign_function(gen, names, kind, readable[target])
        for kind, target in zip(spec.benign_kinds, spec.benign_targets)
    ]

    caller = _var_decl(gen, names.fresh(), "address", state=False)
    to = _var_decl(gen, names.fresh(), "address", state=False)
    amount = _var_decl(gen, names.fresh(), "uint256", state=False)
    write = _node(
        gen(),
        "ExpressionStatement",
        expression=_node(
            gen(),
            "Assignment",
            operator="=",
            leftHandSide=_node(
                gen(),
                "IndexAccess",
                baseExpression=_identifier(gen, balances["name"], balances["id"]),
                indexExpression=_identifier(gen, to["name"], to["id"]),
            ),
            rightHandSide=_identifier(gen, amount["name"], amount["id"]),
        ),
    )
    if guarded:
        statement = _node(
            gen(),
            "IfStatement",
            condition=_binary(
                gen,
                "==",
                _identifier(gen, caller["name"], caller["id"]),
                _identifier(gen, owner["name"], owner["id"]),
            ),
            trueBody=_node(gen(), "Block", statements=[write]),
        )
    else:
        statement = write
    target = _node(
        gen(),
        "FunctionDefinition",
        names.fresh(),
        visibility="public",
        stateMutability="nonpayable",
        parameters=_node(gen(), "ParameterList", parameters=[caller, to, amount]),
        returnParameters=_node(gen(), "ParameterList", parameters=[]),
        body=_node(gen(), "Block", statements=[statement]),
    )

    contract_name = names.contract()
    contract = _node(
        gen(),
        "ContractDefinition",
        contract_name,
        contractKind="contract",
        nodes=[owner, balances, *extras, *benign, target],
    )
    return _node(
        gen(),
        "SourceUnit",
        absolutePath=f"{contract_name}.sol",
        compilerVersion="0.8.19",
        nodes=[contract],
    )


def synth_generate(
    n_pairs: int, seed: int = 42, out_dir: str | Path | None = None
) -> list[LabeledContract]:
    """Emit n_pairs minimal pairs (defective, clean), deterministic per seed.

    When out_dir is given, writes one AST JSON per contract plus
    manifest.jsonl and a README describing each pair; returns the parsed
    contracts either way.
    """
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    contracts: list[LabeledContract] = []
    readme_lines = [
        "# Synthetic contract corpus",
        "",
        f"{n_pairs} minimal pairs generated from seed {seed}.",
        "Each defective contract has a public function writing contract state",
        "with no validation; its clean twin wraps the same write in a",
        "caller-equals-owner check. Names are randomized, structure is shared.",
        "",
    ]
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    manifest_lines = []
    for i in range(n_pairs):
        pair_rng = random.Random(seed * 1_000_003 + i)
        pair_spec = _draw_spec(pair_rng)
        for label, guarded in (("defective", False), ("clean", True)):
            doc = _build_contract_doc(pair_spec, pair_rng, guarded)
            file_name = f"pair{i:04d}_{label}.ast.json"
            text = json.dumps(doc, indent=1)
            path = str(out_path / file_name) if out_path is not None else file_name
            if out_path is not None:
                (out_path / file_name).write_text(text, encoding="utf-8")
            tree = parse_ast_json(text, source_unit=path)
            contracts.append(
                LabeledContract(path=path, tree=tree, label=label, provenance="synthetic")
            )
            manifest_lines.append(json.dumps({"ast_path": file_name, "label": label}))
        readme_lines.append(
            f"- pair{i:04d}: defective={_root_contract_name(contracts[-2].tree)} "
            f"clean={_root_contract_name(contracts[-1].tree)} "
            f"(state vars: {2 + len(pair_spec.extra_state_vars)}, "
            f"benign functions: {len(pair_spec.benign_kinds)})"
        )
    if out_path is not None:
        (out_path / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n", "utf-8")
        (out_path / "README.md").write_text("\n".join(readme_lines) + "\n", "utf-8")
    return contracts


def _root_contract_name(tree: AstTree) -> str:
    root = tree.nodes[tree.root_id]
    for child_id in root.children:
        child = tree.nodes[child_id]
        if child.node_type == "ContractDefinition":
            return child.name or "?"
    return "?"


def manifest_path_for(out_dir: str | Path) -> Path:
    return Path(out_dir) / "manifest.jsonl"
