import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from statelens.errors import EmptyCorpusError, EmptyGraphError, SchemaViolationError
from statelens.feature_extract import (
    DependencyCategory,
    EdgeTuple,
    EdgeType,
    LabelSet,
    NodeTuple,
    extract_node_tuples,
)
from statelens.graph_pipeline import (
    ContractGraph,
    build_contract_graph,
    build_graph,
    build_vocabulary,
    embed_nodes,
    graph_from_bytes,
    graph_from_json_dict,
    graph_to_bytes,
    graph_to_json_dict,
    load_vocabulary,
    normalize,
    optimize_graph,
    process_contract,
    save_vocabulary,
    token_for,
)

from helpers import (
    brute_force_component,
    brute_force_normalize,
    random_contract_graph,
    random_label_subset,
)


def _tuple(n_id, n_type="Literal", category=DependencyCategory.EXPRESSION, name="", value="1"):
    return NodeTuple(n_id=n_id, n_name=name, n_type=n_type, n_value=value, category=category)


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


def test_vocab_single_token_kind_has_size_two():
    docs = [[_tuple(1), _tuple(2)]]
    vocab = build_vocabulary(docs, dim=4, seed=0)
    assert len(vocab) == 2  # UNK + "Literal:number"
    assert vocab.unk_index == 0


def test_vocab_embedding_deterministic():
    docs = [[_tuple(1, "IfStatement", DependencyCategory.CONTROL)]]
    a = build_vocabulary(docs, dim=16, seed=9)
    b = build_vocabulary(docs, dim=16, seed=9)
    assert a.word2idx == b.word2idx
    assert np.array_equal(a.embedding, b.embedding)
    c = build_vocabulary(docs, dim=16, seed=10)
    assert not np.array_equal(a.embedding, c.embedding)


def test_vocab_order_independent():
    docs = [
        [_tuple(1, "IfStatement", DependencyCategory.CONTROL), _tuple(2)],
        [_tuple(3, "Assignment"), _tuple(4, "Assignment")],
    ]
    shuffled = [list(reversed(docs[1])), list(reversed(docs[0]))]
    assert build_vocabulary(docs, 4, 0).word2idx == build_vocabulary(shuffled, 4, 0).word2idx


def test_vocab_frequency_then_lexicographic():
    docs = [[_tuple(1, "Assignment"), _tuple(2, "Assignment"), _tuple(3, "IfStatement", DependencyCategory.CONTROL)]]
    vocab = build_vocabulary(docs, 4, 0)
    assert vocab.word2idx[token_for(docs[0][0])] == 1  # most frequent first
    assert vocab.word2idx[token_for(docs[0][2])] == 2


def test_vocab_empty_corpus():
    with pytest.raises(EmptyCorpusError):
        build_vocabulary([], 4, 0)


def test_vocab_embedding_bounds():
    docs = [[_tuple(i, "Identifier", DependencyCategory.DATA, name=f"n{i}") for i in range(50)]]
    vocab = build_vocabulary(docs, dim=9, seed=3)
    bound = 1 / np.sqrt(9)
    assert np.all(np.abs(vocab.embedding) <= bound)
    assert np.all(np.isfinite(vocab.embedding))


def test_token_literal_uses_type_tag():
    assert token_for(_tuple(1, value="5")) == "Literal:number"
    assert token_for(_tuple(1, value="0xff")) == "Literal:number"
    assert token_for(_tuple(1, value="true")) == "Literal:bool"
    assert token_for(_tuple(1, value="hello")) == "Literal:string"
    named = _tuple(1, "FunctionDefinition", DependencyCategory.FUNCTION, name="f")
    token = token_for(named)
    assert token.startswith("FunctionDefinition:")
    assert token == token_for(named)


def test_vocab_save_load_fingerprint(tmp_path):
    vocab = build_vocabulary([[_tuple(1), _tuple(2, "Assignment")]], dim=6, seed=1)
    path = tmp_path / "vocab.json"
    save_vocabulary(path, vocab)
    loaded = load_vocabulary(path)
    assert loaded.word2idx == vocab.word2idx
    assert np.array_equal(loaded.embedding, vocab.embedding)
    assert loaded.fingerprint() == vocab.fingerprint()


# ---------------------------------------------------------------------------
# build_graph
# ---------------------------------------------------------------------------


def _tiny_tree_and_graph():
    from statelens.ast_ingest import parse_ast_json

    doc = {
        "id": 1,
        "nodeType": "SourceUnit",
        "nodes": [
            {
                "id": 2,
                "nodeType": "ContractDefinition",
                "nodes": [{"id": 3, "nodeType": "VariableDeclaration", "name": "x"}],
            }
        ],
    }
    return parse_ast_json(json.dumps(doc))


def test_build_graph_single_node():
    tree = _tiny_tree_and_graph()
    tuples = extract_node_tuples(tree)
    graph = build_graph(tree, tuples, [])
    assert graph.n == 1
    assert graph.adjacency.tolist() == [[0.0]]


def test_build_graph_symmetrizes_edges():
    tree = _tiny_tree_and_graph()
    tuples = [
        _tuple(3, "VariableDeclaration", DependencyCategory.DECLARATION, name="x"),
        _tuple(2, "ContractDefinition", DependencyCategory.DECLARATION),
    ]
    edges = [EdgeTuple(e_s=3, e_e=2, e_t=EdgeType.AST_CHILD)]
    graph = build_graph(tree, tuples, edges)
    assert graph.adjacency.tolist() == [[0.0, 1.0], [1.0, 0.0]]
    assert graph.neighbor_map == {0: [1], 1: [0]}


def test_build_graph_empty_raises():
    tree = _tiny_tree_and_graph()
    with pytest.raises(EmptyGraphError):
        build_graph(tree, [], [])


def test_proxy_graph_adjacency_symmetric(proxy_tree):
    graph = build_contract_graph(proxy_tree)
    assert np.array_equal(graph.adjacency, graph.adjacency.T)
    assert graph.n == len(extract_node_tuples(proxy_tree))
    calls = [e for e in graph.edges if e.e_t is EdgeType.FUNC_CALL]
    i, j = graph.index_of(calls[0].e_s), graph.index_of(calls[0].e_e)
    assert graph.adjacency[i, j] == 1.0 and graph.adjacency[j, i] == 1.0


def test_neighbor_map_matches_adjacency():
    rng = np.random.default_rng(5)
    graph = random_contract_graph(rng)
    for i, neighbors in graph.neighbor_map.items():
        assert neighbors == [int(j) for j in np.flatnonzero(graph.adjacency[i])]


# ---------------------------------------------------------------------------
# optimize_graph
# ---------------------------------------------------------------------------


def _chain_graph() -> ContractGraph:
    """a -- b -- c with distinct types so pruning can target b."""
    tuples = [
        _tuple(1, "VariableDeclaration", DependencyCategory.DECLARATION, name="a"),
        _tuple(2, "Assignment", DependencyCategory.EXPRESSION, name="b"),
        _tuple(3, "IfStatement", DependencyCategory.CONTROL, name="c"),
    ]
    adjacency = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    edges = [
        EdgeTuple(e_s=1, e_e=2, e_t=EdgeType.AST_CHILD),
        EdgeTuple(e_s=2, e_e=3, e_t=EdgeType.AST_CHILD),
    ]
    return ContractGraph(
        node_ids=[1, 2, 3], tuples=tuples, spans=[(0, 1, 0)] * 3, adjacency=adjacency, edges=edges
    )


def test_optimize_identity_with_full_label_set():
    graph = _chain_graph()
    full = LabelSet(entries=frozenset((t.n_type, t.category) for t in graph.tuples))
    out = optimize_graph(graph, full)
    assert out.node_ids == graph.node_ids
    assert np.array_equal(out.adjacency, graph.adjacency)
    assert out.edges == graph.edges


def test_optimize_empty_label_set():
    with pytest.raises(EmptyGraphError):
        optimize_graph(_chain_graph(), LabelSet(entries=frozenset()))


def test_optimize_chain_keeps_first_component():
    graph = _chain_graph()
    without_b = LabelSet(
        entries=frozenset(
            {
                ("VariableDeclaration", DependencyCategory.DECLARATION),
                ("IfStatement", DependencyCategory.CONTROL),
            }
        )
    )
    out = optimize_graph(graph, without_b)
    assert out.node_ids == [1]  # {a, c} survive pruning; DFS keeps a's component
    assert out.adjacency.tolist() == [[0.0]]
    assert out.edges == []


def test_optimize_survivors_match_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(100):
        graph = random_contract_graph(rng)
        label_set = random_label_subset(rng)
        survivors = [
            i for i, t in enumerate(graph.tuples) if (t.n_type, t.category) in label_set.entries
        ]
        if not survivors:
            with pytest.raises(EmptyGraphError):
                optimize_graph(graph, label_set)
            continue
        out = optimize_graph(graph, label_set)
        pairs = {
            (i, int(j))
            for i in survivors
            for j in np.flatnonzero(graph.adjacency[i])
            if int(j) in survivors
        }
        expected = brute_force_component(graph.n, pairs, survivors[0]) & set(survivors)
        assert set(out.node_ids) == {graph.node_ids[i] for i in expected}


def test_optimize_idempotent():
    rng = np.random.default_rng(12)
    for _ in range(50):
        graph = random_contract_graph(rng)
        label_set = random_label_subset(rng)
        try:
            once = optimize_graph(graph, label_set)
        except EmptyGraphError:
            continue
        twice = optimize_graph(once, label_set)
        assert twice.node_ids == once.node_ids
        assert np.array_equal(twice.adjacency, once.adjacency)
        assert twice.edges == once.edges


def test_optimize_never_adds():
    rng = np.random.default_rng(13)
    for _ in range(50):
        graph = random_contract_graph(rng)
        label_set = random_label_subset(rng)
        try:
            out = optimize_graph(graph, label_set)
        except EmptyGraphError:
            continue
        assert set(out.node_ids) <= set(graph.node_ids)
        assert len(out.edges) <= len(graph.edges)
        assert out.adjacency.sum() <= graph.adjacency.sum()


# ---------------------------------------------------------------------------
# embed_nodes
# ---------------------------------------------------------------------------


def test_embed_unseen_tokens_hit_unk_row():
    graph = _chain_graph()
    vocab = build_vocabulary([[_tuple(9, "FunctionCall", DependencyCategory.FUNCTION)]], dim=5, seed=2)
    out = embed_nodes(graph, vocab)
    assert out.features.shape == (3, 5)
    for row in out.features:
        assert np.array_equal(row, vocab.embedding[0])


def test_embed_known_token_exact_row():
    graph = _chain_graph()
    vocab = build_vocabulary([graph.tuples], dim=5, seed=2)
    out = embed_nodes(graph, vocab)
    for i, t in enumerate(graph.tuples):
        assert np.array_equal(out.features[i], vocab.embedding[vocab.word2idx[token_for(t)]])
    assert np.all(np.isfinite(out.features))


# ---------------------------------------------------------------------------
# normalize
# ---------------------------------------------------------------------------


def _with_features(graph: ContractGraph) -> ContractGraph:
    vocab = build_vocabulary([graph.tuples], dim=4, seed=0)
    return embed_nodes(graph, vocab)


def test_normalize_single_node_identity():
    graph = _with_features(
        ContractGraph(
            node_ids=[1],
            tuples=[_tuple(1)],
            spans=[(0, 0, 0)],
            adjacency=np.zeros((1, 1)),
            edges=[],
        )
    )
    out = normalize(graph)
    assert out.a_hat.tolist() == [[1.0]]
    assert out.s_hat.tolist() == [[1.0]]


def test_normalize_two_node_half_matrix():
    graph = _with_features(
        ContractGraph(
            node_ids=[1, 2],
            tuples=[_tuple(1), _tuple(2, "Assignment")],
            spans=[(0, 0, 0)] * 2,
            adjacency=np.array([[0.0, 1.0], [1.0, 0.0]]),
            edges=[],
        )
    )
    out = normalize(graph)
    assert np.allclose(out.s_hat, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_normalize_matches_brute_force_and_spectrum():
    rng = np.random.default_rng(21)
    for _ in range(100):
        graph = _with_features(random_contract_graph(rng, n_min=1, n_max=8))
        out = normalize(graph)
        a_hat, s_expected = brute_force_normalize(graph.adjacency)
        assert np.array_equal(out.a_hat, a_hat)
        assert np.max(np.abs(out.s_hat - s_expected)) < 1e-12
        assert np.array_equal(out.s_hat, out.s_hat.T)
        assert np.all(out.s_hat >= 0) and np.all(out.s_hat <= 1)
        degrees = out.a_hat.sum(axis=1)
        assert np.allclose(np.diag(out.s_hat), 1.0 / degrees)
        eigenvalues = np.linalg.eigvalsh(out.s_hat)
        assert np.all(eigenvalues >= -1 - 1e-12) and np.all(eigenvalues <= 1 + 1e-12)


# ---------------------------------------------------------------------------
# full pipeline determinism and serialization
# ---------------------------------------------------------------------------


def test_pipeline_bit_identical(proxy_tree):
    vocab = build_vocabulary([extract_node_tuples(proxy_tree)], dim=8, seed=4)
    a = process_contract(proxy_tree, vocab, label="defective")
    b = process_contract(proxy_tree, vocab, label="defective")
    assert graph_to_bytes(a) == graph_to_bytes(b)


def test_graph_binary_roundtrip(proxy_tree):
    vocab = build_vocabulary([extract_node_tuples(proxy_tree)], dim=8, seed=4)
    graph = process_contract(proxy_tree, vocab, label="clean")
    back = graph_from_bytes(graph_to_bytes(graph))
    assert np.array_equal(back.features, graph.features)
    assert np.array_equal(back.s_hat, graph.s_hat)
    assert np.array_equal(back.a_hat, graph.a_hat)
    assert back.node_ids == graph.node_ids
    assert back.spans == graph.spans
    assert back.label == graph.label


def test_graph_json_roundtrip(proxy_tree):
    vocab = build_vocabulary([extract_node_tuples(proxy_tree)], dim=8, seed=4)
    graph = process_contract(proxy_tree, vocab)
    dumped = json.dumps(graph_to_json_dict(graph))
    back = graph_from_json_dict(json.loads(dumped))
    assert np.array_equal(back.features, graph.features)
    assert np.array_equal(back.s_hat, graph.s_hat)
    assert back.node_ids == graph.node_ids


def test_graph_bad_magic_rejected():
    with pytest.raises(SchemaViolationError):
        graph_from_bytes(b"NOPE" + b"\x00" * 64)


@given(st.integers(min_value=0, max_value=2**31))
@settings(max_examples=30)
def test_bytes_roundtrip_property(seed):
    rng = np.random.default_rng(seed)
    graph = _with_features(random_contract_graph(rng, n_min=1, n_max=6))
    graph.label = ["defective", "clean", None][seed % 3]
    normalized = normalize(graph)
    back = graph_from_bytes(graph_to_bytes(normalized))
    assert np.array_equal(back.s_hat, normalized.s_hat)
    assert back.label == normalized.label
