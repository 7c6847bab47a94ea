"""Training, prediction, the five evaluation metrics, and defect reports."""

from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from . import gcn_core
from .corpus import split_items
from .errors import (
    BadLabelError,
    DegenerateCorpusError,
    EmptyCorpusError,
    EmptyTestSetError,
)
from .gcn_core import (
    DEFECTIVE,
    GcnParams,
    OptimizerState,
    TrainConfig,
    forward,
    init_params,
    loss_and_grads,
    optimizer_step,
)
from .graph_pipeline import NormalizedGraph

MAX_REPORT_NODES = 10


@dataclass
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    acc: float | None
    recall: float | None
    precision: float | None
    f1: float | None
    fpr: float | None

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "Metrics":
        def ratio(num: int, den: int) -> float | None:
            return num / den if den else None

        precision = ratio(tp, tp + fp)
        recall = ratio(tp, tp + fn)
        if precision is None or recall is None or precision + recall == 0:
            f1 = None
        else:
            f1 = 2 * precision * recall / (precision + recall)
        return cls(
            tp=tp,
            fp=fp,
            tn=tn,
            fn=fn,
            acc=ratio(tp + tn, tp + tn + fp + fn),
            recall=recall,
            precision=precision,
            f1=f1,
            fpr=ratio(fp, fp + tn),
        )

    def to_json_dict(self) -> dict[str, Any]:
        def show(value: float | None) -> float | str:
            return "undefined" if value is None else value

        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "acc": show(self.acc),
            "recall": show(self.recall),
            "precision": show(self.precision),
            "f1": show(self.f1),
            "fpr": show(self.fpr),
        }


@dataclass
class GcnModel:
    params: GcnParams
    vocab_fingerprint: str = ""

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def hidden(self) -> int:
        return self.params.hidden

    def fingerprint(self) -> str:
        return gcn_core.params_fingerprint(self.params)

    def save(self, path: str | Path) -> None:
        gcn_core.save_model(path, self.params, self.vocab_fingerprint)

    @classmethod
    def load(cls, path: str | Path) -> "GcnModel":
        params, fingerprint = gcn_core.load_model(path)
        return cls(params=params, vocab_fingerprint=fingerprint)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    held_out: Metrics

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "held_out": self.held_out.to_json_dict(),
        }


def predict(
    model: GcnModel, graph: NormalizedGraph, threshold: float = 0.5
) -> tuple[str, float]:
    """Per-contract verdict; probability at exactly the threshold counts as
    defective (the conservative call for an auditor)."""
    probability = forward(model.params, graph).probability
    verdict = "defective" if probability >= threshold else "clean"
    return verdict, probability


def evaluate(
    model: GcnModel, testset: Sequence[NormalizedGraph], threshold: float = 0.5
) -> Metrics:
    if not testset:
        raise EmptyTestSetError("evaluation needs at least one labeled graph")
    tp = fp = tn = fn = 0
    for graph in testset:
        if graph.label is None:
            raise BadLabelError(f"graph over nodes {graph.node_ids[:3]}... has no label")
        verdict, _ = predict(model, graph, threshold)
        if graph.label == "defective":
            if verdict == "defective":
                tp += 1
            else:
                fn += 1
        else:
            if verdict == "defective":
                fp += 1
            else:
                tn += 1
    return Metrics.from_counts(tp=tp, fp=fp, tn=tn, fn=fn)


def train(
    corpus: Sequence[NormalizedGraph],
    config: TrainConfig,
    vocab_fingerprint: str = "",
    presplit: tuple[Sequence[NormalizedGraph], Sequence[NormalizedGraph]] | None = None,
) -> tuple[GcnModel, list[EpochStats]]:
    """Split 90/10, run per-graph gradient steps, track loss and held-out
    metrics each epoch. Deterministic for a fixed seed.

    `presplit` lets a caller that already partitioned the corpus (to build
    the vocabulary on the training side only) reuse its exact split.
    """
    if not corpus:
        raise EmptyCorpusError("training corpus is empty")
    labels = [g.label for g in corpus]
    if any(label is None for label in labels):
        raise BadLabelError("every training graph needs a label")
    if len(set(labels)) < 2:
        raise DegenerateCorpusError(f"training needs both classes, got only {set(labels)}")

    if presplit is not None:
        train_graphs, test_graphs = list(presplit[0]), list(presplit[1])
    else:
        train_graphs, test_graphs = split_items(list(corpus), labels, 0.9, config.seed)

    dim = int(train_graphs[0].features.shape[1])
    params = init_params(dim, config.hidden_width, config.seed)
    state = OptimizerState()
    rng = random.Random(config.seed)
    history: list[EpochStats] = []

    for epoch in range(1, config.epochs + 1):
        order = list(range(len(train_graphs)))
        rng.shuffle(order)
        total_loss = 0.0
        for i in order:
            graph = train_graphs[i]
            loss, grads = loss_and_grads(params, graph, graph.label, config.l2_penalty)
            params, state = optimizer_step(state, params, grads, config)
            total_loss += loss
        snapshot = GcnModel(params=params, vocab_fingerprint=vocab_fingerprint)
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=total_loss / len(train_graphs),
                held_out=evaluate(snapshot, test_graphs),
            )
        )
    return GcnModel(params=params, vocab_fingerprint=vocab_fingerprint), history


def localize(model: GcnModel, graph: NormalizedGraph, k: int = 5) -> list[tuple[int, float]]:
    """Top-k AST node ids by salience: the defective-class logit each node
    would produce if it were the whole pooled representation."""
    if k <= 0:
        return []
    trace = forward(model.params, graph)
    node_logits = trace.h2 @ model.params.w_out + model.params.b_out
    salience = node_logits[:, DEFECTIVE]
    order = sorted(range(graph.n), key=lambda i: (-salience[i], i))[:k]
    return [(graph.node_ids[i], float(salience[i])) for i in order]


@dataclass
class ReportNode:
    node_id: int
    span: tuple[int, int, int]
    salience: float


@dataclass
class DetectionReport:
    contract: str
    verdict: str
    probability: float
    top_nodes: list[ReportNode]
    model_fingerprint: str
    timestamp: str

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "contract": self.contract,
            "verdict": self.verdict,
            "probability": self.probability,
            "top_nodes": [
                {"node_id": n.node_id, "span": list(n.span), "salience": n.salience}
                for n in self.top_nodes
            ],
            "model_fingerprint": self.model_fingerprint,
            "timestamp": self.timestamp,
        }

    def to_text(self) -> str:
        lines = [
            f"contract:    {self.contract}",
            f"verdict:     {self.verdict}  (P(defective) = {self.probability:.4f})",
            f"model:       {self.model_fingerprint[:16]}",
            f"timestamp:   {self.timestamp}",
        ]
        if self.top_nodes:
            lines.append("suspect nodes (id @ offset:length:file, salience):")
            for n in self.top_nodes:
                span = ":".join(str(v) for v in n.span)
                lines.append(f"  #{n.node_id} @ {span}  {n.salience:+.4f}")
        return "\n".join(lines)


def build_report(
    model: GcnModel,
    graph: NormalizedGraph,
    contract: str,
    threshold: float = 0.5,
    k: int = 5,
) -> DetectionReport:
    verdict, probability = predict(model, graph, threshold)
    span_of = dict(zip(graph.node_ids, graph.spans))
    top = [
        ReportNode(node_id=node_id, span=span_of[node_id], salience=salience)
        for node_id, salience in localize(model, graph, min(k, MAX_REPORT_NODES))
    ]
    return DetectionReport(
        contract=contract,
        verdict=verdict,
        probability=probability,
        top_nodes=top,
        model_fingerprint=model.fingerprint(),
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
