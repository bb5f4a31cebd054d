"""The consensus hypergraph: nodes hold representation layers, hyperedges hold learners.

Layers are numpy arrays batched over scenes:

* continuous map: ``(n, H, W, channels)`` float
* categorical map: ``(n, H, W)`` integer labels
* vector: ``(n, dim)`` float
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import _kernels

log = logging.getLogger(__name__)

KINDS = ("continuous", "categorical", "vector")


class GraphError(ValueError):
    pass


class MissingLayer(KeyError):
    pass


@dataclass
class NodeSpec:
    id: str
    name: str
    kind: str
    size: int  # channels, class count, or vector dimension
    units: str = ""
    sensor: bool = False
    offset: float | list = 0.0
    scale: float | list = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphError(f"node {self.id}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and self.size < 2:
            raise GraphError(f"node {self.id}: class count must be >= 2")
        if self.size < 1:
            raise GraphError(f"node {self.id}: size must be positive")

    @property
    def n_classes(self):
        return self.size if self.kind == "categorical" else None

    def to_json(self):
        d = {"id": self.id, "name": self.name, "kind": self.kind, "units": self.units, "sensor": self.sensor}
        d[{"continuous": "channels", "categorical": "classes", "vector": "dimension"}[self.kind]] = self.size
        if self.kind != "categorical":
            d["offset"] = self.offset
            d["scale"] = self.scale
        return d

    @classmethod
    def from_json(cls, d):
        size = d.get("channels", d.get("classes", d.get("dimension")))
        return cls(
            d["id"], d.get("name", d["id"]), d["kind"], int(size), d.get("units", ""),
            bool(d.get("sensor", False)), d.get("offset", 0.0), d.get("scale", 1.0),
        )


@dataclass
class HyperEdge:
    id: str
    inputs: tuple
    output: str
    learner: object = None  # anything with .predict(list_of_layers) -> layer
    checkpoint: str | None = None

    def __post_init__(self):
        self.inputs = tuple(self.inputs)
        if not self.inputs:
            raise GraphError(f"edge {self.id}: empty input clique")
        if self.output in self.inputs:
            raise GraphError(f"edge {self.id}: output node is part of its input clique")


@dataclass(frozen=True)
class Path:
    edges: tuple

    @property
    def hops(self):
        return len(self.edges)

    def __str__(self):
        return " | ".join(self.edges)


@dataclass
class ConsensusResult:
    label: np.ndarray
    dispersion: np.ndarray  # std (regression) or agreement fraction (classification)
    n_paths: int
    kind: str = "continuous"
    mask: np.ndarray | None = None

    def spread(self):
        """Per-element disagreement: std, or 1 - agreement for votes."""
        if self.kind == "categorical":
            return 1.0 - self.dispersion
        return self.dispersion


class FunctionLearner:
    """Wraps a plain function of the input layers; handy for fixed transforms and tests."""

    def __init__(self, fn):
        self.fn = fn

    def predict(self, inputs):
        return self.fn(*inputs)


@dataclass
class Graph:
    nodes: dict = field(default_factory=dict)
    edges: dict = field(default_factory=dict)
    ensembles: dict = field(default_factory=dict)

    def add_node(self, node):
        if node.id in self.nodes:
            raise GraphError(f"duplicate node {node.id}")
        self.nodes[node.id] = node
        return node

    def add_edge(self, edge):
        if edge.id in self.edges:
            raise GraphError(f"duplicate edge {edge.id}")
        for nid in (*edge.inputs, edge.output):
            if nid not in self.nodes:
                raise GraphError(f"edge {edge.id}: unknown node {nid}")
        if self.nodes[edge.output].sensor:
            raise GraphError(f"edge {edge.id}: sensor node {edge.output} cannot be an edge output")
        for other in self.edges.values():
            if other.inputs == edge.inputs and other.output == edge.output:
                raise GraphError(f"edges {other.id} and {edge.id} share clique and output")
        self.edges[edge.id] = edge
        return edge

    def sensors(self):
        return [n for n in self.nodes.values() if n.sensor]

    def targets(self):
        return [n.id for n in self.nodes.values() if not n.sensor]

    def edges_into(self, node_id):
        return [e for e in self.edges.values() if e.output == node_id]

    def set_ensemble(self, node_id, paths):
        for p in paths:
            self.check_path(p, node_id)
        self.ensembles[node_id] = list(paths)

    def check_path(self, path, target):
        if not path.edges:
            raise GraphError("empty path")
        produced = set()
        for eid in path.edges:
            e = self.edges[eid]
            for i in e.inputs:
                if not (self.nodes[i].sensor or i in produced):
                    raise GraphError(f"path {path}: input {i} of {eid} is neither sensor nor produced earlier")
            if e.output in produced:
                raise GraphError(f"path {path}: node {e.output} produced twice")
            produced.add(e.output)
        if self.edges[path.edges[-1]].output != target:
            raise GraphError(f"path {path} does not end at {target}")


# -- paths --------------------------------------------------------------------


def enumerate_paths(graph, target, max_hops=2):
    """All sensor-rooted paths of at most ``max_hops`` edges ending at ``target``.

    A path lists its edges producers-first. Every non-sensor clique input is
    produced inside the path by its own sub-path, each produced node feeds
    exactly one edge, and no node is produced twice. Sorted by edge-id sequence.
    """
    if graph.nodes[target].sensor:
        raise GraphError(f"{target} is a sensor node")
    if max_hops < 1:
        raise GraphError("max_hops must be >= 1")

    def produce(node, budget, visited):
        # each result: (edge tuple, set of produced nodes)
        out = []
        for e in sorted(graph.edges_into(node), key=lambda e: e.id):
            if budget < 1 or any(i in visited for i in e.inputs):
                continue
            partials = [((), frozenset())]
            for i in e.inputs:
                if graph.nodes[i].sensor:
                    continue
                grown = []
                for edges, made in partials:
                    left = budget - 1 - len(edges)
                    # sibling sub-paths must be disjoint: every produced node feeds exactly one edge
                    for sub, sub_made in produce(i, left, visited | {node}):
                        if sub_made & made:
                            continue
                        grown.append((edges + sub, made | sub_made))
                partials = grown
            for edges, made in partials:
                if len(edges) + 1 <= budget:
                    out.append((edges + (e.id,), made | {node}))
        return out

    found = {p for p, _ in produce(target, max_hops, frozenset())}
    return [Path(p) for p in sorted(found)]


def _edge_output(graph, eid, layers, cache, source_key):
    key = (eid, source_key)
    if cache is not None and key in cache:
        return cache[key]
    e = graph.edges[eid]
    try:
        ins = [layers[i] for i in e.inputs]
    except KeyError as exc:
        raise MissingLayer(f"edge {eid} needs layer {exc.args[0]}") from None
    out = e.learner.predict(ins)
    if cache is not None:
        cache[key] = out
    return out


def evaluate_path(graph, path, sensor_layers, cache=None, overrides=None):
    """Run a path's learners in order and return its terminal prediction.

    Intermediate layers are the learners' own outputs unless ``overrides``
    supplies a layer for that node (e.g. consensus values).
    """
    layers = dict(sensor_layers)
    provenance = {k: "sensor" for k in layers}
    for eid in path.edges:
        for i in graph.edges[eid].inputs:
            if graph.nodes[i].sensor and i not in sensor_layers:
                raise MissingLayer(f"sensor layer {i!r} missing for path {path}")
    if overrides:
        for k, v in overrides.items():
            layers[k] = v
            provenance[k] = "override"
    out = None
    for eid in path.edges:
        e = graph.edges[eid]
        src = tuple(provenance.get(i, "?") for i in e.inputs)
        if overrides and e.output in overrides and eid != path.edges[-1]:
            continue
        out = _edge_output(graph, eid, layers, cache, src)
        layers[e.output] = out
        provenance[e.output] = f"{eid}<{','.join(src)}>"
    return out


# -- consensus ----------------------------------------------------------------


def _stack(predictions):
    if not predictions:
        raise ValueError("consensus needs at least one prediction")
    shapes = {np.shape(p) for p in predictions}
    if len(shapes) != 1:
        raise ValueError(f"mixed prediction shapes: {sorted(shapes)}")
    return np.stack([np.asarray(p) for p in predictions])


def consensus_median(predictions):
    """Per-element median; dispersion is the population std across predictions."""
    stack = _stack(predictions).astype(np.float64)
    return ConsensusResult(np.median(stack, axis=0), stack.std(axis=0), len(predictions), "continuous")


def consensus_mean(predictions):
    stack = _stack(predictions).astype(np.float64)
    return ConsensusResult(stack.mean(axis=0), stack.std(axis=0), len(predictions), "continuous")


def consensus_vote(predictions, ranks=None, n_classes=None, use_numba=None):
    """Per-element plurality label; agreement = winning-vote fraction.

    Ties go to the tied class voted by the best-ranked path (lowest rank value;
    default rank is list order).
    """
    stack = _stack(predictions).astype(np.int64)
    n = stack.shape[0]
    if ranks is None:
        ranks = range(n)
    order = np.argsort(np.asarray(list(ranks)), kind="stable")
    flat = stack[order].reshape(n, -1)
    if flat.size and flat.min() < 0:
        raise ValueError("negative label")
    if n_classes is None:
        n_classes = int(flat.max()) + 1 if flat.size else 1
    elif flat.size and flat.max() >= n_classes:
        raise ValueError(f"label {int(flat.max())} >= class count {n_classes}")
    labels, win = _kernels.vote_consensus(flat, n_classes, use_numba=use_numba)
    shape = stack.shape[1:]
    return ConsensusResult(labels.reshape(shape), (win / n).reshape(shape), n, "categorical")


def gate_confidence(result, tau=None, alpha=None):
    """Attach a confidence mask: std <= tau (regression) or agreement >= alpha (votes).

    ``None`` disables the corresponding threshold (mask all true).
    """
    if result.kind == "categorical":
        mask = np.ones(result.dispersion.shape, bool) if alpha is None else result.dispersion >= alpha
    else:
        mask = np.ones(result.dispersion.shape, bool) if tau is None else result.dispersion <= tau
    return ConsensusResult(result.label, result.dispersion, result.n_paths, result.kind, mask)


def consensus_for(node, predictions, ranks=None):
    if node.kind == "categorical":
        return consensus_vote(predictions, ranks, node.size)
    return consensus_median(predictions)


def ensemble_paths_outputs(graph, target, sensor_layers, cache=None, overrides=None):
    paths = graph.ensembles.get(target) or []
    if not paths:
        raise GraphError(f"no selected ensemble for {target}")
    return [evaluate_path(graph, p, sensor_layers, cache, overrides) for p in paths]


def ensemble_predict(graph, target, sensor_layers, cache=None, overrides=None):
    """Evaluate every selected path into ``target`` and reduce by median or vote."""
    preds = ensemble_paths_outputs(graph, target, sensor_layers, cache, overrides)
    return consensus_for(graph.nodes[target], preds)


def unsupervised_loss(student, path_outputs):
    """Squared distance from ``student`` to the mean of the path outputs, summed."""
    stack = _stack(path_outputs).astype(np.float64)
    return float(np.sum((np.asarray(student, dtype=np.float64) - stack.mean(axis=0)) ** 2))


# -- topology file ------------------------------------------------------------


def save_topology(graph, path, learner_meta=None):
    """Write nodes, hyperedges and ensembles as JSON. Ensemble order is rank order."""
    learner_meta = learner_meta or {}
    doc = {
        "nodes": [n.to_json() for n in graph.nodes.values()],
        "hyperedges": [
            {
                "id": e.id,
                "clique": list(e.inputs),
                "output": e.output,
                "checkpoint": e.checkpoint,
                **({"learner": learner_meta[e.id]} if e.id in learner_meta else {}),
            }
            for e in graph.edges.values()
        ],
        "ensembles": {t: [list(p.edges) for p in paths] for t, paths in graph.ensembles.items()},
    }
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))


def load_topology(path, learner_loader=None):
    """Read a topology JSON. ``learner_loader(edge_entry, graph)`` builds each learner."""
    doc = json.loads(FsPath(path).read_text())
    g = Graph()
    for nd in doc["nodes"]:
        g.add_node(NodeSpec.from_json(nd))
    for ed in doc["hyperedges"]:
        e = g.add_edge(HyperEdge(ed["id"], tuple(ed["clique"]), ed["output"], checkpoint=ed.get("checkpoint")))
        if learner_loader is not None:
            e.learner = learner_loader(ed, g)
    for t, paths in doc.get("ensembles", {}).items():
        g.set_ensemble(t, [Path(tuple(p)) for p in paths])
    return g
