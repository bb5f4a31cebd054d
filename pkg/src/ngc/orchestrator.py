"""End-to-end consensus learning: pretrain, build the graph, self-train, evaluate.

A run directory holds everything needed to reproduce its reports::

    config.json  nodes.json  topology.json  topology_gen<k>.json
    checkpoints/gen<k>/<edge>.ngcm  reports/  audit.log
"""

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import numpy as np
from filelock import FileLock, Timeout

from . import metrics as M
from .edgenet import EdgeNet, sample_pixels
from .graph import (
    Graph,
    GraphError,
    HyperEdge,
    Path,
    consensus_for,
    enumerate_paths,
    evaluate_path,
    gate_confidence,
    load_topology,
    save_topology,
)
from .learner import TrainConfig, load_checkpoint, save_checkpoint, snap_to_float32
from .world import AuditLog, Dataset, load_sealed, world_nodes

log = logging.getLogger(__name__)

# the six representations reported in the results table
TABLE_NODES = ("depth", "normals_c", "normals_w", "semseg", "wireframe", "pose")

# input nodes with an edge into each output node
DEFAULT_STRUCTURE = {
    "depth": ["rgb", "halftone", "semseg", "normals_c", "normals_w"],
    "normals_c": ["rgb", "wireframe", "normals_w"],
    "normals_w": ["rgb", "wireframe", "normals_c", "halftone"],
    "semseg": ["rgb", "halftone", "normals_w"],
    "wireframe": ["rgb", "halftone"],
    "pose": ["rgb", "normals_c", "normals_w", "semseg", "halftone"],
    "halftone": ["rgb"],
}


class StageFailed(RuntimeError):
    def __init__(self, stage, seed, cause):
        super().__init__(f"stage {stage!r} failed (seed {seed}): {cause}")
        self.stage = stage
        self.seed = seed


class ConfigError(ValueError):
    pass


def edge_id(inputs, output):
    return f"{'+'.join(inputs)}->{output}"


def edge_filename(eid):
    return eid.replace("->", "_to_").replace("+", "_") + ".ngcm"


def default_edges(structure=DEFAULT_STRUCTURE):
    return [[[src], out] for out, srcs in structure.items() for src in srcs]


def derive_seed(*keys):
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def _workers():
    try:
        return max(1, int(os.environ.get("NGC_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    w = min(_workers(), len(items))
    if w <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(w) as pool:
        return list(pool.map(fn, items))


@dataclass
class ExperimentConfig:
    dataset: str
    seed: int = 0
    edges: list = field(default_factory=default_edges)
    hidden: list = field(default_factory=lambda: [32, 32])
    patch: int = 3
    grid: int = 8
    activation: str = "relu"
    supervised: dict = field(default_factory=lambda: {"epochs": 100, "learning_rate": 1e-3, "weight_decay": 1e-2, "batch_size": 256})
    unsupervised: dict = field(default_factory=lambda: {"epochs": 25, "learning_rate": 1e-3, "weight_decay": 1e-2, "batch_size": 256})
    pixels_per_scene: int = 32
    unsup_pixels_per_scene: int = 32
    tau: float | None = None
    alpha: float | None = None
    iterations: int = 2
    max_hops: int = 2
    greedy_stop: str = "best-prefix"
    sequential: bool = False
    mix_labeled: bool = False
    consensus_intermediates: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.max_hops < 1:
            raise ConfigError("max_hops must be >= 1")
        if self.greedy_stop not in ("best-prefix", "first-non-improvement"):
            raise ConfigError(f"unknown greedy_stop {self.greedy_stop!r}")
        if self.patch < 1 or self.patch % 2 == 0:
            raise ConfigError("patch must be a positive odd number")
        for key in ("supervised", "unsupervised"):
            try:
                TrainConfig(**getattr(self, key))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from None
        for t in (self.tau, self.alpha):
            if t is not None and not np.isfinite(t):
                raise ConfigError("thresholds must be finite or null")

    def train_config(self, kind, shuffle_seed):
        return TrainConfig(**{**getattr(self, kind), "shuffle_seed": shuffle_seed})

    @classmethod
    def load(cls, path):
        try:
            return cls(**json.loads(FsPath(path).read_text()))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def save(self, path):
        FsPath(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True))


# -- greedy ensemble selection -----------------------------------------------


@dataclass
class GreedySelection:
    target: str
    metric: str
    ranked: list  # [(path edge ids, single-path metric)] in rank order
    prefix_metrics: list  # ensemble metric for prefix lengths 1..len(evaluated)
    selected: int  # chosen prefix length

    @property
    def selected_paths(self):
        return [Path(tuple(p)) for p, _ in self.ranked[: self.selected]]

    def to_json(self):
        return {
            "target": self.target,
            "metric": self.metric,
            "ranked": [{"path": list(p), "metric": m} for p, m in self.ranked],
            "prefix_metrics": self.prefix_metrics,
            "selected": self.selected,
        }


def greedy_select(node, candidates, gt, direct=None, stop="best-prefix"):
    """Rank paths by their own validation metric and grow the ensemble one path at a time.

    ``candidates`` is a list of ``(path, prediction)``. ``direct`` (a path key)
    is always ranked first. ``best-prefix`` scores every prefix and keeps the
    best (shortest on ties); ``first-non-improvement`` stops at the first
    prefix that does not strictly improve.
    """
    if not candidates:
        raise GraphError(f"no candidate paths for {node.id}")
    metric = M.primary_metric(node)
    sign = 1.0 if M.POLARITY[metric] == M.LOWER else -1.0
    scored = [(tuple(p.edges if isinstance(p, Path) else p), pred, M.compute(node, metric, pred, gt)) for p, pred in candidates]
    # quality order: best metric first, path key breaks exact ties
    order = sorted(range(len(scored)), key=lambda i: (sign * scored[i][2], scored[i][0]))
    if direct is not None:
        direct = tuple(direct.edges if isinstance(direct, Path) else direct)
        order = [i for i in order if scored[i][0] == direct] + [i for i in order if scored[i][0] != direct]
    ranked = [(scored[i][0], scored[i][2]) for i in order]

    prefix_metrics = []
    best_len, best_val = 0, None
    for k in range(1, len(order) + 1):
        preds = [scored[i][1] for i in order[:k]]
        val = M.compute(node, metric, consensus_for(node, preds).label, gt)
        prefix_metrics.append(val)
        if best_val is None or M.better(metric, val, best_val):
            best_len, best_val = k, val
        elif stop == "first-non-improvement":
            break
    return GreedySelection(node.id, metric, ranked, prefix_metrics, best_len)


# -- reports ------------------------------------------------------------------


@dataclass
class IterationReport:
    iteration: int
    edge_metrics_before: dict
    edge_metrics_after: dict
    dispersion_before: dict
    dispersion_after: dict
    wall_time: float = 0.0

    @property
    def reduction(self):
        out = {}
        for n, before in self.dispersion_before.items():
            after = self.dispersion_after.get(n)
            out[n] = 100.0 * (1.0 - after / before) if before > 0 and after is not None else None
        return out

    def to_json(self):
        # wall time is kept out so reports reproduce bit-identically
        return {
            "iteration": self.iteration,
            "edge_metrics_before": self.edge_metrics_before,
            "edge_metrics_after": self.edge_metrics_after,
            "dispersion_before": self.dispersion_before,
            "dispersion_after": self.dispersion_after,
            "dispersion_reduction_pct": self.reduction,
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["iteration"], d["edge_metrics_before"], d["edge_metrics_after"], d["dispersion_before"], d["dispersion_after"])


def _dump(path, obj):
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))


# -- the experiment -----------------------------------------------------------


def fit_normalization(nodes, layers):
    """Per-channel mean/std offsets for continuous and vector nodes, from training data."""
    for n in nodes:
        if n.kind == "categorical" or n.id not in layers:
            continue
        x = np.asarray(layers[n.id], np.float64).reshape(-1, n.size)
        n.offset = [float(v) for v in x.mean(axis=0)]
        n.scale = [float(max(v, 1e-6)) for v in x.std(axis=0)]
    return nodes


class Experiment:
    """Stateful driver over one run directory. Every stage is persisted and skipped if present."""

    def __init__(self, config, run_dir):
        self.config = config
        self.run_dir = FsPath(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        cfg_path = self.run_dir / "config.json"
        if cfg_path.exists():
            if json.loads(cfg_path.read_text()) != json.loads(json.dumps(asdict(config))):
                raise ConfigError(f"{cfg_path} exists with a different configuration")
        else:
            config.save(cfg_path)
        self.audit = AuditLog(self.run_dir / "audit.log")
        self.data = Dataset(config.dataset, audit=self.audit)
        self.world = self.data.world
        self._cache = {}

    # paths
    def ckpt_path(self, gen, eid):
        return self.run_dir / "checkpoints" / f"gen{gen}" / edge_filename(eid)

    def topology_path(self, gen):
        return self.run_dir / ("topology.json" if gen == 0 else f"topology_gen{gen}.json")

    def report_path(self, name):
        return self.run_dir / "reports" / name

    # data
    def _load(self, split, reps, usage):
        key = (split, tuple(reps))
        if key not in self._cache:
            self._cache[key] = self.data.load(split, reps, usage)
        return self._cache[key]

    def nodes(self):
        p = self.run_dir / "nodes.json"
        from .graph import NodeSpec

        return {d["id"]: NodeSpec.from_json(d) for d in json.loads(p.read_text())}

    def edge_specs(self):
        out = []
        for inputs, output in self.config.edges:
            inputs = tuple(inputs) if isinstance(inputs, (list, tuple)) else (inputs,)
            out.append((edge_id(inputs, output), inputs, output))
        return out

    def build_learner(self, nodes, idx, inputs, output):
        c = self.config
        return EdgeNet.build(
            [nodes[i] for i in inputs], nodes[output], c.hidden, c.patch, c.grid,
            seed=derive_seed(c.seed, 1, idx), activation=c.activation,
        )

    def graph(self, gen, with_ensembles=True):
        """Graph with generation-``gen`` learners loaded from checkpoints."""
        nodes = self.nodes()
        g = Graph()
        for n in nodes.values():
            g.add_node(n)
        for idx, (eid, inputs, output) in enumerate(self.edge_specs()):
            net = self.build_learner(nodes, idx, inputs, output)
            net.model = load_checkpoint(self.ckpt_path(gen, eid))
            g.add_edge(HyperEdge(eid, inputs, output, net, str(self.ckpt_path(gen, eid).relative_to(self.run_dir))))
        if with_ensembles:
            topo = self.topology_path(0)
            if not topo.exists():
                raise GraphError("graph topology missing")
            saved = load_topology(topo)
            for t, paths in saved.ensembles.items():
                g.set_ensemble(t, paths)
        return g

    # -- step 1 ---------------------------------------------------------------

    def pretrain(self):
        """Train every edge on labeled data, independently. Writes gen0 checkpoints."""
        done = self.report_path("pretrain.json")
        if done.exists():
            return json.loads(done.read_text())
        c = self.config
        reps = sorted({r for inputs, out in self.edge_specs_raw() for r in (*inputs, out)})
        train = self._load("train", reps, "train:supervised")
        val = self._load("validation", reps, "validate")
        nodes = fit_normalization(world_nodes(self.world), train)
        nodes = {n.id: n for n in nodes}
        (self.run_dir / "nodes.json").write_text(json.dumps([n.to_json() for n in nodes.values()], indent=1))
        n_train = next(iter(train.values())).shape[0]
        H, W = self.world.height, self.world.width

        def job(item):
            idx, (eid, inputs, output) = item
            net = self.build_learner(nodes, idx, inputs, output)
            sample = None
            if net.mode == "map2map":
                sample = sample_pixels(n_train, H, W, c.pixels_per_scene, derive_seed(c.seed, 2, idx))
            X, y = net.training_set([train[i] for i in inputs], train[output], sample)
            trace = net.fit(X, y, c.train_config("supervised", derive_seed(c.seed, 3, idx)))
            snap_to_float32(net.model)
            save_checkpoint(self.ckpt_path(0, eid), net.model)
            pred = net.predict([val[i] for i in inputs])
            return eid, {"validation": M.evaluate_layer(nodes[output], pred, val[output]), "final_loss": trace[-1]}

        results = dict(_map(job, enumerate(self.edge_specs())))
        _dump(done, results)
        return results

    def edge_specs_raw(self):
        return [(inputs, out) for _, inputs, out in self.edge_specs()]

    # -- step 2 ---------------------------------------------------------------

    def build_graph(self):
        topo = self.topology_path(0)
        if topo.exists():
            return json.loads(self.report_path("greedy.json").read_text())
        if not self.ckpt_path(0, self.edge_specs()[0][0]).exists():
            raise GraphError("pretrained checkpoints missing; run pretrain first")
        c = self.config
        g = self.graph(0, with_ensembles=False)
        targets = sorted({e.output for e in g.edges.values()})
        val = self._load("validation", sorted(set(targets) | {n.id for n in g.sensors()}), "validate")
        sensors = {n.id: val[n.id] for n in g.sensors()}
        cache = {}
        selections = {}
        for t in targets:
            paths = enumerate_paths(g, t, c.max_hops)
            if not paths:
                log.warning("no candidate paths for %s; node left out of the graph", t)
                continue
            cands = [(p, evaluate_path(g, p, sensors, cache)) for p in paths]
            direct = next((p for p in paths if p.hops == 1 and all(g.nodes[i].sensor for i in g.edges[p.edges[0]].inputs)), None)
            sel = greedy_select(g.nodes[t], cands, val[t], direct, c.greedy_stop)
            g.set_ensemble(t, sel.selected_paths)
            selections[t] = sel.to_json()
        _dump(self.report_path("greedy.json"), selections)
        meta = {e.id: e.learner.meta() for e in g.edges.values()}
        save_topology(g, topo, meta)
        return selections

    # -- step 3 ---------------------------------------------------------------

    def _dispersion(self, g, sensors):
        out = {}
        cache = {}
        for t, paths in g.ensembles.items():
            if len(paths) < 2:
                continue
            preds = [evaluate_path(g, p, sensors, cache) for p in paths]
            out[t] = float(np.mean(consensus_for(g.nodes[t], preds).spread()))
        return out

    def _edge_metrics(self, g, val):
        out = {}
        for e in g.edges.values():
            pred = e.learner.predict([val[i] for i in e.inputs])
            out[e.id] = M.compute(g.nodes[e.output], M.primary_metric(g.nodes[e.output]), pred, val[e.output])
        return out

    def pseudo_labels(self, g, sensors, overrides=None):
        """Gated consensus for every node with a selected ensemble (teachers frozen)."""
        c = self.config
        cache = {}
        out = {}
        inter = None
        if c.consensus_intermediates:
            # first pass: plain consensus values, used as intermediate layers in the second
            inter = {}
            for t, paths in g.ensembles.items():
                preds = [evaluate_path(g, p, sensors, cache) for p in paths]
                inter[t] = consensus_for(g.nodes[t], preds).label
            cache = {}
        for t, paths in g.ensembles.items():
            ov = None if inter is None else {k: v for k, v in inter.items() if k != t}
            preds = [evaluate_path(g, p, sensors, cache, ov) for p in paths]
            out[t] = gate_confidence(consensus_for(g.nodes[t], preds), c.tau, c.alpha)
        return out

    def _student(self, g, k, idx, e, sensors, pseudo, n_scenes, labeled=None):
        c = self.config
        net = e.learner
        student = EdgeNet(net.in_nodes, net.out_node, net.model.copy(), net.mode, net.patch, net.grid)
        target = pseudo[e.output]
        inputs = []
        for i in e.inputs:
            if g.nodes[i].sensor:
                inputs.append(sensors[i])
            elif i in pseudo:
                inputs.append(_as_layer(g.nodes[i], pseudo[i].label))
            else:
                raise GraphError(f"edge {e.id}: no consensus available for input node {i}")
        label = _as_layer(g.nodes[e.output], target.label)
        mask = target.mask
        if student.mode == "map2map":
            pix_mask = mask if mask.ndim == 3 else mask.all(axis=-1)
            sample = sample_pixels(n_scenes, self.world.height, self.world.width, c.unsup_pixels_per_scene,
                                   derive_seed(c.seed, 4, k, idx), pix_mask)
            X, y = student.training_set(inputs, label, sample) if sample[0].size else (None, None)
        else:
            keep = mask.reshape(mask.shape[0], -1).all(axis=1)
            X, y = student.training_set([x[keep] for x in inputs], label[keep]) if keep.any() else (None, None)
        if X is None and labeled is not None:
            X, y = labeled
        elif labeled is not None:
            Xl, yl = labeled
            X, y = np.concatenate([X, Xl]), np.concatenate([y, yl])
        if X is None or X.shape[0] == 0:
            log.warning("edge %s: every pseudo-label masked out; keeping previous weights", e.id)
            return student
        student.fit(X, y, c.train_config("unsupervised", derive_seed(c.seed, 5, k, idx)))
        snap_to_float32(student.model)
        return student

    def iterate(self, k):
        """One self-training generation on unlabeled split ``k`` (1-based)."""
        rep_path = self.report_path(f"iteration_{k}.json")
        if rep_path.exists():
            return IterationReport.from_json(json.loads(rep_path.read_text()))
        if not self.topology_path(0).exists():
            raise GraphError("graph topology missing")
        if k > 1 and not self.report_path(f"iteration_{k - 1}.json").exists():
            raise GraphError(f"iteration {k - 1} has not been run")
        split = f"unlabeled_{k}"
        if split not in self.data.manifest["splits"]:
            raise ConfigError(f"dataset has no fresh unlabeled split for iteration {k}")
        t0 = time.perf_counter()
        c = self.config
        teacher = self.graph(k - 1)
        sensor_ids = [n.id for n in teacher.sensors()]
        unl = self._load(split, sensor_ids, f"pseudo-label:{k}")
        n_scenes = unl[sensor_ids[0]].shape[0]
        self.audit.record(self.data.scene_ids(split), f"train:unsupervised:{k}")

        labeled = {}
        if c.mix_labeled:
            labeled = self._labeled_rows(teacher, k)

        edges = [(idx, e) for idx, e in enumerate(teacher.edges.values())]
        edges = [(idx, e) for idx, e in edges if e.output in teacher.ensembles]
        if c.sequential:
            live = self.graph(k - 1)
            students = {}
            for idx, e in edges:
                pseudo = self.pseudo_labels(live, unl)
                s = self._student(live, k, idx, e, unl, pseudo, n_scenes, labeled.get(e.id))
                students[e.id] = s
                live.edges[e.id].learner = s
        else:
            pseudo = self.pseudo_labels(teacher, unl)
            students = dict(_map(lambda it: (it[1].id, self._student(teacher, k, it[0], it[1], unl, pseudo, n_scenes,
                                                                         labeled.get(it[1].id))), edges))

        # publish the new generation in one go
        for e in teacher.edges.values():
            model = students[e.id].model if e.id in students else e.learner.model
            save_checkpoint(self.ckpt_path(k, e.id), model)
        new = self.graph(k)
        save_topology(new, self.topology_path(k), {e.id: e.learner.meta() for e in new.edges.values()})

        val_reps = sorted(set(new.nodes))
        val = self._load("validation", [r for r in val_reps if r in self.data.manifest["splits"]["validation"]["files"]], "validate")
        sensors = {i: val[i] for i in sensor_ids}
        report = IterationReport(
            k,
            self._edge_metrics(teacher, val),
            self._edge_metrics(new, val),
            self._dispersion(teacher, sensors),
            self._dispersion(new, sensors),
            time.perf_counter() - t0,
        )
        _dump(rep_path, report.to_json())
        _dump(self.report_path(f"timing_{k}.json"), {"wall_time_s": report.wall_time})
        return report

    def _labeled_rows(self, g, k):
        c = self.config
        reps = sorted(g.nodes)
        train = self._load("train", reps, "train:supervised")
        n = next(iter(train.values())).shape[0]
        out = {}
        for idx, e in enumerate(g.edges.values()):
            net = e.learner
            sample = None
            if net.mode == "map2map":
                sample = sample_pixels(n, self.world.height, self.world.width, c.pixels_per_scene, derive_seed(c.seed, 6, k, idx))
            out[e.id] = net.training_set([train[i] for i in e.inputs], train[e.output], sample)
        return out

    # -- evaluation -------------------------------------------------------------

    def evaluate(self):
        """Table-style metrics on the evaluation split for every finished generation."""
        out_path = self.report_path("evaluation.json")
        gens = [0] + [k for k in range(1, self.config.iterations + 1) if self.report_path(f"iteration_{k}.json").exists()]
        if out_path.exists():
            prev = json.loads(out_path.read_text())
            if prev.get("generations") == gens:
                return prev
        g0 = self.graph(0)
        sensor_ids = [n.id for n in g0.sensors()]
        targets = [t for t in g0.nodes if t in g0.ensembles]
        sensors = self.data.load("evaluation", sensor_ids, "evaluate")
        gt = load_sealed(self.data.root, "evaluation", targets, self.audit)

        edge_preds, ngc_preds = {}, {}
        for gen in gens:
            g = g0 if gen == 0 else self.graph(gen)
            cache = {}
            for t in targets:
                direct = g.ensembles[t][0]
                edge_preds[gen, t] = evaluate_path(g, direct, sensors, cache)
                preds = [evaluate_path(g, p, sensors, cache) for p in g.ensembles[t]]
                ngc_preds[gen, t] = consensus_for(g.nodes[t], preds).label

        rows = []
        # table columns; the generation-0 ensemble is also scored (csv only) since it teaches iteration 1
        columns = [{"iteration": 0, "model": "edge"}]
        for k in gens[1:]:
            columns += [{"iteration": k, "model": "ngc"}, {"iteration": k, "model": "distil"}]
        scored = columns[:1] + [{"iteration": 0, "model": "ngc"}] + columns[1:]

        for t in targets:
            node = g0.nodes[t]
            base = edge_preds[0, t]
            direct_id = g0.ensembles[t][0].edges[-1]
            for col in scored:
                k = col["iteration"]
                pred = edge_preds[k, t] if col["model"] in ("edge", "distil") else ngc_preds[k, t]
                for m, v in M.evaluate_layer(node, _as_layer(node, pred), gt[t]).items():
                    rows.append({"iteration": k, "node": t, "edge": direct_id if col["model"] != "ngc" else "ngc", "metric": m, "value": v})
                if node.kind != "vector" and (k > 0 or col["model"] == "ngc"):
                    v = M.pixels_improved(node, _as_layer(node, pred), _as_layer(node, base), gt[t])
                    rows.append({"iteration": k, "node": t, "edge": direct_id if col["model"] != "ngc" else "ngc",
                                 "metric": "pixels_improved", "value": v})
        result = {"generations": gens, "columns": columns, "rows": rows,
                  "nodes": {t: {"name": g0.nodes[t].name, "units": g0.nodes[t].units} for t in targets}}
        _dump(out_path, result)
        write_metrics_csv(self.report_path("metrics.csv"), rows)
        from .report import summary_from_evaluation, render_text

        summary = summary_from_evaluation(result)
        _dump(self.report_path("summary.json"), summary)
        self.report_path("summary.txt").write_text(render_text(summary))
        return result

    # -- driver -----------------------------------------------------------------

    def run(self, iterations=None):
        iterations = self.config.iterations if iterations is None else iterations
        stages = [("pretrain", self.pretrain), ("build-graph", self.build_graph)]
        stages += [(f"iterate-{k}", (lambda k=k: self.iterate(k))) for k in range(1, iterations + 1)]
        stages += [("evaluate", self.evaluate)]
        results = {}
        for name, fn in stages:
            try:
                results[name] = fn()
            except (StageFailed, ConfigError):
                raise
            except Exception as exc:
                raise StageFailed(name, self.config.seed, exc) from exc
        return results


def _as_layer(node, arr):
    if node.kind == "categorical":
        return np.asarray(arr).astype(np.int64)
    return np.asarray(arr, dtype=np.float32)


def write_metrics_csv(path, rows):
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "node", "edge", "metric", "value"])
    for r in rows:
        w.writerow([r["iteration"], r["node"], r["edge"], r["metric"], f"{r['value']:.6g}"])
    path.write_text(buf.getvalue())


def run_lock(run_dir):
    """Exclusive writer lock for a run directory."""
    FsPath(run_dir).mkdir(parents=True, exist_ok=True)
    return FileLock(str(FsPath(run_dir) / ".lock"), timeout=0)


def run_experiment(config, run_dir, iterations=None):
    try:
        with run_lock(run_dir):
            return Experiment(config, run_dir).run(iterations)
    except Timeout:
        raise RuntimeError(f"another process holds the lock on {run_dir}") from None


def hygiene_violations(audit_path, manifest):
    """Evaluation scene ids that appear with any non-evaluation usage."""
    eval_ids = set(manifest["splits"]["evaluation"]["scene_ids"])
    bad = set()
    for usage, sid in AuditLog.read(audit_path):
        if sid in eval_ids and not usage.startswith("evaluate"):
            bad.add((usage, sid))
    return sorted(bad)
