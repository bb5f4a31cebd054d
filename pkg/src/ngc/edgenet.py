"""Edge learners: a DenseModel plus the encoding between layers and feature rows.

``map2map`` edges predict each output pixel from the k x k patch around it in
every clique layer, plus four Bayer-phase features (sin/cos of row and column
mod 4). ``map2vector`` edges average-pool every clique layer onto a coarse grid
and flatten it.
"""

import math
from dataclasses import dataclass

import numpy as np

from .learner import DenseModel, ModelSpec, fit, predict

_PHASE = 4
_INFER_ROWS = 32768


def _per_channel(v, ch):
    a = np.asarray(v, dtype=np.float64).ravel()
    return np.broadcast_to(a if a.size == ch else a[:1], (ch,))


def encode_layer(node, layer):
    """Layer -> float32 features with a trailing channel axis (one-hot for labels)."""
    if node.kind == "categorical":
        lab = np.asarray(layer).astype(np.int64)
        return np.eye(node.size, dtype=np.float32)[lab]
    x = np.asarray(layer, dtype=np.float64)
    if node.kind == "continuous" and x.ndim == 3:
        x = x[..., None]
    off, sc = _per_channel(node.offset, node.size), _per_channel(node.scale, node.size)
    return ((x - off) / sc).astype(np.float32)


def decode_regression(node, values):
    off, sc = _per_channel(node.offset, node.size), _per_channel(node.scale, node.size)
    return values * sc + off


def phase_features(rows, cols):
    r = 2 * math.pi * (np.asarray(rows) % 4) / 4
    c = 2 * math.pi * (np.asarray(cols) % 4) / 4
    return np.stack([np.sin(r), np.cos(r), np.sin(c), np.cos(c)], axis=-1).astype(np.float32)


@dataclass
class EdgeNet:
    in_nodes: tuple
    out_node: object
    model: DenseModel
    mode: str = "map2map"
    patch: int = 3
    grid: int = 8

    @classmethod
    def build(cls, in_nodes, out_node, hidden=(32, 32), patch=3, grid=8, seed=0, activation="relu"):
        in_nodes = tuple(in_nodes)
        mode = "map2vector" if out_node.kind == "vector" else "map2map"
        enc = sum(n.size if n.kind != "vector" else 0 for n in in_nodes)
        if mode == "map2map":
            if any(n.kind == "vector" for n in in_nodes):
                raise ValueError("map2map edges take map inputs only")
            in_dim = patch * patch * enc + _PHASE
        else:
            in_dim = grid * grid * enc + sum(n.size for n in in_nodes if n.kind == "vector")
        head = "classification" if out_node.kind == "categorical" else "regression"
        spec = ModelSpec(in_dim, tuple(hidden), out_node.size, activation, head, seed)
        return cls(in_nodes, out_node, DenseModel.init(spec), mode, patch, grid)

    def meta(self):
        return {"mode": self.mode, "patch": self.patch, "grid": self.grid}

    # -- features ---------------------------------------------------------------

    def _encoded(self, inputs, pad):
        enc = []
        for node, layer in zip(self.in_nodes, inputs):
            e = encode_layer(node, layer)
            if pad:
                e = np.pad(e, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="edge")
            enc.append(e)
        return np.concatenate(enc, axis=-1)

    def _pooled(self, inputs):
        feats = []
        for node, layer in zip(self.in_nodes, inputs):
            e = encode_layer(node, layer)
            if node.kind == "vector":
                feats.append(e.reshape(e.shape[0], -1))
                continue
            n, H, W, f = e.shape
            g = self.grid
            if H % g or W % g:
                raise ValueError(f"map {H}x{W} not divisible by pooling grid {g}")
            p = e.reshape(n, g, H // g, g, W // g, f).mean(axis=(2, 4))
            feats.append(p.reshape(n, -1))
        return np.concatenate(feats, axis=1)

    def rows_at(self, inputs, scenes, rows, cols):
        """Feature rows for the given pixel coordinates (map2map)."""
        k, pad = self.patch, self.patch // 2
        enc = self._encoded(inputs, pad)
        parts = [enc[scenes, rows + dr, cols + dc] for dr in range(k) for dc in range(k)]
        parts.append(phase_features(rows, cols))
        return np.concatenate(parts, axis=1)

    def _full_rows(self, enc, H, W):
        k = self.patch
        n = enc.shape[0]
        parts = [enc[:, dr : dr + H, dc : dc + W] for dr in range(k) for dc in range(k)]
        rr, cc = np.mgrid[0:H, 0:W]
        parts.append(np.broadcast_to(phase_features(rr, cc), (n, H, W, _PHASE)))
        return np.concatenate(parts, axis=-1).reshape(n * H * W, -1)

    # -- inference --------------------------------------------------------------

    def predict_raw(self, inputs):
        """Model outputs: probabilities for labels, normalised values otherwise."""
        if self.mode == "map2vector":
            return predict(self.model, self._pooled(inputs))
        first = np.asarray(inputs[0])
        n, H, W = first.shape[:3]
        per = max(1, _INFER_ROWS // (H * W))
        out = []
        pad = self.patch // 2
        for lo in range(0, n, per):
            chunk = [np.asarray(x)[lo : lo + per] for x in inputs]
            enc = self._encoded(chunk, pad)
            m = enc.shape[0]
            out.append(predict(self.model, self._full_rows(enc, H, W)).reshape(m, H, W, -1))
        return np.concatenate(out)

    def predict(self, inputs):
        raw = self.predict_raw(inputs)
        node = self.out_node
        if node.kind == "categorical":
            return raw.argmax(axis=-1).astype(np.int64)
        return decode_regression(node, raw).astype(np.float32)

    # -- training ---------------------------------------------------------------

    def training_set(self, inputs, target, sample=None):
        """(X, y) rows. ``sample`` = (scenes, rows, cols) for map2map edges."""
        node = self.out_node
        if self.mode == "map2vector":
            X = self._pooled(inputs)
            y = encode_layer(node, target)
            return X, y.reshape(X.shape[0], -1)
        scenes, rows, cols = sample
        X = self.rows_at(inputs, scenes, rows, cols)
        t = np.asarray(target)[scenes, rows, cols]
        if node.kind == "categorical":
            return X, t.astype(np.int64)
        t = np.asarray(t, dtype=np.float64).reshape(X.shape[0], node.size)
        off, sc = _per_channel(node.offset, node.size), _per_channel(node.scale, node.size)
        return X, (t - off) / sc

    def fit(self, X, y, config):
        _, trace = fit(self.model, X, y, config)
        return trace


def sample_pixels(n_scenes, height, width, per_scene, seed, mask=None):
    """Pixel coordinates drawn without replacement per scene; masked-out pixels skipped."""
    rng = np.random.default_rng(seed)
    s_all, r_all, c_all = [], [], []
    for s in range(n_scenes):
        if mask is None:
            flat = rng.choice(height * width, size=min(per_scene, height * width), replace=False)
        else:
            ok = np.flatnonzero(mask[s].ravel())
            if ok.size == 0:
                continue
            flat = rng.choice(ok, size=min(per_scene, ok.size), replace=False)
        flat.sort()
        s_all.append(np.full(flat.size, s))
        r_all.append(flat // width)
        c_all.append(flat % width)
    if not s_all:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, int)
    return np.concatenate(s_all), np.concatenate(r_all), np.concatenate(c_all)
