import json

import numpy as np
import pytest

from ngc.world import (
    REPRESENTATIONS,
    AuditLog,
    Dataset,
    SealedAccessError,
    SplitPlan,
    WorldConfig,
    boundary_map,
    depth_from_latent,
    generate_layers,
    generate_scene,
    load_sealed,
    make_dataset,
    read_manifest,
    world_nodes,
)

CFG = WorldConfig(height=16, width=16, seed=4)


def brute_boundary(lab):
    H, W = lab.shape
    out = np.zeros_like(lab)
    for r in range(H):
        for c in range(W):
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < H and 0 <= cc < W and lab[rr, cc] < lab[r, c]:
                    out[r, c] = 1
    return out


def test_scene_deterministic():
    a, b = generate_scene(CFG, 17), generate_scene(CFG, 17)
    for r in REPRESENTATIONS:
        np.testing.assert_array_equal(a.layers[r], b.layers[r])
    assert not np.array_equal(generate_scene(CFG, 18).layers["rgb"], a.layers["rgb"])


@pytest.mark.parametrize("sid", range(6))
def test_layer_invariants(sid):
    s = generate_scene(CFG, sid)
    L = s.layers
    assert L["rgb"].shape == (16, 16, 3) and L["rgb"].dtype == np.float32
    assert L["semseg"].max() < CFG.n_classes
    np.testing.assert_array_equal(L["wireframe"], brute_boundary(L["semseg"].astype(int)))
    assert set(np.unique(L["halftone"])) <= {0, 1}
    for n in ("normals_c", "normals_w"):
        np.testing.assert_allclose(np.linalg.norm(L[n], axis=-1), 1.0, atol=1e-5)
    assert L["pose"].shape == (6,)
    # segmentation is the latent quantised into bands
    np.testing.assert_array_equal(L["semseg"], np.minimum((s.latent * CFG.n_classes).astype(int), CFG.n_classes - 1))


def test_seg_to_wireframe_lookup_is_exact():
    """A lookup table keyed on the 3x3 label neighbourhood reproduces the wireframe exactly."""
    layers = generate_layers(CFG, range(30), ("semseg", "wireframe"))
    table = {}
    for seg, wire in zip(layers["semseg"].astype(int), layers["wireframe"]):
        pad = np.pad(seg, 1, constant_values=10**6)
        for r in range(16):
            for c in range(16):
                key = tuple(pad[r : r + 3, c : c + 3].ravel())
                assert table.setdefault(key, wire[r, c]) == wire[r, c]


def test_depth_monotone():
    z = np.linspace(0, 1, 1001)
    assert np.all(np.diff(depth_from_latent(z)) > 0)


def test_boundary_map_small():
    lab = np.array([[0, 1], [1, 1]])
    np.testing.assert_array_equal(boundary_map(lab), [[0, 1], [1, 0]])


def test_world_nodes():
    nodes = {n.id: n for n in world_nodes(CFG)}
    assert set(nodes) == set(REPRESENTATIONS)
    assert [n.id for n in nodes.values() if n.sensor] == ["rgb"]
    assert nodes["semseg"].size == 12 and nodes["pose"].size == 6


def test_default_plan_sizes():
    r = SplitPlan().ranges()
    assert [len(v) for v in r.values()] == [800, 200, 1000, 1000, 1000]
    ids = [set(v) for v in r.values()]
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            assert not ids[i] & ids[j]


def test_dataset_files_and_manifest(tiny_dataset):
    man = read_manifest(tiny_dataset)
    assert json.loads(json.dumps(man)) == man
    for name, entry in man["splits"].items():
        if entry["labeled"]:
            assert set(entry["files"]) == set(REPRESENTATIONS) and not entry["sealed"]
        else:
            assert set(entry["files"]) == {"rgb"}
            assert all(p.startswith("sealed/") for p in entry["sealed"].values())


def test_dataset_regenerates_bit_identically(tiny_dataset, tmp_path):
    from conftest import TINY_PLAN

    make_dataset(WorldConfig(height=16, width=16, seed=3), tmp_path, TINY_PLAN)
    for f in tiny_dataset.rglob("*.ngct"):
        assert (tmp_path / f.relative_to(tiny_dataset)).read_bytes() == f.read_bytes()
    with pytest.raises(FileExistsError):
        make_dataset(CFG, tmp_path, TINY_PLAN)


def test_training_loader_refuses_sealed(tiny_dataset):
    ds = Dataset(tiny_dataset)
    with pytest.raises(KeyError):
        ds.load("evaluation", ["depth"], "train")
    with pytest.raises(SealedAccessError):
        ds._open("sealed/evaluation/depth.ngct")


def test_audit_records(tiny_dataset, tmp_path):
    log = AuditLog(tmp_path / "audit.log")
    ds = Dataset(tiny_dataset, log)
    ds.load("train", ["rgb", "depth"], "train:supervised")
    gt = load_sealed(tiny_dataset, "evaluation", ["depth"], log)
    assert gt["depth"].shape[0] == len(ds.scene_ids("evaluation"))
    entries = AuditLog.read(tmp_path / "audit.log")
    assert {u for u, _ in entries} == {"train:supervised", "evaluate:evaluation"}
    assert sorted(s for u, s in entries if u == "train:supervised") == ds.scene_ids("train")
