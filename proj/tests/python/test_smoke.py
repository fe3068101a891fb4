import json
import os
from pathlib import Path

import numpy as np
import pytest

import canonflow as cf

DATA = Path(os.environ.get("CANONFLOW_DATA_DIR", Path(__file__).resolve().parents[2] / "data" / "molecules"))

WATER = "3\nwater\nO 0.0 0.0 0.0\nH 0.757 0.586 0.0\nH -0.757 0.586 0.0\n"


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def test_version():
    assert cf.__version__ == "0.1.0"


def test_parse_and_write_xyz():
    mol = cf.parse_xyz(WATER)
    assert list(mol["atom_types"]) == [8, 1, 1]
    assert np.asarray(mol["coords"]).shape == (3, 3)
    again = cf.parse_xyz(cf.to_xyz(mol, "copy"))
    np.testing.assert_allclose(again["coords"], mol["coords"], atol=1e-9)


def test_parse_errors_are_value_errors():
    with pytest.raises(ValueError, match="line 4"):
        cf.parse_xyz("2\n\nO 0 0 0\nH 0 zero 0\n")


def test_canonicalize_invariance():
    rng = np.random.default_rng(0)
    steps = rng.normal(size=(9, 3))
    coords = np.cumsum(1.45 * steps / np.linalg.norm(steps, axis=1, keepdims=True), axis=0)
    mol = {"coords": coords, "atom_types": [6, 6, 7, 8, 6, 1, 1, 6, 8]}
    a = cf.canonicalize(mol, group="perm-so3")
    n = len(mol["atom_types"])
    perm = rng.permutation(n)
    rot = random_rotation(rng)
    moved = {
        "coords": np.asarray(mol["coords"])[perm] @ rot.T + 3.0,
        "atom_types": [mol["atom_types"][i] for i in perm],
            }
    b = cf.canonicalize(moved, group="perm-so3")
    assert not a["degenerate"]
    np.testing.assert_allclose(a["representative"]["coords"], b["representative"]["coords"], atol=1e-8)
    # gauge reproduces the input: X = rep[perm] R^T + t
    rep = np.asarray(b["representative"]["coords"])
    back = rep[b["perm"]] @ np.asarray(b["rotation"]).T + np.asarray(b["translation"])
    np.testing.assert_allclose(back, moved["coords"], atol=1e-8)


def test_hungarian_and_kabsch():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    assert cf.hungarian(cost) == [1, 0, 2]
    rng = np.random.default_rng(1)
    x = rng.normal(size=(8, 3))
    x -= x.mean(axis=0)
    q = random_rotation(rng)
    r = cf.kabsch_align(x, x @ q.T)
    np.testing.assert_allclose(np.asarray(r["rotation"]) @ q, np.eye(3), atol=1e-10)


def test_condvar_and_score():
    np.testing.assert_array_equal(cf.gaussian_condvar(np.eye(1), np.eye(1), 0.5), [[2.0]])
    s = cf.mixture_score("signflip", np.array([0.5]), np.array([[0.25]]), np.array([0.0]))
    assert abs(s[0]) < 1e-15
    z = np.array([0.3, -0.7])
    mean, cov = np.array([1.0, 0.2]), np.diag([0.5, 0.3])
    h = 1e-6
    fd = [
        (cf.mixture_log_density("c4", mean, cov, z + h * e) - cf.mixture_log_density("c4", mean, cov, z - h * e)) / (2 * h)
        for e in np.eye(2)
    ]
    np.testing.assert_allclose(cf.mixture_score("c4", mean, cov, z), fd, rtol=1e-6)


def test_stats_helpers():
    rng = np.random.default_rng(2)
    stat, p = cf.ks_normal(list(rng.normal(size=2000)))
    assert p > 1e-3
    assert cf.energy_distance(np.zeros((1, 1)), np.full((1, 1), 3.0)) == pytest.approx(6.0)
    r = cf.haar_rotation(3, 4)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)


def test_verify_theory_report():
    rep = cf.verify_theory("signflip", n=20000, seed=1)
    assert rep["checks"]
    assert all(c["pass"] for c in rep["checks"]), [c["name"] for c in rep["checks"] if not c["pass"]]


def test_train_and_sample_points():
    out = cf.train_c4(canonical=True, epochs=1, steps_per_epoch=5, batch=32, seed=0)
    assert len(out["trace"]) == 1
    assert np.isfinite(out["trace"][0]["loss"])
    json.loads(out["checkpoint"])
    x = cf.sample_checkpoint_points(out["checkpoint"], 16, steps=4, randomize=True, seed=1)
    assert np.asarray(x).shape == (16, 2)
    with pytest.raises(ValueError):
        cf.sample_checkpoint_points("{", 4)


def test_molecule_metrics():
    mols = [cf.parse_sdf(p.read_text()) for p in sorted(DATA.glob("*.sdf"))]
    m = cf.molecule_metrics(mols)
    assert m["n_samples"] == len(mols)
    assert m["mol_stability"] == pytest.approx(1.0)
    assert m["uniqueness"] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cf.molecule_metrics([])
