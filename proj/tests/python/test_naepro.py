# SPDX-License-Identifier: Apache-2.0
import os
from pathlib import Path

import numpy as np
import pytest

import naepro

FIXTURES = Path(os.environ.get("NAEPRO_FIXTURE_DIR", Path(__file__).resolve().parents[1] / "fixtures"))


def small_model(variant="default", seed=3):
    c = naepro.ModelConfig()
    c.layers, c.d, c.heads, c.k, c.seed = 2, 8, 2, 4, seed
    c.variant = variant
    return naepro.Model.create(c)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def test_records_round_trip(tmp_path):
    recs = naepro.load_records(str(FIXTURES / "records.jsonl"))
    assert [r.id for r in recs] == [f"syn_{i}" for i in range(1, 7)]
    assert recs[0].coords.shape == (12, 3)
    out = tmp_path / "copy.jsonl"
    naepro.save_records(str(out), recs)
    assert out.read_bytes() == (FIXTURES / "records.jsonl").read_bytes()


def test_record_validation():
    with pytest.raises(naepro.ValidationError):
        naepro.Record("bad", "ACX", np.zeros((3, 3)))
    with pytest.raises(naepro.Error):
        naepro.Record("bad", "ACD", np.zeros((2, 3)))


def test_parse_error_carries_line():
    with pytest.raises(naepro.ParseError, match=":1:"):
        naepro.parse_records('{"id": "a"}\n')


def test_mine_fragments_hand_alignment():
    mask = naepro.mine_fragments(str(FIXTURES / "hand.fasta"), 30.0)
    assert mask["s1"] == [0, 1, 2]
    assert mask["s2"] == [0, 1, 2, 3]
    assert all(v == [] for v in naepro.mine_fragments(str(FIXTURES / "hand.fasta"), 100.0).values())
    assert naepro.column_identity(["AC", "AD", "-D", "AD"], 0) == pytest.approx(75.0)


def test_predict_shapes_and_normalisation():
    rec = naepro.load_records(str(FIXTURES / "records.jsonl"))[0]
    out = small_model().predict(rec)
    assert out["coords"].shape == (12, 3)
    assert out["probabilities"].shape == (12, 20)
    np.testing.assert_allclose(out["probabilities"].sum(axis=1), 1.0, atol=1e-12)
    for i in rec.fragments:
        assert out["sequence"][i] == rec.sequence[i]


@pytest.mark.parametrize("variant", naepro.VARIANTS)
def test_equivariance_from_python(variant):
    model = naepro.Model.from_json(small_model(variant).to_json())
    rec = naepro.synthetic_dataset(1, 16, 4, 5)[0]
    x0 = naepro.initial_coordinates(model, rec)
    rng = np.random.default_rng(0)
    rot, t = random_rotation(rng), rng.normal(size=3) * 10
    moved = naepro.Record(rec.id, rec.sequence, rec.coords @ rot.T + t, rec.fragments)
    a = model.predict(rec, x0)
    b = model.predict(moved, x0 @ rot.T + t)
    np.testing.assert_allclose(b["coords"], a["coords"] @ rot.T + t, atol=1e-9)
    np.testing.assert_allclose(b["probabilities"], a["probabilities"], atol=1e-10)


def test_certify_report():
    report = naepro.certify_equivariance(small_model(), trials=4)
    assert report["pass"] is True
    assert report["max_coordinate_deviation"] < 1e-7


def test_fit_is_deterministic_and_checkpoint_round_trips(tmp_path):
    recs = naepro.load_records(str(FIXTURES / "records.jsonl"))
    cfg = naepro.TrainConfig()
    cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.seed = 3, 2, 1e-3, 7
    seen = []
    a = naepro.fit(small_model(), recs[:4], recs[4:], cfg, on_epoch=seen.append)
    b = naepro.fit(small_model(), recs[:4], recs[4:], cfg)
    assert [e["epoch"] for e in seen] == [1, 2, 3]
    assert [e["train_loss"] for e in a.log] == [e["train_loss"] for e in b.log]
    assert a.final_model.to_json() == b.final_model.to_json()

    path = tmp_path / "model.json"
    a.best_model.save(str(path))
    loaded = naepro.Model.load(str(path))
    assert loaded.to_json() == a.best_model.to_json()
    assert loaded.config.variant == "default"


def test_evaluate_and_bench():
    recs = naepro.load_records(str(FIXTURES / "records.jsonl"))
    report = naepro.evaluate(small_model(), recs)
    assert [r["id"] for r in report["records"]] == [r.id for r in recs]
    assert all(0.0 <= r["recovery"] <= 100.0 for r in report["records"])

    rows = naepro.bench([31], ks=[30], d=8, repetitions=3)["rows"]
    assert [(r["graph"], r["edges"]) for r in rows] == [("knn", 930), ("full", 930)]


def test_kabsch_rmsd_invariant():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(10, 3))
    rot = random_rotation(rng)
    assert naepro.kabsch_rmsd(x, x @ rot.T + 3.0) == pytest.approx(0.0, abs=1e-10)


def test_config_errors():
    c = naepro.ModelConfig()
    with pytest.raises(naepro.ConfigError):
        c.variant = "nope"
    c.heads = 5
    with pytest.raises(naepro.ConfigError):
        c.validate()
    with pytest.raises(naepro.Error):
        naepro.fit(small_model(), [], [], naepro.TrainConfig())
