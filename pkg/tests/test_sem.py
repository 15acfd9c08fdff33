"""Effect-model tests: encodings, equivariance, batching, checkpoints."""
import numpy as np
import pytest

from skillplan import lifelong as ll
from skillplan import sem
from skillplan import worldsim as w
from skillplan.neural import Tensor

GEOM = w.Geometry()


def make_state(positions, colors=None):
    colors = colors or [0] * len(positions)
    return w.WorldState(tuple(
        w.BlockFeature(tuple(p), c, i) for i, (p, c) in enumerate(zip(positions, colors))
    ))


@pytest.fixture(scope="module")
def trained_pick_place():
    """A small but usable model shared by the slower checks."""
    ds = ll.bootstrap_skill("pick_place", GEOM, 60, 5, seed=101)
    model = sem.init_model("pick_place", seed=11)
    sem.train(model, ds.records, epochs=80, rng=np.random.default_rng(2))
    return model, ds


# --- encodings ---

def test_node_features_layout():
    s = make_state([(0.4, -0.1, 0.02), (0.5, -0.2, 0.03)], colors=[0, 1])
    f = sem.node_features(s)
    assert f.shape == (2, sem.S_DIM)
    assert list(f[1]) == [0.5, -0.2, 0.03, 1.0, 2.0, 1.0, 2.0]


def test_theta_encoding_dimensions():
    assert len(sem.encode_theta("pick_place", w.PickPlace(2, (0.8, -0.1, -0.08)))) == 5
    assert list(sem.encode_theta("pick_place", w.PickPlace(2, (0.8, -0.1, -0.08)))[:2]) == [2, 3]
    assert list(sem.encode_theta("tray_slide", w.TraySlide(0.9))) == [0.9]
    assert list(sem.encode_theta("bin_tilt", w.BinTilt(14.0))) == [14.0]


def test_encode_input_appends_theta_to_every_node():
    s = make_state([(0.4, -0.1, 0.02), (0.5, -0.2, 0.02)])
    x = sem.encode_input(s, w.TraySlide(0.93), "tray_slide")
    assert x.shape == (2, sem.S_DIM + 1)
    assert np.all(x[:, -1] == 0.93)


def test_encode_input_rejects_mismatched_params():
    s = make_state([(0.4, -0.1, 0.02)])
    with pytest.raises(sem.ContractError):
        sem.encode_input(s, w.TraySlide(0.9), "pick_place")


def test_delta_target_is_feature_difference():
    s0 = make_state([(0.4, -0.1, 0.02)])
    s1 = make_state([(0.8, -0.1, -0.08)])
    d = sem.delta_target(s0, s1)
    assert d[0, 0] == pytest.approx(0.4)
    assert np.all(d[0, 3:] == 0.0)  # colors and indices never change


# --- model mechanics ---

def test_init_model_shapes_per_skill():
    for skill, tdim in sem.THETA_DIMS.items():
        m = sem.init_model(skill, seed=0)
        assert m.node_embed.layers[0].weight.data.shape[1] == sem.S_DIM + tdim
        assert m.node_pred.layers[-1].weight.data.shape[0] == sem.S_DIM + sem.GRAPH_FEAT_DIM
        assert m.graph_pred.layers[-1].weight.data.shape[0] == 1


def test_autodiff_and_inference_paths_agree():
    model = sem.init_model("pick_place", seed=3)
    s = w.sample_initial_state(GEOM, {0: 3, 1: 3}, 5)
    x = sem.encode_input(s, w.PickPlace(1, (0.8, -0.2, -0.08)), "pick_place")
    d_np, c_np = sem._forward_batch_np(model, x, 1, len(s.blocks))
    d_t, c_t = sem._forward_batch(model, Tensor(x), 1, len(s.blocks))
    assert np.allclose(d_np, d_t.data, atol=1e-12)
    assert np.allclose(c_np, c_t.data, atol=1e-12)


def test_prediction_is_permutation_equivariant():
    """Shuffling the node rows permutes the per-node outputs exactly and
    leaves the cost untouched (complete graph, mean aggregation)."""
    model = sem.init_model("tray_slide", seed=7)
    s = make_state([(0.60, -0.30, GEOM.tray_rest_z), (0.66, -0.20, GEOM.tray_rest_z),
                    (0.45, -0.15, GEOM.table_rest_z)], colors=[0, 1, 0])
    x = sem.encode_input(s, w.TraySlide(0.9), "tray_slide")
    perm = np.array([2, 0, 1])
    d0 = sem.sem_forward(model, x)
    d1 = sem.sem_forward(model, x[perm])
    assert abs(d0.cost - d1.cost) < 1e-9
    assert np.abs(d0.delta[perm] - d1.delta).max() < 1e-9


def test_single_node_graph_works():
    model = sem.init_model("bin_tilt", seed=1)
    s = make_state([(0.8, -0.15, GEOM.bin_rest_z)])
    pred = sem.sem_forward(model, sem.encode_input(s, w.BinTilt(12.0), "bin_tilt"))
    assert pred.delta.shape == (1, sem.S_DIM)
    assert np.isfinite(pred.cost)


def test_sem_predict_moves_positions_only():
    model = sem.init_model("pick_place", seed=9)
    s = w.sample_initial_state(GEOM, {0: 3, 1: 3}, 8)
    nxt, cost = sem.sem_predict(model, s, w.PickPlace(0, (0.8, -0.2, -0.08)))
    assert [b.color for b in nxt.blocks] == [b.color for b in s.blocks]
    assert [b.index for b in nxt.blocks] == [b.index for b in s.blocks]
    assert isinstance(cost, float)


def test_predict_batch_matches_single_predictions():
    model = sem.init_model("pick_place", seed=13)
    backend = sem.SemBackend({"pick_place": model})
    s = w.sample_initial_state(GEOM, {0: 3, 1: 3}, 21)
    params = w.sample_params("pick_place", s, np.random.default_rng(0), 6, GEOM)
    batch = backend.predict_batch("pick_place", s, params)
    for p, (bs, bc) in zip(params, batch):
        ss, sc = backend.predict("pick_place", s, p)
        assert np.allclose(bs.positions(), ss.positions(), atol=1e-12)
        assert bc == pytest.approx(sc, abs=1e-12)


def test_loss_formula_oracle():
    model = sem.init_model("pick_place", seed=2)
    s0 = w.sample_initial_state(GEOM, {0: 3, 1: 3}, 1)
    theta = w.PickPlace(0, (0.8, -0.2, -0.08))
    s1, cost = w.apply_pick_place(s0, theta, GEOM)
    pred = sem.sem_forward(model, sem.encode_input(s0, theta, "pick_place"))
    got = sem.sem_loss(pred, s0, s1, cost)
    k = len(s0.blocks)
    expect = (sem.LAMBDA_COST * (cost - pred.cost) ** 2
              + sem.LAMBDA_STATE / k * np.sum((sem.delta_target(s0, s1) - pred.delta) ** 2))
    assert got == pytest.approx(expect)


# --- training ---

def test_training_reduces_loss(trained_pick_place):
    model, ds = trained_pick_place
    fresh = sem.init_model("pick_place", seed=11)
    hist = sem.train(fresh, ds.records[:64], epochs=30, rng=np.random.default_rng(3))
    assert hist[-1] < hist[0]


def test_trained_model_beats_the_zero_predictor(trained_pick_place):
    model, ds = trained_pick_place
    base = pred = 0.0
    for r in ds.records[:100]:
        d = sem.delta_target(r.x0, r.xT)
        p = sem.sem_forward(model, sem.encode_input(r.x0, r.theta, "pick_place"))
        base += np.sum(d ** 2)
        pred += np.sum((d - p.delta) ** 2)
    assert pred < 0.1 * base


def test_train_rejects_empty_dataset():
    model = sem.init_model("pick_place", seed=0)
    with pytest.raises(sem.TrainingError):
        sem.train(model, [], epochs=1, rng=np.random.default_rng(0))


def test_train_restores_base_learning_rate():
    model = sem.init_model("tray_slide", seed=5)
    ds = ll.bootstrap_skill("tray_slide", GEOM, 10, 3, seed=55)
    before = model.adam.lr
    sem.train(model, ds.records, epochs=10, rng=np.random.default_rng(0))
    assert model.adam.lr == before


# --- checkpoints ---

def test_checkpoint_round_trip(tmp_path, trained_pick_place):
    model, _ = trained_pick_place
    path = tmp_path / "pp.json"
    sem.save_checkpoint(model, path)
    loaded = sem.load_checkpoint(path)
    assert loaded.skill == model.skill
    s = w.sample_initial_state(GEOM, {0: 3, 1: 3}, 2)
    theta = w.PickPlace(1, (0.8, -0.2, -0.08))
    a = sem.sem_forward(model, sem.encode_input(s, theta, "pick_place"))
    b = sem.sem_forward(loaded, sem.encode_input(s, theta, "pick_place"))
    assert np.allclose(a.delta, b.delta)
    assert a.cost == pytest.approx(b.cost)


def test_checkpoint_rejects_corrupt_shapes(tmp_path):
    model = sem.init_model("bin_tilt", seed=4)
    path = tmp_path / "bt.json"
    sem.save_checkpoint(model, path)
    import json
    doc = json.loads(path.read_text())
    doc["modules"]["node_embed"][0]["b"] = [0.0]  # wrong width
    path.write_text(json.dumps(doc))
    with pytest.raises(sem.ContractError):
        sem.load_checkpoint(path)
