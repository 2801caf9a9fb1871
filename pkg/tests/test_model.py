import math

import numpy as np
import pytest

from hetreg.errors import ConfigError, ShapeError, TraceError
from hetreg.model import MlpConfig, ProbabilisticMlp, load_checkpoint, save_checkpoint
from hetreg.numcore import SeededRng, softplus


def tiny_net(w1=2.0, b1=0.1, wm=0.7, wv=-0.4, bm=0.3, bv=0.2):
    cfg = MlpConfig(1, (1,))
    model = ProbabilisticMlp(cfg)
    model.weights[0][...] = w1
    model.biases[0][...] = b1
    model.weights[1][...] = [[wm, wv]]
    model.biases[1][...] = [bm, bv]
    return model


def test_init_biases_and_initial_variance():
    cfg = MlpConfig(1, (2,))
    model = ProbabilisticMlp.init(cfg, SeededRng(3))
    assert np.all(model.biases[0] == 0)
    assert model.biases[1][0] == 0
    assert model.biases[1][1] != 0
    var = model.predict(np.zeros((1, 1))).variance
    assert 0.99 <= var[0, 0] <= 1.01


def test_init_is_deterministic():
    cfg = MlpConfig(3, (8, 8), output_dim=2)
    a = ProbabilisticMlp.init(cfg, SeededRng(42)).params
    b = ProbabilisticMlp.init(cfg, SeededRng(42)).params
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != ProbabilisticMlp.init(cfg, SeededRng(43)).params.tobytes()


def test_uniform_fan_in_init_bounds():
    cfg = MlpConfig(1, (64, 64), init="uniform_fan_in")
    m = ProbabilisticMlp.init(cfg, SeededRng(0))
    assert np.max(np.abs(m.weights[0])) <= 1.0 and np.max(np.abs(m.biases[0])) <= 1.0
    assert np.max(np.abs(m.weights[1])) <= 1 / 8 and np.any(m.biases[1] != 0)
    assert m.predict(np.zeros((1, 1))).variance.shape == (1, 1)


@pytest.mark.parametrize("kwargs", [
    dict(input_dim=1, hidden_sizes=()),
    dict(input_dim=0, hidden_sizes=(4,)),
    dict(input_dim=1, hidden_sizes=(4,), activation="sigmoid"),
    dict(input_dim=1, hidden_sizes=(4,), variance_floor=0.0),
    dict(input_dim=1, hidden_sizes=(4,), init="he"),
])
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        MlpConfig(**kwargs)


def test_forward_hand_computation():
    model = tiny_net()
    pred, trace = model.forward(np.array([[0.5]]))
    h = math.tanh(2.0 * 0.5 + 0.1)
    assert pred.mean[0, 0] == pytest.approx(0.7 * h + 0.3, abs=1e-15)
    expected_var = math.log1p(math.exp(-0.4 * h + 0.2)) + 1e-8
    assert pred.variance[0, 0] == pytest.approx(expected_var, rel=1e-14)
    assert trace.batch_size == 1 and trace.features.shape == (1, 1)


def test_empty_batch():
    model = ProbabilisticMlp.init(MlpConfig(2, (4,)), SeededRng(0))
    pred, _ = model.forward(np.zeros((0, 2)))
    assert pred.mean.shape == (0, 1) and pred.variance.shape == (0, 1)


def test_ceiling_clamp_exact_and_zero_gradient():
    model = tiny_net(w1=0.0, b1=0.0, wv=0.0, bv=1e6)
    pred, trace = model.forward(np.array([[1.0]]))
    assert pred.variance[0, 0] == 1000.0
    g = model.backward(trace, np.zeros((1, 1)), np.ones((1, 1)))
    assert np.all(g.flat == 0)


def test_forward_rejects_wrong_input_width():
    model = ProbabilisticMlp.init(MlpConfig(2, (4,)), SeededRng(0))
    with pytest.raises(ShapeError):
        model.forward(np.zeros((3, 5)))


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_variance_bounded_for_huge_inputs(activation):
    cfg = MlpConfig(2, (16, 16), activation=activation)
    model = ProbabilisticMlp.init(cfg, SeededRng(1))
    x = np.array([[1e6, -1e6], [-1e6, 1e6], [1e6, 1e6], [0.0, 0.0], [-1e6, -1e6]])
    for m in (model, ProbabilisticMlp(cfg, model.params * 50)):
        var = m.predict(x).variance
        assert np.all(var >= cfg.variance_floor) and np.all(var <= cfg.variance_ceiling)


def test_forward_deterministic():
    model = ProbabilisticMlp.init(MlpConfig(3, (8,)), SeededRng(2))
    x = SeededRng(9).standard_normal(30).reshape(10, 3)
    a, b = model.predict(x), model.predict(x)
    assert a.mean.tobytes() == b.mean.tobytes() and a.variance.tobytes() == b.variance.tobytes()


# -- backward ---------------------------------------------------------------

def test_backward_zero_head_grads():
    model = ProbabilisticMlp.init(MlpConfig(2, (5, 5), output_dim=2), SeededRng(0))
    _, trace = model.forward(np.ones((4, 2)))
    g = model.backward(trace, np.zeros((4, 2)), np.zeros((4, 2)))
    assert np.all(g.flat == 0)


def test_backward_hand_chain_rule():
    x, w1, b1, wm = 0.5, 2.0, 0.1, 0.7
    model = tiny_net(w1=w1, b1=b1, wm=wm)
    _, trace = model.forward(np.array([[x]]))
    g = model.backward(trace, np.ones((1, 1)), np.zeros((1, 1)))
    h = math.tanh(w1 * x + b1)
    dh = 1 - h * h
    w_trunk, b_trunk, w_head, b_head = g.arrays
    assert w_head[0, 0] == pytest.approx(h, abs=1e-15)
    assert b_head[0] == 1.0
    assert w_head[0, 1] == 0.0 and b_head[1] == 0.0
    assert w_trunk[0, 0] == pytest.approx(wm * dh * x, abs=1e-15)
    assert b_trunk[0] == pytest.approx(wm * dh, abs=1e-15)


def test_backward_errors():
    model = ProbabilisticMlp.init(MlpConfig(1, (3,)), SeededRng(0))
    _, trace = model.forward(np.zeros((4, 1)))
    with pytest.raises(TraceError):
        model.backward(trace, np.zeros((3, 1)), np.zeros((3, 1)))
    with pytest.raises(ShapeError):
        model.backward(trace, np.zeros((4, 2)), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        model.backward(trace, np.zeros((4, 1)), np.zeros((4, 2)))


def fd_param_grads(model, x, dm, dv, h=1e-5):
    """Central differences of sum(dm * mean + dv * var) w.r.t. every parameter."""
    base = model.params.copy()
    out = np.empty_like(base)
    for i in range(base.size):
        vals = []
        for s in (h, -h):
            p = base.copy()
            p[i] += s
            pred = ProbabilisticMlp(model.config, p).predict(x)
            vals.append(np.sum(dm * pred.mean) + np.sum(dv * pred.variance))
        out[i] = (vals[0] - vals[1]) / (2 * h)
    return out


def rel_err(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def random_instance(k):
    rng = SeededRng(1000 + k)
    activation = ("tanh", "relu")[k % 2]
    d = (1, 3)[(k // 2) % 2]
    m = 1 + k % 3
    cfg = MlpConfig(m, (16, 16), activation=activation, output_dim=d)
    while True:
        model = ProbabilisticMlp.init(cfg, rng)
        x = rng.standard_normal(5 * m).reshape(5, m)
        _, trace = model.forward(x)
        # avoid relu kinks inside the finite-difference step
        if activation == "tanh" or min(np.min(np.abs(z)) for z in trace.pre_activations) > 1e-4:
            break
    dm = rng.standard_normal(5 * d).reshape(5, d)
    dv = rng.standard_normal(5 * d).reshape(5, d)
    return model, x, dm, dv


@pytest.mark.parametrize("block", range(4))
def test_backward_matches_finite_differences_100_instances(block):
    worst = 0.0
    for k in range(block * 25, block * 25 + 25):
        model, x, dm, dv = random_instance(k)
        _, trace = model.forward(x)
        analytic = model.backward(trace, dm, dv).flat
        worst = max(worst, rel_err(analytic, fd_param_grads(model, x, dm, dv)))
    assert worst < 1e-5


def test_backward_reuses_buffer():
    model, x, dm, dv = random_instance(0)
    _, trace = model.forward(x)
    g1 = model.backward(trace, dm, dv)
    first = g1.flat.copy()
    g2 = model.backward(trace, dm, dv, out=g1)
    assert g2 is g1 and np.array_equal(g2.flat, first)


# -- feature Jacobian -------------------------------------------------------

def test_feature_jacobian_identity_relu_trunk():
    cfg = MlpConfig(2, (2,), activation="relu")
    model = ProbabilisticMlp(cfg)
    model.weights[0][...] = np.eye(2)
    jac = model.feature_jacobian(np.array([0.7, 1.3]))
    assert jac.shape == (2, 2)
    assert np.max(np.abs(jac - np.eye(2))) < 1e-6


def test_feature_jacobian_tanh_2x():
    model = ProbabilisticMlp(MlpConfig(1, (1,)))
    model.weights[0][...] = 2.0
    assert abs(model.feature_jacobian(np.array([0.0]))[0, 0] - 2.0) < 1e-6


def test_feature_jacobian_constant_features():
    model = ProbabilisticMlp(MlpConfig(3, (4, 4)))
    model.biases[0][...] = 0.3
    model.biases[1][...] = -0.2
    assert np.array_equal(model.feature_jacobian(np.array([1.0, 2.0, 3.0])), np.zeros((4, 3)))


def test_feature_jacobians_batch_matches_single():
    model = ProbabilisticMlp.init(MlpConfig(2, (6, 5)), SeededRng(4))
    x = SeededRng(5).standard_normal(8).reshape(4, 2)
    batch = model.feature_jacobians(x)
    assert batch.shape == (4, 5, 2)
    for i in range(4):
        assert np.array_equal(batch[i], model.feature_jacobian(x[i]))


# -- checkpoints ------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg = MlpConfig(3, (7, 5), activation="relu", output_dim=2, variance_ceiling=50.0, init="uniform_fan_in")
    model = ProbabilisticMlp.init(cfg, SeededRng(8))
    save_checkpoint(model, tmp_path / "m.npz")
    loaded = load_checkpoint(tmp_path / "m.npz")
    assert loaded.config == cfg
    assert loaded.params.tobytes() == model.params.tobytes()
    with np.load(tmp_path / "m.npz") as f:
        assert f["trunk.0.weight"].dtype == np.dtype("<f8")
        assert set(f.files) >= {"format", "config", "mean_head.weight", "variance_head.bias"}


def test_checkpoint_rejects_foreign_file(tmp_path):
    np.savez(tmp_path / "x.npz", format=np.array("something-else"), config=np.array("{}"))
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "x.npz")


def test_named_arrays_are_views():
    model = ProbabilisticMlp.init(MlpConfig(1, (3,)), SeededRng(0))
    model.named_arrays()["variance_head.bias"][...] = 5.0
    assert model.predict(np.zeros((1, 1))).variance[0, 0] == pytest.approx(softplus(5.0) + 1e-8)
