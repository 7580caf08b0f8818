import math

import numpy as np
import pytest

from icnn_doe.errors import (
    DataHeadMismatch,
    DimensionMismatch,
    EmptyTestSet,
    HeadLimitMismatch,
    NegativeOutputScale,
    NegativeZWeight,
)
from icnn_doe.grid import Limits
from icnn_doe.icnn import (
    IcnnModel,
    MlpModel,
    Normalization,
    TrainConfig,
    exact_inference_lp,
    fold_normalization,
    forward,
    gradients,
    load_model,
    make_head,
    min_z_weight,
    nmae,
    project_nonnegative,
    save_model,
    train,
    violation,
)

from oracles import icnn_by_hand


def scalar_net():
    one = np.array([[1.0]])
    return IcnnModel([one, np.array([[0.0]])], [one.copy()], [np.zeros(1), np.zeros(1)])


def random_icnn(seed, d=4, hidden=(6, 5), out=3):
    return IcnnModel.init(d, hidden, out, np.random.default_rng(seed))


def test_relu_examples():
    net = scalar_net()
    assert forward(net, [-2.0])[0] == 0.0
    assert forward(net, [3.0])[0] == 3.0


def test_forward_matches_hand_transcription():
    rng = np.random.default_rng(0)
    for seed in range(5):
        net = random_icnn(seed)
        x = rng.normal(size=4)
        ref = icnn_by_hand([w.tolist() for w in net.wx], [w.tolist() for w in net.wz],
                           [b.tolist() for b in net.b], x)
        np.testing.assert_allclose(forward(net, x), ref, atol=1e-12)


def test_forward_dimension_check():
    with pytest.raises(DimensionMismatch):
        forward(random_icnn(0), np.zeros(3))


def test_init_is_feasible_and_mlp_has_no_passthrough():
    assert min_z_weight(random_icnn(1)) >= 0
    mlp = MlpModel.init(4, [5, 5], 2, np.random.default_rng(0))
    assert all(w is None for w in mlp.wx[1:])
    assert forward(mlp, np.zeros((7, 4))).shape == (7, 2)


def test_gradient_check_on_sampled_parameters():
    rng = np.random.default_rng(3)
    net = random_icnn(3, d=3, hidden=(5, 4), out=2)
    X = rng.normal(size=(16, 3))
    Y = rng.normal(size=(16, 2))
    _, grads = gradients(net, X, Y)
    params = net.params()
    sizes = [p.size for p in params]
    flat = rng.choice(sum(sizes), size=10, replace=False)
    h = 1e-5
    for f in flat:
        k = int(np.searchsorted(np.cumsum(sizes), f, side="right"))
        j = f - (sum(sizes[:k]))
        p = params[k].reshape(-1)
        orig = p[j]
        p[j] = orig + h
        up = gradients(net, X, Y)[0]
        p[j] = orig - h
        down = gradients(net, X, Y)[0]
        p[j] = orig
        fd = (up - down) / (2 * h)
        g = grads[k].reshape(-1)[j]
        assert abs(g - fd) / max(abs(g), abs(fd), 1e-6) <= 1e-4


def test_convexity_of_random_icnn():
    rng = np.random.default_rng(8)
    net = random_icnn(8, d=5, hidden=(16, 8), out=4)
    x1, x2 = rng.normal(size=(2, 1000, 5)) * 3
    lam = rng.random((1000, 1))
    lhs = forward(net, lam * x1 + (1 - lam) * x2)
    rhs = lam * forward(net, x1) + (1 - lam) * forward(net, x2)
    assert np.all(lhs <= rhs + 1e-8)


def test_projection():
    net = random_icnn(2)
    net.wz[0][0, 0] = -0.5
    keep = [w.copy() for w in net.wx]
    project_nonnegative(net)
    assert net.wz[0][0, 0] == 0.0
    once = [w.copy() for w in net.wz]
    project_nonnegative(net)
    for a, b in zip(once, net.wz):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(keep, net.wx):
        np.testing.assert_array_equal(a, b)


def test_affine_target_is_learned():
    rng = np.random.default_rng(0)
    A = rng.normal(size=3)
    X = rng.uniform(-1, 1, size=(3000, 3))
    Y = (X @ A + 0.5)[:, None]
    net = IcnnModel.init(3, [8], 1, np.random.default_rng(1))
    before = nmae(net, X[2500:], Y[2500:], 1.0)
    net, curve = train(net, (X[:2000], Y[:2000]), (X[2000:2500], Y[2000:2500]), TrainConfig(epochs=200, batch_size=32, lr=3e-3, seed=0))
    assert nmae(net, X[2500:], Y[2500:], 1.0) < 1e-3 < before
    assert curve[-1][2] < curve[0][2]
    assert min_z_weight(net) >= 0.0


def test_training_keeps_weights_feasible_and_is_deterministic():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(600, 2))
    Y = np.abs(X).sum(axis=1, keepdims=True) - X[:, :1] ** 2
    cfg = TrainConfig(epochs=15, seed=3)
    nets = []
    for _ in range(2):
        net = IcnnModel.init(2, [6, 6], 1, np.random.default_rng(0))
        train(net, (X[:500], Y[:500]), (X[500:], Y[500:]), cfg)
        assert min_z_weight(net) >= 0.0
        nets.append(net)
    for a, b in zip(nets[0].params(), nets[1].params()):
        np.testing.assert_array_equal(a, b)


def test_zero_epochs_leave_model_untouched():
    net = random_icnn(0, d=2, out=1)
    before = [p.copy() for p in net.params()]
    X = np.zeros((4, 2))
    train(net, (X, np.zeros((4, 1))), (X, np.zeros((4, 1))), TrainConfig(epochs=0))
    for a, b in zip(before, net.params()):
        np.testing.assert_array_equal(a, b)


def test_head_mismatch():
    net = random_icnn(0, d=2, out=1)
    X = np.zeros((4, 2))
    with pytest.raises(DataHeadMismatch):
        train(net, (X, np.zeros((4, 3))), (X, np.zeros((4, 3))), TrainConfig())


def test_nmae_definition():
    net = scalar_net()
    X = np.array([[1.0], [2.0]])
    assert nmae(net, X, X, 5.0) == 0.0
    assert nmae(net, X, X + 0.5, 5.0) == pytest.approx(0.1)
    with pytest.raises(EmptyTestSet):
        nmae(net, np.zeros((0, 1)), np.zeros((0, 1)), 1.0)


def test_violation_examples():
    lim = Limits(0.9, 1.1, np.array([300.0]), np.array([-125.0]))
    vh = make_head("v", lim, [0, 1])
    v = np.array([1.12, 1.0])
    assert violation(vh, np.concatenate([v, -v])) == pytest.approx(0.02)
    rh = make_head("rpf", lim, [0])
    assert violation(rh, [150.0]) == pytest.approx(25.0)
    assert violation(rh, -rh.eps) == 0.0
    with pytest.raises(DimensionMismatch):
        violation(vh, [1.0])
    with pytest.raises(HeadLimitMismatch):
        make_head("ol", lim, [0, 3])


def test_exact_inference_tiny_net_at_zero():
    net = random_icnn(4, d=3, hidden=(4,), out=1)
    assert exact_inference_lp(net, np.zeros(3))[0] == pytest.approx(forward(net, np.zeros(3))[0], abs=1e-9)


def test_exact_inference_matches_forward_on_random_inputs():
    rng = np.random.default_rng(2)
    net = random_icnn(2, d=4, hidden=(12, 8), out=2)
    net.norm = Normalization(rng.normal(size=4), rng.uniform(0.5, 2, 4), rng.normal(size=2), rng.uniform(0.5, 2, 2))
    for _ in range(20):
        x = rng.normal(size=4) * 2
        np.testing.assert_allclose(exact_inference_lp(net, x), forward(net, x), atol=1e-6)


def test_exact_inference_rejects_negative_weights():
    net = random_icnn(0)
    net.wz[1][0, 0] = -1e-3
    with pytest.raises(NegativeZWeight):
        exact_inference_lp(net, np.zeros(4))


def test_folding_preserves_outputs():
    rng = np.random.default_rng(6)
    for cls in (IcnnModel, MlpModel):
        net = cls.init(4, [7, 5], 3, rng)
        net.norm = Normalization(rng.normal(size=4) * 10, rng.uniform(0.1, 5, 4),
                                 rng.normal(size=3), rng.uniform(0.1, 5, 3))
        folded = fold_normalization(net)
        X = rng.normal(size=(50, 4)) * 10
        np.testing.assert_allclose(forward(folded, X), forward(net, X), atol=1e-9, rtol=0)
        if cls is IcnnModel:
            assert min_z_weight(folded) >= 0
        again = fold_normalization(folded)
        for a, b in zip(again.params(), folded.params()):
            np.testing.assert_array_equal(a, b)


def test_identity_normalization_folds_to_same_weights():
    net = random_icnn(5)
    net.norm = Normalization.identity(4, 3)
    folded = fold_normalization(net)
    for a, b in zip(net.params(), folded.params()):
        np.testing.assert_array_equal(a, b)


def test_negative_output_scale():
    net = random_icnn(5)
    net.norm = Normalization(np.zeros(4), np.ones(4), np.zeros(3), np.array([1.0, -1.0, 1.0]))
    with pytest.raises(NegativeOutputScale):
        fold_normalization(net)


def test_model_file_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    net = random_icnn(9)
    net.norm = Normalization(rng.normal(size=4), rng.uniform(0.5, 2, 4), rng.normal(size=3), rng.uniform(0.5, 2, 3))
    net.mask = [1, 2, 3]
    save_model(net, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    for a, b in zip(net.params(), back.params()):
        np.testing.assert_array_equal(a, b)
    X = rng.normal(size=(10, 4))
    np.testing.assert_array_equal(forward(back, X), forward(net, X))
    assert back.mask == [1, 2, 3] and not math.isnan(back.norm.y_scale[0])
