import math

import numpy as np
import pytest
from scipy.integrate import quad

from cbfpipe import ensemble as E


def tiny_arch(activation="relu"):
    return E.MlpArchitecture(n_inputs=3, hidden=(6, 5), n_outputs=4, activation=activation)


def flatten_grads(gw, gb):
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(gw, gb)])


def set_flat(m, theta):
    i = 0
    for l in range(len(m.weights)):
        size = m.weights[l].size
        m.weights[l] = theta[i : i + size].reshape(m.weights[l].shape)
        i += size
        size = m.biases[l].size
        m.biases[l] = theta[i : i + size]
        i += size
    return m


def test_forward_zero_weights():
    arch = tiny_arch()
    m = E.MlpWeights.zeros(arch)
    out = E.forward(m, np.zeros((2, 3)))
    assert np.allclose(out[:, 0], 0.0)
    assert np.allclose(out[:, 2], 0.0)
    expected_var = math.log(2.0) + arch.var_floor  # softplus(0) + floor
    assert np.allclose(out[:, 1], expected_var)
    assert np.allclose(out[:, 3], expected_var)


def test_forward_batch_order_invariant():
    rng = np.random.default_rng(0)
    m = E.MlpWeights.init(tiny_arch(), rng)
    x = rng.uniform(-1, 1, (10, 3))
    out = E.forward(m, x)
    perm = rng.permutation(10)
    assert np.array_equal(E.forward(m, x[perm]), out[perm])


def test_forward_matches_hand_rolled_fixture():
    # independently coded matrix chain on a 3-neuron single hidden layer
    arch = E.MlpArchitecture(n_inputs=2, hidden=(3,), n_outputs=4)
    rng = np.random.default_rng(1)
    m = E.MlpWeights.init(arch, rng)
    x = np.array([[0.3, -0.7]])
    hidden = np.maximum(x @ m.weights[0] + m.biases[0], 0.0)
    raw = hidden @ m.weights[1] + m.biases[1]
    expected = raw.copy()
    expected[:, 1] = np.log1p(np.exp(raw[:, 1])) + arch.var_floor
    expected[:, 3] = np.log1p(np.exp(raw[:, 3])) + arch.var_floor
    assert np.allclose(E.forward(m, x), expected, atol=1e-12)


def test_nll_loss_hand_value():
    row = np.array([1.0, 1.0, 2.0, 1.0])
    val = E.nll_loss(row, (1.0, 2.0))
    assert val == pytest.approx(math.log(2 * math.pi))  # half-log each output


def test_nll_variance_tradeoff():
    # large residual: loss decreases as variance grows; zero residual: increases
    variances = np.linspace(0.5, 5.0, 30)
    big = [E.nll_loss(np.array([0.0, v, 0.0, 1.0]), (5.0, 0.0)) for v in variances]
    assert all(x > y for x, y in zip(big, big[1:]))
    zero = [E.nll_loss(np.array([0.0, v, 0.0, 1.0]), (0.0, 0.0)) for v in variances]
    assert all(x < y for x, y in zip(zero, zero[1:]))


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_gradient_matches_finite_differences(activation):
    rng = np.random.default_rng(2)
    arch = tiny_arch(activation)
    m = E.MlpWeights.init(arch, rng)
    x = rng.uniform(-1, 1, (4, 3))
    y = rng.uniform(-0.5, 1.5, (4, 2))
    if activation == "relu":
        _, zs, _ = E._forward_caches(m, x)
        assert min(np.abs(z).min() for z in zs) > 1e-4  # away from kinks
    _, gw, gb = E.loss_and_grad(m, x, y)
    g_an = flatten_grads(gw, gb)
    theta0 = m.flatten()
    h = 1e-6
    g_fd = np.zeros_like(theta0)
    for i in range(len(theta0)):
        tp, tm = theta0.copy(), theta0.copy()
        tp[i] += h
        tm[i] -= h
        lp = np.mean(E.nll_terms(E.forward_raw(set_flat(m.copy(), tp), x), y, arch.var_floor))
        lm = np.mean(E.nll_terms(E.forward_raw(set_flat(m.copy(), tm), x), y, arch.var_floor))
        g_fd[i] = (lp - lm) / (2 * h)
    rel = np.max(np.abs(g_fd - g_an)) / max(np.max(np.abs(g_an)), 1e-12)
    assert rel < 1e-5


def test_train_single_sample_descends():
    x = np.array([[0.2, -0.3, 0.5]])
    y = np.array([[1.0, 0.5]])
    cfg = E.TrainConfig(epochs=1, batch_size=1, lr=1e-3, k_members=1, hidden=(8,))
    norm = E.Normalization.fit(x)
    model0, _ = E.train(x, y, E.TrainConfig(epochs=1, batch_size=1, lr=0.0, k_members=1,
                                            hidden=(8,), optimizer="sgd"), 5, normalization=norm)
    model1, _ = E.train(x, y, cfg, 5, normalization=norm)
    xn = norm.normalize(x)
    before = float(E.nll_terms(E.forward_raw(model0.members[0], xn), y, 1e-6)[0])
    after = float(E.nll_terms(E.forward_raw(model1.members[0], xn), y, 1e-6)[0])
    assert after < before


def test_train_determinism_bitwise():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (40, 3))
    y = rng.uniform(0, 2, (40, 2))
    cfg = E.TrainConfig(epochs=5, batch_size=8, k_members=2, hidden=(6,), lr=1e-3)
    m1, c1 = E.train(x, y, cfg, 11)
    m2, c2 = E.train(x, y, cfg, 11)
    assert all(a.equal(b) for a, b in zip(m1.members, m2.members))
    assert E.dumps_model(m1) == E.dumps_model(m2)
    assert E.dumps_checkpoints(c1, m1.arch) == E.dumps_checkpoints(c2, m2.arch)


def test_member_diversity():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, (30, 3))
    y = rng.uniform(0, 2, (30, 2))
    model, _ = E.train(x, y, E.TrainConfig(epochs=2, k_members=3, hidden=(6,)), 12)
    assert not model.members[0].equal(model.members[1])


def test_checkpoint_resume_reproduces_uninterrupted_run():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (50, 3))
    y = rng.uniform(0, 2, (50, 2))
    cfg = E.TrainConfig(epochs=10, batch_size=16, k_members=2, hidden=(6,), n_checkpoints=5)
    full, ckpts = E.train(x, y, cfg, 13)
    mid = ckpts[1]
    resumed, _ = E.train(x, y, cfg, 13, resume_from=mid)
    assert all(a.equal(b) for a, b in zip(full.members, resumed.members))


def test_divergence_raises_with_location():
    # resume from a poisoned snapshot: the non-finite loss must be reported
    # with the member and epoch where it appears
    rng = np.random.default_rng(20)
    x = rng.uniform(-1, 1, (10, 3))
    y = rng.uniform(0, 2, (10, 2))
    cfg = E.TrainConfig(epochs=6, batch_size=4, k_members=2, hidden=(4,), n_checkpoints=3)
    _, ckpts = E.train(x, y, cfg, 1)
    bad = ckpts[0]
    bad.member_weights[1].weights[0][:] = np.nan
    with np.errstate(invalid="ignore"):
        with pytest.raises(E.TrainingDivergedError) as err:
            E.train(x, y, cfg, 1, resume_from=bad)
    assert err.value.member == 1
    assert err.value.epoch == bad.epoch + 1


def test_normalization_round_trip():
    rng = np.random.default_rng(6)
    x = rng.uniform(-5, 5, (100, 5))
    norm = E.Normalization.fit(x)
    assert np.max(np.abs(norm.denormalize(norm.normalize(x)) - x)) < 1e-12


def test_checkpoint_epochs_even_spacing():
    cfg = E.TrainConfig(epochs=200, n_checkpoints=10)
    assert cfg.checkpoint_epochs() == [20, 40, 60, 80, 100, 120, 140, 160, 180, 200]
    cfg = E.TrainConfig(epochs=3, n_checkpoints=10)
    assert cfg.checkpoint_epochs() == [1, 2, 3]


def test_pooled_moments_identical_members():
    mus = np.array([1.2, 1.2, 1.2])
    variances = np.array([0.7, 0.7, 0.7])
    assert E.pool_variance(mus, variances) == pytest.approx(0.7)


def test_pooled_variance_dominates_mean_member_variance():
    rng = np.random.default_rng(7)
    for _ in range(500):
        mus = rng.uniform(-3, 3, 4)
        variances = rng.uniform(0.1, 2.0, 4)
        assert E.pool_variance(mus, variances) >= variances.mean() - 1e-12


def test_pooled_moments_match_monte_carlo():
    mus = np.array([0.2, 1.0, -0.4])
    variances = np.array([0.4, 0.9, 0.6])
    rng = np.random.default_rng(8)
    comp = rng.integers(0, 3, 500_000)
    draws = rng.normal(mus[comp], np.sqrt(variances[comp]))
    assert abs(np.mean(mus) - draws.mean()) < 0.01 * max(1, abs(draws.mean()))
    pooled = E.pool_variance(mus, variances)
    assert abs(pooled - draws.var()) / draws.var() < 0.01


def test_jrd_identical_members_exactly_zero():
    assert E.jrd_gaussians(np.array([1.5, 1.5, 1.5]), np.array([0.3, 0.3, 0.3])) == 0.0


def test_jrd_nonnegative_in_comparable_variance_regime():
    # order-2 divergence loses nonnegativity only for extreme variance ratios;
    # ensembles trained on shared data stay within a factor of a few
    rng = np.random.default_rng(9)
    for _ in range(10000):
        k = rng.integers(2, 5)
        mus = rng.uniform(-5, 5, k)
        variances = rng.uniform(0.5, 2.0, k)
        assert E.jrd_gaussians(mus, variances) >= -1e-12


def test_jrd_grows_with_disagreement():
    base = E.jrd_gaussians(np.array([0.0, 0.1]), np.array([1.0, 1.0]))
    far = E.jrd_gaussians(np.array([0.0, 3.0]), np.array([1.0, 1.0]))
    assert far > base > 0


def test_jrd_matches_quadrature():
    cases = [
        (np.array([0.3, -0.5, 1.2]), np.array([0.5, 1.1, 0.8])),
        (np.array([0.0, 0.0]), np.array([1.0, 1.5])),
        (np.array([-2.0, 2.0]), np.array([0.3, 0.4])),
    ]
    for mus, variances in cases:
        closed = E.jrd_gaussians(mus, variances)

        def mix_sq(t):
            pdf = np.mean(
                [
                    np.exp(-((t - m) ** 2) / (2 * v)) / np.sqrt(2 * np.pi * v)
                    for m, v in zip(mus, variances)
                ]
            )
            return pdf * pdf

        integral = quad(mix_sq, -40, 40, limit=400)[0]
        h_mix = -math.log(integral)
        h_members = np.mean([math.log(2 * math.sqrt(math.pi * v)) for v in variances])
        assert closed == pytest.approx(h_mix - h_members, abs=1e-6)


def test_jrd_batch_matches_scalar():
    rng = np.random.default_rng(10)
    mus = rng.uniform(-2, 2, (3, 20))
    variances = rng.uniform(0.3, 1.5, (3, 20))
    batch = E.jrd_batch(mus, variances)
    for j in range(20):
        assert batch[j] == pytest.approx(E.jrd_gaussians(mus[:, j], variances[:, j]), abs=1e-12)


def test_cvar_zero_variance_limit():
    assert E.cvar_gaussian(1.3, 0.0, 0.9) == pytest.approx(1.3)


def test_cvar_dominates_mean_and_grows_with_alpha():
    alphas = np.linspace(0.05, 0.99, 40)
    vals = [E.cvar_gaussian(0.7, 1.5, a) for a in alphas]
    assert all(v > 0.7 for v in vals)
    assert all(x < y for x, y in zip(vals, vals[1:]))


def test_cvar_matches_monte_carlo():
    mu, var, alpha = 1.5, 2.3, 0.95
    closed = E.cvar_gaussian(mu, var, alpha)
    draws = np.random.default_rng(11).normal(mu, math.sqrt(var), 1_000_000)
    tail = draws[draws >= np.quantile(draws, alpha)].mean()
    assert abs(closed - tail) / abs(tail) < 0.005


def test_predict_shapes_and_pooling():
    rng = np.random.default_rng(12)
    x = rng.uniform(-1, 1, (30, 5))
    y = rng.uniform(0, 2, (30, 2))
    model, _ = E.train(x, y, E.TrainConfig(epochs=2, k_members=3, hidden=(6,)), 14)
    from cbfpipe.dynamics import GammaPair

    pred = E.predict(model, (0.5, 0.2, 0.1), GammaPair(1.0, 1.0))
    assert pred.member_mu_phi.shape == (3,)
    assert pred.var_phi >= np.mean(pred.member_var_phi) - 1e-12
    mu_phi, var_phi, mu_td, var_td = E.predict_batch(model, x)
    assert mu_phi.shape == (30,)
    assert np.all(var_phi > 0) and np.all(var_td > 0)


def test_model_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    x = rng.uniform(-1, 1, (20, 5))
    y = rng.uniform(0, 2, (20, 2))
    model, ckpts = E.train(x, y, E.TrainConfig(epochs=3, k_members=2, hidden=(6,)), 15)
    path = tmp_path / "model.json"
    E.save_model(model, path)
    loaded = E.load_model(path)
    assert all(a.equal(b) for a, b in zip(model.members, loaded.members))
    assert np.array_equal(model.normalization.mean, loaded.normalization.mean)
    assert loaded.arch == model.arch
    cpath = tmp_path / "ckpts.json"
    E.save_checkpoints(ckpts, model.arch, cpath)
    loaded_ckpts, arch = E.load_checkpoints(cpath)
    assert arch == model.arch
    assert [c.epoch for c in loaded_ckpts] == [c.epoch for c in ckpts]
    assert all(
        a.equal(b)
        for ca, cb in zip(ckpts, loaded_ckpts)
        for a, b in zip(ca.member_weights, cb.member_weights)
    )


def test_architecture_parameter_count():
    arch = E.MlpArchitecture()  # 5 -> 40 -> 80 -> 120 -> 40 -> 4
    expected = 5 * 40 + 40 + 40 * 80 + 80 + 80 * 120 + 120 + 120 * 40 + 40 + 40 * 4 + 4
    assert arch.n_params == expected
