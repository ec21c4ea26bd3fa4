import math

import numpy as np
import pytest

from cbfpipe import ensemble as E
from cbfpipe.dynamics import GammaPair
from cbfpipe.selector import (
    CandidateGrid,
    SelectorParams,
    aggressiveness,
    candidate_predictions,
    filter_mask,
    lipschitz_constant,
    select_from_predictions,
    smooth_select,
)
from cbfpipe.surrogate import DomainBounds

GRID = CandidateGrid.uniform(7, 0.5, 2.5)
RELAXED = SelectorParams(jrd_max=1e9, cvar_max=1e9)


def test_aggressiveness_values():
    assert aggressiveness(GammaPair(0.5, 0.5)) == pytest.approx(1.0)
    assert aggressiveness(GammaPair(1.0, 0.5)) > aggressiveness(GammaPair(0.5, 0.5))
    best = max(GRID.candidates, key=aggressiveness)
    assert (best.gamma0, best.gamma1) == (2.5, 2.5)


def test_grid_covers_box():
    arr = GRID.as_array()
    assert arr.shape == (49, 2)
    assert arr.min() == 0.5 and arr.max() == 2.5


def test_single_candidate_returned_exactly():
    grid = CandidateGrid(candidates=(GammaPair(1.3, 0.9),))
    sel = select_from_predictions(
        np.array([5.0]), np.array([0.0]), np.array([0.0]), grid, RELAXED
    )
    assert (sel.gamma0, sel.gamma1) == (1.3, 0.9)


def test_uniform_weights_give_grid_mean():
    n = len(GRID.candidates)
    params = SelectorParams(kappa=0.0, tau_s=1e12, jrd_max=1e9, cvar_max=1e9)
    sel = select_from_predictions(
        np.linspace(0, 5, n), np.zeros(n), np.zeros(n), GRID, params
    )
    mean = GRID.as_array().mean(axis=0)
    assert sel.gamma0 == pytest.approx(mean[0], abs=1e-9)
    assert sel.gamma1 == pytest.approx(mean[1], abs=1e-9)


def test_selection_always_inside_box():
    rng = np.random.default_rng(0)
    n = len(GRID.candidates)
    for _ in range(500):
        params = SelectorParams(
            tau_s=10 ** rng.uniform(-2, 1),
            kappa=rng.uniform(0, 2),
            jrd_max=rng.uniform(0.1, 3),
            cvar_max=rng.uniform(1, 50),
        )
        sel = select_from_predictions(
            rng.uniform(-10, 40, n), rng.uniform(0, 5, n), rng.uniform(0, 80, n),
            GRID, params,
        )
        assert 0.5 <= sel.gamma0 <= 2.5
        assert 0.5 <= sel.gamma1 <= 2.5


def test_temperature_limit_approaches_argmax():
    n = len(GRID.candidates)
    params = SelectorParams(tau_s=1e-4, kappa=0.5, jrd_max=1e9, cvar_max=1e9)
    sel = select_from_predictions(
        np.zeros(n), np.zeros(n), np.zeros(n), GRID, params
    )
    spacing = 2.0 / 6
    assert abs(sel.gamma0 - 2.5) < spacing
    assert abs(sel.gamma1 - 2.5) < spacing


def test_raising_predicted_risk_never_raises_weight():
    n = len(GRID.candidates)
    rng = np.random.default_rng(1)
    mu = rng.uniform(0, 10, n)
    params = SelectorParams(kappa=0.8, jrd_max=1e9, cvar_max=1e9)
    target = 13
    base = select_from_predictions(mu, np.zeros(n), np.zeros(n), GRID, params)
    target_gamma = GRID.as_array()[target]
    d_base = math.hypot(base.gamma0 - target_gamma[0], base.gamma1 - target_gamma[1])
    mu2 = mu.copy()
    mu2[target] += 5.0
    moved = select_from_predictions(mu2, np.zeros(n), np.zeros(n), GRID, params)
    d_moved = math.hypot(moved.gamma0 - target_gamma[0], moved.gamma1 - target_gamma[1])
    assert d_moved >= d_base - 1e-12


def test_lipschitz_constant_values():
    bounds = DomainBounds()
    assert lipschitz_constant(SelectorParams(kappa=0.5), bounds) == pytest.approx(
        math.sqrt(2.0), abs=1e-12
    )
    assert lipschitz_constant(SelectorParams(kappa=0.0), bounds) == 0.0
    single = lipschitz_constant(SelectorParams(kappa=0.7), bounds)
    assert lipschitz_constant(SelectorParams(kappa=1.4), bounds) == pytest.approx(2 * single)


def test_empirical_lipschitz_never_exceeds_bound():
    bounds = DomainBounds()
    rng = np.random.default_rng(2)
    n = len(GRID.candidates)
    for _ in range(2000):
        params = SelectorParams(kappa=rng.uniform(0.05, 1.5),
                                tau_s=10 ** rng.uniform(-1, 0.7),
                                jrd_max=rng.uniform(0.5, 3),
                                cvar_max=rng.uniform(5, 60))
        bound = lipschitz_constant(params, bounds)
        mu = rng.uniform(-5, 30, n)
        jrd_values = rng.uniform(0, 4, n)
        cvar_values = rng.uniform(0, 80, n)
        dmu = rng.uniform(-1, 1, n) * 10 ** rng.uniform(-4, 1)
        a = select_from_predictions(mu, jrd_values, cvar_values, GRID, params)
        b = select_from_predictions(mu + dmu, jrd_values, cvar_values, GRID, params)
        move = math.hypot(a.gamma0 - b.gamma0, a.gamma1 - b.gamma1)
        assert move <= bound * np.max(np.abs(dmu)) + 1e-9


def test_filter_mask_infinite_thresholds_pass_all():
    params = SelectorParams(jrd_max=1e15, cvar_max=1e15)
    mask, gate = filter_mask(np.array([0.1, 2.0]), np.array([5.0, 50.0]), params)
    assert mask.all()
    assert np.allclose(gate, 1.0, atol=1e-6)


def test_filter_mask_midpoint_gate():
    params = SelectorParams(jrd_max=2.0, cvar_max=40.0)
    mask, gate = filter_mask(np.array([2.0]), np.array([0.0]), params)
    other = 1.0 / (1.0 + math.exp(-(40.0) / (0.05 * 40.0)))
    assert gate[0] == pytest.approx(0.5 * other, rel=1e-9)
    assert mask[0]  # boundary counts as pass


def test_hard_mask_matches_gate_threshold_for_shared_sign():
    params = SelectorParams(jrd_max=2.0, cvar_max=40.0)
    rng = np.random.default_rng(3)
    margins = rng.uniform(0.2, 1.0, 200)  # both margins share sign per draw
    for sign in (+1, -1):
        jrd_values = params.jrd_max - sign * margins * params.jrd_max
        cvar_values = params.cvar_max - sign * margins * params.cvar_max
        mask, gate = filter_mask(jrd_values, cvar_values, params)
        assert np.array_equal(mask, gate > 0.25)


def test_smooth_select_uses_model_predictions():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, (40, 5))
    y = np.column_stack([np.exp(-x[:, 0]), 1 + x[:, 1]])
    model, _ = E.train(x, y, E.TrainConfig(epochs=3, k_members=2, hidden=(8,)), 6)
    params = SelectorParams()
    sel = smooth_select((1.0, 0.5, 0.3), model, GRID, params)
    assert 0.5 <= sel.gamma0 <= 2.5 and 0.5 <= sel.gamma1 <= 2.5
    mu, jrd_values, cvar_values = candidate_predictions(model, (1.0, 0.5, 0.3), GRID, params)
    assert mu.shape == (49,)
    assert np.all(cvar_values >= mu - 1e-9)  # tail risk dominates the mean
    again = smooth_select((1.0, 0.5, 0.3), model, GRID, params)
    assert (sel.gamma0, sel.gamma1) == (again.gamma0, again.gamma1)


def test_selector_params_validation():
    with pytest.raises(ValueError):
        SelectorParams(tau_s=0.0)
    with pytest.raises(ValueError):
        SelectorParams(cvar_alpha=1.0)
    with pytest.raises(ValueError):
        CandidateGrid(candidates=())
