import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdia.core import NoiseSchedule, TimeGrid, make_time_grid
from bdia.ddim import BdiaConfig, bdia_sample
from bdia.edict import (
    EDICT_DEFAULT_P,
    CbdiaConfig,
    CoupledState,
    cbdia_bdia_equivalence,
    cbdia_ddim_step,
    cbdia_invert_chain,
    cbdia_invert_step,
    cbdia_sample,
    cbdia_step,
    cbdia_step_internals,
    cbdia_unmix,
    edict_invert_chain,
    edict_invert_step,
    edict_sample,
    edict_step,
    edict_step_internals,
    alternating_closed_form,
    unmixed_closed_form,
    closed_form_discrepancy,
    opposite_direction_check,
)
from bdia.models import CountingPredictor, GaussianMixture, LinearPredictor, MixturePredictor, exact_sample

VP = NoiseSchedule("vp")
EDM = NoiseSchedule("edm")


def _eps_gauss(z, t, s2=1.0):
    return t * z / (s2 + t * t)  # EDM, zero-mean N(0, s2)


def test_edict_worked_example_against_straight_line_oracle(gauss1):
    grid = TimeGrid((1.0, 0.5))
    pred = MixturePredictor(gauss1, EDM)
    p = 0.93
    z = y = np.array([2.0])
    a, b = 1.0, 0.5 - 1.0
    z_inter = a * z + b * _eps_gauss(y, 1.0)
    y_inter = a * y + b * _eps_gauss(z_inter, 1.0)
    z_new = p * z_inter + (1 - p) * y_inter
    y_new = p * y_inter + (1 - p) * z_new
    out = edict_step(CoupledState(z, y, 1), pred, p, EDM, grid)
    np.testing.assert_allclose(out.z, z_new, rtol=1e-14)
    np.testing.assert_allclose(out.y, y_new, rtol=1e-14)
    assert out.index == 0


def test_edict_p1_zero_predictor_identity(edm):
    grid = make_time_grid("uniform", 3, 0.1, 1.0)
    s = CoupledState(np.array([1.0, 2.0]), np.array([-1.0, 0.5]), 3)
    out = edict_step(s, LinearPredictor(0.0), 1.0, edm, grid)
    np.testing.assert_array_equal(out.z, s.z)
    np.testing.assert_array_equal(out.y, s.y)


def test_edict_p1_no_mixing(vp_pred, vp_grid, rng):
    s = CoupledState(rng.standard_normal(2), rng.standard_normal(2), 10)
    out, z_inter, y_inter = edict_step_internals(s, vp_pred, 1.0, VP, vp_grid)
    np.testing.assert_array_equal(out.z, z_inter)
    np.testing.assert_array_equal(out.y, y_inter)


def test_edict_rejects_p0(vp_pred, vp_grid):
    s = CoupledState.start(np.zeros(2), 5)
    with pytest.raises(ValueError):
        edict_step(s, vp_pred, 0.0, VP, vp_grid)
    with pytest.raises(ValueError):
        edict_invert_step(s, vp_pred, 0.0, VP, vp_grid)
    assert EDICT_DEFAULT_P == 0.93


@settings(max_examples=60, deadline=None)
@given(p=st.sampled_from([0.5, 0.93, 1.0]), i=st.integers(1, 20), seed=st.integers(0, 2**32 - 1))
def test_edict_invert_after_step(p, i, seed):
    from bdia.config import default_mixture

    grid = make_time_grid("uniform", 20, 1e-3, 0.999)
    pred = MixturePredictor(default_mixture(2), VP)
    r = np.random.default_rng(seed)
    s = CoupledState(r.standard_normal(2), r.standard_normal(2), i)
    back = edict_invert_step(edict_step(s, pred, p, VP, grid), pred, p, VP, grid)
    np.testing.assert_allclose(back.z, s.z, rtol=0, atol=1e-13)
    np.testing.assert_allclose(back.y, s.y, rtol=0, atol=1e-13)
    assert back.index == i


def test_edict_chain_roundtrip_and_nfe(vp_pred, mixture2):
    grid = make_time_grid("uniform", 40, 1e-3, 0.999)
    x = exact_sample(mixture2, VP, 1e-3, 0, 32)
    cp = CountingPredictor(vp_pred)
    up = edict_invert_chain(x, cp, 0.93, VP, grid)
    down = edict_sample(up.state(40), cp, 0.93, VP, grid, y_N=up.y(40))
    assert np.max(np.abs(down.final - x)) <= 1e-10
    assert up.epsilon_calls == down.epsilon_calls == 80 and cp.calls == 160
    assert set(down.internals) == {"z_inter", "y_inter"}


def test_cbdia_config():
    with pytest.raises(ValueError):
        CbdiaConfig(0.5, 0.5)
    with pytest.raises(ValueError):
        CbdiaConfig(-0.1, 0.5)
    assert CbdiaConfig() == CbdiaConfig(0.0, 1.0)


def test_cbdia_zero_predictor_mixes_only(edm):
    grid = make_time_grid("uniform", 3, 0.1, 1.0)
    z, y = np.array([1.0]), np.array([3.0])
    out, w, v, _, _ = cbdia_step_internals(CoupledState(z, y, 2), LinearPredictor(0.0), CbdiaConfig(0.3, 0.8), edm, grid)
    np.testing.assert_array_equal(w, z)
    np.testing.assert_array_equal(v, y)
    np.testing.assert_allclose(out.z, 0.3 * z + 0.7 * y, rtol=1e-15)
    np.testing.assert_allclose(out.y, 0.8 * z + 0.2 * y, rtol=1e-15)


def test_cbdia_term_by_term_oracle(gauss1, rng):
    grid = make_time_grid("uniform", 4, 0.2, 2.0)
    pred = MixturePredictor(gauss1, EDM)
    i = 3
    t_i, t_im1 = grid.t(i), grid.t(i - 1)
    z, y = rng.standard_normal(1), rng.standard_normal(1)
    # EDM: Delta(t_from -> t_to | x) = (t_to - t_from) eps(x, t_from)
    w = z + (t_im1 - t_i) * _eps_gauss(y, t_i)
    v = y - (t_i - t_im1) * _eps_gauss(w, t_im1)
    out = cbdia_step(CoupledState(z, y, i), pred, CbdiaConfig(0.3, 0.8), EDM, grid)
    np.testing.assert_allclose(out.z, 0.3 * w + 0.7 * v, rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(out.y, 0.8 * w + 0.2 * v, rtol=1e-14, atol=1e-15)


def test_cbdia_unmixed_regime(vp_pred, vp_grid, rng):
    s = CoupledState(rng.standard_normal(2), rng.standard_normal(2), 9)
    out, w, v, _, _ = cbdia_step_internals(s, vp_pred, CbdiaConfig(1.0, 0.0), VP, vp_grid)
    np.testing.assert_array_equal(out.z, w)
    np.testing.assert_array_equal(out.y, v)


def test_cbdia_unmix_recovers_internals(vp_pred, vp_grid, rng):
    cfg = CbdiaConfig(0.3, 0.8)
    s = CoupledState(rng.standard_normal(2), rng.standard_normal(2), 9)
    out, w, v, _, _ = cbdia_step_internals(s, vp_pred, cfg, VP, vp_grid)
    w2, v2 = cbdia_unmix(out.z, out.y, cfg)
    np.testing.assert_allclose(w2, w, rtol=0, atol=1e-14)
    np.testing.assert_allclose(v2, v, rtol=0, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(i=st.integers(1, 20), seed=st.integers(0, 2**32 - 1))
def test_cbdia_invert_after_step(i, seed):
    from bdia.config import default_mixture

    grid = make_time_grid("uniform", 20, 1e-3, 0.999)
    pred = MixturePredictor(default_mixture(2), VP)
    r = np.random.default_rng(seed)
    cfg = CbdiaConfig(0.3, 0.8)
    s = CoupledState(r.standard_normal(2), r.standard_normal(2), i)
    back = cbdia_invert_step(cbdia_step(s, pred, cfg, VP, grid), pred, cfg, VP, grid)
    np.testing.assert_allclose(back.z, s.z, rtol=0, atol=1e-13)
    np.testing.assert_allclose(back.y, s.y, rtol=0, atol=1e-13)


@pytest.mark.parametrize("cfg", [CbdiaConfig(0.0, 1.0), CbdiaConfig(1.0, 0.0)])
def test_cbdia_chain_roundtrip_and_nfe(vp_pred, mixture2, cfg):
    grid = make_time_grid("uniform", 40, 1e-3, 0.999)
    x = exact_sample(mixture2, VP, 1e-3, 1, 32)
    cp = CountingPredictor(vp_pred)
    up = cbdia_invert_chain(x, cp, cfg, VP, grid)
    down = cbdia_sample(up.state(40), cp, cfg, VP, grid, y_N=up.y(40))
    assert np.max(np.abs(down.final - x)) <= 1e-10
    assert up.epsilon_calls == down.epsilon_calls == 80 and cp.calls == 160


def test_cbdia_chain_error_growth_follows_mixing_eigenvalue(vp_pred, mixture2):
    # the unmixing has eigenvalue 1/(gamma1 - gamma2); for (0.3, 0.8) rounding grows like 2^N
    grid = make_time_grid("uniform", 40, 1e-3, 0.999)
    cfg = CbdiaConfig(0.3, 0.8)
    x = exact_sample(mixture2, VP, 1e-3, 1, 32)
    up = cbdia_invert_chain(x, vp_pred, cfg, VP, grid)
    down = cbdia_sample(up.state(40), vp_pred, cfg, VP, grid, y_N=up.y(40))
    assert np.max(np.abs(down.final - x)) <= 2.0**40 * 1e-15


def test_cbdia_ddim_realization_agrees(vp_pred, vp_grid, rng):
    for cfg in (CbdiaConfig(0.0, 1.0), CbdiaConfig(0.3, 0.8)):
        s = CoupledState(rng.standard_normal(2), rng.standard_normal(2), 11)
        a = cbdia_step(s, vp_pred, cfg, VP, vp_grid)
        b = cbdia_ddim_step(s, vp_pred, cfg, VP, vp_grid)
        np.testing.assert_allclose(a.z, b.z, rtol=0, atol=1e-13)
        np.testing.assert_allclose(a.y, b.y, rtol=0, atol=1e-13)


def test_cbdia_needs_positive_terminal_sigma(vp_pred):
    grid = make_time_grid("uniform", 3, 0.0, 0.9)
    with pytest.raises(ValueError):
        cbdia_step(CoupledState.start(np.zeros(2), 1), vp_pred, CbdiaConfig(), VP, grid)


def test_cbdia_reduces_to_bdia_gamma1(vp_pred, mixture2):
    grid = make_time_grid("uniform", 20, 1e-3, 0.999)
    z_N = exact_sample(mixture2, VP, 0.999, 2, 16)
    tc = cbdia_sample(z_N, vp_pred, CbdiaConfig(0.0, 1.0), VP, grid)
    tb = bdia_sample(z_N, vp_pred, BdiaConfig(1.0), VP, grid)
    assert cbdia_bdia_equivalence(tc, tb) <= 1e-12
    # and it is genuinely a different sequence from the z-track
    assert max(np.max(np.abs(tc.state(i) - tb.state(i))) for i in range(19)) > 1e-3


def test_cbdia_equivalence_rejects_mismatched_grids(vp_pred, mixture2):
    z_N = exact_sample(mixture2, VP, 0.999, 2, 2)
    tc = cbdia_sample(z_N, vp_pred, CbdiaConfig(), VP, make_time_grid("uniform", 5, 1e-3, 0.999))
    tb = bdia_sample(z_N, vp_pred, BdiaConfig(1.0), VP, make_time_grid("uniform", 6, 1e-3, 0.999))
    with pytest.raises(ValueError):
        cbdia_bdia_equivalence(tc, tb)


def test_regime_closed_forms(vp_pred, mixture2):
    grid = make_time_grid("uniform", 20, 1e-3, 0.999)
    z_N = exact_sample(mixture2, VP, 0.999, 3, 8)
    t1 = cbdia_sample(z_N, vp_pred, CbdiaConfig(0.0, 1.0), VP, grid)
    t2 = cbdia_sample(z_N, vp_pred, CbdiaConfig(1.0, 0.0), VP, grid)
    assert closed_form_discrepancy(t1, "alternating") <= 1e-10
    assert closed_form_discrepancy(t2, "unmixed") <= 1e-10
    y, z = alternating_closed_form(t1, 7)
    np.testing.assert_allclose(y, t1.y(7), rtol=0, atol=1e-10)
    y, z = unmixed_closed_form(t2, 0)
    np.testing.assert_allclose(z, t2.state(0), rtol=0, atol=1e-10)
    # the alternating form does not describe the (1, 0) regime
    assert closed_form_discrepancy(t2, "alternating") > 1e-6


@pytest.mark.parametrize("N", [3, 8, 21])
def test_opposite_directions(N):
    assert all(opposite_direction_check(N, i) for i in range(N - 1))
