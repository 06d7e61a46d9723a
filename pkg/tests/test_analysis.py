import json
import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bdia.analysis import (
    REPORT_COLUMNS,
    ComparisonReport,
    compare,
    convergence_order,
    energy_distance,
    gamma_sweep,
    reconstruction_error,
    reports_from_csv,
    reports_to_csv,
    reports_to_json,
    run_roundtrip,
    run_sample,
    sliced_w1,
    verify_invariants,
)
from bdia.config import ConfigError, RunConfig
from bdia.core import inject_fault


def test_reconstruction_error_examples():
    assert reconstruction_error([[1, 2]], [[1, 2]]) == (0.0, 0.0)
    m, r = reconstruction_error([[1, 2]], [[1, 2.5]])
    assert m == 0.5 and r == pytest.approx(0.5 / math.sqrt(2), abs=1e-15)
    with pytest.raises(ValueError):
        reconstruction_error([[1, 2]], [[1, 2, 3]])


def test_energy_distance_identical_sets_is_zero(rng):
    a = rng.standard_normal((300, 3))
    assert energy_distance(a, a.copy()) == 0.0


@pytest.mark.parametrize("r", [0.5, 3.0])
def test_energy_distance_point_masses(r):
    assert energy_distance([[0.0, 0.0]], [[r, 0.0]]) == pytest.approx(2 * r, abs=1e-15)


def test_energy_distance_matches_scipy_in_one_dimension(rng):
    a, b = rng.standard_normal(400), 0.3 + 1.2 * rng.standard_normal(300)
    # scipy returns the square root of the same plug-in statistic
    assert energy_distance(a, b) == pytest.approx(scipy.stats.energy_distance(a, b) ** 2, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(
    a=arrays(np.float64, st.tuples(st.integers(1, 30), st.just(2)), elements=st.floats(-10, 10)),
    b=arrays(np.float64, st.tuples(st.integers(1, 30), st.just(2)), elements=st.floats(-10, 10)),
)
def test_energy_distance_symmetric_and_nonnegative(a, b):
    assert energy_distance(a, b) == energy_distance(b, a)
    assert energy_distance(a, b) >= 0.0


def test_energy_distance_subsampled_mode(rng):
    a, b = rng.standard_normal((2000, 2)), rng.standard_normal((2000, 2)) + 0.5
    full = energy_distance(a, b)
    sub = energy_distance(a, b, seed=3, threshold=100, n_pairs=200_000)
    assert sub == energy_distance(b, a, seed=3, threshold=100, n_pairs=200_000)
    assert sub == energy_distance(a, b, seed=3, threshold=100, n_pairs=200_000)
    assert sub == pytest.approx(full, abs=0.03)


def test_energy_distance_errors():
    with pytest.raises(ValueError):
        energy_distance(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        energy_distance(np.zeros((2, 2)), np.zeros((3, 3)))


def test_sliced_w1(rng):
    a, b = rng.standard_normal(500), rng.standard_normal(400) + 1.0
    # in one dimension every projection is +-1, so this is plain W1
    assert sliced_w1(a, b, seed=1) == pytest.approx(scipy.stats.wasserstein_distance(a, b), rel=1e-12)
    A, B = rng.standard_normal((200, 3)), rng.standard_normal((200, 3))
    assert sliced_w1(A, B, seed=4) == sliced_w1(A, B, seed=4)
    assert sliced_w1(A, A) == 0.0


def test_convergence_order_synthetic():
    hs = [0.1, 0.05, 0.025, 0.0125]
    assert convergence_order([(h, 3 * h) for h in hs]) == pytest.approx(1.0, abs=1e-6)
    assert convergence_order([(h, 0.2 * h * h) for h in hs]) == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(ValueError):
        convergence_order([(0.1, 1.0), (0.05, 0.5)])
    with pytest.raises(ValueError):
        convergence_order([(0.1, 1.0), (0.05, 0.0), (0.02, 0.1)])


def test_report_schema():
    r = ComparisonReport("ddim", 10, None, 0.5, None, 0.1, 0.2, 10)
    text = reports_to_csv([r])
    assert text.splitlines()[0] == "solver,n_steps,param,terminal_error,roundtrip_error,energy_distance,sliced_w1,nfe,wall_time_s"
    assert text.splitlines()[1] == "ddim,10,,0.5,,0.1,0.2,10,"
    assert list(json.loads(reports_to_json([r]))[0]) == list(REPORT_COLUMNS)
    assert reports_from_csv(text)[0]["nfe"] == "10"
    with pytest.raises(ValueError):
        ComparisonReport("ddim", 10, None, -1.0, None, 0.1, 0.2, 10)


@pytest.fixture(scope="module")
def small():
    return RunConfig(batch=200)


@pytest.mark.parametrize(
    "solver,nfe",
    [("ddim", 10), ("bdia-ddim", 10), ("edict", 20), ("cbdia", 20), ("dpmpp-2m", 10), ("bdia-dpmpp-2m", 10)],
)
def test_run_sample_nfe_matches_trace(small, solver, nfe):
    trace, rep = run_sample(small.replace(solver=solver))
    assert rep.nfe == trace.epsilon_calls == nfe
    assert rep.roundtrip_error is None and rep.wall_time_s is None
    assert rep.terminal_error >= 0 and rep.energy_distance >= 0


def test_run_sample_edm_family():
    cfg = RunConfig.from_dict({"solver": "bdia-edm", "batch": 100})
    trace, rep = run_sample(cfg)
    assert rep.nfe == 19 and rep.param == "1.0"


def test_energy_distance_decreases_with_steps():
    cfg = RunConfig(batch=10_000, solver="ddim")
    eds = [run_sample(cfg.replace(n=n), reference=np.zeros((64, 2)))[1].energy_distance for n in (5, 10, 20, 40)]
    assert all(x > y for x, y in zip(eds, eds[1:])), eds


def test_roundtrip_reports(small):
    _, exact = run_roundtrip(small.replace(n=50))
    _, naive = run_roundtrip(small.replace(solver="ddim-naive", n=10))
    _, exact10 = run_roundtrip(small.replace(n=10))
    assert exact.roundtrip_error <= 1e-8 and exact.terminal_error is None
    assert naive.roundtrip_error > exact10.roundtrip_error
    assert exact.nfe == 99 and naive.nfe == 20
    with pytest.raises(ConfigError):
        run_roundtrip(small.replace(solver="edm"))
    with pytest.raises(ConfigError):
        run_roundtrip(small.replace(gamma=0.0))


def test_edit_shifts_regenerated_mean(small):
    rt, _ = run_roundtrip(small.replace(n=20, edit=1.0))
    assert np.all(rt.regenerated.mean(0) > rt.x.mean(0))
    rt, _ = run_roundtrip(small.replace(n=20, edit=-1.0))
    assert np.all(rt.regenerated.mean(0) < rt.x.mean(0))


def test_gamma_sweep(small):
    reps = gamma_sweep(small, [0.0])
    tr_b, _ = run_sample(small.replace(gamma=0.0))
    tr_d, _ = run_sample(small.replace(solver="ddim"))
    np.testing.assert_allclose(tr_b.final, tr_d.final, rtol=0, atol=1e-14)
    assert len(reps) == 1 and reps[0].param == "0.0"
    assert len(gamma_sweep(small, [0.92, 0.96, 1.0], roundtrip_mode=True)) == 3
    assert [r.param for r in gamma_sweep(small.replace(solver="edict"), [0.9, 1.0])] == ["0.9", "1.0"]
    with pytest.raises(ConfigError):
        gamma_sweep(small.replace(solver="ddim"), [0.5])
    with pytest.raises(ConfigError):
        gamma_sweep(small, [])


def test_compare_shapes_and_determinism(small):
    reps = compare(small, ["ddim", "bdia-ddim"], [10, 20, 40])
    assert [(r.solver, r.n_steps) for r in reps] == [(s, n) for s in ("ddim", "bdia-ddim") for n in (10, 20, 40)]
    assert len(compare(small, ["edm", "bdia-edm"], [35, 43])) == 4
    a = reports_to_csv(compare(small, ["ddim", "edict"], [5, 10], workers=1))
    b = reports_to_csv(compare(small, ["ddim", "edict"], [5, 10], workers=4))
    assert a == b
    with pytest.raises(ConfigError):
        compare(small, [], [10])
    with pytest.raises(ConfigError):
        compare(small, ["ddim-naive"], [10])


def test_timing_fills_wall_time(small):
    _, rep = run_sample(small, timing=True)
    assert rep.wall_time_s is not None and rep.wall_time_s >= 0


def test_verify_default_passes_and_fault_fails():
    res = verify_invariants(RunConfig())
    assert all(r.status == "pass" for r in res), [r for r in res if r.status != "pass"]
    with inject_fault("flip-b-sign"):
        failed = {r.name for r in verify_invariants(RunConfig()) if not r.ok}
    assert {"ddim-coefficients", "ddim-analytic-order"} <= failed


def test_verify_gamma0_skips_inversion():
    res = {r.name: r for r in verify_invariants(RunConfig().replace(gamma=0.0))}
    assert res["inversion-bdia-roundtrip"].status == "skip"
    assert "gamma = 0" in res["inversion-bdia-roundtrip"].detail
    assert all(r.ok for r in res.values())


def test_verify_edm_config_skips_cbdia():
    res = verify_invariants(RunConfig.from_dict({"solver": "edm"}))
    assert all(r.ok for r in res)
    assert {r.name for r in res if r.status == "skip"} >= {"cbdia-alternating-form", "cbdia-bdia-equivalence"}
