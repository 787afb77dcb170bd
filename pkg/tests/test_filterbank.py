import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellfdi.filterbank import (
    DetectorConfig,
    FilterDesignError,
    calibrate_thresholds,
    default_noise_gain,
    design_bank,
    design_filter,
    detect,
    asymmetric_S,
    read_thresholds,
    run_bank,
    run_filter,
    write_thresholds,
)
from cellfdi.simulator import FaultSpec, ScenarioSpec, simulate

BETA = 0.3


@pytest.fixture(scope="module")
def bank(two_sensor_model):
    return design_bank(two_sensor_model)


@pytest.fixture(scope="module")
def scalar_model(config):
    m = config.build(1, 1)
    return replace(m, A=np.array([[-1.0]]), C=np.array([[1.0]]))


def case2(model, noise=1e-3, duration=200.0, seed=0):
    f = FaultSpec(shape="pulse", node=18, magnitude=0.3, t_start=100, t_end=110,
                  footprint="kernel")
    return simulate(model, ScenarioSpec(faults=[f], duration=duration,
                                        meas_noise_var=noise, rng_seed=seed))


# design --------------------------------------------------------------------

def test_scalar_riccati_closed_form(scalar_model):
    d = design_filter(scalar_model, 0, [[1.0]], [[1.0]], G=[[1.0]])
    assert d.L[0, 0] == pytest.approx(np.sqrt(2) - 1, abs=1e-10)
    assert d.P[0, 0] == pytest.approx(np.sqrt(2) - 1, abs=1e-10)


def test_huge_measurement_noise_gives_vanishing_gain(scalar_model):
    d = design_filter(scalar_model, 0, [[1.0]], [[1e12]], G=[[1.0]])
    assert abs(d.L[0, 0]) < 1e-5


def test_default_tuning_residuals(bank, two_sensor_model):
    m = two_sensor_model
    for d in bank:
        P_norm = np.max(np.sum(np.abs(d.P), axis=1))
        assert d.riccati_residual(m.A, m.C) < 1e-8 * P_norm
        np.testing.assert_allclose(d.P, d.P.T, atol=1e-14 * P_norm)
        assert np.linalg.eigvalsh(d.P).min() > 0


def test_single_sensor_residual(single_sensor_model):
    d = design_bank(single_sensor_model)[0]
    assert d.S_cov.shape == (1, 1) and d.S_cov[0, 0] == 0.001
    P_norm = np.max(np.sum(np.abs(d.P), axis=1))
    assert d.riccati_residual(single_sensor_model.A, single_sensor_model.C) < 1e-8 * P_norm


def test_asymmetric_S_layout():
    np.testing.assert_array_equal(asymmetric_S(2, 0), np.diag([0.1, 0.001]))
    np.testing.assert_array_equal(asymmetric_S(2, 1), np.diag([0.001, 0.1]))


def test_noise_gain_ratio_fixed():
    assert default_noise_gain(0.1) == pytest.approx(4.0)
    assert default_noise_gain(0.001) == pytest.approx(0.4)
    for s in (0.1, 0.001, 0.05):
        assert default_noise_gain(s) ** 2 / s == pytest.approx(160.0)


def test_closed_loop_stable(bank, two_sensor_model):
    for d in bank:
        acl = two_sensor_model.A - d.L @ two_sensor_model.C
        assert np.linalg.eigvals(acl).real.max() < 0


def test_time_varying_settles_to_steady_state(scalar_model):
    ss = design_filter(scalar_model, 0, [[1.0]], [[1.0]], G=[[1.0]])
    tv = design_filter(scalar_model, 0, [[1.0]], [[1.0]], mode="time_varying", G=[[1.0]],
                       P0=[[5.0]])
    # innovation response to a constant offset matches once P has converged
    traj = simulate(scalar_model, ScenarioSpec(duration=40.0, dt=0.01))
    i_ss = run_filter(ss, scalar_model, traj, initial_estimate=traj.states[0, 0] + 1.0)
    i_tv = run_filter(tv, scalar_model, traj, initial_estimate=traj.states[0, 0] + 1.0)
    assert np.abs(i_ss[0, -1]) < 1e-9 and np.abs(i_tv[0, -1]) < 1e-9


def test_time_varying_covariance_converges(scalar_model):
    # integrate dP/dt = -2P + 1 - P^2 and compare with the ARE root
    tv = design_filter(scalar_model, 0, [[1.0]], [[1.0]], mode="time_varying", G=[[1.0]],
                       P0=[[5.0]])
    P, dt = tv.P[0, 0], 0.01
    for _ in range(2000):
        P += dt * (-2 * P + 1 - P * P)
    assert P == pytest.approx(np.sqrt(2) - 1, rel=1e-4)


def test_undetectable_unstable_mode_rejected(config):
    m = config.build(2, 1)
    m = replace(m, A=np.diag([-1.0, 0.5]), C=np.array([[1.0, 0.0]]))
    with pytest.raises(FilterDesignError, match="not detectable"):
        design_filter(m, 0, np.eye(2), [[1.0]], G=np.eye(2))


@pytest.mark.parametrize("Q,S,match", [
    (-np.eye(24), asymmetric_S(2, 0), "semi-definite"),
    (np.eye(24), np.zeros((2, 2)), "positive definite"),
    (np.eye(3), asymmetric_S(2, 0), "24x24"),
])
def test_covariance_checks(two_sensor_model, Q, S, match):
    with pytest.raises(FilterDesignError, match=match):
        design_filter(two_sensor_model, 0, Q, S)


def test_bad_mode(two_sensor_model):
    with pytest.raises(FilterDesignError):
        design_filter(two_sensor_model, 0, np.eye(24), asymmetric_S(2, 0), mode="adaptive")


# running ---------------------------------------------------------------------

def test_noise_free_innovation_vanishes(bank, two_sensor_model):
    traj = simulate(two_sensor_model, ScenarioSpec(duration=50.0))
    I = run_bank(bank, two_sensor_model, traj)
    assert np.abs(I).max() < 1e-9


def test_initial_error_decays(bank, two_sensor_model):
    traj = simulate(two_sensor_model, ScenarioSpec(duration=300.0))
    I = run_bank(bank, two_sensor_model, traj, initial_estimate=298.15 + 3.0)
    t = traj.times
    assert np.abs(I[:, 0]).min() == pytest.approx(3.0)
    # fast entry into the band, then decay at the slowest closed-loop rate
    assert np.all(np.abs(I[:, t >= 5.0]) < BETA)
    slow = max(np.linalg.eigvals(two_sensor_model.A - d.L @ two_sensor_model.C).real.max()
               for d in bank)
    ratio = np.abs(I[:, -1]) / np.abs(I[:, np.searchsorted(t, 100.0)])
    assert np.all(ratio < 1.5 * np.exp(slow * 200.0))


def test_case2_sensitive_and_robust(bank, two_sensor_model):
    traj = case2(two_sensor_model)
    I = run_bank(bank, two_sensor_model, traj)
    on = (traj.times >= 100) & (traj.times < 110)
    assert np.abs(I[1, on]).max() > BETA
    assert np.abs(I[0, on]).max() < BETA


def test_innovation_whiteness(bank, two_sensor_model):
    traj = simulate(two_sensor_model, ScenarioSpec(duration=200.0, meas_noise_var=1e-3))
    I = run_bank(bank, two_sensor_model, traj)
    for row in I[:, traj.times >= 20]:
        r = row - row.mean()
        assert abs(np.dot(r[1:], r[:-1]) / np.dot(r, r)) < 0.3


def test_reset_after_pulse(bank, two_sensor_model):
    traj = case2(two_sensor_model)
    I = run_bank(bank, two_sensor_model, traj)
    after = traj.times >= 110
    inside = np.abs(I[1, after]) <= BETA
    assert inside.any()
    t_back = traj.times[after][np.argmax(inside)] - 110.0
    assert t_back < 90.0


def test_shape_mismatch_rejected(bank, two_sensor_model, single_sensor_model):
    traj = simulate(single_sensor_model, ScenarioSpec(duration=1.0))
    with pytest.raises(ValueError):
        run_filter(bank[0], two_sensor_model, traj)


# detection ---------------------------------------------------------------------

def test_all_zero_innovation_is_quiet():
    r = detect(np.zeros((2, 500)), DetectorConfig([BETA, BETA]), np.arange(500) * 0.01)
    assert not r.verdicts.any() and r.false_alarm_counts == [0, 0]
    assert r.convergence_time == [0.0, 0.0]


def test_single_crossing_recorded():
    I = np.zeros((1, 1000))
    I[0, 600] = 0.31
    r = detect(I, DetectorConfig([BETA]), np.arange(1000) * 0.01)
    assert r.verdicts.sum() == 1 and r.false_alarm_counts == [1]


def test_threshold_is_strict():
    I = np.full((1, 10), BETA)
    assert not detect(I, DetectorConfig([BETA])).verdicts.any()


def test_alarm_inside_settle_window_not_counted():
    t = np.arange(1000) * 0.01
    I = np.zeros((1, 1000))
    I[0, :100] = 3.0          # initial transient, converges at t = 1 s
    I[0, 150] = 0.5           # 0.5 s after convergence
    r = detect(I, DetectorConfig([BETA]), t)
    assert r.convergence_time == [1.0] and r.false_alarm_counts == [0]
    I[0, 250] = 0.5
    assert detect(I, DetectorConfig([BETA]), t).false_alarm_counts == [1]


def test_detection_time_and_cross_alarm():
    t = np.arange(3000) * 0.01
    fault = np.zeros((2, 3000))
    fault[1, 1000:1100] = 0.3
    I = np.zeros((2, 3000))
    I[1, 1020:1200] = 1.0
    I[0, 1050] = 1.0
    r = detect(I, DetectorConfig([BETA, BETA]), t, fault)
    assert r.detection_times == [None, pytest.approx(0.2)]
    assert r.cross_alarm_counts == [1, 0] and r.false_alarm_counts == [0, 0]
    assert not r.isolated(1)
    assert r.fault_onsets == [[], [10.0]]


def test_alarm_during_own_recovery_not_false():
    t = np.arange(3000) * 0.01
    fault = np.zeros((1, 3000))
    fault[0, 1000:1100] = 0.3
    I = np.zeros((1, 3000))
    I[0, 1000:1500] = 1.0       # lingers 4 s after the fault ends
    r = detect(I, DetectorConfig([BETA]), t, fault)
    assert r.false_alarm_counts == [0] and r.detection_times == [0.0]
    assert r.isolated(0)


def test_single_threshold_broadcasts():
    r = detect(np.zeros((3, 10)), DetectorConfig([BETA]))
    np.testing.assert_array_equal(r.thresholds, [BETA] * 3)


@pytest.mark.parametrize("beta", [[0.0], [-1.0]])
def test_thresholds_must_be_positive(beta):
    with pytest.raises(ValueError):
        DetectorConfig(beta)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=200), st.floats(0.01, 1.5))
def test_verdict_iff_exceeds(values, beta):
    I = np.array([values])
    r = detect(I, DetectorConfig([beta]))
    np.testing.assert_array_equal(r.verdicts, np.abs(I) > beta)


# calibration ---------------------------------------------------------------

def test_uniform_quantile():
    rng = np.random.default_rng(0)
    I = rng.uniform(-1, 1, size=(1, 200_000))
    beta = calibrate_thresholds(I, 0.1, start=0.0)
    assert beta[0] == pytest.approx(0.9, abs=0.01)


def test_zero_far_gives_max():
    I = np.array([[0.1, -0.5, 0.2, 0.3]])
    assert calibrate_thresholds(I, 0.0, start=0.0)[0] == 0.5


def test_gaussian_three_sigma():
    rng = np.random.default_rng(1)
    I = 0.1 * rng.standard_normal((2, 400_000))
    beta = calibrate_thresholds(I, 0.0027, start=0.0)
    np.testing.assert_allclose(beta, 0.3, rtol=0.03)


def test_calibration_skips_transient():
    rng = np.random.default_rng(2)
    t = np.arange(20_000) * 0.01
    I = 0.1 * rng.standard_normal((1, t.size)) + 5 * np.exp(-t)
    beta = calibrate_thresholds(I, 0.0, t)
    assert beta[0] < 1.0


def test_short_record_warns():
    with pytest.warns(UserWarning, match="short"):
        calibrate_thresholds(np.ones((1, 10)), 0.01, start=0.0)


def test_empty_record():
    with pytest.raises(ValueError, match="empty"):
        calibrate_thresholds(np.zeros((1, 0)), 0.1)


def test_calibrated_far_achieved(bank, two_sensor_model):
    traj = simulate(two_sensor_model, ScenarioSpec(duration=100.0, meas_noise_var=1e-3, rng_seed=3))
    I = run_bank(bank, two_sensor_model, traj)
    beta = calibrate_thresholds(I, 0.01, traj.times, start=10.0)
    tail = np.abs(I[:, traj.times >= 10.0])
    rate = (tail > beta[:, None]).mean(axis=1)
    np.testing.assert_allclose(rate, 0.01, atol=2e-3)


# file formats ----------------------------------------------------------------

def test_threshold_file_roundtrip(tmp_path):
    p = tmp_path / "thresholds.txt"
    write_thresholds(p, [0.3, 0.123456789])
    np.testing.assert_array_equal(read_thresholds(p), [0.3, 0.123456789])


def test_threshold_file_rejects_garbage(tmp_path):
    p = tmp_path / "thresholds.txt"
    p.write_text("gamma = 1\n")
    with pytest.raises(ValueError):
        read_thresholds(p)


def test_diagnosis_csv(tmp_path):
    I = np.array([[0.0, 0.5], [0.1, -0.1]])
    r = detect(I, DetectorConfig([BETA, BETA]), [0.0, 0.01])
    p = tmp_path / "innovations.csv"
    r.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "time,I_1,I_2,verdict_1,verdict_2"
    assert lines[2].endswith("H1,H0")
