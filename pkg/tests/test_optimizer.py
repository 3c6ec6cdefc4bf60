import csv

import numpy as np
import pytest

from ptycho_crlb.errors import InputError
from ptycho_crlb.fisher import crlb
from ptycho_crlb.forward import expected_counts
from ptycho_crlb.noise import RngSeed, sample_poisson_stack
from ptycho_crlb.optimizer import (AMP, INCREASE_TOL, ML, CgConfig, RunTrace, natural_step,
                                   polak_ribiere_beta, quadratic_line_search, reconstruct,
                                   run_cg, run_cg_batch)
from ptycho_crlb.scenarios import build_case, case_spec


def test_beta_examples(rng):
    g = rng.normal(size=(4, 4))
    assert polak_ribiere_beta(g, g) == 0.0
    a = np.array([[1.0, 0.0]])
    b = np.array([[0.0, 2.0]])
    assert polak_ribiere_beta(a, b) == pytest.approx(0.25)
    # raw value for a reversed gradient is +2, so no reset there
    assert polak_ribiere_beta(-g, g) == pytest.approx(2.0)
    # g_now = g_prev / 2 gives raw beta -0.25, reset to 0: direction is the raw gradient
    assert polak_ribiere_beta(0.5 * g, g) == 0.0
    assert polak_ribiere_beta(g, np.zeros_like(g)) == 0.0


def test_line_search_exact_quadratic():
    alpha, fitted = quadratic_line_search(lambda a: (a - 0.3) ** 2)
    assert fitted and alpha == pytest.approx(0.3, abs=1e-12)
    alpha, _ = quadratic_line_search(lambda a: 2 * a**2 - a + 5)
    assert alpha == pytest.approx(0.25, abs=1e-12)


def test_line_search_linear_falls_back_to_best_probe():
    alpha, fitted = quadratic_line_search(lambda a: -a)
    assert alpha == 1.0 and not fitted


def test_line_search_concave_and_negative_vertex():
    assert quadratic_line_search(lambda a: -(a - 0.4) ** 2) == (1.0, False)
    alpha, fitted = quadratic_line_search(lambda a: (a + 1.0) ** 2)
    assert alpha == 0.01 and not fitted


def test_line_search_drops_non_finite_probes():
    alpha, fitted = quadratic_line_search(lambda a: np.inf if a > 0.6 else (a - 0.3) ** 2,
                                          alpha_probes=(0.0, 0.2, 0.5, 1.0))
    assert fitted and alpha == pytest.approx(0.3)
    alpha, fitted = quadratic_line_search(lambda a: np.nan if a > 0.1 else 1.0)
    assert alpha == 0.01 and not fitted


def test_line_search_clamps_vertex():
    alpha, fitted = quadratic_line_search(lambda a: (a - 50.0) ** 2)
    assert fitted and alpha == 10.0
    alpha, _ = quadratic_line_search(lambda a: (a - 50.0) ** 2, clamp=20.0)
    assert alpha == 20.0


def test_config_validation():
    CgConfig()
    for bad in (dict(k_max=0), dict(delta_stop=-1.0), dict(alpha_probes=(0.1, 0.5)),
                dict(alpha_probes=(0.1, 0.1, 1.0)), dict(gamma_initial=-1.0)):
        with pytest.raises(InputError):
            CgConfig(**bad)
    assert CgConfig().gamma_start(ML) == 1e-5 and CgConfig().gamma_start(AMP) == 1e-3
    assert CgConfig(gamma_initial=0.0).gamma_start(AMP) == 0.0


@pytest.fixture(scope="module")
def case1():
    return build_case(case_spec(1, photons=1e9))


@pytest.mark.parametrize("algorithm", [ML, AMP])
def test_exact_data_stops_immediately(case1, algorithm):
    N = expected_counts(case1.probe, case1.truth, case1.scan).expected
    est, trace = run_cg(case1.probe, case1.scan, N, algorithm, CgConfig(gamma_initial=0.0),
                        case1.truth)
    assert trace.iterations == 1 and trace.stop_reason == "converged"
    # the gradient of exact data is roundoff, so the iterate moves by roundoff at most
    assert np.max(np.abs(est.A - case1.truth.A)) < 1e-13
    assert np.max(np.abs(est.phi - case1.truth.phi)) < 1e-13


@pytest.mark.parametrize("algorithm", [ML, AMP])
def test_exact_data_is_a_fixed_point(case1, algorithm):
    N = expected_counts(case1.probe, case1.truth, case1.scan).expected
    est, trace = run_cg(case1.probe, case1.scan, N, algorithm, CgConfig(k_max=40), case1.truth)
    assert np.max(np.abs(est.A - case1.truth.A)) <= 1e-10
    assert np.max(np.abs(est.phi - case1.truth.phi)) <= 1e-10


@pytest.fixture(scope="module")
def noisy_run(case1):
    N = expected_counts(case1.probe, case1.truth, case1.scan)
    n = sample_poisson_stack(N, RngSeed(2024, 0)).counts
    est, trace = run_cg(case1.probe, case1.scan, n, ML, CgConfig(k_max=300), case1.truth)
    return n, est, trace


def test_noisy_run_decreases_objective_and_stays_within_bound(case1, noisy_run):
    _, est, trace = noisy_run
    assert trace.objective[-1] <= trace.objective[0]
    bound = crlb(case1.probe, case1.truth, case1.scan)
    lit = bound.crlb_A > 0
    zA = np.abs(est.A - case1.truth.A)[lit] / np.sqrt(bound.crlb_A[lit])
    zP = np.abs(est.phi - case1.truth.phi)[lit] / np.sqrt(bound.crlb_phi[lit])
    assert zA.max() < 5 and zP.max() < 5
    assert np.array_equal(est.A[~lit], case1.truth.A[~lit])


def test_objective_trace_non_increasing(noisy_run):
    _, _, trace = noisy_run
    obj = np.array(trace.objective)
    # only compare within one gamma phase
    tail = obj[11:]
    assert np.all(np.diff(tail) <= INCREASE_TOL * np.abs(tail[:-1]))
    assert np.all(np.array(trace.beta_A) >= 0) and np.all(np.array(trace.beta_phi) >= 0)
    assert trace.beta_A[0] == 0.0 and trace.beta_phi[0] == 0.0


def test_channels_use_independent_steps(noisy_run):
    _, _, trace = noisy_run
    assert not np.allclose(trace.alpha_A[:20], trace.alpha_phi[:20])
    assert not np.allclose(trace.beta_A[1:20], trace.beta_phi[1:20])


def test_trace_csv(tmp_path, noisy_run):
    _, _, trace = noisy_run
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iteration", "objective", "alpha_A", "alpha_phi", "beta_A", "beta_phi",
                       "grad_norm_A", "grad_norm_phi"]
    assert len(rows) == trace.iterations + 1
    assert float(rows[1][1]) == trace.objective[0]


def test_batch_matches_single_runs(case1):
    N = expected_counts(case1.probe, case1.truth, case1.scan)
    n = np.stack([sample_poisson_stack(N, RngSeed(5, t)).counts for t in range(3)])
    shape = (3,) + case1.truth.shape
    cfg = CgConfig(k_max=60)
    A, P, traces = run_cg_batch(case1.probe, case1.scan, n, ML, cfg,
                                np.broadcast_to(case1.truth.A, shape),
                                np.broadcast_to(case1.truth.phi, shape))
    est, trace = run_cg(case1.probe, case1.scan, n[1], ML, cfg, case1.truth)
    assert np.array_equal(A[1], est.A) and np.array_equal(P[1], est.phi)
    assert traces[1].objective == trace.objective


def test_amp_run_on_noisy_data(case1):
    N = expected_counts(case1.probe, case1.truth, case1.scan)
    n = sample_poisson_stack(N, RngSeed(77, 0)).counts
    est, trace = reconstruct(case1, n, AMP, CgConfig(k_max=100))
    assert trace.objective[-1] < trace.objective[0]
    assert np.all(np.isfinite(est.A)) and np.all(np.isfinite(est.phi))


def test_gamma_switch_changes_objective_definition(case1):
    N = expected_counts(case1.probe, case1.truth, case1.scan)
    n = sample_poisson_stack(N, RngSeed(3, 0)).counts
    _, a = run_cg(case1.probe, case1.scan, n, AMP, CgConfig(k_max=15), case1.truth)
    _, b = run_cg(case1.probe, case1.scan, n, AMP,
                  CgConfig(k_max=15, gamma_switch_iteration=1000), case1.truth)
    assert a.objective[:11] == b.objective[:11]
    assert a.objective[11] != b.objective[11]


def test_input_checks(case1):
    N = expected_counts(case1.probe, case1.truth, case1.scan).expected
    with pytest.raises(InputError):
        run_cg(case1.probe, case1.scan, N, "adam", None, case1.truth)
    with pytest.raises(InputError):
        run_cg(case1.probe, case1.scan, N[:2], ML, None, case1.truth)
    with pytest.raises(InputError):
        run_cg(case1.probe, case1.scan, N, ML, None, None)


def test_natural_step_positive(case1):
    sA, sP = natural_step(case1.probe, case1.scan, case1.truth.A)
    assert sA > 0 and sP > 0


def test_run_trace_rows():
    t = RunTrace(objective=[3.0, 2.0], alpha_A=[1, 1], alpha_phi=[1, 1], beta_A=[0, 0],
                 beta_phi=[0, 0], grad_norm_A=[1, 1], grad_norm_phi=[1, 1])
    assert t.iterations == 2 and list(t.rows())[1][0] == 2
