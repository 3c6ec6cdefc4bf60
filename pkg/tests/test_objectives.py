import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln

from ptycho_crlb.fields import dft2_direct
from ptycho_crlb.forward import ObjectEstimate, Probe, ScanPattern, expected_counts
from ptycho_crlb.objectives import (amplitude_cost, amplitude_weight, backproject, far_field,
                                    far_field_direction, grad_amplitude_cost,
                                    grad_neg_log_likelihood, gradient_arrays, likelihood_weight,
                                    neg_log_likelihood, poisson_deviance, value_arrays)

from conftest import small_problem

FULL_SCAN = ((0, 0), (2, 2), (0, 2), (2, 0))


def _problem(seed, photons=1e4, perturb=0.05):
    probe, obj, scan = small_problem(seed, offsets=FULL_SCAN, photons=photons)
    rng = np.random.default_rng(seed + 1000)
    n = rng.poisson(expected_counts(probe, obj, scan).expected).astype(float)
    x = ObjectEstimate(obj.A + perturb * rng.normal(size=obj.shape),
                       obj.phi + perturb * rng.normal(size=obj.shape))
    return probe, scan, n, x


def _direct_intensities(probe, obj, scan):
    ny, nx = probe.shape
    out = []
    for oy, ox in scan.offsets:
        window = obj.A[oy:oy + ny, ox:ox + nx] * np.exp(1j * obj.phi[oy:oy + ny, ox:ox + nx])
        out.append(np.abs(dft2_direct(probe.field * window)) ** 2)
    return np.array(out)


def central_difference(fun, obj, h=1e-6):
    grads = []
    for name in ("A", "phi"):
        g = np.zeros(obj.shape)
        for idx in np.ndindex(obj.shape):
            plus, minus = obj.copy(), obj.copy()
            getattr(plus, name)[idx] += h
            getattr(minus, name)[idx] -= h
            g[idx] = (fun(plus) - fun(minus)) / (2 * h)
        grads.append(g)
    return grads


def pixel_rel_error(g, ref):
    floor = 1e-3 * np.abs(g).max()
    return np.max(np.abs(g - ref) / np.maximum(np.abs(g), floor))


def test_nll_matches_direct_sum(rng):
    probe, scan, n, x = _problem(7)
    gamma = 1e-5
    N = _direct_intensities(probe, x, scan)
    ref = -np.sum(n * np.log(N + gamma) - N)
    assert neg_log_likelihood(x, probe, scan, n, gamma) == pytest.approx(ref, rel=1e-10)


def test_amplitude_cost_matches_direct_sum():
    probe, scan, n, x = _problem(8)
    N = _direct_intensities(probe, x, scan)
    ref = np.sum((np.sqrt(n) - np.sqrt(N)) ** 2)
    assert amplitude_cost(x, probe, scan, n) == pytest.approx(ref, rel=1e-10)


def test_nll_at_exact_counts():
    probe, obj, scan = small_problem(2, offsets=FULL_SCAN)
    N = expected_counts(probe, obj, scan).expected
    pos = N > 0
    ref = -np.sum(N[pos] * np.log(N[pos]) - N[pos])
    assert neg_log_likelihood(obj, probe, scan, N) == pytest.approx(ref, rel=1e-12)
    gA, gP = grad_neg_log_likelihood(obj, probe, scan, N)
    scale = 2 * 16 * probe.photons
    assert np.max(np.abs(gA)) < 1e-9 * scale and np.max(np.abs(gP)) < 1e-9 * scale


def test_nll_of_dark_data_is_zero():
    probe = Probe(np.zeros((4, 4)), 2.0)
    obj = ObjectEstimate.uniform((4, 4))
    scan = ScanPattern(np.array([(0, 0)]))
    assert neg_log_likelihood(obj, probe, scan, np.zeros((1, 4, 4)), 1e-20) == 0.0


def test_factorial_term_is_a_data_constant():
    probe, scan, n, x = _problem(3)
    plain = neg_log_likelihood(x, probe, scan, n)
    full = neg_log_likelihood(x, probe, scan, n, include_factorial=True)
    assert full - plain == pytest.approx(np.sum(gammaln(n + 1)), rel=1e-12)
    y = ObjectEstimate(x.A * 1.01, x.phi)
    shift_x = neg_log_likelihood(x, probe, scan, n) - poisson_deviance(x, probe, scan, n)
    shift_y = neg_log_likelihood(y, probe, scan, n) - poisson_deviance(y, probe, scan, n)
    assert shift_x == pytest.approx(shift_y, rel=1e-12)


def test_deviance_gradient_equals_likelihood_gradient():
    probe, scan, n, x = _problem(4)
    g = grad_neg_log_likelihood(x, probe, scan, n, 1e-5)
    f = central_difference(lambda o: poisson_deviance(o, probe, scan, n, 1e-5), x)
    for a, b in zip(g, f):
        assert pixel_rel_error(a, b) < 1e-5


def test_amplitude_cost_examples():
    probe, obj, scan = small_problem(5, offsets=FULL_SCAN)
    N = expected_counts(probe, obj, scan).expected
    assert amplitude_cost(obj, probe, scan, N) == pytest.approx(0.0, abs=1e-12 * N.sum())
    assert amplitude_cost(obj, probe, scan, np.zeros_like(N)) == pytest.approx(N.sum(), rel=1e-12)
    gA, gP = grad_amplitude_cost(obj, probe, scan, N)
    assert np.max(np.abs(gA)) < 1e-8 * N.sum()


@pytest.mark.parametrize("seed", range(5))
def test_likelihood_gradient_finite_difference(seed):
    probe, scan, n, x = _problem(seed)
    g = grad_neg_log_likelihood(x, probe, scan, n, 1e-5)
    f = central_difference(lambda o: poisson_deviance(o, probe, scan, n, 1e-5), x)
    for a, b in zip(g, f):
        assert pixel_rel_error(a, b) < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_amplitude_gradient_finite_difference(seed):
    probe, scan, n, x = _problem(seed)
    g = grad_amplitude_cost(x, probe, scan, n, 1e-3)
    f = central_difference(lambda o: amplitude_cost(o, probe, scan, n, 1e-3), x)
    for a, b in zip(g, f):
        assert pixel_rel_error(a, b) < 1e-5


def test_unilluminated_pixels_have_zero_gradient():
    probe, obj, scan = small_problem(6, object_size=7, offsets=((0, 0), (1, 1)))
    n = np.ones((2,) + probe.shape)
    illum = np.zeros(obj.shape)
    for oy, ox in scan.offsets:
        illum[oy:oy + 4, ox:ox + 4] += np.abs(probe.field) ** 2
    for grad in (grad_neg_log_likelihood, grad_amplitude_cost):
        gA, gP = grad(obj, probe, scan, n, 1e-3)
        assert np.all(gA[illum == 0] == 0) and np.all(gP[illum == 0] == 0)


def test_large_gamma_limit_of_amplitude_weight():
    N = np.array([1.0, 5.0])
    n = np.array([3.0, 2.0])
    assert np.allclose(amplitude_weight(N, n, 1e12), -1.0, atol=1e-5)
    # weight -1 reproduces the gradient of the total expected energy
    probe, obj, scan = small_problem(9, offsets=FULL_SCAN)
    gA, _ = grad_amplitude_cost(obj, probe, scan, np.ones((4, 4, 4)), 1e14)
    F, _ = far_field(obj.A, obj.phi, probe, scan)
    eA, _ = backproject(obj.A, obj.phi, probe, scan, F, -np.ones(F.shape))
    assert np.allclose(gA, eA, rtol=1e-5, atol=1e-6 * np.abs(eA).max())


def test_weights_vanish_on_dark_pixels():
    z = np.zeros(3)
    assert np.all(likelihood_weight(z, np.ones(3), 0.0) == 0)
    assert np.all(amplitude_weight(z, np.ones(3), 0.0) == 0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), c=st.floats(-6, 6))
def test_global_phase_invariance(seed, c):
    probe, scan, n, x = _problem(seed % 10_000)
    y = ObjectEstimate(x.A, x.phi + c)
    for val in (neg_log_likelihood, amplitude_cost):
        a, b = val(x, probe, scan, n, 1e-5), val(y, probe, scan, n, 1e-5)
        assert a == pytest.approx(b, rel=1e-10)
    for grad in (grad_neg_log_likelihood, grad_amplitude_cost):
        gx, gy = grad(x, probe, scan, n, 1e-5), grad(y, probe, scan, n, 1e-5)
        assert np.allclose(gx[0], gy[0], rtol=1e-8, atol=1e-10 * np.abs(gx[0]).max())
        assert gx[1].sum() == pytest.approx(gy[1].sum(), abs=1e-8 * np.abs(gx[1]).max())


def test_batched_kernels_match_single(rng):
    probe, scan, n, x = _problem(11)
    A = np.stack([x.A, 1.1 * x.A])
    P = np.stack([x.phi, x.phi - 0.2])
    nn = np.stack([n, n])
    vals = value_arrays("amp", A, P, probe, scan, nn, 1e-3)
    assert vals[1] == pytest.approx(amplitude_cost(ObjectEstimate(A[1], P[1]), probe, scan, n, 1e-3))
    gA, gP = gradient_arrays("ml", A, P, probe, scan, nn, 1e-5)
    ref = grad_neg_log_likelihood(ObjectEstimate(A[1], P[1]), probe, scan, n, 1e-5)
    assert np.allclose(gA[1], ref[0]) and np.allclose(gP[1], ref[1])


def test_far_field_is_linear_in_transmission(rng):
    probe, scan, n, x = _problem(12)
    d = rng.normal(size=x.shape)
    F0, _ = far_field(x.A, x.phi, probe, scan)
    F1, _ = far_field(x.A - 0.3 * d, x.phi, probe, scan)
    G = far_field_direction(d, x.phi, probe, scan)
    assert np.allclose(F1, F0 - 0.3 * G, atol=1e-10 * np.abs(F0).max())
