"""Poisson negative log-likelihood, amplitude cost, and their gradients.

Gradients are exact derivatives of the implemented objectives with respect
to A and phi, including the ``2 N_pix`` Parseval factor, so that
``obj - alpha * grad`` is a descent step for small ``alpha``.

The public functions take an :class:`ObjectEstimate`; the ``*_arrays``
kernels take ``A``/``phi`` arrays with optional leading batch axes and
return one value (or gradient) per batch element.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .fields import dft2, idft2
from .forward import Probe, ScanPattern, patch_stack, scatter_add


def _counts_array(counts) -> np.ndarray:
    return np.asarray(getattr(counts, "counts", counts), dtype=float)


def far_field(A, phi, probe: Probe, scan: ScanPattern):
    """Far field ``F`` and intensity ``N`` per position, shape ``(..., M, ny, nx)``."""
    O_p = patch_stack(A * np.exp(1j * phi), scan, probe.shape)
    F = dft2(probe.field * O_p)
    return F, F.real**2 + F.imag**2


def _sum3(x):
    return np.sum(x, axis=(-3, -2, -1))


def nll_terms(N, n, gamma):
    """Per-pixel ``N - n ln(N + gamma)`` with ``0 ln 0 = 0``."""
    with np.errstate(divide="ignore"):
        log_term = np.where(n > 0, n * np.log(np.where(n > 0, N + gamma, 1.0)), 0.0)
    return N - log_term


def deviance_terms(N, n, gamma):
    """Per-pixel likelihood shifted by its value at ``N == n``; O(1) near the optimum.

    Pixels with ``n == 0`` reduce to ``N`` because ``1/n`` is taken as zero there.
    """
    inv_n = np.divide(1.0, n, out=np.zeros(np.shape(n)), where=n > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return N - n - n * np.log1p((N + gamma - n) * inv_n)


def amplitude_terms(N, n, gamma):
    return (np.sqrt(n) - np.sqrt(N + gamma)) ** 2


def likelihood_weight(N, n, gamma):
    """``n / (N + gamma) - 1`` written to avoid cancellation."""
    Ng = N + gamma
    return np.divide(n - Ng, Ng, out=np.zeros_like(Ng), where=Ng > 0)


def amplitude_weight(N, n, gamma):
    """``sqrt(n) / sqrt(N + gamma) - 1``."""
    root = np.sqrt(N + gamma)
    return np.divide(np.sqrt(n) - root, root, out=np.zeros_like(root), where=root > 0)


def backproject(A, phi, probe: Probe, scan: ScanPattern, F, weight):
    """``(g_A, g_phi)`` from the far-field weight ``w`` of ``dL = -sum w dN``.

    Where ``N + gamma == 0`` the far field itself vanishes, so the weight is
    irrelevant there and set to zero.
    """
    npix = probe.shape[0] * probe.shape[1]
    back = idft2(weight * F)
    A_p = patch_stack(A, scan, probe.shape)
    c = np.conj(probe.field) * np.exp(-1j * patch_stack(phi, scan, probe.shape)) * back
    object_shape = A.shape[-2:]
    g_A = -2.0 * npix * scatter_add(c.real, scan, object_shape)
    g_phi = -2.0 * npix * scatter_add((A_p * c).imag, scan, object_shape)
    return g_A, g_phi


def neg_log_likelihood(obj, probe, scan, counts, gamma: float = 0.0,
                       include_factorial: bool = False) -> float:
    """``-sum [n ln(N + gamma) - N]``; the ``ln n!`` term only on request."""
    n = _counts_array(counts)
    _, N = far_field(obj.A, obj.phi, probe, scan)
    value = float(_sum3(nll_terms(N, n, gamma)))
    if include_factorial:
        value += float(np.sum(gammaln(n + 1.0)))
    return value


def poisson_deviance(obj, probe, scan, counts, gamma: float = 0.0) -> float:
    """:func:`neg_log_likelihood` minus its value at ``N == n, gamma == 0``.

    The shift depends on the data only, and the result stays of the order of
    the number of detector pixels, so line searches at high photon numbers
    avoid cancellation.
    """
    n = _counts_array(counts)
    _, N = far_field(obj.A, obj.phi, probe, scan)
    return float(_sum3(deviance_terms(N, n, gamma)))


def amplitude_cost(obj, probe, scan, counts, gamma: float = 0.0) -> float:
    """``sum (sqrt(n) - sqrt(N + gamma))^2``; ``gamma = 0`` is the plain modulus distance."""
    n = _counts_array(counts)
    _, N = far_field(obj.A, obj.phi, probe, scan)
    return float(_sum3(amplitude_terms(N, n, gamma)))


def grad_neg_log_likelihood(obj, probe, scan, counts, gamma: float = 0.0):
    """Gradient ``(g_A, g_phi)`` of :func:`neg_log_likelihood`."""
    n = _counts_array(counts)
    F, N = far_field(obj.A, obj.phi, probe, scan)
    return backproject(obj.A, obj.phi, probe, scan, F, likelihood_weight(N, n, gamma))


def grad_amplitude_cost(obj, probe, scan, counts, gamma: float = 0.0):
    """Gradient ``(g_A, g_phi)`` of :func:`amplitude_cost` at the same ``gamma``."""
    n = _counts_array(counts)
    F, N = far_field(obj.A, obj.phi, probe, scan)
    return backproject(obj.A, obj.phi, probe, scan, F, amplitude_weight(N, n, gamma))


TERMS = {"ml": deviance_terms, "amp": amplitude_terms}
WEIGHTS = {"ml": likelihood_weight, "amp": amplitude_weight}


def value_from_intensity(algorithm, N, n, gamma):
    """Objective per batch element from model intensities (likelihood in deviance form)."""
    return _sum3(TERMS[algorithm](N, n, gamma))


def value_arrays(algorithm, A, phi, probe, scan, n, gamma):
    _, N = far_field(A, phi, probe, scan)
    return value_from_intensity(algorithm, N, n, gamma)


def gradient_arrays(algorithm, A, phi, probe, scan, n, gamma, F=None):
    """Batched gradient; pass ``F`` to reuse an already computed far field."""
    if F is None:
        F, N = far_field(A, phi, probe, scan)
    else:
        N = F.real**2 + F.imag**2
    return backproject(A, phi, probe, scan, F, WEIGHTS[algorithm](N, n, gamma))


def far_field_direction(dA, phi, probe: Probe, scan: ScanPattern):
    """Far field of ``dA e^{i phi}``: the exact derivative of ``F`` along an A step.

    ``F`` is linear in ``A`` at fixed ``phi``, so ``F(A - a dA) == F(A) - a * this``.
    """
    return dft2(probe.field * patch_stack(dA * np.exp(1j * phi), scan, probe.shape))
