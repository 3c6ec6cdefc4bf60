"""Fisher information of Poisson ptychography over (A, phi) and the CRLB.

Unknowns are ordered ``[A.ravel(), phi.ravel()]`` so the matrix has the
block layout ``[[AA, A-phi], [phi-A, phi-phi]]`` with ``K`` pixels per block.

With ``F = dft2(Psi_m)`` unnormalized, every entry carries the Parseval
factor ``N_pix`` of the detector grid:

    I_F = 2 N_pix sum_m ( [[Re f, Im(A_j f)], [Im(A_i f), -Re(A_i A_j f)]]
                         + diag(|P_m|^2, A^2 |P_m|^2) )

    f_m(r_i, r_j) = g_m(r_i + r_j) c_m(r_i) c_m(r_j),
    g_m = idft2(F / F*),  c_m = P_m* e^{-i phi}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .fields import dft2, idft2
from .forward import ObjectEstimate, Probe, ScanPattern, exit_waves, patch_stack

# far-field values below this fraction of the frame's peak are exact zeros
# blurred by FFT roundoff; their phase is meaningless and the ratio is set to 0
ZERO_TOL = 1e-10


@dataclass
class AuxKernel:
    """Factored form of ``f_m(r_i, r_j)`` for one scan position."""

    g: np.ndarray  # idft2(F/F*) on the probe grid
    c: np.ndarray  # conj(P) * exp(-i phi) on the probe grid

    def __call__(self, ri, rj) -> np.ndarray:
        """Evaluate at local frame coordinates; ``ri``/``rj`` are (row, col) arrays."""
        ny, nx = self.g.shape
        (yi, xi), (yj, xj) = ri, rj
        yi, xi, yj, xj = (np.asarray(v) for v in (yi, xi, yj, xj))
        return self.g[(yi + yj) % ny, (xi + xj) % nx] * self.c[yi, xi] * self.c[yj, xj]

    def matrix(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Dense ``f`` over the listed frame pixels (all pairs)."""
        ny, nx = self.g.shape
        G = self.g[(rows[:, None] + rows[None, :]) % ny, (cols[:, None] + cols[None, :]) % nx]
        c = self.c[rows, cols]
        return G * c[:, None] * c[None, :]


def phase_ratio(F: np.ndarray, zero_tol: float = ZERO_TOL) -> np.ndarray:
    """``F / F*`` with the ratio set to 0 where ``|F| <= zero_tol * max |F|``."""
    mag = np.abs(F)
    axes = (-2, -1) if mag.ndim >= 2 else None
    alive = mag > zero_tol * mag.max(axis=axes, keepdims=True)
    unit = np.divide(F, mag, out=np.zeros_like(F), where=alive)
    return unit * unit


def aux_kernel(psi_m: np.ndarray, probe_m: np.ndarray, phi_m: np.ndarray) -> AuxKernel:
    """Auxiliary kernel for one position from its exit wave, probe and phase patch."""
    g = idft2(phase_ratio(dft2(psi_m)))
    return AuxKernel(g=g, c=np.conj(probe_m) * np.exp(-1j * phi_m))


def assemble_fisher(probe: Probe, obj: ObjectEstimate, scan: ScanPattern) -> np.ndarray:
    """Dense ``2K x 2K`` Fisher matrix, accumulated position by position.

    Only pixels inside the probe support enter each position's block, so the
    cost per position is one FFT pair plus ``S^2`` work for ``S`` support pixels.
    """
    ny_o, nx_o = obj.shape
    K = ny_o * nx_o
    npix = probe.shape[0] * probe.shape[1]
    if np.any(obj.A < 0):
        raise InputError("transmission A must be nonnegative")

    rows, cols = np.nonzero(probe.field != 0)
    psi = probe.field * patch_stack(obj.complex, scan, probe.shape)
    phi_p = patch_stack(obj.phi, scan, probe.shape)
    A_p = patch_stack(obj.A, scan, probe.shape)

    fisher = np.zeros((2 * K, 2 * K))
    for m, (oy, ox) in enumerate(scan.offsets):
        kern = aux_kernel(psi[m], probe.field, phi_p[m])
        f = kern.matrix(rows, cols)
        a = A_p[m][rows, cols]
        idx = (rows + oy) * nx_o + (cols + ox)
        aa = f.real
        a_phi = (f * a[None, :]).imag
        phi_phi = -(f * (a[:, None] * a[None, :])).real
        fisher[np.ix_(idx, idx)] += aa
        fisher[np.ix_(idx, idx + K)] += a_phi
        fisher[np.ix_(idx + K, idx)] += a_phi.T
        fisher[np.ix_(idx + K, idx + K)] += phi_phi
        power = np.abs(probe.field[rows, cols]) ** 2
        fisher[idx, idx] += power
        fisher[idx + K, idx + K] += a**2 * power
    fisher *= 2.0 * npix
    return fisher


def fisher_oracle(
    probe: Probe, obj: ObjectEstimate, scan: ScanPattern, step: float = 1e-5,
    zero_tol: float = ZERO_TOL,
) -> np.ndarray:
    """Expected Hessian ``sum (1/N) dN/dtheta_i dN/dtheta_j`` by central differences.

    Independent of :func:`assemble_fisher`: it only calls the forward model.
    At far-field zeros (same relative cut as :func:`phase_ratio`) the
    ``1/N`` form is undefined; there its average over the phase of ``F``,
    ``2 Re(dF_i* dF_j)``, is used instead.
    """
    theta0 = obj.as_vector()

    def far(theta):
        o = ObjectEstimate.from_vector(theta, obj.shape)
        return dft2(exit_waves(probe, o, scan))

    F0 = far(theta0)
    mag = np.abs(F0)
    zero = (mag <= zero_tol * mag.max(axis=(-2, -1), keepdims=True)).ravel()
    N0 = (mag**2).ravel()
    JF = np.empty((N0.size, theta0.size), dtype=complex)
    JN = np.empty((N0.size, theta0.size))
    for i in range(theta0.size):
        e = np.zeros_like(theta0)
        e[i] = step
        Fp, Fm = far(theta0 + e), far(theta0 - e)
        JF[:, i] = ((Fp - Fm) / (2 * step)).ravel()
        JN[:, i] = ((np.abs(Fp) ** 2 - np.abs(Fm) ** 2) / (2 * step)).ravel()
    keep = ~zero
    out = JN[keep].T @ (JN[keep] / N0[keep, None])
    if zero.any():
        Jz = JF[zero]
        out += 2.0 * (Jz.conj().T @ Jz).real
    return out


@dataclass
class CrlbMap:
    """Per-pixel lower bounds on the variance of A and phi."""

    crlb_A: np.ndarray
    crlb_phi: np.ndarray
    rank: int
    tolerance: float

    def total(self) -> tuple[float, float]:
        return float(self.crlb_A.sum()), float(self.crlb_phi.sum())


def default_tolerance(n: int) -> float:
    """Relative eigenvalue cut ``n * eps`` for an ``n x n`` matrix."""
    return n * np.finfo(float).eps


def _check_symmetric(F: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise InputError("Fisher matrix must be square")
    scale = np.linalg.norm(F)
    if scale > 0 and np.linalg.norm(F - F.T) > tol * scale:
        raise InputError("Fisher matrix is not symmetric")
    return 0.5 * (F + F.T)


def _eig_active(F: np.ndarray, rel_tol: float | None):
    """Eigenpairs above the cut, computed on the nonzero rows only.

    Dropping identically zero rows/columns leaves the pseudoinverse unchanged
    (they only contribute exact zero eigenvalues) and keeps the problem small.
    """
    F = _check_symmetric(F)
    n = F.shape[0]
    rel_tol = default_tolerance(n) if rel_tol is None else float(rel_tol)
    active = np.flatnonzero(np.any(F != 0, axis=1))
    if active.size == 0:
        return active, np.empty(0), np.empty((0, 0)), 0.0
    w, V = np.linalg.eigh(F[np.ix_(active, active)])
    cut = rel_tol * max(w.max(), 0.0)
    keep = w > cut
    return active, w[keep], V[:, keep], cut


def pseudo_inverse(F: np.ndarray, rel_tol: float | None = None) -> np.ndarray:
    """Eigendecomposition pseudoinverse discarding ``lambda <= rel_tol * lambda_max``."""
    active, w, V, _ = _eig_active(F, rel_tol)
    out = np.zeros(F.shape)
    out[np.ix_(active, active)] = (V / w) @ V.T
    return out


def crlb_from_fisher(F: np.ndarray, shape: tuple[int, int] | None = None,
                     rel_tol: float | None = None) -> CrlbMap:
    """Diagonal of the pseudoinverse, split into the A and phi halves.

    Pixels without information get a bound of exactly zero.
    """
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    if n % 2:
        raise InputError("Fisher matrix over (A, phi) must have even size")
    K = n // 2
    if shape is None:
        side = int(round(np.sqrt(K)))
        shape = (side, side) if side * side == K else (1, K)
    active, w, V, cut = _eig_active(F, rel_tol)
    diag = np.zeros(n)
    diag[active] = np.sum(V**2 / w, axis=1)
    return CrlbMap(
        crlb_A=diag[:K].reshape(shape),
        crlb_phi=diag[K:].reshape(shape),
        rank=int(w.size),
        tolerance=float(cut),
    )


def crlb(probe: Probe, obj: ObjectEstimate, scan: ScanPattern,
         rel_tol: float | None = None) -> CrlbMap:
    """Fisher assembly followed by the pseudoinverse diagonal."""
    return crlb_from_fisher(assemble_fisher(probe, obj, scan), obj.shape, rel_tol)
