"""Nonlinear conjugate gradient for the two reconstruction objectives.

A and phi are separate channels: each gets its own Polak-Ribiere beta,
conjugate direction and quadratic-fit step, and both steps are applied
together, following the maximum-likelihood and amplitude-cost recipes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import objectives
from .errors import InputError
from .forward import ObjectEstimate, Probe, ScanPattern, illumination

log = logging.getLogger(__name__)

ML = "ml"
AMP = "amp"
ALGORITHMS = (ML, AMP)

# relative objective increase tolerated before a step is rejected
INCREASE_TOL = 1e-9


@dataclass
class CgConfig:
    """Iteration controls. ``gamma_initial=None`` picks 1e-5 (ml) or 1e-3 (amp)."""

    k_max: int = 1000
    delta_stop: float = 1e-20
    gamma_initial: float | None = None
    gamma_after: float = 1e-20
    gamma_switch_iteration: int = 11
    alpha_probes: tuple[float, ...] = (0.01, 0.5, 1.0)
    step_scale: str | float = "auto"

    def __post_init__(self):
        self.alpha_probes = tuple(float(a) for a in self.alpha_probes)
        if self.k_max < 1:
            raise InputError("k_max must be >= 1")
        if self.delta_stop < 0 or self.gamma_after < 0:
            raise InputError("thresholds must be nonnegative")
        if self.gamma_initial is not None and self.gamma_initial < 0:
            raise InputError("gamma must be nonnegative")
        if len(self.alpha_probes) < 3 or len(set(self.alpha_probes)) != len(self.alpha_probes):
            raise InputError("need at least three distinct alpha probes")

    def gamma_start(self, algorithm: str) -> float:
        if self.gamma_initial is not None:
            return self.gamma_initial
        return 1e-5 if algorithm == ML else 1e-3


@dataclass
class RunTrace:
    """Per-iteration record of one reconstruction."""

    objective: list[float] = field(default_factory=list)
    alpha_A: list[float] = field(default_factory=list)
    alpha_phi: list[float] = field(default_factory=list)
    beta_A: list[float] = field(default_factory=list)
    beta_phi: list[float] = field(default_factory=list)
    grad_norm_A: list[float] = field(default_factory=list)
    grad_norm_phi: list[float] = field(default_factory=list)
    fallbacks: int = 0
    stop_reason: str = ""
    final: ObjectEstimate | None = None

    @property
    def iterations(self) -> int:
        return len(self.objective)

    def rows(self):
        cols = zip(self.objective, self.alpha_A, self.alpha_phi, self.beta_A,
                   self.beta_phi, self.grad_norm_A, self.grad_norm_phi)
        for k, row in enumerate(cols, start=1):
            yield (k,) + row

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "alpha_A", "alpha_phi", "beta_A",
                        "beta_phi", "grad_norm_A", "grad_norm_phi"])
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def polak_ribiere_beta(g_now: np.ndarray, g_prev: np.ndarray) -> float:
    """``max(<g_now - g_prev, g_now> / ||g_prev||^2, 0)``; 0 if ``g_prev`` vanishes."""
    denom = float(np.vdot(g_prev, g_prev).real)
    if denom == 0.0:
        return 0.0
    beta = float(np.vdot(g_now - g_prev, g_now).real) / denom
    return max(beta, 0.0)


def _fit_rows(alphas: np.ndarray, values: np.ndarray, clamp: float):
    """Batched parabola vertices for rows of ``values`` probed at ``alphas``.

    Returns ``(alpha, fitted)`` arrays; see :func:`quadratic_line_search`.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    rows = values.shape[0]
    alpha = np.zeros(rows)
    fitted = np.zeros(rows, dtype=bool)
    finite = np.isfinite(values)
    any_ok = finite.any(axis=1)
    masked = np.where(finite, values, np.inf)
    alpha[any_ok] = alphas[np.argmin(masked[any_ok], axis=1)]

    full = finite.all(axis=1)
    if full.any():
        a0, s = alphas.mean(), np.ptp(alphas)
        x = (alphas - a0) / s
        design = np.stack([x**2, x, np.ones_like(x)], axis=1)
        v = values[full]
        v0 = v.min(axis=1, keepdims=True)
        vs = np.ptp(v, axis=1, keepdims=True)
        flat = vs[:, 0] == 0.0
        vn = (v - v0) / np.where(vs == 0.0, 1.0, vs)
        c2, c1, _ = np.linalg.lstsq(design, vn.T, rcond=None)[0]
        convex = (c2 > 1e-9 * (np.abs(c1) + 1.0)) & ~flat
        with np.errstate(divide="ignore", invalid="ignore"):
            vertex = a0 - s * c1 / (2.0 * c2)
        good = convex & (vertex >= 0)
        if np.any(good & (vertex > clamp)):
            log.debug("line search vertex clamped to %.3g", clamp)
        idx = np.flatnonzero(full)
        alpha[idx[good]] = np.minimum(vertex[good], clamp)
        fitted[idx[good]] = True

    partial = any_ok & ~full
    for r in np.flatnonzero(partial):
        ok = finite[r]
        if ok.sum() >= 3:
            a_r, f_r = _fit_rows(alphas[ok], values[r, ok][None, :], clamp)
            alpha[r], fitted[r] = a_r[0], f_r[0]
    return alpha, fitted


def quadratic_line_search(
    objective: Callable[[float], float],
    alpha_probes: Sequence[float] = (0.01, 0.5, 1.0),
    values: Sequence[float] | None = None,
    clamp: float | None = None,
) -> tuple[float, bool]:
    """Vertex of a least-squares parabola through the probed objective values.

    Returns ``(alpha, fitted)``. Non-finite probes are dropped; with fewer
    than three left, a non-convex fit, or a negative vertex, the best probe
    is returned and ``fitted`` is False. A convex vertex is clamped to
    ``[0, clamp]`` (default ``10 * max(alpha_probes)``).
    """
    alphas = np.asarray(alpha_probes, dtype=float)
    if values is None:
        values = [objective(a) for a in alphas]
    limit = 10.0 * float(alphas.max()) if clamp is None else float(clamp)
    alpha, fitted = _fit_rows(alphas, np.asarray(values, dtype=float)[None, :], limit)
    return float(alpha[0]), bool(fitted[0])


def natural_step(probe: Probe, scan: ScanPattern, A: np.ndarray) -> tuple[float, float]:
    """Per-channel step lengths that make ``alpha ~ 1`` a curvature-sized move.

    The likelihood curvature along a single pixel is about
    ``2 N_pix sum_m |P_m|^2`` (times ``A^2`` for the phase), so raw gradients
    are rescaled by its inverse. Only the units of alpha change; search
    directions do not.
    """
    npix = probe.shape[0] * probe.shape[1]
    power = illumination(probe, scan, A.shape[-2:])
    peak_A = 2.0 * npix * power.max()
    peak_phi = 2.0 * npix * (power * A**2).max()
    if peak_A <= 0:
        raise InputError("scan does not illuminate any pixel")
    return 1.0 / peak_A, 1.0 / (peak_phi if peak_phi > 0 else peak_A)


def _rowdot(a, b):
    return np.sum(a * b, axis=(-2, -1))


def _finite(v):
    return np.where(np.isfinite(v), v, np.inf)


def run_cg_batch(
    probe: Probe,
    scan: ScanPattern,
    counts: np.ndarray,
    algorithm: str,
    config: CgConfig,
    A0: np.ndarray,
    phi0: np.ndarray,
):
    """Independent reconstructions of a batch of data sets, advanced in lockstep.

    ``counts`` has shape ``(B, M, ny, nx)``, ``A0``/``phi0`` shape ``(B, NY, NX)``.
    Each element keeps its own betas, steps and stopping state; finished
    elements are frozen. Returns ``(A, phi, traces)``.
    """
    if algorithm not in ALGORITHMS:
        raise InputError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    n = np.asarray(counts, dtype=float)
    A = np.array(A0, dtype=float)
    phi = np.array(phi0, dtype=float)
    B = n.shape[0]
    if n.shape[1:] != (len(scan),) + probe.shape:
        raise InputError(f"counts shape {n.shape[1:]} does not match scan/probe geometry")
    if A.shape != phi.shape or A.shape[0] != B:
        raise InputError("initial objects do not match the batch of data sets")

    if config.step_scale == "auto":
        steps = np.array([natural_step(probe, scan, A[b]) for b in range(B)])
    else:
        steps = np.full((B, 2), float(config.step_scale))
    scale_A, scale_phi = steps[:, 0, None, None], steps[:, 1, None, None]

    alphas = np.asarray(config.alpha_probes)
    clamp = 10.0 * alphas.max()
    gamma = config.gamma_start(algorithm)
    keys = ("objective", "alpha_A", "alpha_phi", "beta_A", "beta_phi",
            "grad_norm_A", "grad_norm_phi")
    rec = {key: np.full((config.k_max, B), np.nan) for key in keys}
    n_iter = np.zeros(B, dtype=int)
    fallbacks = np.zeros(B, dtype=int)
    stop = np.array(["k_max"] * B, dtype=object)
    active = np.arange(B)
    g_prev = d_prev = None
    F_cur, _ = objectives.far_field(A, phi, probe, scan)

    def value(N, idx):
        with np.errstate(all="ignore"):
            return _finite(objectives.value_from_intensity(algorithm, N, n[idx], gamma))

    def value_at(a, p, idx):
        return value(objectives.far_field(a, p, probe, scan)[1], idx)

    def intensity(F):
        return F.real**2 + F.imag**2

    for k in range(1, config.k_max + 1):
        idx = active
        a, p, F0 = A[idx], phi[idx], F_cur[idx]
        current = value(intensity(F0), idx)
        gA, gP = objectives.gradient_arrays(algorithm, a, p, probe, scan, n[idx], gamma, F=F0)
        if g_prev is None:
            bA = bP = np.zeros(idx.size)
            dA, dP = gA, gP
        else:
            bA = _pr_rows(gA, g_prev[0])
            bP = _pr_rows(gP, g_prev[1])
            dA = gA + bA[:, None, None] * d_prev[0]
            dP = gP + bP[:, None, None] * d_prev[1]
        sA, sP = scale_A[idx] * dA, scale_phi[idx] * dP

        GA = objectives.far_field_direction(sA, p, probe, scan)
        probe_A = np.stack([value(intensity(F0 - al * GA), idx) for al in alphas], axis=1)
        probe_P = np.stack([value_at(a, p - al * sP, idx) for al in alphas], axis=1)
        alpha_A, _ = _fit_rows(alphas, probe_A, clamp)
        alpha_P, _ = _fit_rows(alphas, probe_P, clamp)

        a_new = a - alpha_A[:, None, None] * sA
        p_new = p - alpha_P[:, None, None] * sP
        F_new, N_new = objectives.far_field(a_new, p_new, probe, scan)
        new = value(N_new, idx)
        bad = new > current + INCREASE_TOL * np.abs(current)
        if bad.any():
            # joint step overshoots: keep the better single-channel move, if any
            fallbacks[idx[bad]] += 1
            bi = np.flatnonzero(bad)
            log.debug("iteration %d: %d joint steps rejected", k, bi.size)
            F_onlyA, _ = objectives.far_field(a_new[bi], p[bi], probe, scan)
            F_onlyP, _ = objectives.far_field(a[bi], p_new[bi], probe, scan)
            only_A = value(intensity(F_onlyA), idx[bi])
            only_P = value(intensity(F_onlyP), idx[bi])
            use_A = (only_A <= only_P) & (only_A <= current[bi])
            use_P = ~use_A & (only_P <= current[bi])
            neither = ~use_A & ~use_P
            for sel, v, Fsel in ((use_A, only_A, F_onlyA), (use_P, only_P, F_onlyP),
                                 (neither, current[bi], F0[bi])):
                rows = bi[sel]
                if not sel.any():
                    continue
                if sel is not use_A:
                    a_new[rows] = a[rows]
                    alpha_A[rows] = 0.0
                if sel is not use_P:
                    p_new[rows] = p[rows]
                    alpha_P[rows] = 0.0
                new[rows] = v[sel]
                F_new[rows] = Fsel[sel]

        it = k - 1
        rec["objective"][it, idx] = current
        rec["alpha_A"][it, idx] = alpha_A
        rec["alpha_phi"][it, idx] = alpha_P
        rec["beta_A"][it, idx] = bA
        rec["beta_phi"][it, idx] = bP
        rec["grad_norm_A"][it, idx] = np.sqrt(_rowdot(gA, gA))
        rec["grad_norm_phi"][it, idx] = np.sqrt(_rowdot(gP, gP))
        n_iter[idx] = k

        A[idx], phi[idx], F_cur[idx] = a_new, p_new, F_new
        done = np.abs(new - current) <= config.delta_stop
        stop[idx[done]] = "converged"
        keep = ~done
        active = idx[keep]
        g_prev = (gA[keep], gP[keep])
        d_prev = (dA[keep], dP[keep])
        if k == config.gamma_switch_iteration:
            gamma = config.gamma_after
        if active.size == 0:
            break

    traces = []
    for b in range(B):
        kb = n_iter[b]
        t = RunTrace(**{key: rec[key][:kb, b].tolist() for key in keys})
        t.fallbacks = int(fallbacks[b])
        t.stop_reason = str(stop[b])
        t.final = ObjectEstimate(A[b], phi[b])
        traces.append(t)
    return A, phi, traces


def _pr_rows(g_now, g_prev):
    denom = _rowdot(g_prev, g_prev)
    num = _rowdot(g_now - g_prev, g_now)
    beta = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return np.maximum(beta, 0.0)


def run_cg(
    probe: Probe,
    scan: ScanPattern,
    counts,
    algorithm: str = ML,
    config: CgConfig | None = None,
    init: ObjectEstimate | None = None,
) -> tuple[ObjectEstimate, RunTrace]:
    """Reconstruct (A, phi) from ``counts`` with the known probe.

    The trace records the objective at the start of each iteration; for the
    likelihood this is the deviance form, which differs from the negative
    log-likelihood by a constant fixed by the data.
    """
    if init is None:
        raise InputError("an initial object is required")
    config = config or CgConfig()
    n = np.asarray(getattr(counts, "counts", counts), dtype=float)
    A, phi, traces = run_cg_batch(probe, scan, n[None], algorithm, config,
                                  init.A[None], init.phi[None])
    return ObjectEstimate(A[0], phi[0]), traces[0]


def reconstruct(scenario, counts, algorithm: str = ML, config: CgConfig | None = None,
                init: ObjectEstimate | None = None) -> tuple[ObjectEstimate, RunTrace]:
    """:func:`run_cg` on a scenario's probe and scan; starts from the truth by default."""
    return run_cg(scenario.probe, scenario.scan, counts, algorithm, config,
                  scenario.truth if init is None else init)
