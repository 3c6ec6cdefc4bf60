"""Monte Carlo campaigns and estimator statistics against the CRLB.

Variances use the population convention (divisor ``T``). Phase differences
to the truth are wrapped to ``(-pi, pi]`` before any statistic is taken.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .fisher import CrlbMap, crlb
from .forward import ObjectEstimate, expected_counts
from .noise import RngSeed, average_measurements, sample_poisson_stack
from .optimizer import CgConfig, run_cg_batch
from .scenarios import Scenario

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["case", "algorithm", "PN", "T_repeats", "trials", "var_A", "var_phi",
                  "crlb_A", "crlb_phi", "bvr_A", "bvr_phi", "ratio_A", "ratio_phi"]


def wrap_phase(d):
    """Map angles to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(d, dtype=float), 2.0 * np.pi)


@dataclass
class McStatistics:
    """Per-pixel moments of a set of estimates and their aggregate BVRs."""

    mean_A: np.ndarray
    mean_phi: np.ndarray
    var_A: np.ndarray
    var_phi: np.ndarray
    bias2_A: np.ndarray
    bias2_phi: np.ndarray
    bvr_A: float
    bvr_phi: float
    trials: int
    seeds: list = field(default_factory=list)


def bias_variance_ratio(bias2: np.ndarray, var: np.ndarray, mask=None) -> float:
    """``sum bias^2 / sum var``; a vanishing ratio 0/0 is reported as 0."""
    if mask is not None:
        bias2, var = bias2[mask], var[mask]
    num, den = float(np.sum(bias2)), float(np.sum(var))
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / den


def statistics(estimates, truth: ObjectEstimate, seeds=None) -> McStatistics:
    """Sample mean, population variance, squared bias and BVR per channel."""
    if len(estimates) < 2:
        raise InputError("statistics need at least two estimates")
    if any(e.shape != truth.shape for e in estimates):
        raise InputError("estimates and truth live on different grids")
    # moments of the deviations from the truth: exact zeros stay exact
    dA = np.stack([e.A for e in estimates]) - truth.A
    dphi = wrap_phase(np.stack([e.phi for e in estimates]) - truth.phi)
    mean_dA = dA.mean(axis=0)
    mean_d = dphi.mean(axis=0)
    var_A = dA.var(axis=0)
    var_phi = dphi.var(axis=0)
    bias2_A = mean_dA**2
    bias2_phi = mean_d**2
    return McStatistics(
        mean_A=truth.A + mean_dA,
        mean_phi=truth.phi + mean_d,
        var_A=var_A,
        var_phi=var_phi,
        bias2_A=bias2_A,
        bias2_phi=bias2_phi,
        bvr_A=bias_variance_ratio(bias2_A, var_A),
        bvr_phi=bias_variance_ratio(bias2_phi, var_phi),
        trials=len(estimates),
        seeds=list(seeds) if seeds is not None else [],
    )


def compare_to_crlb(stats: McStatistics, bound: CrlbMap, case=None, algorithm=None,
                    PN=None, T_repeats=1) -> dict:
    """Aggregate variance, aggregate bound and their ratio over pixels with CRLB > 0."""
    if stats.var_A.shape != bound.crlb_A.shape:
        raise InputError("statistics and CRLB maps differ in shape")
    row = {"case": case, "algorithm": algorithm, "PN": PN, "T_repeats": T_repeats,
           "trials": stats.trials}
    for ch in ("A", "phi"):
        b = getattr(bound, f"crlb_{ch}")
        var = getattr(stats, f"var_{ch}")
        mask = b > 0
        v, c = float(var[mask].sum()), float(b[mask].sum())
        row[f"var_{ch}"] = v
        row[f"crlb_{ch}"] = c
        row[f"bvr_{ch}"] = bias_variance_ratio(getattr(stats, f"bias2_{ch}"), var, mask)
        row[f"ratio_{ch}"] = v / c if c > 0 else float("nan")
    return {k: row[k] for k in REPORT_COLUMNS}


def write_report(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- campaigns

def trial_seeds(master_seed: int, T_trials: int) -> list[list[int]]:
    return [[int(master_seed), t] for t in range(T_trials)]


def campaign_data(scenario: Scenario, T_trials: int, T_repeats: int = 1,
                  master_seed: int = 0, noise_free: bool = False) -> np.ndarray:
    """Measured data per trial, shape ``(T_trials, M, ny, nx)``.

    Trial ``t`` draws position ``m`` from stream ``(master_seed, t, m)`` and
    averages its ``T_repeats`` repeats.
    """
    if T_repeats < 1:
        raise InputError("T_repeats must be >= 1")
    expected = expected_counts(scenario.probe, scenario.truth, scenario.scan)
    out = np.empty((T_trials,) + expected.expected.shape)
    for t in range(T_trials):
        if noise_free:
            out[t] = expected.expected
            continue
        draws = sample_poisson_stack(expected, RngSeed(master_seed, t), repeats=T_repeats)
        out[t] = draws.counts if T_repeats == 1 else average_measurements(draws).counts
    return out


def _reconstruct_chunk(args):
    probe, scan, counts, algorithm, config, A0, phi0 = args
    A, phi, traces = run_cg_batch(probe, scan, counts, algorithm, config, A0, phi0)
    for tr in traces:
        tr.final = None  # estimates travel back as arrays
    return A, phi, traces


def align_global_phase(est: ObjectEstimate, truth: ObjectEstimate) -> ObjectEstimate:
    """Remove the constant phase offset that best maps ``est`` onto ``truth``."""
    overlap = np.vdot(truth.complex, est.complex)
    shift = np.angle(overlap) if overlap != 0 else 0.0
    return ObjectEstimate(est.A, est.phi - shift)


@dataclass
class Campaign:
    """Estimates of one campaign with the bookkeeping needed downstream."""

    estimates: list
    traces: list
    seeds: list
    PN: float
    T_repeats: int
    algorithm: str


def run_campaign_detailed(
    scenario: Scenario,
    algorithm: str,
    PN: float,
    T_trials: int,
    T_repeats: int = 1,
    master_seed: int = 0,
    config: CgConfig | None = None,
    noise_free: bool = False,
    batch_size: int = 100,
    workers: int = 1,
    align_phase: bool = False,
) -> Campaign:
    """:func:`run_campaign` that also returns traces and seeds.

    Trials run from the truth in batches of ``batch_size``; batches are
    dispatched to ``workers`` processes and folded back in trial order, and
    since batched runs are bitwise equal to single runs the result does not
    depend on either setting.
    """
    if T_trials < 2:
        raise InputError("a campaign needs at least two trials")
    if batch_size < 1 or workers < 1:
        raise InputError("batch_size and workers must be >= 1")
    config = config or CgConfig()
    sc = scenario.with_photons(PN)
    data = campaign_data(sc, T_trials, T_repeats, master_seed, noise_free)
    shape = (T_trials,) + sc.truth.shape
    A0 = np.broadcast_to(sc.truth.A, shape)
    phi0 = np.broadcast_to(sc.truth.phi, shape)
    jobs = [
        (sc.probe, sc.scan, data[s : s + batch_size], algorithm, config,
         A0[s : s + batch_size], phi0[s : s + batch_size])
        for s in range(0, T_trials, batch_size)
    ]
    if workers == 1 or len(jobs) == 1:
        results = [_reconstruct_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_reconstruct_chunk, jobs))
    estimates, traces = [], []
    for A, phi, tr in results:
        for b in range(A.shape[0]):
            est = ObjectEstimate(A[b], phi[b])
            if align_phase:
                est = align_global_phase(est, sc.truth)
            tr[b].final = est
            estimates.append(est)
            traces.append(tr[b])
    log.info("campaign %s PN=%g T=%d: %d trials, %d joint-step fallbacks", algorithm, PN,
             T_repeats, T_trials, sum(t.fallbacks for t in traces))
    return Campaign(estimates, traces, trial_seeds(master_seed, T_trials), PN, T_repeats,
                    algorithm)


def run_campaign(scenario: Scenario, algorithm: str, PN: float, T_trials: int,
                 T_repeats: int = 1, master_seed: int = 0, **kwargs) -> list:
    """Truth-initialized reconstructions of ``T_trials`` independent data sets."""
    return run_campaign_detailed(scenario, algorithm, PN, T_trials, T_repeats, master_seed,
                                 **kwargs).estimates


def campaign_bound(scenario: Scenario, PN: float, T_repeats: int = 1,
                   rel_tol: float | None = None) -> CrlbMap:
    """Bound for the averaged data: the CRLB at the effective dose ``PN * T``."""
    sc = scenario.with_photons(PN * T_repeats)
    return crlb(sc.probe, sc.truth, sc.scan, rel_tol)


def evaluate_campaign(scenario: Scenario, campaign: Campaign,
                      rel_tol: float | None = None) -> tuple[McStatistics, CrlbMap, dict]:
    stats = statistics(campaign.estimates, scenario.truth, campaign.seeds)
    bound = campaign_bound(scenario, campaign.PN, campaign.T_repeats, rel_tol)
    row = compare_to_crlb(stats, bound, scenario.spec.case, campaign.algorithm,
                          campaign.PN, campaign.T_repeats)
    return stats, bound, row
