"""Poisson measurement synthesis and manipulation of measurement sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .forward import DiffractionStack

# numpy's sampler rejects larger means
MAX_POISSON_MEAN = 1e18


@dataclass(frozen=True)
class RngSeed:
    """Master seed plus the trial label; positions get their own sub-streams."""

    master_seed: int
    trial: int = 0

    def generator(self, position: int) -> np.random.Generator:
        ss = np.random.SeedSequence([int(self.master_seed), int(self.trial), int(position)])
        return np.random.Generator(np.random.PCG64(ss))


def sample_poisson_stack(
    expected: DiffractionStack, seed: RngSeed, repeats: int = 1
) -> DiffractionStack | list[DiffractionStack]:
    """Draw independent Poisson counts for every position and detector pixel.

    Position ``m`` of trial ``t`` always reads from the stream labelled
    ``(master_seed, t, m)``; with ``repeats > 1`` the repeats are consecutive
    draws from that stream and a list of stacks is returned.
    """
    N = expected.expected
    if N is None:
        raise InputError("stack has no expected counts to sample from")
    if not np.all(np.isfinite(N)) or np.any(N < 0):
        raise InputError("Poisson means must be finite and nonnegative")
    if np.any(N > MAX_POISSON_MEAN):
        raise InputError(f"Poisson mean exceeds {MAX_POISSON_MEAN:g}")
    if repeats < 1:
        raise InputError("repeats must be >= 1")

    draws = np.empty((repeats,) + N.shape)
    for m in range(N.shape[0]):
        rng = seed.generator(m)
        for r in range(repeats):
            draws[r, m] = rng.poisson(N[m])

    def _stack(counts):
        meta = dict(expected.meta, trial=seed.trial, seed=seed.master_seed,
                    m=list(range(N.shape[0])))
        return DiffractionStack(expected=N, counts=counts, meta=meta)

    if repeats == 1:
        return _stack(draws[0])
    return [_stack(d) for d in draws]


def snr_map(counts: DiffractionStack | np.ndarray) -> np.ndarray:
    """Per-pixel Poisson signal-to-noise ratio ``sqrt(n)``."""
    n = counts.counts if isinstance(counts, DiffractionStack) else np.asarray(counts, float)
    if np.any(n < 0):
        raise InputError("counts must be nonnegative")
    return np.sqrt(n)


def average_measurements(stacks: list[DiffractionStack]) -> DiffractionStack:
    """Pixelwise mean of repeated measurements; the result stays real-valued.

    The effective dose of the averaged stack is ``T`` times that of each
    repeat, recorded as ``meta["repeats"]``.
    """
    if len(stacks) == 0:
        raise InputError("need at least one stack to average")
    shape = stacks[0].shape
    if any(s.shape != shape or s.counts is None for s in stacks):
        raise InputError("all stacks must carry observed counts of the same geometry")
    mean = np.mean([s.counts for s in stacks], axis=0)
    meta = dict(stacks[0].meta, repeats=len(stacks))
    return DiffractionStack(expected=stacks[0].expected, counts=mean, meta=meta)
