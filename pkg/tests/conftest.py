import numpy as np
import pytest

from ptycho_crlb.forward import ObjectEstimate, Probe, ScanPattern, disc_mask


def random_probe(rng, shape, radius, photons=1e4):
    field = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    field = np.where(disc_mask(shape, radius), field, 0.0)
    return Probe(field, radius).with_photons(photons)


def random_object(rng, shape, a_low=0.5, a_high=1.5):
    return ObjectEstimate(rng.uniform(a_low, a_high, shape), rng.uniform(-1.0, 1.0, shape))


def small_problem(seed, object_size=6, probe_size=4, radius=2.0, offsets=((0, 0), (2, 2)),
                  photons=1e4):
    """Random probe/object/scan with overlapping placements."""
    rng = np.random.default_rng(seed)
    probe = random_probe(rng, (probe_size, probe_size), radius, photons)
    obj = random_object(rng, (object_size, object_size))
    return probe, obj, ScanPattern(np.array(offsets))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
