"""Thin-object ptychographic forward model with far-field detection.

Photon energy is set to one, so far-field intensities are directly
expected photon counts and a probe with ``sum |P|^2 == PN`` carries
``PN`` photons through its cross section.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, PlacementError
from .fields import Grid2D, dft2


@dataclass
class ObjectEstimate:
    """Transmission ``A`` and phase ``phi`` on the object grid."""

    A: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        if self.A.shape != self.phi.shape or self.A.ndim != 2:
            raise InputError("A and phi must be 2D arrays on the same grid")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    @property
    def complex(self) -> np.ndarray:
        return self.A * np.exp(1j * self.phi)

    def copy(self) -> "ObjectEstimate":
        return ObjectEstimate(self.A.copy(), self.phi.copy())

    def as_vector(self) -> np.ndarray:
        """Unknowns stacked as ``[A.ravel(), phi.ravel()]``."""
        return np.concatenate([self.A.ravel(), self.phi.ravel()])

    @classmethod
    def from_vector(cls, theta: np.ndarray, shape: tuple[int, int]) -> "ObjectEstimate":
        K = shape[0] * shape[1]
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:K].reshape(shape), theta[K:].reshape(shape))

    @classmethod
    def uniform(cls, shape: tuple[int, int], A: float = 1.0, phi: float = 0.0):
        return cls(np.full(shape, float(A)), np.full(shape, float(phi)))


@dataclass
class Probe:
    """Known illumination on the probe grid.

    ``field`` must vanish outside a centred disc of ``support_radius`` pixels.
    """

    field: np.ndarray
    support_radius: float

    def __post_init__(self):
        self.field = np.asarray(self.field, dtype=complex)
        if self.field.ndim != 2:
            raise InputError("probe field must be 2D")
        outside = ~disc_mask(self.field.shape, self.support_radius)
        if np.any(self.field[outside] != 0):
            raise InputError("probe field is nonzero outside its circular support")

    @property
    def shape(self) -> tuple[int, int]:
        return self.field.shape

    @property
    def photons(self) -> float:
        return float(np.sum(np.abs(self.field) ** 2))

    @property
    def support_diameter(self) -> float:
        return 2.0 * self.support_radius

    def with_photons(self, pn: float) -> "Probe":
        """Rescale the field so that ``sum |P|^2 == pn``."""
        if not pn > 0:
            raise InputError(f"photon number must be positive, got {pn}")
        current = self.photons
        if current == 0:
            raise InputError("cannot rescale an all-zero probe")
        return replace(self, field=self.field * np.sqrt(pn / current))


@dataclass
class ScanPattern:
    """Integer (row, col) offsets of the probe frame's top-left corner."""

    offsets: np.ndarray
    overlap_ratio: float | None = None

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=int).reshape(-1, 2)
        if len(self.offsets) == 0:
            raise InputError("scan pattern needs at least one position")

    def __len__(self) -> int:
        return len(self.offsets)

    def check_fits(self, object_shape, probe_shape) -> None:
        lo = self.offsets.min(axis=0)
        hi = self.offsets.max(axis=0) + np.asarray(probe_shape)
        if np.any(lo < 0) or np.any(hi > np.asarray(object_shape)):
            raise PlacementError(
                f"probe frame {tuple(probe_shape)} at offsets spanning "
                f"{tuple(lo)}..{tuple(hi)} exceeds object grid {tuple(object_shape)}"
            )


@dataclass
class DiffractionStack:
    """Per-position detector data, indexed ``[m, ky, kx]``.

    ``expected`` holds the mean counts, ``counts`` optional observed data
    (integers from the sampler, or reals after averaging repeats).
    """

    expected: np.ndarray | None = None
    counts: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("expected", "counts"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.ndim != 3:
                raise InputError(f"{name} must be a (positions, ny, nx) stack")
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise InputError(f"{name} must be finite and nonnegative")
            setattr(self, name, arr)
        if (
            self.expected is not None
            and self.counts is not None
            and self.expected.shape != self.counts.shape
        ):
            raise InputError("expected and observed stacks differ in shape")

    @property
    def shape(self) -> tuple[int, int, int]:
        arr = self.counts if self.counts is not None else self.expected
        return arr.shape


def disc_mask(shape: tuple[int, int], radius: float) -> np.ndarray:
    """Pixels within ``radius`` of the frame centre ``((ny-1)/2, (nx-1)/2)``."""
    ny, nx = shape
    y = np.arange(ny) - (ny - 1) / 2.0
    x = np.arange(nx) - (nx - 1) / 2.0
    return (y[:, None] ** 2 + x[None, :] ** 2) <= radius**2 + 1e-9


def make_probe(
    amplitude: np.ndarray | float,
    phase: np.ndarray | float,
    shape: tuple[int, int],
    support_radius: float,
    photons: float,
) -> Probe:
    """Probe ``|P| e^{i phase}`` truncated by the disc and scaled to ``photons``."""
    mask = disc_mask(shape, support_radius)
    amp = np.broadcast_to(np.asarray(amplitude, dtype=float), shape)
    ph = np.broadcast_to(np.asarray(phase, dtype=float), shape)
    values = np.where(mask, amp * np.exp(1j * ph), 0.0)
    return Probe(values, support_radius).with_photons(photons)


def scan_step(support_diameter: float, overlap_ratio: float) -> int:
    """Step ``d = round((1 - overlap) * L)`` between adjacent placements."""
    if not 0.0 < overlap_ratio < 1.0:
        raise InputError(f"overlap ratio must lie in (0, 1), got {overlap_ratio}")
    d = int(round((1.0 - overlap_ratio) * support_diameter))
    if not 0 < d < support_diameter:
        raise InputError(
            f"overlap {overlap_ratio} on diameter {support_diameter} gives degenerate step {d}"
        )
    return d


def make_scan(
    object_grid: Grid2D,
    probe_grid: Grid2D,
    n_rows: int,
    n_cols: int,
    overlap_ratio: float,
    support_diameter: float | None = None,
) -> ScanPattern:
    """Regular ``n_rows x n_cols`` raster starting at the origin.

    ``support_diameter`` defaults to the probe grid width.
    """
    if n_rows < 1 or n_cols < 1:
        raise InputError("scan needs at least one row and one column")
    L = probe_grid.nx if support_diameter is None else support_diameter
    d = scan_step(L, overlap_ratio)
    offsets = [(i * d, j * d) for i in range(n_rows) for j in range(n_cols)]
    scan = ScanPattern(np.array(offsets), overlap_ratio)
    scan.check_fits(object_grid.shape, probe_grid.shape)
    return scan


def extract_patch(obj: ObjectEstimate, offset, probe_shape) -> np.ndarray:
    """Complex object window ``A e^{i phi}`` under the probe frame at ``offset``."""
    oy, ox = (int(v) for v in offset)
    ny, nx = probe_shape
    if oy < 0 or ox < 0 or oy + ny > obj.shape[0] or ox + nx > obj.shape[1]:
        raise PlacementError(
            f"probe frame {probe_shape} at offset {(oy, ox)} is outside object {obj.shape}"
        )
    return obj.A[oy : oy + ny, ox : ox + nx] * np.exp(1j * obj.phi[oy : oy + ny, ox : ox + nx])


def _gather_index(scan: ScanPattern, object_shape, probe_shape) -> np.ndarray:
    """Flat object-grid indices of every frame pixel, shape ``(M, ny, nx)``; cached."""
    key = (tuple(object_shape), tuple(probe_shape))
    cache = scan.__dict__.setdefault("_gather", {})
    if key not in cache:
        scan.check_fits(object_shape, probe_shape)
        ny, nx = probe_shape
        rows = scan.offsets[:, 0, None, None] + np.arange(ny)[None, :, None]
        cols = scan.offsets[:, 1, None, None] + np.arange(nx)[None, None, :]
        cache[key] = rows * object_shape[1] + cols
    return cache[key]


def patch_stack(arr: np.ndarray, scan: ScanPattern, probe_shape) -> np.ndarray:
    """Windows of an object-grid array, shape ``(..., M, ny, nx)``.

    Leading axes of ``arr`` (e.g. a batch of trials) are carried through.
    """
    arr = np.asarray(arr)
    idx = _gather_index(scan, arr.shape[-2:], probe_shape)
    return arr.reshape(arr.shape[:-2] + (-1,))[..., idx]


def scatter_add(patches: np.ndarray, scan: ScanPattern, object_shape) -> np.ndarray:
    """Adjoint of :func:`patch_stack`: sum frame-sized patches onto the object grid."""
    lead = patches.shape[:-3]
    out = np.zeros(lead + tuple(object_shape), dtype=patches.dtype)
    ny, nx = patches.shape[-2:]
    for m, (oy, ox) in enumerate(scan.offsets):
        out[..., oy : oy + ny, ox : ox + nx] += patches[..., m, :, :]
    return out


def exit_wave(probe: Probe, obj: ObjectEstimate, offset) -> np.ndarray:
    """Exit wave ``P * O`` on the probe frame at ``offset``."""
    return probe.field * extract_patch(obj, offset, probe.shape)


def exit_waves(probe: Probe, obj: ObjectEstimate, scan: ScanPattern) -> np.ndarray:
    return probe.field * patch_stack(obj.complex, scan, probe.shape)


def intensity(psi: np.ndarray) -> np.ndarray:
    """Far-field intensity ``|dft2(psi)|^2`` (works on stacks)."""
    return np.abs(dft2(psi)) ** 2


def expected_counts(probe: Probe, obj: ObjectEstimate, scan: ScanPattern) -> DiffractionStack:
    """Noise-free mean photon counts for every scan position."""
    N = intensity(exit_waves(probe, obj, scan))
    return DiffractionStack(expected=N, meta={"offsets": scan.offsets.tolist()})


def coverage(probe: Probe, scan: ScanPattern, object_shape) -> np.ndarray:
    """Number of placements whose support covers each object pixel."""
    support = (probe.field != 0).astype(float)
    return scatter_add(np.broadcast_to(support, (len(scan),) + probe.shape), scan, object_shape)


def illumination(probe: Probe, scan: ScanPattern, object_shape) -> np.ndarray:
    """Summed probe intensity ``sum_m |P_m(r)|^2`` on the object grid."""
    power = np.abs(probe.field) ** 2
    return scatter_add(np.broadcast_to(power, (len(scan),) + probe.shape), scan, object_shape)
