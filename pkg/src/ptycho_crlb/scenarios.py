"""Built-in test objects and probes for the four illumination/object cases.

Case 1: uniform object, uniform-power probe with a glyph-shaped phase.
Case 2: uniform object, glyph-shaped probe power and phase.
Case 3: glyph-shaped transmission (minimum 0.1), flat phase, plane-wave probe.
Case 4: uniform transmission, glyph-shaped phase, plane-wave probe.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .fields import Grid2D
from .forward import ObjectEstimate, Probe, ScanPattern, make_probe, make_scan

# 5x7 bitmaps, rows top to bottom
FONT = {
    "P": ("11110",
          "10001",
          "10001",
          "11110",
          "10000",
          "10000",
          "10000"),
    "A": ("01110",
          "10001",
          "10001",
          "11111",
          "10001",
          "10001",
          "10001"),
    "T": ("11111",
          "00100",
          "00100",
          "00100",
          "00100",
          "00100",
          "00100"),
}
GLYPH_GAP = 1

PROBE_PHASE_HIGH = np.pi / 2
OBJECT_PHASE_HIGH = np.pi / 2
CASE3_A_MIN = 0.1


def glyph_bitmap(text: str) -> np.ndarray:
    """Boolean bitmap of one or more glyphs set side by side."""
    if not text:
        raise InputError("empty glyph text")
    blocks = []
    for i, ch in enumerate(text):
        if ch not in FONT:
            raise InputError(f"unsupported glyph {ch!r}; available: {sorted(FONT)}")
        if i:
            blocks.append(np.zeros((7, GLYPH_GAP), dtype=bool))
        blocks.append(np.array([[c == "1" for c in row] for row in FONT[ch]]))
    return np.hstack(blocks)


def rasterize_glyph(text: str, shape: tuple[int, int], low: float, high: float) -> np.ndarray:
    """Glyph mask upscaled by the largest integer factor that fits, centred.

    Strokes take ``high`` and the background ``low``.
    """
    if low > high:
        raise InputError("low must not exceed high")
    bitmap = glyph_bitmap(text)
    ny, nx = shape
    scale = min(ny // bitmap.shape[0], nx // bitmap.shape[1])
    if scale < 1:
        raise InputError(f"grid {shape} is too small for glyph text {text!r}")
    big = np.kron(bitmap, np.ones((scale, scale), dtype=bool))
    out = np.full(shape, float(low))
    y0 = (ny - big.shape[0]) // 2
    x0 = (nx - big.shape[1]) // 2
    region = out[y0 : y0 + big.shape[0], x0 : x0 + big.shape[1]]
    region[big] = float(high)
    return out


@dataclass
class CaseSpec:
    """Geometry and dose of one built-in scenario."""

    case: int = 1
    object_size: int = 20
    probe_size: int = 16
    support_radius: float = 7.0
    spacing: float = 1.0
    wavelength: float = 0.03
    photons: float = 1e9
    scan_rows: int = 2
    scan_cols: int = 2
    overlap_ratio: float = 0.7
    a_min: float = CASE3_A_MIN
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.case not in (1, 2, 3, 4):
            raise ConfigError(f"case must be 1..4, got {self.case}")
        if self.probe_size > self.object_size:
            raise ConfigError("probe grid larger than object grid")
        if not 0 < self.support_radius <= self.probe_size / 2:
            raise ConfigError("support radius must fit inside the probe grid")
        if not self.photons > 0:
            raise ConfigError("photon number must be positive")

    @property
    def object_grid(self) -> Grid2D:
        return Grid2D(self.object_size, self.object_size, self.spacing)

    @property
    def probe_grid(self) -> Grid2D:
        return Grid2D(self.probe_size, self.probe_size, self.spacing)

    def to_dict(self) -> dict:
        return asdict(self)


# fast profile used by the tests and acceptance suite
DESK = dict(object_size=20, probe_size=16, support_radius=7.0)
# full-size geometry; see README for the choice of support radius
TABLE2 = dict(object_size=70, probe_size=60, support_radius=15.0)
PROFILES = {"desk": DESK, "table2": TABLE2}


def case_spec(case: int, profile: str = "desk", **overrides) -> CaseSpec:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    params = dict(PROFILES[profile], case=case)
    params.update(overrides)
    return CaseSpec(**params)


@dataclass
class Scenario:
    """Ground truth, known probe and scan of one simulation."""

    truth: ObjectEstimate
    probe: Probe
    scan: ScanPattern
    spec: CaseSpec

    def with_photons(self, pn: float) -> "Scenario":
        return Scenario(self.truth, self.probe.with_photons(pn), self.scan, self.spec)


def build_case(spec: CaseSpec) -> Scenario:
    """Deterministic truth object, probe (scaled to ``spec.photons``) and 2D raster."""
    oshape = (spec.object_size, spec.object_size)
    pshape = (spec.probe_size, spec.probe_size)
    if spec.case in (1, 2):
        truth = ObjectEstimate.uniform(oshape)
        phase = rasterize_glyph("PP", pshape, 0.0, PROBE_PHASE_HIGH)
        amp = 1.0 if spec.case == 1 else rasterize_glyph("P", pshape, 0.0, 1.0)
    else:
        if spec.case == 3:
            truth = ObjectEstimate(rasterize_glyph("A", oshape, spec.a_min, 1.0), np.zeros(oshape))
        else:
            truth = ObjectEstimate(np.ones(oshape), rasterize_glyph("T", oshape, 0.0, OBJECT_PHASE_HIGH))
        amp, phase = 1.0, 0.0
    probe = make_probe(amp, phase, pshape, spec.support_radius, spec.photons)
    scan = make_scan(spec.object_grid, spec.probe_grid, spec.scan_rows, spec.scan_cols,
                     spec.overlap_ratio, support_diameter=2 * spec.support_radius)
    return Scenario(truth, probe, scan, spec)
