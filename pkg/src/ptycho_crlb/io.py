"""On-disk formats: raw little-endian float64 arrays with JSON sidecars.

Every array ``name`` is stored as ``name.bin`` (C order; complex values
interleaved as real/imag pairs) next to ``name.json`` holding ``shape``,
``dtype`` and whatever metadata the caller attaches (grid, role, seeds, ...).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError
from .fields import Grid2D
from .fisher import CrlbMap
from .forward import DiffractionStack, ObjectEstimate
from .scenarios import PROFILES, CaseSpec, case_spec

_DTYPES = {"float64": "<f8", "complex128": "<f8"}


def write_array(directory, name: str, values: np.ndarray, **meta) -> Path:
    """Write ``values`` as ``name.bin`` plus ``name.json``; returns the sidecar path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values)
    if np.iscomplexobj(values):
        dtype = "complex128"
        raw = np.ascontiguousarray(values, dtype=np.complex128).view(np.float64)
    else:
        dtype = "float64"
        raw = np.ascontiguousarray(values, dtype=np.float64)
    raw.astype("<f8", copy=False).tofile(directory / f"{name}.bin")
    side = dict(meta, shape=list(values.shape), dtype=dtype, file=f"{name}.bin")
    if values.ndim >= 2 and "ny" not in side:
        side["ny"], side["nx"] = int(values.shape[-2]), int(values.shape[-1])
    path = directory / f"{name}.json"
    path.write_text(json.dumps(side, indent=2, sort_keys=True, default=_jsonable))
    return path


def read_array(directory, name: str) -> tuple[np.ndarray, dict]:
    """Inverse of :func:`write_array`."""
    directory = Path(directory)
    side_path = directory / f"{name}.json"
    if not side_path.exists():
        raise InputError(f"missing sidecar {side_path}")
    meta = json.loads(side_path.read_text())
    dtype = meta.get("dtype")
    if dtype not in _DTYPES:
        raise InputError(f"unsupported dtype {dtype!r} in {side_path}")
    raw = np.fromfile(directory / meta.get("file", f"{name}.bin"), dtype=_DTYPES[dtype])
    shape = tuple(meta["shape"])
    if dtype == "complex128":
        raw = raw.astype(np.float64).view(np.complex128)
    if raw.size != int(np.prod(shape)):
        raise InputError(f"{name}.bin holds {raw.size} values, sidecar expects shape {shape}")
    return raw.reshape(shape), meta


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_object(directory, name: str, obj: ObjectEstimate, grid: Grid2D | None = None,
                 **meta) -> None:
    spacing = grid.spacing if grid is not None else 1.0
    write_array(directory, f"{name}_A", obj.A, role="A", spacing=spacing, **meta)
    write_array(directory, f"{name}_phi", obj.phi, role="phi", spacing=spacing, **meta)


def read_object(directory, name: str) -> ObjectEstimate:
    A, _ = read_array(directory, f"{name}_A")
    phi, _ = read_array(directory, f"{name}_phi")
    return ObjectEstimate(A, phi)


def write_stack(directory, name: str, stack: DiffractionStack, which: str = "counts",
                **meta) -> None:
    """Store the ``counts`` or ``expected`` array of a stack with its metadata."""
    values = getattr(stack, which)
    if values is None:
        raise InputError(f"stack has no {which!r} array")
    merged = dict(stack.meta, **meta)
    write_array(directory, name, values, role=which, **merged)


def read_stack(directory, name: str) -> DiffractionStack:
    values, meta = read_array(directory, name)
    role = meta.get("role", "counts")
    if role == "expected":
        return DiffractionStack(expected=values, meta=meta)
    return DiffractionStack(counts=values, meta=meta)


def write_crlb(directory, crlb: CrlbMap, **meta) -> None:
    extra = dict(meta, rank=crlb.rank, tolerance=crlb.tolerance)
    write_array(directory, "crlb_A", crlb.crlb_A, role="crlb_A", **extra)
    write_array(directory, "crlb_phi", crlb.crlb_phi, role="crlb_phi", **extra)


def read_crlb(directory) -> CrlbMap:
    A, meta = read_array(directory, "crlb_A")
    phi, _ = read_array(directory, "crlb_phi")
    return CrlbMap(A, phi, rank=int(meta.get("rank", 0)), tolerance=float(meta.get("tolerance", 0)))


# ---------------------------------------------------------------- config

CONFIG_KEYS = {
    "case", "profile", "object_size", "probe_size", "support_radius", "spacing",
    "wavelength", "photons", "scan_rows", "scan_cols", "overlap_ratio", "a_min",
    "seed", "cg",
}
CG_KEYS = {"k_max", "delta_stop", "gamma_initial", "gamma_after",
           "gamma_switch_iteration", "alpha_probes", "step_scale"}


def parse_config(data: dict) -> tuple[CaseSpec, dict]:
    """Validate a config mapping; returns the case spec and the CG overrides."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "case" not in data:
        raise ConfigError("config needs a 'case' entry")
    params = dict(data)
    cg = params.pop("cg", {}) or {}
    if not isinstance(cg, dict) or set(cg) - CG_KEYS:
        raise ConfigError(f"'cg' must be an object with keys from {sorted(CG_KEYS)}")
    profile = params.pop("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    try:
        spec = case_spec(int(params.pop("case")), profile, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return spec, cg


def load_config(path) -> tuple[CaseSpec, dict]:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config(data)


def config_hash(data) -> str:
    """SHA-256 of the canonical JSON encoding."""
    blob = json.dumps(data, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()


def write_json(path, data) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable))
