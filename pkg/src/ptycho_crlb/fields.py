"""Uniform 2D grids, sampled fields and the DFT convention.

The forward transform is the plain unnormalized sum

    F(xi) = sum_r f(r) exp(-i 2 pi r . xi / n)

and the inverse carries the full ``1 / (nx * ny)`` factor, so that
``idft2(dft2(f)) == f`` and ``sum |F|^2 == nx * ny * sum |f|^2``.
Both act on the last two axes, so stacks of fields transform in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class Grid2D:
    """Pixel counts and spacing (micrometres per pixel) of a square-pixel grid."""

    nx: int
    ny: int
    spacing: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise InputError("grid sizes must be integers")
        if self.nx < 1 or self.ny < 1:
            raise InputError(f"grid sizes must be positive, got {self.nx}x{self.ny}")
        if not self.spacing > 0:
            raise InputError(f"grid spacing must be positive, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def frequency_spacing(self) -> tuple[float, float]:
        """Natural DFT sampling (1/um) along y and x."""
        return 1.0 / (self.ny * self.spacing), 1.0 / (self.nx * self.spacing)


@dataclass
class Field:
    """A sampled field together with its grid and a free-form role tag.

    Used mostly for serialization; numerical routines take plain arrays.
    """

    grid: Grid2D
    values: np.ndarray
    role: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape[-2:] != self.grid.shape:
            raise InputError(
                f"values of shape {self.values.shape} do not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise InputError("field values must be finite")

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)


def dft2(f: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2D DFT over the last two axes."""
    return np.fft.fft2(f, axes=(-2, -1))


def idft2(F: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft2`; carries the ``1/N_pix`` factor."""
    return np.fft.ifft2(F, axes=(-2, -1))


def dft2_direct(f: np.ndarray) -> np.ndarray:
    """Literal double-sum DFT, O(N^4). Reference for small grids only."""
    f = np.asarray(f, dtype=complex)
    ny, nx = f.shape
    out = np.zeros_like(f)
    for ky in range(ny):
        for kx in range(nx):
            acc = 0j
            for y in range(ny):
                for x in range(nx):
                    acc += f[y, x] * np.exp(-2j * np.pi * (ky * y / ny + kx * x / nx))
            out[ky, kx] = acc
    return out
