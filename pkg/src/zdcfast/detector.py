"""Detector geometry: the 44x44 fibre grid and its five readout channels.

The calorimeter face is modelled as a 44x44 grid of optical fibres. Every
second fibre (checkerboard parity) feeds a common photomultiplier (PMTc);
the remaining fibres are bundled per quadrant into four tower
photomultipliers (PMT1..PMT4). Channel values are plain pixel sums under
these masks and are the quantities compared between real and generated
showers.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

GRID_SIZE = 44
N_PIXELS = GRID_SIZE * GRID_SIZE
N_CHANNELS = 5
CHANNEL_NAMES = ("PMTc", "PMT1", "PMT2", "PMT3", "PMT4")

PARTICLE_FIELDS = ("mass", "energy", "charge", "px", "py", "pz", "vx", "vy", "vz")
N_ATTRIBUTES = len(PARTICLE_FIELDS)


@dataclass(frozen=True)
class ParticleRecord:
    """One incoming particle, described by 9 scalar attributes."""

    mass: float
    energy: float
    charge: int
    px: float
    py: float
    pz: float
    vx: float
    vy: float
    vz: float

    def __post_init__(self):
        if not (self.energy > 0):
            raise ValidationError(f"energy must be positive, got {self.energy}")
        if self.mass < 0:
            raise ValidationError(f"mass must be non-negative, got {self.mass}")
        if self.charge not in (-1, 0, 1):
            raise ValidationError(f"charge must be in {{-1,0,+1}}, got {self.charge}")

    def to_row(self) -> np.ndarray:
        """Serialize to the 9-column float32 dataset row."""
        return np.array(
            [self.mass, self.energy, self.charge, self.px, self.py, self.pz,
             self.vx, self.vy, self.vz],
            dtype=np.float32,
        )

    @classmethod
    def from_row(cls, row: np.ndarray) -> "ParticleRecord":
        row = np.asarray(row, dtype=np.float32)
        if row.shape != (N_ATTRIBUTES,):
            raise ValidationError(f"particle row must have shape (9,), got {row.shape}")
        return cls(
            mass=float(row[0]),
            energy=float(row[1]),
            charge=int(round(float(row[2]))),
            px=float(row[3]),
            py=float(row[4]),
            pz=float(row[5]),
            vx=float(row[6]),
            vy=float(row[7]),
            vz=float(row[8]),
        )


def validate_grid(grid: np.ndarray) -> np.ndarray:
    """Check one response grid: 44x44, finite, non-negative."""
    grid = np.asarray(grid)
    if grid.shape != (GRID_SIZE, GRID_SIZE):
        raise ValidationError(f"response grid must be 44x44, got {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValidationError("response grid contains non-finite values")
    if np.any(grid < 0):
        raise ValidationError("response grid contains negative values")
    return grid


@functools.lru_cache(maxsize=1)
def channel_masks() -> np.ndarray:
    """Boolean masks of shape (5, 44, 44), one per readout channel.

    PMTc collects the even-parity checkerboard over the whole face.
    PMT1..PMT4 collect the odd-parity pixels of the four 22x22 quadrants,
    ordered top-left, top-right, bottom-left, bottom-right. The masks
    partition the grid. The real fibre routing lives behind this single
    function so a measured mapping can replace it.
    """
    rows, cols = np.indices((GRID_SIZE, GRID_SIZE))
    even = (rows + cols) % 2 == 0
    half = GRID_SIZE // 2
    masks = np.zeros((N_CHANNELS, GRID_SIZE, GRID_SIZE), dtype=bool)
    masks[0] = even
    quadrants = (
        (rows < half) & (cols < half),
        (rows < half) & (cols >= half),
        (rows >= half) & (cols < half),
        (rows >= half) & (cols >= half),
    )
    for k, quad in enumerate(quadrants):
        masks[k + 1] = ~even & quad
    masks.setflags(write=False)
    return masks


@functools.lru_cache(maxsize=1)
def channel_matrix() -> np.ndarray:
    """(1936, 5) float32 indicator matrix; `flat_grid @ M` sums per channel."""
    m = channel_masks().reshape(N_CHANNELS, N_PIXELS).T.astype(np.float32)
    m.setflags(write=False)
    return m


def extract_channels(grid: np.ndarray) -> np.ndarray:
    """Per-channel photon sums [PMTc, PMT1..PMT4] for one validated grid."""
    grid = validate_grid(grid)
    masks = channel_masks()
    return np.array(
        [np.sum(grid[masks[k]], dtype=np.float64) for k in range(N_CHANNELS)]
    )


def extract_channels_batch(responses: np.ndarray) -> np.ndarray:
    """Channel sums for a batch of flattened responses, shape (n, 5)."""
    responses = np.asarray(responses, dtype=np.float32).reshape(-1, N_PIXELS)
    return responses.astype(np.float64) @ channel_matrix().astype(np.float64)


def argmax_coords(grid: np.ndarray) -> tuple[int, int]:
    """(row, col) of the grid maximum, first occurrence in row-major order."""
    grid = validate_grid(grid)
    r, c = np.unravel_index(int(np.argmax(grid)), grid.shape)
    return int(r), int(c)


def argmax_coords_batch(responses: np.ndarray) -> np.ndarray:
    """(n, 2) float32 array of argmax (row, col) per flattened response."""
    responses = np.asarray(responses).reshape(-1, N_PIXELS)
    flat = np.argmax(responses, axis=1)
    coords = np.stack([flat // GRID_SIZE, flat % GRID_SIZE], axis=1)
    return coords.astype(np.float32)
