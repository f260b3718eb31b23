"""Deterministic synthetic ground truth for desk-scale experiments.

Stands in for the expensive transport simulation: samples particles,
decides which ones leave no trace (charged particles are swept away, as
are neutrals whose extrapolated impact point misses the face), and renders
the rest as Poisson photon counts under a Gaussian shower profile. Every
sample derives its random stream from (seed, index), so generation is
order-independent and reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import SampleSet, compute_norm_stats
from .detector import GRID_SIZE, N_PIXELS, ParticleRecord
from .errors import ValidationError

TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class OracleConfig:
    """Knobs of the synthetic source.

    The gains are tuned so that, with the default sampler, roughly 95% of
    particles produce an empty response while impact points of the rest
    spread over most of the face.
    """

    seed: int
    n_samples: int
    photon_scale: float = 10.0
    deflection_gain: float = 40.0
    vertex_gain: float = 40.0
    base_sigma: float = 1.5
    sigma_log_gain: float = 0.5
    neutral_prob: float = 0.10

    def __post_init__(self):
        for name in ("photon_scale", "deflection_gain", "vertex_gain",
                     "base_sigma", "sigma_log_gain"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if not (0.0 < self.neutral_prob < 1.0):
            raise ValidationError(f"neutral_prob must be in (0,1), got {self.neutral_prob}")
        if self.n_samples <= 0:
            raise ValidationError(f"n_samples must be positive, got {self.n_samples}")

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "n_samples": int(self.n_samples),
            "photon_scale": self.photon_scale,
            "deflection_gain": self.deflection_gain,
            "vertex_gain": self.vertex_gain,
            "base_sigma": self.base_sigma,
            "sigma_log_gain": self.sigma_log_gain,
            "neutral_prob": self.neutral_prob,
        }


def sample_particle(rng: np.random.Generator, neutral_prob: float = 0.10) -> ParticleRecord:
    """Draw one particle; the draw order is part of the determinism contract."""
    mass = rng.uniform(0.1, 1.0)
    energy = math.exp(rng.uniform(math.log(10.0), math.log(500.0)))
    u = rng.random()
    charged_half = (1.0 - neutral_prob) / 2.0
    if u < charged_half:
        charge = -1
    elif u < charged_half + neutral_prob:
        charge = 0
    else:
        charge = 1
    px = rng.normal(0.0, 0.05 * energy)
    py = rng.normal(0.0, 0.05 * energy)
    pz = math.sqrt(max(energy ** 2 - mass ** 2 - px ** 2 - py ** 2, 1e-6))
    vx = rng.normal(0.0, 0.5)
    vy = rng.normal(0.0, 0.5)
    vz = rng.uniform(-2.0, 2.0)
    return ParticleRecord(mass=mass, energy=energy, charge=charge,
                          px=px, py=py, pz=pz, vx=vx, vy=vy, vz=vz)


def impact_point(p: ParticleRecord, cfg: OracleConfig) -> tuple[float, float] | None:
    """Extrapolated (row, col) where the particle meets the face; None if pz <= 0."""
    if p.pz <= 0:
        return None
    center = (GRID_SIZE - 1) / 2.0
    r0 = center + cfg.deflection_gain * p.py / p.pz + cfg.vertex_gain * p.vy
    c0 = center + cfg.deflection_gain * p.px / p.pz + cfg.vertex_gain * p.vx
    return r0, c0


def oracle_is_zero(p: ParticleRecord, cfg: OracleConfig) -> bool:
    """True when the particle leaves no response (charged, or off-face)."""
    if p.charge != 0:
        return True
    point = impact_point(p, cfg)
    if point is None:
        return True
    r0, c0 = point
    return not (0.0 <= r0 <= GRID_SIZE - 1 and 0.0 <= c0 <= GRID_SIZE - 1)


def shower_sigma(energy: float, cfg: OracleConfig) -> float:
    return cfg.base_sigma + cfg.sigma_log_gain * math.log10(energy)


def oracle_response(p: ParticleRecord, cfg: OracleConfig, rng: np.random.Generator) -> np.ndarray:
    """Poisson photon counts for a particle known to hit the face."""
    point = impact_point(p, cfg)
    if point is None or oracle_is_zero(p, cfg):
        raise ValidationError("oracle_response requires a non-zero-response particle")
    r0, c0 = point
    eta = max(rng.normal(0.0, 0.1), -0.5)
    n_tot = cfg.photon_scale * p.energy * (1.0 + eta)
    sigma = shower_sigma(p.energy, cfg)
    axis = np.arange(GRID_SIZE, dtype=np.float64)
    gr = np.exp(-((axis - r0) ** 2) / (2.0 * sigma ** 2))
    gc = np.exp(-((axis - c0) ** 2) / (2.0 * sigma ** 2))
    profile = np.outer(gr, gc)
    profile /= profile.sum()
    return rng.poisson(n_tot * profile).astype(np.float32)


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0, index)))


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 80/20 shuffle split derived from the dataset seed."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    perm = rng.permutation(n)
    k = int(n * TRAIN_FRACTION)
    return np.sort(perm[:k]), np.sort(perm[k:])


def generate_dataset(cfg: OracleConfig) -> SampleSet:
    """Sample cfg.n_samples labeled (particle, response) pairs with an 80/20 split."""
    n = cfg.n_samples
    particles = np.empty((n, 9), dtype=np.float32)
    responses = np.zeros((n, N_PIXELS), dtype=np.float32)
    labels = np.ones(n, dtype=bool)
    for i in range(n):
        rng = _sample_rng(cfg.seed, i)
        p = sample_particle(rng, cfg.neutral_prob)
        particles[i] = p.to_row()
        if not oracle_is_zero(p, cfg):
            labels[i] = False
            responses[i] = oracle_response(p, cfg, rng).reshape(-1)
    train_idx, val_idx = split_indices(n, cfg.seed)
    norm = compute_norm_stats(particles, responses, labels, train_idx)
    return SampleSet(particles=particles, responses=responses, labels=labels,
                     train_idx=train_idx, val_idx=val_idx, norm=norm,
                     oracle_config=cfg.to_dict(), seed=cfg.seed)
