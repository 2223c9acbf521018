"""Brownian-sheet increments with a platform-stable, documented derivation.

Seed rule ("philox4x64-boxmuller-v1"): the generator is Philox-4x64 keyed
directly by the pair (master_seed, replica); distinct pairs give distinct
key streams, so the map is injective by construction.  Gaussian draws are
Box-Muller over the generator's 53-bit uniforms:

    u1 = 1 - U[2i]  in (0, 1],   u2 = U[2i+1]  in [0, 1)
    z  = sqrt(-2 ln u1) * (cos(2 pi u2), sin(2 pi u2))

so a sheet is a pure function of (master_seed, replica, M, n, dt) with no
dependence on thread scheduling or platform entropy.  One independent
increment is attached to each space-time cell with variance dt * h,
h = (pi/n)^d, the Lebesgue measure of the cell.
"""

from dataclasses import dataclass

import numpy as np

DERIVATION_RULE = "philox4x64-boxmuller-v1"


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus replica index; both enter the Philox key verbatim."""

    master: int
    replica: int = 0
    rule: str = DERIVATION_RULE

    def __post_init__(self):
        if not (0 <= self.master < 2**64 and 0 <= self.replica < 2**64):
            raise ValueError("seed components must fit in 64 bits")
        if self.rule != DERIVATION_RULE:
            raise ValueError(f"unknown derivation rule {self.rule!r}")

    def child(self, replica: int) -> "SeedSpec":
        return SeedSpec(self.master, replica, self.rule)


def gaussian_draws(seed: SeedSpec, count: int) -> np.ndarray:
    """Deterministic standard normals for one seed spec."""
    key = np.array([seed.master, seed.replica], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    pairs = (count + 1) // 2
    u = gen.random(2 * pairs)
    radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
    angle = 2.0 * np.pi * u[1::2]
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:count]


@dataclass(frozen=True)
class NoisePath:
    """Cell increments of the sheet: shape (M,) + spatial grid shape.

    increments[m, j] ~ N(0, dt * h), independent across (m, j).
    """

    increments: np.ndarray
    dt: float
    h: float
    seed: SeedSpec | None = None

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    def dump_bytes(self) -> bytes:
        """Little-endian float64 dump for audit."""
        return np.ascontiguousarray(self.increments, dtype="<f8").tobytes()


def sample_sheet(steps: int, n: int, dt: float, seed: SeedSpec,
                 dim: int = 1) -> NoisePath:
    """Draw the Brownian-sheet cell increments on an M x n^d grid."""
    if steps <= 0 or n <= 0 or dt <= 0:
        raise ValueError("steps, n, and dt must all be positive")
    h = (np.pi / n) ** dim
    shape = (steps,) + (n,) * dim
    z = gaussian_draws(seed, int(np.prod(shape))).reshape(shape)
    return NoisePath(increments=np.sqrt(dt * h) * z, dt=dt, h=h, seed=seed)


def shift_increments(w: NoisePath, v: np.ndarray, eps: float) -> NoisePath:
    """Cameron-Martin shift on the increments: sqrt(eps) dW + dt * h * v.

    The control term is the piecewise-constant quadrature of the integrated
    control over each space-time cell.
    """
    if eps < 0:
        raise ValueError("noise scale must be nonnegative")
    v = np.asarray(v, dtype=float)
    if v.shape != w.increments.shape:
        raise ValueError(f"control shape {v.shape} != sheet shape {w.increments.shape}")
    shifted = np.sqrt(eps) * w.increments + (w.dt * w.h) * v
    return NoisePath(increments=shifted, dt=w.dt, h=w.h, seed=w.seed)


def girsanov_log_weight(w: NoisePath, v: np.ndarray, eps: float) -> float:
    """log density of the tilt removing the control v at noise scale eps.

    -(1/sqrt(eps)) sum v dW - (1/(2 eps)) ||v||^2, with the control norm on
    the cell quadrature dt * h.  The exponential has mean one exactly for
    the discrete sheet, which is what makes the reweighted estimators
    unbiased at any step size.
    """
    if eps <= 0:
        raise ValueError("noise scale must be positive")
    v = np.asarray(v, dtype=float)
    if v.shape != w.increments.shape:
        raise ValueError(f"control shape {v.shape} != sheet shape {w.increments.shape}")
    cross = float(np.sum(v * w.increments))
    norm_sq = float(w.dt * w.h * np.sum(v * v))
    return -cross / np.sqrt(eps) - norm_sq / (2.0 * eps)
