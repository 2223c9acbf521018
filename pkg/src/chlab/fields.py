"""Grid fields, trajectories, controls, and the norms of the state space.

All quadrature is the midpoint rule on the collocation grid, consistent
with the spectral transforms, so the p = 2 norm agrees with the Parseval
coefficient norm to rounding error.  Time-Holder seminorms are exact
suprema over the stored grid time pairs; restricting to the grid
approximates the continuum supremum from below.
"""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_ALPHA = 0.3


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid: d, n points per axis, step dt, horizon T."""

    n: int
    dt: float
    T: float
    dim: int = 1

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.n <= 0 or self.dt <= 0 or self.T <= 0:
            raise ValueError("n, dt, T must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("T must be an integer multiple of dt")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def h(self) -> float:
        return (np.pi / self.n) ** self.dim

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def ncells(self) -> int:
        return self.n**self.dim

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass
class GridField:
    """Collocation values of a function on [0, pi]^d."""

    values: np.ndarray
    dim: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != self.dim:
            raise ValueError(f"expected {self.dim}-d values, got {self.values.ndim}-d")
        if self.dim == 2 and self.values.shape[0] != self.values.shape[1]:
            raise ValueError("2-d fields must be square")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return (np.pi / self.n) ** self.dim


@dataclass
class Trajectory:
    """Fields at the uniform times m * dt, m = 0..M, plus run metadata."""

    times: np.ndarray
    values: np.ndarray  # (M+1,) + grid shape
    dim: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("one field per time point required")
        if self.times.size >= 2:
            gaps = np.diff(self.times)
            if not np.allclose(gaps, gaps[0], rtol=1e-9, atol=0.0):
                raise ValueError("time grid must be uniform")

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def h(self) -> float:
        n = self.values.shape[1]
        return (np.pi / n) ** self.dim

    def field(self, m: int) -> GridField:
        return GridField(self.values[m], dim=self.dim)

    def endpoint(self) -> GridField:
        return GridField(self.values[-1], dim=self.dim)

    def flat_values(self) -> np.ndarray:
        return self.values.reshape(self.values.shape[0], -1)


@dataclass
class ControlPath:
    """Control values on the space-time cells, optionally tagged with an
    energy bound N (membership in the radius-sqrt(N) ball of L^2)."""

    values: np.ndarray  # (M,) + grid shape
    dt: float
    dim: int = 1
    bound: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 + self.dim:
            raise ValueError("control must carry one slice per time step")

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        n = self.values.shape[1]
        return (np.pi / n) ** self.dim

    def norm_sq(self) -> float:
        return control_norm_sq(self)

    def in_ball(self) -> bool:
        """True when the tagged energy bound holds (vacuously if untagged)."""
        if self.bound is None:
            return True
        return self.norm_sq() <= self.bound


def zero_control(grid: Grid, bound: float | None = None) -> ControlPath:
    return ControlPath(np.zeros((grid.steps,) + grid.shape), dt=grid.dt,
                       dim=grid.dim, bound=bound)


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------


def lp_norm(values, p: float, h: float | None = None, dim: int = 1) -> float:
    """Midpoint-quadrature L^p norm (h sum |u|^p)^{1/p} on [0, pi]^d."""
    if p < 1:
        raise ValueError("p must be at least 1")
    if isinstance(values, GridField):
        h, dim, values = values.h, values.dim, values.values
    values = np.asarray(values, dtype=float)
    if h is None:
        h = (np.pi / values.shape[-1]) ** dim
    return float((h * np.sum(np.abs(values) ** p)) ** (1.0 / p))


def lp_norm_batch(flat: np.ndarray, p: float, h: float) -> np.ndarray:
    """L^p norms along the last axis of an array of flattened fields."""
    if p < 1:
        raise ValueError("p must be at least 1")
    return (h * np.sum(np.abs(flat) ** p, axis=-1)) ** (1.0 / p)


def holder_increment_sup(flat: np.ndarray, dt: float, alpha: float, p: float,
                         h: float, max_offset: int | None = None) -> np.ndarray:
    """sup over grid pairs of ||u(t) - u(t')||_p / |t - t'|^alpha.

    flat has shape (..., M+1, ncells); the supremum runs over all pairs with
    offset 1..max_offset (all pairs when max_offset is None).  Batch axes
    pass through.
    """
    m1 = flat.shape[-2]
    if m1 < 2:
        raise ValueError("need at least two time points")
    cap = m1 - 1 if max_offset is None else min(max_offset, m1 - 1)
    best = np.zeros(flat.shape[:-2])
    for offset in range(1, cap + 1):
        diff = flat[..., offset:, :] - flat[..., :-offset, :]
        norms = lp_norm_batch(diff, p, h)
        quot = norms.max(axis=-1) / (offset * dt) ** alpha
        best = np.maximum(best, quot)
    return best


def holder_norm_parts(traj: Trajectory, alpha: float, p: float) -> tuple:
    """(sup-in-time term, increment term, degenerate flag).

    A single-time trajectory has no increment pairs; its increment term is
    reported as 0 with the flag set.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    flat = traj.flat_values()
    sup_term = float(lp_norm_batch(flat, p, traj.h).max())
    if traj.steps < 1:
        return sup_term, 0.0, True
    inc = float(holder_increment_sup(flat, traj.dt, alpha, p, traj.h))
    return sup_term, inc, False


def holder_norm(traj: Trajectory, alpha: float, p: float) -> float:
    """sup_t ||u(t)||_p + sup_{t != t'} ||u(t) - u(t')||_p / |t - t'|^alpha."""
    sup_term, inc_term, _ = holder_norm_parts(traj, alpha, p)
    return sup_term + inc_term


def holder_modulus(traj: Trajectory, alpha_prime: float, delta: float,
                   p: float) -> float:
    """Increment supremum restricted to pairs with 0 < |t - t'| < delta."""
    if not 0 < alpha_prime < 1:
        raise ValueError("alpha' must lie in (0, 1)")
    if traj.steps < 1:
        raise ValueError("modulus needs at least two time points")
    if delta <= traj.dt:
        raise ValueError("window must exceed dt, otherwise no pairs qualify")
    # pairs with |t - t'| < delta; a window covering the whole span keeps
    # every pair, so the modulus at delta = T equals the full increment term
    span = traj.times[-1] - traj.times[0]
    if delta >= span:
        max_offset = traj.steps
    else:
        max_offset = int(np.ceil(delta / traj.dt)) - 1
    flat = traj.flat_values()
    return float(holder_increment_sup(flat, traj.dt, alpha_prime, p, traj.h,
                                      max_offset=max_offset))


def control_norm_sq(v: ControlPath) -> float:
    """Squared L^2([0, T] x D) norm on the cell quadrature: dt h sum v^2."""
    return float(v.dt * v.h * np.sum(v.values**2))
