"""Run configuration schema and hypothesis-tagged validation.

A run config is a plain JSON object; the schema is documented key by key
in the README.  Validation enforces the standing hypotheses and names the
violated tag:

  (H1)  the drift polynomial has degree 3 with a positive leading
        coefficient (waived only by the linear test flag);
  (H2)  the noise coefficient preset is bounded and Lipschitz;
  (H3)  the trajectory-norm exponent p is at least 4;
  (H3') the time-Holder exponent alpha stays below the regularity ceiling
        of the state space.

Initial data is a finite cosine-coefficient list, hence smooth; its
contribution to time increments is then Lipschitz and the ceiling reduces
to the noise-regularity bound (1 - d/4) / 2.  An explicit rougher
initial-data exponent gamma < 1 tightens the ceiling to
min(gamma / 4, (1 - d/4) / 2).
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SIGMA_PRESETS, ModelSpec, SolverConfig
from .fields import DEFAULT_ALPHA, Grid


class ConfigError(ValueError):
    """Invalid run configuration; the message names the violated hypothesis."""


def alpha_ceiling(dim: int, gamma: float = 1.0) -> float:
    """Admissible supremum for the time-Holder exponent of the state space."""
    noise_bound = 0.5 * (1.0 - dim / 4.0)
    if gamma >= 1.0:  # smooth cosine-list initial data: only the noise bound binds
        return noise_bound
    return min(gamma / 4.0, noise_bound)


@dataclass
class RunConfig:
    """Validated experiment description; see the README for the key schema."""

    model: ModelSpec = field(default_factory=ModelSpec)
    grid: Grid = field(default_factory=lambda: Grid(n=64, dt=1e-4, T=0.5))
    p: float = 4.0
    q: float = 4.0
    alpha: float = DEFAULT_ALPHA
    gamma: float = 1.0
    epsilon: tuple = (1e-2,)
    replicas: int = 100
    master_seed: int = 2024
    control_source: dict = field(default_factory=lambda: {"source": "zero"})
    event: dict | None = None
    target: dict | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    raw: dict = field(default_factory=dict)

    def validate(self):
        c3 = self.model.f_coeffs[0]
        if c3 <= 0 and not self.model.linear_test:
            raise ConfigError(
                f"(H1) violated: leading drift coefficient {c3} must be positive "
                "(set model.linear_test for linear oracles)")
        try:
            sup, lip = self.model.sigma_sup, self.model.sigma_lipschitz
        except Exception as exc:  # unknown preset already raised by ModelSpec
            raise ConfigError(f"(H2) violated: {exc}") from exc
        if not (np.isfinite(sup) and np.isfinite(lip)):
            raise ConfigError("(H2) violated: sigma preset must have finite "
                              "sup and Lipschitz constants")
        if self.p < 4:
            raise ConfigError(f"(H3) violated: p = {self.p} must be at least 4")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"(H3') violated: gamma = {self.gamma} must lie in (0, 1]")
        ceiling = alpha_ceiling(self.grid.dim, self.gamma)
        if not 0 < self.alpha < ceiling:
            raise ConfigError(
                f"(H3') violated: alpha = {self.alpha} must lie in "
                f"(0, {ceiling}) for d = {self.grid.dim}, gamma = {self.gamma}")
        if len(self.epsilon) == 0 or any(e <= 0 for e in self.epsilon):
            raise ConfigError("epsilon values must be positive")
        if any(b >= a for a, b in zip(self.epsilon, self.epsilon[1:])):
            raise ConfigError("epsilon schedule must be strictly decreasing")
        if self.replicas < 1:
            raise ConfigError("replicas must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master seed must fit in 64 bits")
        return self


def _sigma_from_dict(d: dict) -> tuple:
    preset = d.get("preset", "constant")
    param = d.get("param", d.get("s0", d.get("bound", 1.0)))
    return preset, float(param)


def load_config(data: dict) -> RunConfig:
    """Build and validate a RunConfig from a parsed JSON object."""
    data = dict(data)
    model_d = dict(data.get("model", {}))
    sigma_d = model_d.get("sigma", {"preset": "constant", "param": 1.0})
    preset, param = _sigma_from_dict(sigma_d)
    u0 = model_d.get("u0", [0.0, 0.1])
    u0 = tuple(tuple(row) for row in u0) if u0 and isinstance(u0[0], list) \
        else tuple(float(c) for c in u0)
    f_coeffs = tuple(float(c) for c in model_d.get("f_coeffs", (4.0, 0.0, -4.0, 0.0)))
    linear_test = bool(model_d.get("linear_test", False))
    if len(f_coeffs) != 4 or (f_coeffs[0] <= 0 and not linear_test):
        raise ConfigError(
            "(H1) violated: drift must be a degree-3 polynomial with a "
            f"positive leading coefficient, got {list(f_coeffs)} "
            "(set model.linear_test for linear oracles)")
    if preset not in SIGMA_PRESETS:
        raise ConfigError(
            f"(H2) violated: sigma preset {preset!r} is not one of the "
            f"bounded Lipschitz presets {SIGMA_PRESETS}")
    model = ModelSpec(f_coeffs=f_coeffs, sigma_preset=preset, sigma_param=param,
                      u0_coeffs=u0, linear_test=linear_test)

    grid_d = dict(data.get("grid", {}))
    grid = Grid(n=int(grid_d.get("n", 64)), dt=float(grid_d.get("dt", 1e-4)),
                T=float(grid_d.get("T", 0.5)), dim=int(grid_d.get("d", 1)))

    exp_d = dict(data.get("exponents", {}))
    eps = data.get("epsilon", [1e-2])
    if np.isscalar(eps):
        eps = [eps]

    solver_d = dict(data.get("solver", {}))
    solver = SolverConfig(
        save_every=int(solver_d.get("save_every", 1)),
        blowup_threshold=float(solver_d.get("blowup_threshold", 1e6)),
        stability_limit=float(solver_d.get("stability_limit", 1.0)),
        tol_mild=float(solver_d.get("tol_mild", 1e-6)))

    cfg = RunConfig(
        model=model, grid=grid,
        p=float(exp_d.get("p", 4.0)), q=float(exp_d.get("q", 4.0)),
        alpha=float(exp_d.get("alpha", DEFAULT_ALPHA)),
        gamma=float(exp_d.get("gamma", 1.0)),
        epsilon=tuple(float(e) for e in eps),
        replicas=int(data.get("replicas", 100)),
        master_seed=int(data.get("seed", 2024)),
        control_source=dict(data.get("control", {"source": "zero"})),
        event=data.get("event"), target=data.get("target"),
        solver=solver, raw=data)
    return cfg.validate()


def load_config_file(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return load_config(json.load(fh))


def canonical_json(data) -> str:
    """Deterministic serialization: sorted keys, shortest-round-trip floats."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(data: dict) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()
