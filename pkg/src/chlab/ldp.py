"""Small-noise Monte Carlo: event probabilities, reweighted estimators,
structural-limit studies, and the decay-rate scaling report.

Estimator discipline: every replica r of a run block gets the seed
(master, block * 2**32 + r), so per-epsilon streams are disjoint and any
table reproduces byte-for-byte from its manifest.  Plain Monte Carlo is
the zero-control special case of the reweighted estimator, which makes the
two coincide bit-for-bit on shared seeds.  Reweighted runs integrate the
solver on Cameron-Martin-shifted increments and correct with the exact
discrete tilt density, so they are unbiased at any step size.
"""

from dataclasses import dataclass, field

import numpy as np

from .dynamics import Integrator, ModelSpec, SolverConfig, solve_skeleton
from .fields import (ControlPath, Grid, Trajectory, holder_increment_sup,
                     lp_norm_batch, zero_control)
from .noise import SeedSpec, sample_sheet
from .rate import RateCertificate

BLOCK_STRIDE = 2**32
DEFAULT_CHUNK = 256


@dataclass(frozen=True)
class EventSpec:
    """Measurable trajectory event; deterministic given the trajectory.

    kinds:
      terminal_ball: ||u(T) - g||_2 >= delta (exceedance of the ball at g);
      tube_exit:     sup_m ||u(t_m) - ref(t_m)||_2 >= delta;
      holder_exit:   ||u - ref||_{alpha, p} >= delta.
    """

    kind: str
    delta: float
    center: np.ndarray | None = None       # terminal_ball
    reference: np.ndarray | None = None    # tube/holder: (S, ncells) path
    alpha: float = 0.3
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("terminal_ball", "tube_exit", "holder_exit"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "terminal_ball" and self.center is None:
            raise ValueError("terminal_ball needs a center field")
        if self.kind in ("tube_exit", "holder_exit") and self.reference is None:
            raise ValueError(f"{self.kind} needs a reference path")

    def needs_path(self) -> bool:
        return self.kind != "terminal_ball"

    def evaluate_batch(self, snaps: np.ndarray, dt_snap: float, h: float) -> np.ndarray:
        """Boolean indicator per replica; snaps has shape (R, S, ncells)."""
        if self.kind == "terminal_ball":
            diff = snaps[:, -1, :] - np.ravel(self.center)
            dist = lp_norm_batch(diff, 2.0, h)
            return dist >= self.delta
        ref = np.asarray(self.reference, dtype=float)
        if ref.shape != snaps.shape[1:]:
            raise ValueError("reference path shape does not match snapshots")
        diff = snaps - ref[None]
        if self.kind == "tube_exit":
            dist = lp_norm_batch(diff, 2.0, h).max(axis=1)
            return dist >= self.delta
        sup_term = lp_norm_batch(diff, self.p, h).max(axis=1)
        inc_term = holder_increment_sup(diff, dt_snap, self.alpha, self.p, h)
        return sup_term + inc_term >= self.delta

    def evaluate(self, traj: Trajectory) -> bool:
        flat = traj.flat_values()[None]
        return bool(self.evaluate_batch(flat, traj.dt, traj.h)[0])


def wilson_interval(hits: int, total: int, z: float = 1.959963984540054) -> tuple:
    """95% score interval for a binomial proportion."""
    if total <= 0:
        raise ValueError("need at least one replica")
    phat = hits / total
    denom = 1.0 + z**2 / total
    center = (phat + z**2 / (2 * total)) / denom
    half = z * np.sqrt(phat * (1 - phat) / total + z**2 / (4 * total**2)) / denom
    lo = 0.0 if hits == 0 else max(0.0, center - half)
    hi = 1.0 if hits == total else min(1.0, center + half)
    return lo, hi


@dataclass
class EstimateResult:
    """One probability estimate with its provenance."""

    p_hat: float
    ci: tuple
    eps_log_p: float
    eps: float
    replicas: int
    method: str
    one_sided: bool = False
    mean_weight: float | None = None
    hits: int = 0

    def row(self) -> dict:
        return {"epsilon": self.eps, "p_hat": self.p_hat, "ci_lo": self.ci[0],
                "ci_hi": self.ci[1], "eps_log_p": self.eps_log_p,
                "method": self.method, "replicas": self.replicas,
                "one_sided": self.one_sided}


def _batch_noise(grid: Grid, seed: SeedSpec, block: int, start: int, count: int):
    """Stack per-replica sheets; each replica owns its own derived stream."""
    paths = [sample_sheet(grid.steps, grid.n, grid.dt,
                          seed.child(block * BLOCK_STRIDE + start + r), dim=grid.dim)
             for r in range(count)]
    return np.stack([p.increments for p in paths])


def _simulate_indicators(event: EventSpec, eps: float, v_star: ControlPath | None,
                         replicas: int, seed: SeedSpec, block: int,
                         model: ModelSpec, grid: Grid, config: SolverConfig,
                         chunk: int = DEFAULT_CHUNK):
    """Indicators and log-weights for the (optionally) tilted ensemble."""
    save_every = 1 if event.needs_path() else grid.steps
    run_cfg = SolverConfig(save_every=save_every,
                           blowup_threshold=config.blowup_threshold,
                           stability_limit=config.stability_limit,
                           tol_mild=config.tol_mild)
    integ = Integrator(grid, model, run_cfg)
    wt = grid.dt * grid.h
    vvals = v_star.values if v_star is not None else None
    v_norm_sq = float(wt * np.sum(vvals**2)) if vvals is not None else 0.0

    indicators = np.empty(replicas, dtype=bool)
    log_w = np.zeros(replicas)
    dt_snap = grid.dt * save_every
    done = 0
    while done < replicas:
        count = min(chunk, replicas - done)
        dW = _batch_noise(grid, seed, block, done, count)
        if vvals is not None:
            incr = np.sqrt(eps) * dW + wt * vvals[None]
            log_w[done:done + count] = (
                -np.tensordot(dW, vvals, axes=dW.ndim - 1) / np.sqrt(eps)
                - v_norm_sq / (2.0 * eps))
        else:
            incr = np.sqrt(eps) * dW
        u0 = np.broadcast_to(model.u0_field(grid).values, (count,) + grid.shape)
        _, snaps = integ.run(u0, incr, None, grid.steps)
        flat = snaps.reshape(count, snaps.shape[-1 - grid.dim], -1)
        indicators[done:done + count] = event.evaluate_batch(flat, dt_snap, grid.h)
        done += count
    return indicators, log_w


def mc_event_probability(event: EventSpec, eps: float, replicas: int,
                         seed: SeedSpec, model: ModelSpec, grid: Grid,
                         config: SolverConfig | None = None,
                         block: int = 0) -> EstimateResult:
    """Plain Monte Carlo estimate with a Wilson interval.

    A zero-hit outcome is reported as the one-sided resolution bound
    eps * log(1/R) and flagged, never as -inf.
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    if eps <= 0:
        raise ValueError("eps must be positive")
    config = config or SolverConfig()
    indicators, _ = _simulate_indicators(event, eps, None, replicas, seed, block,
                                         model, grid, config)
    hits = int(indicators.sum())
    p_hat = hits / replicas
    ci = wilson_interval(hits, replicas)
    if hits == 0:
        return EstimateResult(p_hat=0.0, ci=ci, eps_log_p=eps * np.log(1.0 / replicas),
                              eps=eps, replicas=replicas, method="mc",
                              one_sided=True, hits=0)
    return EstimateResult(p_hat=p_hat, ci=ci, eps_log_p=eps * np.log(p_hat),
                          eps=eps, replicas=replicas, method="mc", hits=hits)


def importance_sample(event: EventSpec, eps: float, v_star: ControlPath,
                      replicas: int, seed: SeedSpec, model: ModelSpec,
                      grid: Grid, config: SolverConfig | None = None,
                      block: int = 0) -> EstimateResult:
    """Tilted estimator: integrate on shifted increments, reweight exactly.

    Weights are accumulated through a max-shifted exponential, so extreme
    tilts cannot overflow.  With the zero control this reproduces the plain
    estimate bit-for-bit on the same seeds.
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not v_star.in_ball():
        raise ValueError("tilt control violates its tagged energy bound")
    config = config or SolverConfig()
    indicators, log_w = _simulate_indicators(event, eps, v_star, replicas, seed,
                                             block, model, grid, config)
    lw_max = float(np.max(log_w))
    w = np.exp(log_w - lw_max)
    contrib = w * indicators
    p_hat = float(np.exp(lw_max) * np.mean(contrib))
    se = float(np.exp(lw_max) * np.std(contrib, ddof=1) / np.sqrt(replicas)) \
        if replicas > 1 else np.inf
    ci = (max(0.0, p_hat - 1.96 * se), p_hat + 1.96 * se)
    mean_weight = float(np.exp(lw_max) * np.mean(w))
    hits = int(indicators.sum())
    if p_hat <= 0.0:
        return EstimateResult(p_hat=0.0, ci=ci, eps_log_p=eps * np.log(1.0 / replicas),
                              eps=eps, replicas=replicas, method="is",
                              one_sided=True, mean_weight=mean_weight, hits=hits)
    return EstimateResult(p_hat=p_hat, ci=ci, eps_log_p=eps * np.log(p_hat),
                          eps=eps, replicas=replicas, method="is",
                          mean_weight=mean_weight, hits=hits)


def mean_girsanov_weight(eps: float, v_star: ControlPath, replicas: int,
                         seed: SeedSpec, grid: Grid, block: int = 0,
                         chunk: int = DEFAULT_CHUNK) -> tuple:
    """(mean, standard error) of the tilt density over fresh replicas.

    The discrete tilt is an exact martingale, so the mean must sit within
    sampling error of one; used as the estimator's self-check.
    """
    wt = grid.dt * grid.h
    v_norm_sq = float(wt * np.sum(v_star.values**2))
    weights = np.empty(replicas)
    done = 0
    while done < replicas:
        count = min(chunk, replicas - done)
        dW = _batch_noise(grid, seed, block, done, count)
        lw = (-np.tensordot(dW, v_star.values, axes=dW.ndim - 1) / np.sqrt(eps)
              - v_norm_sq / (2.0 * eps))
        weights[done:done + count] = np.exp(lw)
        done += count
    return float(np.mean(weights)), float(np.std(weights, ddof=1) / np.sqrt(replicas))


# ---------------------------------------------------------------------------
# Structural-limit studies
# ---------------------------------------------------------------------------


@dataclass
class LimitStudyResult:
    """Distance table for a limit study, with the log-log slope when fitted."""

    parameters: np.ndarray
    distances: np.ndarray
    slope: float | None = None
    label: str = ""

    def to_dict(self) -> dict:
        return {"label": self.label, "parameters": self.parameters.tolist(),
                "distances": self.distances.tolist(), "slope": self.slope}


def controlled_limit_study(v: ControlPath | None, eps_schedule, replicas: int,
                           seed: SeedSpec, model: ModelSpec, grid: Grid,
                           alpha: float = 0.3, p: float = 4.0,
                           save_every: int = 10,
                           perturbation: str = "none",
                           config: SolverConfig | None = None,
                           chunk: int = DEFAULT_CHUNK) -> LimitStudyResult:
    """Mean Holder distance between the controlled flow and its zero-noise
    limit along a noise schedule, with the log-log slope.

    perturbation 'none' keeps the control fixed across the schedule;
    'sqrt_eps' adds a sqrt(eps)-scaled deterministic ripple to exercise the
    moving-control variant of the limit.
    """
    eps_schedule = np.asarray(list(eps_schedule), dtype=float)
    if eps_schedule.size < 3:
        raise ValueError("schedule needs at least 3 points for the slope fit")
    if np.any(np.diff(eps_schedule) >= 0):
        raise ValueError("schedule must be strictly decreasing")
    config = config or SolverConfig()
    if grid.steps % save_every != 0:
        raise ValueError("save_every must divide the step count")
    run_cfg = SolverConfig(save_every=save_every,
                           blowup_threshold=config.blowup_threshold,
                           stability_limit=config.stability_limit,
                           tol_mild=config.tol_mild)
    integ = Integrator(grid, model, run_cfg)
    u0 = model.u0_field(grid)
    base_v = v if v is not None else zero_control(grid)

    ripple = None
    if perturbation == "sqrt_eps":
        t_mid = (np.arange(grid.steps) + 0.5) * grid.dt
        x = (np.arange(grid.n) + 0.5) * np.pi / grid.n
        ripple = np.sin(2 * np.pi * t_mid / grid.T)[:, None] * np.cos(x)[None, :]
        if grid.dim == 2:
            ripple = ripple[..., None] * np.ones(grid.n)
    elif perturbation != "none":
        raise ValueError("perturbation must be 'none' or 'sqrt_eps'")

    distances = np.empty(eps_schedule.size)
    dt_snap = grid.dt * save_every
    for i, eps in enumerate(eps_schedule):
        acc = 0.0
        done = 0
        while done < replicas:
            count = min(chunk, replicas - done)
            # row 0 carries the zero-noise reference through the identical
            # batched arithmetic, so a vanishing sigma gives exact zeros
            incr = np.zeros((count + 1, grid.steps) + grid.shape)
            incr[1:] = np.sqrt(eps) * _batch_noise(grid, seed, i, done, count)
            if ripple is None:
                ctrl = base_v.values
            else:
                ctrl = np.broadcast_to(
                    base_v.values + np.sqrt(eps) * ripple,
                    (count + 1, grid.steps) + grid.shape).copy()
                ctrl[0] = base_v.values
            u0b = np.broadcast_to(u0.values, (count + 1,) + grid.shape)
            _, snaps = integ.run(u0b, incr, ctrl, grid.steps)
            flat = snaps.reshape(count + 1, -1, grid.ncells)
            diff = flat[1:] - flat[:1]
            sup_term = lp_norm_batch(diff, p, grid.h).max(axis=1)
            inc_term = holder_increment_sup(diff, dt_snap, alpha, p, grid.h)
            acc += float(np.sum(sup_term + inc_term))
            done += count
        distances[i] = acc / replicas

    slope = _loglog_slope(eps_schedule, distances)
    return LimitStudyResult(parameters=eps_schedule, distances=distances,
                            slope=slope, label="controlled-limit")


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    mask = y > 0
    A = np.vstack([np.log(x[mask]), np.ones(int(mask.sum()))]).T
    coef, *_ = np.linalg.lstsq(A, np.log(y[mask]), rcond=None)
    return float(coef[0])


def weak_continuity_study(v: ControlPath, freq_schedule, g_profile: np.ndarray,
                          model: ModelSpec, grid: Grid, energy_bound: float,
                          alpha: float = 0.3, p: float = 4.0,
                          save_every: int = 10,
                          config: SolverConfig | None = None) -> LimitStudyResult:
    """Distances ||u^{v_n} - u^v|| for the weakly-null ripples
    v_n = v + sin(n t) g(x); each v_n must stay inside the energy ball."""
    freq_schedule = np.asarray(list(freq_schedule), dtype=float)
    config = config or SolverConfig()
    if grid.steps % save_every != 0:
        raise ValueError("save_every must divide the step count")
    run_cfg = SolverConfig(save_every=save_every,
                           blowup_threshold=config.blowup_threshold,
                           stability_limit=config.stability_limit,
                           tol_mild=config.tol_mild)
    u0 = model.u0_field(grid)
    base = solve_skeleton(u0, v, model, grid, run_cfg, check_residual=False)
    ref = base.flat_values()
    t_mid = (np.arange(grid.steps) + 0.5) * grid.dt
    dt_snap = grid.dt * save_every

    distances = np.empty(freq_schedule.size)
    for i, n_freq in enumerate(freq_schedule):
        ripple = np.sin(n_freq * t_mid)[:, None] * np.ravel(g_profile)[None, :]
        ripple = ripple.reshape((grid.steps,) + grid.shape)
        v_n = ControlPath(v.values + ripple, dt=grid.dt, dim=grid.dim,
                          bound=energy_bound)
        if not v_n.in_ball():
            raise ValueError(
                f"ripple frequency {n_freq} pushes the control outside the "
                f"energy ball (norm^2 = {v_n.norm_sq():.3g} > {energy_bound})")
        traj = solve_skeleton(u0, v_n, model, grid, run_cfg, check_residual=False)
        diff = traj.flat_values() - ref
        sup_term = float(lp_norm_batch(diff, p, grid.h).max())
        inc_term = float(holder_increment_sup(diff[None], dt_snap, alpha, p, grid.h)[0])
        distances[i] = sup_term + inc_term
    return LimitStudyResult(parameters=freq_schedule, distances=distances,
                            slope=None, label="weak-continuity")


def reachable_set_diameter(count: int, energy_bound: float, seed: SeedSpec,
                           model: ModelSpec, grid: Grid, p: float = 4.0,
                           save_every: int = 10,
                           config: SolverConfig | None = None) -> float:
    """Empirical sup-norm diameter of skeleton endpoints over random controls
    in the energy ball; a boundedness diagnostic for the reachable set."""
    config = config or SolverConfig()
    run_cfg = SolverConfig(save_every=save_every)
    gen = np.random.Generator(np.random.Philox(
        key=np.array([seed.master, seed.replica], dtype=np.uint64)))
    u0 = model.u0_field(grid)
    paths = []
    for _ in range(count):
        raw = gen.standard_normal((grid.steps,) + grid.shape)
        v = ControlPath(raw, dt=grid.dt, dim=grid.dim)
        norm = np.sqrt(v.norm_sq())
        scale = gen.random() * np.sqrt(energy_bound) / max(norm, 1e-300)
        v = ControlPath(scale * raw, dt=grid.dt, dim=grid.dim, bound=energy_bound)
        traj = solve_skeleton(u0, v, model, grid, run_cfg, check_residual=False)
        paths.append(traj.flat_values())
    diam = 0.0
    for i in range(count):
        for j in range(i + 1, count):
            diff = paths[i] - paths[j]
            diam = max(diam, float(lp_norm_batch(diff, p, grid.h).max()))
    return diam


# ---------------------------------------------------------------------------
# Scaling study
# ---------------------------------------------------------------------------


@dataclass
class ScalingReport:
    """Per-epsilon decay estimates against a certificate cost.

    The comparison is desk-scale and one-sided: the certificate upper-bounds
    the discrete rate, while the estimates carry finite-epsilon bias, so
    only the trend and the coherence gap are asserted.
    """

    rows: list = field(default_factory=list)
    certificate_cost: float | None = None
    trend_nondecreasing: bool | None = None
    final_gap_ratio: float | None = None

    comparison_note = ("desk-scale, one-sided comparison: the certificate "
                       "upper-bounds the discrete rate; estimates carry "
                       "finite-epsilon bias")

    def to_dict(self) -> dict:
        return {"rows": [r.row() for r in self.rows],
                "certificate_cost": self.certificate_cost,
                "trend_nondecreasing": self.trend_nondecreasing,
                "final_gap_ratio": self.final_gap_ratio,
                "comparison": self.comparison_note}

    def csv_rows(self):
        header = ["epsilon", "p_hat", "ci_lo", "ci_hi", "eps_log_p",
                  "method", "replicas"]
        out = [header]
        for r in self.rows:
            row = r.row()
            out.append([row[k] for k in header])
        return out


def decay_rate_bounds(result: EstimateResult) -> tuple:
    """(rate_lo, rate_hi) band for -eps log p from the confidence interval;
    the larger probability bound gives the smaller rate."""
    ci_lo, ci_hi = result.ci
    rate_lo = -result.eps * np.log(min(1.0, ci_hi)) if ci_hi > 0 else np.inf
    rate_hi = -result.eps * np.log(ci_lo) if ci_lo > 0 else np.inf
    return rate_lo, rate_hi


def trend_nondecreasing(results: list) -> bool:
    """True when -eps log p is nondecreasing in 1/eps up to CI slack."""
    bands = []
    for r in results:
        if r.one_sided:
            continue
        bands.append((r.eps,) + decay_rate_bounds(r))
    bands.sort(key=lambda t: -t[0])  # increasing 1/eps
    for (_, lo_a, _), (_, _, hi_b) in zip(bands, bands[1:]):
        if hi_b < lo_a:  # the later band sits strictly below the earlier one
            return False
    return True


def ldp_scaling_study(event: EventSpec, eps_schedule, replica_schedule,
                      certificate: RateCertificate | None, seed: SeedSpec,
                      model: ModelSpec, grid: Grid,
                      config: SolverConfig | None = None,
                      is_threshold: float = 2.0) -> ScalingReport:
    """Estimate the event probability along the schedule and compare the
    decay exponents -eps log p to the certificate cost.

    The tilted estimator takes over once the certified cost divided by eps
    exceeds is_threshold (the plain estimator would be hit-starved there);
    zero-hit rows stay in the table as one-sided bounds.
    """
    eps_schedule = list(eps_schedule)
    replica_schedule = list(replica_schedule)
    if len(replica_schedule) != len(eps_schedule):
        raise ValueError("need one replica count per epsilon")
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("epsilon schedule must be strictly decreasing")
    config = config or SolverConfig()

    rows = []
    for i, (eps, reps) in enumerate(zip(eps_schedule, replica_schedule)):
        use_is = (certificate is not None
                  and certificate.cost / eps > is_threshold
                  and float(np.max(np.abs(certificate.control.values))) > 0)
        if use_is:
            rows.append(importance_sample(event, eps, certificate.control, reps,
                                          seed, model, grid, config, block=i))
        else:
            rows.append(mc_event_probability(event, eps, reps, seed, model,
                                             grid, config, block=i))

    cost = certificate.cost if certificate is not None else None
    trend = trend_nondecreasing(rows)
    gap = None
    informative = [r for r in rows if not r.one_sided]
    if cost is not None and cost > 0 and informative:
        gap = float(-informative[-1].eps_log_p / cost)
    return ScalingReport(rows=rows, certificate_cost=cost,
                         trend_nondecreasing=trend, final_gap_ratio=gap)
