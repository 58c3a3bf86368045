"""Closed-loop simulation, Monte Carlo estimation, and the paired
adjacent-trajectory experiment.

Step order at time k: measure y(k); (reduced only) finish the observer
update for step k now that y(k) is available; draw the noise and form
the message theta(k); compute u(k) from received messages; advance the
plant; (full only) advance the observer.  All randomness is addressed by
(seed, purpose, run, agent, step), so a run is reproducible bit-for-bit
and runs never interact.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import PreconditionError
from .graphs import Graph, degrees
from .noise import (NoiseSchedule, PURPOSE_INIT, RngSpec, laplace_noise_block,
                    scale_at, uniform_block)
from .plant import FullObserver, GainSet, LtiPlant, ReducedForm
from .privacy import AdjacencySpec, deviation_series

OVERFLOW_LIMIT = 1e150


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Everything needed to reproduce a closed-loop experiment."""

    graph: Graph
    plant: LtiPlant
    gains: GainSet
    schedules: tuple                      # one NoiseSchedule per agent
    rng: RngSpec
    horizon: int
    observer_kind: str                    # "full" | "reduced"
    observer: FullObserver | None = None
    reduced: ReducedForm | None = None
    x0: np.ndarray | None = None          # explicit (N, n) initial states
    x0_box: tuple | None = None           # (low, high) for seeded-uniform draws
    adjacency: AdjacencySpec | None = None
    runs: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise PreconditionError(f"horizon must be >= 1, got {self.horizon}")
        if len(self.schedules) != self.graph.n:
            raise PreconditionError(
                f"{len(self.schedules)} noise schedules for {self.graph.n} agents")
        if self.observer_kind == "full":
            if self.observer is None:
                raise PreconditionError("full-order scenario needs an observer gain")
        elif self.observer_kind == "reduced":
            if self.reduced is None or self.reduced.lbar is None:
                raise PreconditionError("reduced scenario needs a reduced form with Lbar")
        else:
            raise PreconditionError(f"unknown observer kind {self.observer_kind!r}")
        if self.x0 is None and self.x0_box is None:
            raise PreconditionError("need either explicit x0 or an x0 box")
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=float)
            if x0.shape != (self.graph.n, self.plant.n):
                raise PreconditionError(
                    f"x0 must be {(self.graph.n, self.plant.n)}, got {x0.shape}")
            object.__setattr__(self, "x0", x0)
        if self.adjacency is not None and self.adjacency.i0 >= self.graph.n:
            raise PreconditionError(
                f"adjacency agent {self.adjacency.i0} out of range for N={self.graph.n}")


@dataclass(frozen=True, eq=False)
class SimTrace:
    """Full record of one closed-loop run.

    States (x, delta, err) cover k = 0..H; actions (theta, eta, u) cover
    k = 0..H-1.  For the reduced path, xhat stacks [xhat1; y] and err
    holds the reduced estimation error.
    """

    x: np.ndarray
    xhat: np.ndarray
    theta: np.ndarray
    eta: np.ndarray
    u: np.ndarray
    delta: np.ndarray
    err: np.ndarray
    norm_delta: np.ndarray
    norm_e: np.ndarray
    run: int
    truncated_at: int | None = None


@dataclass(frozen=True, eq=False)
class MsEstimate:
    """Per-step Monte Carlo means of the squared error norms with 95% CIs."""

    mean_delta_sq: np.ndarray
    ci_delta: np.ndarray
    mean_e_sq: np.ndarray
    ci_e: np.ndarray
    runs: int


@dataclass(frozen=True, eq=False)
class HistogramResult:
    """Paired histograms of one message component on shared bin edges."""

    edges: np.ndarray
    counts_primary: np.ndarray
    counts_counterfactual: np.ndarray
    max_ratio: float
    pooled_threshold: int
    samples_primary: np.ndarray
    samples_counterfactual: np.ndarray


def scales_matrix(schedules, horizon: int) -> np.ndarray:
    """Laplace scales b_i(k), shape (horizon, N)."""
    return np.array([[scale_at(s, k) for s in schedules] for k in range(horizon)])


def initial_states(cfg: ScenarioConfig, run: int) -> np.ndarray:
    """Explicit x(0), or a seeded uniform draw in the configured box."""
    if cfg.x0 is not None:
        return cfg.x0.copy()
    low, high = cfg.x0_box
    n_agents, n = cfg.graph.n, cfg.plant.n
    u = uniform_block(cfg.rng, PURPOSE_INIT, run, np.arange(n_agents), 0, n)
    return low + (high - low) * u


def _center(x: np.ndarray) -> np.ndarray:
    return x - x.mean(axis=0, keepdims=True)


def simulate(cfg: ScenarioConfig, run: int = 0) -> SimTrace:
    """One deterministic closed-loop run."""
    n_agents, n, r, q = cfg.graph.n, cfg.plant.n, cfg.plant.r, cfg.plant.q
    h = cfg.horizon
    a_g = cfg.graph.adjacency.astype(float)
    deg = degrees(cfg.graph).astype(float)
    a_mat, b_mat, c_mat = cfg.plant.a, cfg.plant.b, cfg.plant.c
    k_mat = cfg.gains.k

    eta = laplace_noise_block(cfg.rng, run, scales_matrix(cfg.schedules, h), n)

    x = np.zeros((h + 1, n_agents, n))
    x[0] = initial_states(cfg, run)
    xhat = np.zeros((h + 1, n_agents, n))
    theta = np.zeros((h, n_agents, n))
    u = np.zeros((h, n_agents, r))

    reduced = cfg.observer_kind == "reduced"
    if reduced:
        rf = cfg.reduced
        nq = n - q
        err = np.zeros((h + 1, n_agents, nq))
        xhat1 = np.zeros((n_agents, nq))
        xbar1_0 = x[0] @ rf.p.T[:, :nq]
        err[0] = xbar1_0 - xhat1
        prev_y = None
        prev_u = None
    else:
        obs = cfg.observer
        err = np.zeros((h + 1, n_agents, n))
        err[0] = x[0] - xhat[0]

    truncated_at = None
    for k in range(h):
        y = x[k] @ c_mat.T
        if reduced:
            if k > 0:
                ybar = y - prev_y @ rf.a22.T - prev_u @ rf.b2.T
                ubar = prev_y @ rf.a12.T + prev_u @ rf.b1.T
                xhat1 = xhat1 @ rf.a11.T + ubar + (ybar - xhat1 @ rf.a21.T) @ rf.lbar.T
            xhat[k] = np.hstack([xhat1, y])
            err[k] = (x[k] @ rf.p.T)[:, :n - q] - xhat1
        theta[k] = xhat[k] + eta[k]
        u[k] = (a_g @ theta[k] - deg[:, None] * xhat[k]) @ k_mat.T
        x[k + 1] = x[k] @ a_mat.T + u[k] @ b_mat.T
        if reduced:
            prev_y, prev_u = y, u[k]
        else:
            xhat[k + 1] = xhat[k] @ a_mat.T + u[k] @ b_mat.T + (y - xhat[k] @ c_mat.T) @ obs.l.T
            err[k + 1] = x[k + 1] - xhat[k + 1]
        if not np.all(np.abs(x[k + 1]) < OVERFLOW_LIMIT):
            truncated_at = k + 1
            x = x[: k + 2]
            xhat = xhat[: k + 2]
            theta = theta[: k + 1]
            eta = eta[: k + 1]
            u = u[: k + 1]
            err = err[: k + 2]
            break

    if reduced and truncated_at is None:
        # finish the last observer update with the final measurement
        y_final = x[h] @ c_mat.T
        ybar = y_final - prev_y @ rf.a22.T - prev_u @ rf.b2.T
        ubar = prev_y @ rf.a12.T + prev_u @ rf.b1.T
        xhat1 = xhat1 @ rf.a11.T + ubar + (ybar - xhat1 @ rf.a21.T) @ rf.lbar.T
        xhat[h] = np.hstack([xhat1, y_final])
        err[h] = (x[h] @ rf.p.T)[:, :n - q] - xhat1

    delta = np.stack([_center(xk) for xk in x])
    norm_delta = np.sqrt((delta ** 2).sum(axis=(1, 2)))
    norm_e = np.sqrt((err ** 2).sum(axis=(1, 2)))
    return SimTrace(x=x, xhat=xhat, theta=theta, eta=eta, u=u, delta=delta,
                    err=err, norm_delta=norm_delta, norm_e=norm_e, run=run,
                    truncated_at=truncated_at)


def _run_norms(args):
    cfg, run = args
    tr = simulate(cfg, run)
    if tr.truncated_at is not None:
        raise PreconditionError(
            f"run {run} overflowed at step {tr.truncated_at}; "
            "Monte Carlo needs a stable scenario")
    return tr.norm_delta ** 2, tr.norm_e ** 2


def monte_carlo(cfg: ScenarioConfig, runs: int, workers: int = 1) -> MsEstimate:
    """Sample means of ||delta(k)||^2 and ||e(k)||^2 over independent runs.

    Aggregation uses exact compensated summation in run order, so any
    worker count produces bit-identical results.
    """
    if runs < 2:
        raise PreconditionError(f"Monte Carlo needs at least 2 runs, got {runs}")
    jobs = [(cfg, run) for run in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_norms, jobs, chunksize=max(1, runs // (4 * workers))))
    else:
        results = [_run_norms(j) for j in jobs]
    d_sq = np.stack([r[0] for r in results])   # (runs, H+1)
    e_sq = np.stack([r[1] for r in results])
    return MsEstimate(
        mean_delta_sq=_fsum_mean(d_sq), ci_delta=_fsum_ci(d_sq),
        mean_e_sq=_fsum_mean(e_sq), ci_e=_fsum_ci(e_sq),
        runs=runs,
    )


def _fsum_mean(values: np.ndarray) -> np.ndarray:
    runs = values.shape[0]
    return np.array([math.fsum(values[:, k]) / runs for k in range(values.shape[1])])


def _fsum_ci(values: np.ndarray) -> np.ndarray:
    runs = values.shape[0]
    out = np.empty(values.shape[1])
    for k in range(values.shape[1]):
        mean = math.fsum(values[:, k]) / runs
        var = math.fsum((values[:, k] - mean) ** 2) / (runs - 1)
        out[k] = 1.96 * math.sqrt(var / runs)
    return out


def empirical_rate(ms: MsEstimate, window: tuple) -> float:
    """Least-squares slope of log E||delta(k)||^2 over [k_lo, k_hi].

    Returns exp(slope / 2), the empirical counterpart of the geometric
    mean-square rate.
    """
    k_lo, k_hi = window
    h = len(ms.mean_delta_sq) - 1
    if not (0 <= k_lo < k_hi <= h):
        raise PreconditionError(f"window {window} outside horizon 0..{h}")
    ks = np.arange(k_lo, k_hi + 1)
    vals = ms.mean_delta_sq[k_lo: k_hi + 1]
    if np.any(vals <= 0):
        raise PreconditionError(
            "mean squared error hits zero in the fit window (noise floor); "
            "use a smaller k_hi")
    slope = np.polyfit(ks, np.log(vals), 1)[0]
    return float(np.exp(slope / 2.0))


def replay_counterfactual(cfg: ScenarioConfig, trace: SimTrace):
    """Observer replay for the adjacent output trajectory.

    Re-runs agent i0's observer against the perturbed measured output
    while holding every transmitted message at its recorded value, which
    mirrors the coupling behind the privacy budget.  Returns (betas,
    theta_i0_prime): the per-step estimate deviation (counterfactual
    minus primary) and agent i0's counterfactual messages.
    """
    adj = cfg.adjacency
    if adj is None:
        raise PreconditionError("scenario has no adjacency specification")
    i0 = adj.i0
    steps = trace.theta.shape[0]
    n, q = cfg.plant.n, cfg.plant.q
    d_i0 = float(degrees(cfg.graph)[i0])
    a_g = cfg.graph.adjacency.astype(float)
    dy = deviation_series(adj, q, steps)

    y_primary = trace.x[: steps + 1] @ cfg.plant.c.T  # (steps+1, N, q)

    theta_prime = np.zeros((steps, n))
    if cfg.observer_kind == "full":
        obs = cfg.observer
        betas = np.zeros((steps + 1, n))
        xhat_p = trace.xhat[0, i0].copy()
        for k in range(steps):
            theta_prime[k] = xhat_p + trace.eta[k, i0]
            nbr = a_g[i0] @ trace.theta[k]
            u_p = cfg.gains.k @ (nbr - d_i0 * xhat_p)
            y_p = y_primary[k, i0] + dy[k]
            xhat_p = (cfg.plant.a @ xhat_p + cfg.plant.b @ u_p
                      + obs.l @ (y_p - cfg.plant.c @ xhat_p))
            betas[k + 1] = xhat_p - trace.xhat[k + 1, i0]
        return betas, theta_prime

    rf = cfg.reduced
    nq = n - q
    betas = np.zeros((steps + 1, n))
    xhat1_p = trace.xhat[0, i0, :nq].copy()
    xbar1_p = (rf.p @ trace.x[0, i0])[:nq].copy()
    for k in range(steps):
        y_p = y_primary[k, i0] + dy[k]
        own = np.concatenate([xhat1_p, y_p])
        theta_prime[k] = own + trace.eta[k, i0]
        betas[k, :nq] = xhat1_p - trace.xhat[k, i0, :nq]
        betas[k, nq:] = dy[k]
        nbr = a_g[i0] @ trace.theta[k]
        u_p = cfg.gains.k @ (nbr - d_i0 * own)
        ybar_p = rf.a21 @ xbar1_p
        xbar1_p = rf.a11 @ xbar1_p + rf.a12 @ y_p + rf.b1 @ u_p
        xhat1_p = (rf.a11 @ xhat1_p + rf.a12 @ y_p + rf.b1 @ u_p
                   + rf.lbar @ (ybar_p - rf.a21 @ xhat1_p))
    betas[steps, :nq] = xhat1_p - _final_reduced_xhat1(cfg, trace)
    betas[steps, nq:] = dy[steps]
    return betas, theta_prime


def _final_reduced_xhat1(cfg, trace):
    return trace.xhat[trace.theta.shape[0], cfg.adjacency.i0, : cfg.plant.n - cfg.plant.q]


def histogram_experiment(cfg: ScenarioConfig, runs: int, k_star: int,
                         component: int, pooled_threshold: int = 50) -> HistogramResult:
    """Paired histograms of theta_i0[component] at k_star over R run pairs.

    Primary and counterfactual runs share noise substreams; bins are
    Freedman-Diaconis on the pooled sample, and the reported statistic is
    the worst count ratio over bins holding at least ``pooled_threshold``
    pooled samples.
    """
    if runs < 1:
        raise PreconditionError("histogram experiment needs at least one run")
    if cfg.adjacency is None:
        raise PreconditionError("histogram experiment needs an adjacency specification")
    short = replace(cfg, horizon=k_star + 1)
    prim = np.empty(runs)
    ctfl = np.empty(runs)
    i0 = cfg.adjacency.i0
    for run in range(runs):
        tr = simulate(short, run)
        _, theta_prime = replay_counterfactual(short, tr)
        prim[run] = tr.theta[k_star, i0, component]
        ctfl[run] = theta_prime[k_star, component]
    pooled = np.concatenate([prim, ctfl])
    edges = np.histogram_bin_edges(pooled, bins="fd")
    counts_p, _ = np.histogram(prim, bins=edges)
    counts_c, _ = np.histogram(ctfl, bins=edges)
    max_ratio = 0.0
    for cp, cc in zip(counts_p, counts_c):
        if cp + cc < pooled_threshold:
            continue
        hi, lo = max(cp, cc), min(cp, cc)
        ratio = math.inf if lo == 0 else hi / lo
        max_ratio = max(max_ratio, ratio)
    return HistogramResult(edges=edges, counts_primary=counts_p,
                           counts_counterfactual=counts_c,
                           max_ratio=float(max_ratio),
                           pooled_threshold=pooled_threshold,
                           samples_primary=prim, samples_counterfactual=ctfl)
