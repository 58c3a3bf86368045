"""Privacy-budget calculus for observer-based consensus.

Budgets come in three interchangeable forms that the tests hold against
each other: the general truncated double series, exact closed forms for
exponential and inverse-square scale schedules, and a simplified upper
bound.  A deterministic ledger replays the worst-case observer deviation
on adjacent output trajectories and checks its accumulated sum against
the reported budget.

Deviations may start at any step k0 >= 0.  Because the noise scale has
already decayed by then, the budget grows accordingly (for exponential
schedules by exactly g**-k0); all series, closed forms used on
scenarios, and the ledger account for k0 exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError, InfeasibleDesignError, PreconditionError
from .matops import induced_one_norm
from .noise import NoiseSchedule, p_at
from .plant import FullObserver, GainSet, LtiPlant, ReducedForm

_MAX_SERIES_TERMS = 2_000_000
_MIN_SERIES_TERMS = 4


@dataclass(frozen=True)
class AdjacencySpec:
    """Adjacent output trajectories: only agent i0 deviates, starting at k0.

    The deviation obeys ||y_i0(k) - y'_i0(k)||_1 <= m * h(k - k0) for
    k >= k0 and vanishes before k0.  h is geometric alpha**j or an
    explicit finite nonnegative sequence.
    """

    i0: int
    k0: int
    m: float
    alpha: float | None = None
    h_seq: tuple | None = None

    def __post_init__(self):
        if self.i0 < 0:
            raise ConfigError(f"agent index i0 must be >= 0, got {self.i0}")
        if self.k0 < 0:
            raise ConfigError(f"start step k0 must be >= 0, got {self.k0}")
        if not (self.m >= 0 and math.isfinite(self.m)):
            raise ConfigError(f"deviation magnitude m must be >= 0, got {self.m}")
        if (self.alpha is None) == (self.h_seq is None):
            raise ConfigError("exactly one of alpha (geometric h) or h_seq must be given")
        if self.alpha is not None and not (0 < self.alpha < 1):
            raise ConfigError(f"geometric h needs alpha in (0, 1), got {self.alpha}")
        if self.h_seq is not None:
            seq = tuple(float(v) for v in self.h_seq)
            if not seq or any(v < 0 or not math.isfinite(v) for v in seq):
                raise ConfigError("custom h must be a nonempty finite nonnegative sequence")
            object.__setattr__(self, "h_seq", seq)

    def h_at(self, j: int) -> float:
        """h(j) for j >= 0; custom sequences are zero beyond their support."""
        if j < 0:
            return 0.0
        if self.alpha is not None:
            return self.alpha ** j
        return self.h_seq[j] if j < len(self.h_seq) else 0.0

    @property
    def geometric(self) -> bool:
        return self.alpha is not None

    @property
    def h_support(self) -> int | None:
        """Length of the support for custom h, None for geometric."""
        return None if self.geometric else len(self.h_seq)


@dataclass(frozen=True)
class EpsilonReport:
    """Per-agent privacy budgets and the network-level maximum."""

    per_agent: tuple
    epsilon: float
    method: str                 # series | closed_exp | closed_poly | simplified_bound
    truncation_residual: float = 0.0


@dataclass(frozen=True, eq=False)
class LedgerResult:
    """Deterministic audit of the observer deviation on adjacent outputs.

    ``terms[k]`` is ||beta(k)||_1 / b(k); ``s_value`` includes the tail
    bound beyond the computed horizon.  ``betas`` holds the deviation
    vectors for replay comparison.
    """

    terms: np.ndarray
    betas: np.ndarray
    s_value: float
    tail: float
    eps_reference: float
    holds: bool
    horizon_used: int

    def prefix_sum(self, k_star: int) -> float:
        """Audit sum restricted to messages up to step k_star."""
        return float(math.fsum(self.terms[: k_star + 1]))


# ---------------------------------------------------------------------------
# Series
# ---------------------------------------------------------------------------

def _check_series_convergence(decay: float, adj: AdjacencySpec, sched: NoiseSchedule,
                              what: str) -> None:
    if sched.c <= 0:
        raise DivergenceError(
            f"{what}: schedule has c = 0, budget is infinite for m > 0",
            detail="c == 0")
    tail_rho = max(decay, adj.alpha) if adj.geometric else decay
    if sched.kind == "exponential":
        if tail_rho >= sched.g:
            raise DivergenceError(
                f"{what}: series diverges, max(decay={decay:.6g}, alpha) = "
                f"{tail_rho:.6g} >= g = {sched.g:.6g}",
                detail=f"max(l, alpha) >= g ({tail_rho:.6g} >= {sched.g:.6g})")
    elif sched.kind == "polynomial":
        if tail_rho >= 1:
            raise DivergenceError(
                f"{what}: series diverges, max(decay, alpha) = {tail_rho:.6g} >= 1",
                detail=f"max(l, alpha) >= 1 ({tail_rho:.6g})")
    else:
        raise PreconditionError(
            f"{what}: series evaluation needs an exponential or polynomial schedule")


def _ratio_bound(decay: float, adj: AdjacencySpec, sched: NoiseSchedule,
                 k: int, j: int) -> float:
    """Upper bound on the ratio of consecutive series terms from step k on."""
    if adj.geometric:
        base = max(decay, adj.alpha)
    else:
        base = decay if j >= len(adj.h_seq) else math.inf
    if not math.isfinite(base):
        return math.inf
    base *= 1.0 + 1.0 / max(j, 1)
    if sched.kind == "exponential":
        return base / sched.g
    return base * ((k + 2) / (k + 1)) ** sched.power


def _series_sum(adj: AdjacencySpec, sched: NoiseSchedule, decay: float,
                gamma_coeff: float, direct_coeff: float, tol: float,
                what: str):
    """Sum_k [gamma_coeff * gamma(k - k0) + direct_coeff * h(k - k0)] / b(k).

    gamma(j) = sum_{b<j} decay**(j-1-b) h(b) is the convolution driving
    the observer deviation; the direct part covers message components
    that carry the output deviation itself.  Returns (sum, residual).
    """
    _check_series_convergence(decay, adj, sched, what)
    k0 = adj.k0
    gamma = 0.0
    total = 0.0
    residual = math.inf
    k = k0
    while True:
        j = k - k0
        term = 0.0
        if direct_coeff:
            term += direct_coeff * adj.h_at(j)
        if gamma_coeff and j >= 1:
            term += gamma_coeff * gamma
        if term:
            total += term / (sched.c * p_at(sched, k))
        # advance the convolution: gamma(j+1) = decay * gamma(j) + h(j)
        gamma = decay * gamma + adj.h_at(j)
        if j >= _MIN_SERIES_TERMS:
            r = _ratio_bound(decay, adj, sched, k, j)
            if r < 1.0:
                last = term / (sched.c * p_at(sched, k)) if term else 0.0
                bound = last * r / (1.0 - r)
                if bound <= tol:
                    residual = bound
                    break
        k += 1
        if k - k0 > _MAX_SERIES_TERMS:
            raise DivergenceError(f"{what}: series did not converge within "
                                  f"{_MAX_SERIES_TERMS} terms", detail="max terms")
    return total, residual


def epsilon_series_full(moduli_l, l_norm: float, adj: AdjacencySpec, schedules,
                        tol: float = 1e-10) -> EpsilonReport:
    """Truncated privacy series for the full-order observer.

    eps_i = ||L||_1 m sum_{k>=1} [sum_{b<k} l_i**(k-b-1) h(b)] / b_i(k),
    with the deviation start k0 shifting the h argument and leaving the
    noise scale at its true decayed value.
    """
    per = []
    worst_res = 0.0
    for l_i, sched in zip(moduli_l, schedules, strict=True):
        if adj.m == 0:
            per.append(0.0)
            continue
        s, res = _series_sum(adj, sched, float(l_i), l_norm * adj.m, 0.0, tol,
                             f"full-order series (l={l_i:.6g})")
        per.append(s)
        worst_res = max(worst_res, res)
    eps = max(per) if per else 0.0
    return EpsilonReport(tuple(per), float(eps), "series", float(worst_res))


def epsilon_series_reduced(moduli_v, moduli_w, adj: AdjacencySpec, schedules,
                           tol: float = 1e-10) -> EpsilonReport:
    """Truncated privacy series for the reduced-order observer.

    Adds the direct output-deviation term m sum_k h(k - k0) / b_i(k) to
    the convolution term driven by (v_i, w_i).
    """
    per = []
    worst_res = 0.0
    for v_i, w_i, sched in zip(moduli_v, moduli_w, schedules, strict=True):
        if adj.m == 0:
            per.append(0.0)
            continue
        s, res = _series_sum(adj, sched, float(v_i), adj.m * float(w_i), adj.m, tol,
                             f"reduced-order series (v={v_i:.6g})")
        per.append(s)
        worst_res = max(worst_res, res)
    eps = max(per) if per else 0.0
    return EpsilonReport(tuple(per), float(eps), "series", float(worst_res))


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

def _check_exp_interval(decay: float, alpha: float, g: float, strict: bool,
                        symbol: str) -> None:
    if not (0 < alpha < 1):
        raise PreconditionError(f"alpha must be in (0, 1), got {alpha}")
    if not (0 < g < 1):
        raise PreconditionError(f"g must be in (0, 1), got {g}")
    if decay < 0:
        raise PreconditionError(f"{symbol} must be >= 0, got {decay}")
    if strict and not (alpha < decay < g):
        raise PreconditionError(
            f"strict mode requires {symbol} in (alpha, g), got "
            f"{symbol}={decay:.6g}, alpha={alpha:.6g}, g={g:.6g}")
    if g <= max(decay, alpha):
        raise DivergenceError(
            f"budget diverges: g = {g:.6g} <= max({symbol}, alpha) = {max(decay, alpha):.6g}",
            detail=f"g <= max({symbol}, alpha)")


def epsilon_closed_exp_full(l: float, l_norm: float, m: float, alpha: float,
                            c: float, g: float, strict: bool = False) -> float:
    """Closed form m g ||L||_1 / (c (g - l)(g - alpha)) for geometric h.

    Valid whenever max(l, alpha) < g; the expression has no singularity
    at l == alpha.
    """
    if m == 0:
        return 0.0
    _check_positive_c(c)
    _check_exp_interval(l, alpha, g, strict, "l")
    return m * g * l_norm / (c * (g - l) * (g - alpha))


def epsilon_closed_exp_reduced(v: float, w: float, m: float, alpha: float,
                               c: float, g: float, strict: bool = False) -> float:
    """Closed form m g (w + g - v) / (c (g - v)(g - alpha)) for geometric h."""
    if m == 0:
        return 0.0
    _check_positive_c(c)
    if w < 0:
        raise PreconditionError(f"w must be >= 0, got {w}")
    _check_exp_interval(v, alpha, g, strict, "v")
    return m * g * (w + g - v) / (c * (g - v) * (g - alpha))


def _h_power_sums(adj: AdjacencySpec):
    """Exact (sum h(b), sum b h(b), sum b^2 h(b)) over the support."""
    if adj.geometric:
        a = adj.alpha
        one = 1.0 - a
        return 1.0 / one, a / one ** 2, a * (1.0 + a) / one ** 3
    bs = np.arange(len(adj.h_seq), dtype=float)
    hs = np.asarray(adj.h_seq, dtype=float)
    return float(np.sum(hs)), float(np.sum(bs * hs)), float(np.sum(bs * bs * hs))


def _poly_t_sums(decay: float, adj: AdjacencySpec):
    """T_p = sum_{j>=1} (j+1)**p gamma(j) for p = 0, 1, 2, exactly.

    gamma(j) = sum_{b<j} decay**(j-1-b) h(b); geometric or finite h makes
    every inner sum a closed geometric expression.
    """
    l = decay
    if not (0 <= l < 1):
        raise PreconditionError(f"contraction modulus must be in [0, 1), got {l}")
    h0, h1, h2 = _h_power_sums(adj)
    one = 1.0 - l
    t0 = h0 / one
    t1 = (h1 + 2.0 * h0) / one + l * h0 / one ** 2
    t2 = ((h2 + 4.0 * h1 + 4.0 * h0)
          - l * (2.0 * h2 + 6.0 * h1 + 3.0 * h0)
          + l * l * (h2 + 2.0 * h1 + h0)) / one ** 3
    return t0, t1, t2


def epsilon_closed_poly_full(l: float, l_norm: float, m: float,
                             adj_h: AdjacencySpec, c: float) -> float:
    """Inverse-square-schedule closed form for the full-order observer.

    eps_i = (||L||_1 m / (c (1-l)^3)) sum_b h(b) [(b+2)^2
    - (2b^2+6b+3) l + (b+1)^2 l^2], extended exactly to deviation start
    k0 via the (j + k0 + 1)^2 expansion.  Geometric and finite h sums
    are evaluated in closed form, so no truncation residual arises.
    """
    if m == 0:
        return 0.0
    _check_positive_c(c)
    t0, t1, t2 = _poly_t_sums(l, adj_h)
    k0 = adj_h.k0
    return l_norm * m / c * (t2 + 2.0 * k0 * t1 + k0 * k0 * t0)


def epsilon_closed_poly_reduced(v: float, w: float, m: float,
                                adj_h: AdjacencySpec, c: float) -> float:
    """Inverse-square-schedule closed form for the reduced-order observer."""
    if m == 0:
        return 0.0
    _check_positive_c(c)
    if w < 0:
        raise PreconditionError(f"w must be >= 0, got {w}")
    t0, t1, t2 = _poly_t_sums(v, adj_h)
    k0 = adj_h.k0
    conv = m * w / c * (t2 + 2.0 * k0 * t1 + k0 * k0 * t0)
    h0, h1, h2 = _h_power_sums(adj_h)
    direct = m / c * (h2 + 2.0 * (k0 + 1.0) * h1 + (k0 + 1.0) ** 2 * h0)
    return conv + direct


def simplified_bound_full(l: float, l_norm: float, m: float, c: float,
                          g: float) -> float:
    """Upper bound m g ||L||_1 / (c (g - l)^2).

    Dominates the exact closed form whenever l >= alpha and coincides
    with it at l == alpha.
    """
    if m == 0:
        return 0.0
    _check_positive_c(c)
    if not (0 <= l < g):
        raise PreconditionError(f"bound requires l < g, got l={l}, g={g}")
    return m * g * l_norm / (c * (g - l) ** 2)


def _check_positive_c(c: float) -> None:
    if not c > 0:
        raise DivergenceError(f"noise scale c must be positive, got {c}",
                              detail="c <= 0")


def closed_form_epsilon(decay: float, second: float, l_norm: float,
                        adj: AdjacencySpec, sched: NoiseSchedule, kind: str,
                        strict: bool = False) -> float:
    """Closed-form budget for one agent at the scenario level.

    Full path: ``second`` is ignored and ``l_norm`` carries ||L||_1.
    Reduced path: ``decay, second`` are (v, w) and ``l_norm`` is unused.
    Exponential schedules get the exact g**-k0 start-shift correction.
    """
    if adj.m == 0:
        return 0.0
    if sched.kind == "exponential":
        if adj.geometric:
            if kind == "full":
                base = epsilon_closed_exp_full(decay, l_norm, adj.m, adj.alpha,
                                               sched.c, sched.g, strict)
            else:
                base = epsilon_closed_exp_reduced(decay, second, adj.m, adj.alpha,
                                                  sched.c, sched.g, strict)
        else:
            base = _closed_exp_custom_h(decay, second, l_norm, adj, sched, kind)
        return base * sched.g ** (-adj.k0)
    if sched.kind == "polynomial" and sched.power == 2:
        if kind == "full":
            return epsilon_closed_poly_full(decay, l_norm, adj.m, adj, sched.c)
        return epsilon_closed_poly_reduced(decay, second, adj.m, adj, sched.c)
    raise PreconditionError(
        f"no closed form for schedule kind {sched.kind!r}"
        + (f" with power {sched.power}" if sched.kind == "polynomial" else ""))


def _closed_exp_custom_h(decay: float, second: float, l_norm: float,
                         adj: AdjacencySpec, sched: NoiseSchedule, kind: str) -> float:
    """Exponential-schedule budget with an explicit finite h sequence.

    Full: eps = ||L||_1 m / (c (g - l)) * sum_b h(b) g**-b.
    Reduced: eps = m (w + g - v) / (c (g - v)) * sum_b h(b) g**-b.
    """
    g = sched.g
    if g <= decay:
        raise DivergenceError(
            f"budget diverges: g = {g:.6g} <= decay = {decay:.6g}",
            detail="g <= decay")
    hsum = math.fsum(h * g ** (-b) for b, h in enumerate(adj.h_seq))
    if kind == "full":
        return l_norm * adj.m * hsum / (sched.c * (g - decay))
    return adj.m * (second + g - decay) * hsum / (sched.c * (g - decay))


# ---------------------------------------------------------------------------
# Noise-decay design for a prescribed budget
# ---------------------------------------------------------------------------

def design_g_full(eps_star: float, m: float, alpha: float, l: float, c: float,
                  l_norm: float, strict: bool = False) -> float:
    """Decay rate g in (max(l, alpha), 1) achieving the budget eps_star.

    Solves eps* c g^2 - [eps* c (alpha + l) + m ||L||_1] g
    + eps* c alpha l = 0; feasible iff m ||L||_1 < eps* c (1-alpha)(1-l).
    """
    _check_design_inputs(eps_star, m, alpha, c)
    if not (0 <= l < 1):
        raise PreconditionError(f"design requires l in [0, 1), got {l}")
    if strict and not alpha < l:
        raise PreconditionError(
            f"strict mode requires alpha < l, got alpha={alpha}, l={l}")
    lo = max(l, alpha)
    if m == 0 or l_norm == 0:
        # zero sensitivity: any admissible g gives eps = 0
        return 0.5 * (lo + 1.0)
    lhs = m * l_norm
    rhs = eps_star * c * (1.0 - alpha) * (1.0 - l)
    if lhs >= rhs:
        raise InfeasibleDesignError(
            f"infeasible: m ||L||_1 = {lhs:.12g} >= eps* c (1-alpha)(1-l) = {rhs:.12g} "
            f"(margin {lhs - rhs:.12g})", margin=lhs - rhs)
    a = eps_star * c
    b = -(a * (alpha + l) + lhs)
    c_q = a * alpha * l
    return _root_in_interval(a, b, c_q, lo, "full-order design")


def design_g_reduced(eps_star: float, m: float, alpha: float, v: float, w: float,
                     c: float, strict: bool = False) -> float:
    """Decay rate g in (max(v, alpha), 1) achieving the budget eps_star.

    Solves (eps* c - m) g^2 - [eps* c (alpha + v) + m (w - v)] g
    + eps* c alpha v = 0; feasible iff m (w + 1 - v)
    < eps* c (1-alpha)(1-v).  Handles both signs of the leading
    coefficient and the degenerate linear case eps* c == m.
    """
    _check_design_inputs(eps_star, m, alpha, c)
    if not (0 <= v < 1):
        raise PreconditionError(f"design requires v in [0, 1), got {v}")
    if w < 0:
        raise PreconditionError(f"design requires w >= 0, got {w}")
    if strict and not alpha < v:
        raise PreconditionError(
            f"strict mode requires alpha < v, got alpha={alpha}, v={v}")
    lo = max(v, alpha)
    if m == 0:
        return 0.5 * (lo + 1.0)
    lhs = m * (w + 1.0 - v)
    rhs = eps_star * c * (1.0 - alpha) * (1.0 - v)
    if lhs >= rhs:
        raise InfeasibleDesignError(
            f"infeasible: m (w + 1 - v) = {lhs:.12g} >= eps* c (1-alpha)(1-v) = {rhs:.12g} "
            f"(margin {lhs - rhs:.12g})", margin=lhs - rhs)
    a = eps_star * c - m
    b = -(eps_star * c * (alpha + v) + m * (w - v))
    c_q = eps_star * c * alpha * v
    if a == 0.0:
        root = c_q / -b  # b < 0 always, so -b > 0
        if not (lo < root < 1.0):
            raise DivergenceError(
                f"internal consistency: linear root {root:.12g} outside ({lo:.6g}, 1)")
        return root
    return _root_in_interval(a, b, c_q, lo, "reduced-order design")


def _check_design_inputs(eps_star, m, alpha, c):
    if not eps_star > 0:
        raise PreconditionError(f"eps* must be positive, got {eps_star}")
    if not (0 < alpha < 1):
        raise PreconditionError(f"alpha must be in (0, 1), got {alpha}")
    if not c > 0:
        raise PreconditionError(f"c must be positive, got {c}")
    if m < 0:
        raise PreconditionError(f"m must be >= 0, got {m}")


def _root_in_interval(a: float, b: float, c_q: float, lo: float, what: str) -> float:
    """Numerically stable quadratic roots; return the one in (lo, 1)."""
    disc = b * b - 4.0 * a * c_q
    if disc < 0:
        raise DivergenceError(f"internal consistency: negative discriminant in {what}")
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b)) if b != 0 else 0.5 * sq
    roots = []
    if q != 0:
        roots.append(q / a)
        roots.append(c_q / q)
    else:
        roots.append(0.0)
        if a != 0:
            roots.append(-b / a)
    inside = [r for r in roots if lo < r < 1.0]
    if len(inside) != 1:
        raise DivergenceError(
            f"internal consistency: expected one root of {what} in ({lo:.6g}, 1), "
            f"candidates {roots}")
    return float(inside[0])


# ---------------------------------------------------------------------------
# Deterministic ledger
# ---------------------------------------------------------------------------

def deviation_series(adj: AdjacencySpec, q: int, horizon: int) -> np.ndarray:
    """Worst-case output deviation Delta y(k), k = 0..horizon, shape (H+1, q).

    The full l1 deviation budget m h(k - k0) is placed on the first
    output component.
    """
    dy = np.zeros((horizon + 1, q))
    for k in range(adj.k0, horizon + 1):
        dy[k, 0] = adj.m * adj.h_at(k - adj.k0)
    return dy


def beta_recursion_full(plant: LtiPlant, obs: FullObserver, gains: GainSet,
                        d_i0: float, adj: AdjacencySpec, horizon: int) -> np.ndarray:
    """Observer-estimate deviation beta(k) = xhat_y'(k) - xhat_y(k).

    beta(k+1) = (A - L C - d_i0 B K) beta(k) + L Delta y(k) with
    beta(0) = 0; the fixed transmitted messages cancel exactly.
    """
    m_cl = plant.a - obs.l @ plant.c - d_i0 * plant.b @ gains.k
    dy = deviation_series(adj, plant.q, horizon)
    betas = np.zeros((horizon + 1, plant.n))
    for k in range(horizon):
        betas[k + 1] = m_cl @ betas[k] + obs.l @ dy[k]
    return betas


def beta_recursion_reduced(rf: ReducedForm, gains: GainSet, d_i0: float,
                           adj: AdjacencySpec, horizon: int) -> np.ndarray:
    """Message deviation for the reduced path, stacked [beta1(k); Delta y(k)].

    beta1(k+1) = (A11 - d_i0 B1 K1) beta1(k) + (A12 - d_i0 B1 K2) Delta y(k);
    the transmitted output block carries the raw deviation.
    """
    k1, k2 = gains.split(rf.q)
    m_v = rf.a11 - d_i0 * rf.b1 @ k1
    m_w = rf.a12 - d_i0 * rf.b1 @ k2
    dy = deviation_series(adj, rf.q, horizon)
    betas = np.zeros((horizon + 1, rf.n))
    nq = rf.n - rf.q
    for k in range(horizon):
        betas[k + 1, :nq] = m_v @ betas[k, :nq] + m_w @ dy[k]
    betas[:, nq:] = dy
    return betas


def privacy_ledger(kind: str, adj: AdjacencySpec, schedules, horizon: int,
                   plant: LtiPlant | None = None, obs: FullObserver | None = None,
                   rf: ReducedForm | None = None, gains: GainSet | None = None,
                   degree_seq=None, tol: float = 1e-10) -> LedgerResult:
    """Deterministic worst-case audit of one adjacent-trajectory pair.

    Runs the deviation recursion for agent ``adj.i0`` over at least
    ``horizon`` steps, extends until a geometric tail bound drops below
    ``tol``, and compares S = sum_k ||beta(k)||_1 / b(k) (plus the tail)
    against the series budget of the deviating agent.
    """
    sched = schedules[adj.i0]
    d_i0 = float(degree_seq[adj.i0])
    if kind == "full":
        if plant is None or obs is None or gains is None:
            raise PreconditionError("full-order ledger needs plant, observer, and gains")
        decay = induced_one_norm(plant.a - obs.l @ plant.c - d_i0 * plant.b @ gains.k)
        l_norm = induced_one_norm(obs.l)
        gamma_coeff, direct_coeff = l_norm * adj.m, 0.0
        recurse = lambda h: beta_recursion_full(plant, obs, gains, d_i0, adj, h)
        eps_ref, _ = _series_sum(adj, sched, decay, gamma_coeff, direct_coeff, tol,
                                 "ledger reference (full)") if adj.m else (0.0, 0.0)
    elif kind == "reduced":
        if rf is None or gains is None:
            raise PreconditionError("reduced-order ledger needs the reduced form and gains")
        k1, k2 = gains.split(rf.q)
        decay = induced_one_norm(rf.a11 - d_i0 * rf.b1 @ k1)
        w_norm = induced_one_norm(rf.a12 - d_i0 * rf.b1 @ k2)
        gamma_coeff, direct_coeff = adj.m * w_norm, adj.m
        recurse = lambda h: beta_recursion_reduced(rf, gains, d_i0, adj, h)
        eps_ref, _ = _series_sum(adj, sched, decay, gamma_coeff, direct_coeff, tol,
                                 "ledger reference (reduced)") if adj.m else (0.0, 0.0)
    else:
        raise PreconditionError(f"unknown ledger kind {kind!r}")

    if adj.m == 0:
        betas = np.zeros((horizon + 1, plant.n if kind == "full" else rf.n))
        terms = np.zeros(horizon + 1)
        return LedgerResult(terms, betas, 0.0, 0.0, 0.0, True, horizon)

    _check_series_convergence(decay, adj, sched, "ledger audit")
    h_used = _extended_horizon(adj, sched, decay, gamma_coeff, direct_coeff,
                               horizon, tol)
    betas = recurse(h_used)
    scales = np.array([sched.c * p_at(sched, k) for k in range(h_used + 1)])
    norms = np.abs(betas).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(norms > 0, norms / scales, 0.0)
    tail = _tail_bound(adj, sched, decay, gamma_coeff, direct_coeff, h_used)
    s_value = float(math.fsum(terms) + tail)
    # slack covers the two truncation tolerances (S is rounded up by its
    # tail bound, the series reference down by its residual)
    holds = s_value <= eps_ref * (1.0 + 1e-9) + max(3.0 * tol, 1e-12)
    return LedgerResult(terms=terms, betas=betas, s_value=s_value, tail=float(tail),
                        eps_reference=float(eps_ref), holds=bool(holds),
                        horizon_used=h_used)


def _extended_horizon(adj, sched, decay, gamma_coeff, direct_coeff, horizon, tol) -> int:
    """Smallest horizon >= the requested one where the tail bound is < tol."""
    k = max(horizon, adj.k0 + _MIN_SERIES_TERMS)
    if not adj.geometric:
        k = max(k, adj.k0 + len(adj.h_seq))
    while True:
        if _tail_bound(adj, sched, decay, gamma_coeff, direct_coeff, k) <= tol:
            return k
        k = 2 * k + 1
        if k - adj.k0 > _MAX_SERIES_TERMS:
            raise DivergenceError("ledger tail bound did not converge",
                                  detail="max terms")


def _tail_bound(adj, sched, decay, gamma_coeff, direct_coeff, upto: int) -> float:
    """Bound on sum_{k > upto} of the worst-case ledger terms.

    Uses the norm chain gamma(j+1) <= max(decay, alpha)(1 + 1/j) gamma(j)
    shared with the series truncation.
    """
    k0 = adj.k0
    gamma = 0.0
    for j in range(upto - k0 + 1):
        gamma = decay * gamma + adj.h_at(j)
    total = 0.0
    k = upto + 1
    while True:
        j = k - k0
        term = (gamma_coeff * gamma + direct_coeff * adj.h_at(j)) / (sched.c * p_at(sched, k))
        total += term
        r = _ratio_bound(decay, adj, sched, k, j)
        if r < 1.0 and term * r / (1.0 - r) <= 0.01 * max(total, 1e-300):
            return total + term * r / (1.0 - r)
        gamma = decay * gamma + adj.h_at(j)
        k += 1
        if k - upto > _MAX_SERIES_TERMS:
            raise DivergenceError("tail bound did not converge", detail="max terms")
