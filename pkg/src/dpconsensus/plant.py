"""Agent dynamics, full- and reduced-order observers, distributed controller.

The reduced-order path works in output-canonical coordinates xbar = P x
with C P^-1 = [0 I_q]; the bottom q canonical states equal the measured
output.  Because the canonical update needs y(k+1), the reduced observer
estimate for step k+1 is finished at the start of step k+1, once y(k+1)
is measured and before the step-k+1 message is formed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import PreconditionError
from .matops import as_matrix

RANK_RTOL = 1e-9
CANONICAL_OUTPUT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LtiPlant:
    """Discrete-time agent (A, B, C): x+ = A x + B u, y = C x."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.a, "A")
        b = as_matrix(self.b, "B")
        c = as_matrix(self.c, "C")
        if a.shape[0] != a.shape[1]:
            raise PreconditionError(f"A must be square, got shape {a.shape}")
        n = a.shape[0]
        if b.shape[0] != n:
            raise PreconditionError(f"B has {b.shape[0]} rows, expected {n}")
        if c.shape[1] != n:
            raise PreconditionError(f"C has {c.shape[1]} columns, expected {n}")
        if c.shape[0] > n:
            raise PreconditionError(f"C has {c.shape[0]} rows, more than n={n}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def r(self) -> int:
        return self.b.shape[1]

    @property
    def q(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True, eq=False)
class FullObserver:
    """Estimation gain L of the full-order observer."""

    l: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "l", as_matrix(self.l, "L"))


@dataclass(frozen=True, eq=False)
class GainSet:
    """Feedback gain K; for the reduced path K = [K1 K2] split at n - q."""

    k: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "k", as_matrix(self.k, "K"))

    def split(self, q: int):
        n = self.k.shape[1]
        if not (0 < q <= n):
            raise PreconditionError(f"partition width q={q} invalid for K with {n} columns")
        return self.k[:, : n - q], self.k[:, n - q:]


@dataclass(frozen=True, eq=False)
class ReducedForm:
    """Canonical blocks of xbar = P x with output [0 I_q] xbar.

    ``lbar`` is the reduced estimation gain; it stays None until a gain
    is attached via :meth:`with_gain`.
    """

    p: np.ndarray
    a11: np.ndarray
    a12: np.ndarray
    a21: np.ndarray
    a22: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    lbar: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def q(self) -> int:
        return self.a22.shape[0]

    def with_gain(self, lbar) -> "ReducedForm":
        lb = as_matrix(lbar, "Lbar")
        nq, q = self.n - self.q, self.q
        if lb.shape != (nq, q):
            raise PreconditionError(f"Lbar must be {nq}x{q}, got {lb.shape}")
        return replace(self, lbar=lb)


def canonicalize_output(plant: LtiPlant, p=None) -> ReducedForm:
    """Similarity transform to output-canonical coordinates.

    The default P stacks n - q standard basis rows (complementary to the
    pivot columns of C) above C itself, which makes C P^-1 = [0 I_q]
    exact.  A user-supplied P is accepted if it satisfies the same
    identity to within ``CANONICAL_OUTPUT_TOL``.
    """
    n, q = plant.n, plant.q
    sv = np.linalg.svd(plant.c, compute_uv=False)
    if sv.size == 0 or sv[-1] <= RANK_RTOL * sv[0]:
        raise PreconditionError(
            f"C is rank deficient (singular values {sv}); reduced-order path needs rank(C) = q = {q}")

    if p is None:
        pivots = _pivot_columns(plant.c)
        free = [j for j in range(n) if j not in pivots]
        p_mat = np.vstack([np.eye(n)[free, :], plant.c]) if free else plant.c.copy()
    else:
        p_mat = as_matrix(p, "P")
        if p_mat.shape != (n, n):
            raise PreconditionError(f"P must be {n}x{n}, got {p_mat.shape}")

    try:
        p_inv = np.linalg.inv(p_mat)
    except np.linalg.LinAlgError as exc:
        raise PreconditionError(f"P is singular: {exc}") from exc

    c_canon = plant.c @ p_inv
    target = np.hstack([np.zeros((q, n - q)), np.eye(q)])
    if np.max(np.abs(c_canon - target)) > CANONICAL_OUTPUT_TOL:
        raise PreconditionError(
            "P does not put the output in canonical form: C P^-1 != [0 I_q]")

    a_bar = p_mat @ plant.a @ p_inv
    b_bar = p_mat @ plant.b
    nq = n - q
    return ReducedForm(
        p=p_mat,
        a11=a_bar[:nq, :nq], a12=a_bar[:nq, nq:],
        a21=a_bar[nq:, :nq], a22=a_bar[nq:, nq:],
        b1=b_bar[:nq, :], b2=b_bar[nq:, :],
    )


def _pivot_columns(c: np.ndarray) -> set:
    """Pivot columns of C via column-pivoted elimination."""
    m = c.copy()
    q, n = m.shape
    pivots = set()
    row = 0
    for _ in range(q):
        if row >= q:
            break
        j = int(np.argmax(np.abs(m[row, :])))
        if abs(m[row, j]) <= 1e-14:
            # try remaining rows for a usable pivot in this pass
            sub = np.abs(m[row:, :])
            r_off, j = np.unravel_index(int(np.argmax(sub)), sub.shape)
            if sub[r_off, j] <= 1e-14:
                break
            m[[row, row + r_off]] = m[[row + r_off, row]]
        pivots.add(int(j))
        for r in range(q):
            if r != row and abs(m[r, j]) > 0:
                m[r, :] -= m[r, j] / m[row, j] * m[row, :]
        row += 1
    return pivots


def full_observer_step(plant: LtiPlant, obs: FullObserver, xhat, u, y) -> np.ndarray:
    """One update of the full-order observer.

    xhat+ = A xhat + B u + L (y - C xhat); the estimation error then
    evolves autonomously as e+ = (A - L C) e regardless of u.
    """
    xhat = np.asarray(xhat, dtype=float)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    return plant.a @ xhat + plant.b @ u + obs.l @ (y - plant.c @ xhat)


def reduced_observer_step(rf: ReducedForm, xhat1, u, y_k, y_next) -> np.ndarray:
    """One update of the reduced-order observer.

    Consumes y(k) and y(k+1): the synthetic output ybar(k) = y(k+1)
    - A22 y(k) - B2 u(k) and drive ubar(k) = A12 y(k) + B1 u(k) feed
    xhat1+ = A11 xhat1 + ubar + Lbar (ybar - A21 xhat1).  The reduced
    error obeys e1+ = (A11 - Lbar A21) e1.
    """
    if rf.lbar is None:
        raise PreconditionError("reduced observer gain Lbar is not set")
    xhat1 = np.asarray(xhat1, dtype=float)
    u = np.asarray(u, dtype=float)
    y_k = np.asarray(y_k, dtype=float)
    y_next = np.asarray(y_next, dtype=float)
    ybar = y_next - rf.a22 @ y_k - rf.b2 @ u
    ubar = rf.a12 @ y_k + rf.b1 @ u
    return rf.a11 @ xhat1 + ubar + rf.lbar @ (ybar - rf.a21 @ xhat1)


def controller(gains: GainSet, received, own_estimate) -> np.ndarray:
    """Distributed control input u = K * sum_j (theta_j - own_estimate)."""
    own = np.asarray(own_estimate, dtype=float)
    acc = np.zeros_like(own)
    count = 0
    for theta in received:
        acc = acc + (np.asarray(theta, dtype=float) - own)
        count += 1
    if count == 0:
        return np.zeros(gains.k.shape[0])
    return gains.k @ acc
