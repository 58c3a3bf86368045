"""Consensus/observer condition checks, contraction moduli, and rates.

The consensus spectral radius is always computed by a generic dense
eigensolve of the full (N-1)n stacked matrix; block-diagonal shortcuts
appear only in tests as independent oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, PreconditionError
from .graphs import Graph, degrees, laplacian, spectrum
from .matops import is_schur, induced_one_norm, kron, spectral_radius
from .noise import NoiseSchedule, is_summable
from .plant import FullObserver, GainSet, LtiPlant, ReducedForm


@dataclass(frozen=True)
class ConditionReport:
    """Spectral radii and noise-summability behind the consensus theorem."""

    rho_observer: float
    rho_consensus: float
    summable_noise: tuple
    passed: bool


@dataclass(frozen=True)
class ContractionModuli:
    """Per-agent 1-norm contraction moduli of the deviation dynamics.

    Full path: l_i = ||A - L C - d_i B K||_1.  Reduced path:
    v_i = ||A11 - d_i B1 K1||_1 and w_i = ||A12 - d_i B1 K2||_1.
    """

    l: tuple | None = None
    v: tuple | None = None
    w: tuple | None = None


@dataclass(frozen=True, eq=False)
class TransformedSystem:
    """Noise-to-consensus dynamics in Laplacian eigencoordinates.

    xi+ = R1 xi + R2 psi + Mtilde eta, psi+ = R3 psi, where xi stacks the
    nontrivial transformed consensus errors and psi the transformed
    observer errors.  Mtilde multiplies the full stacked noise vector.
    """

    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    mtilde: np.ndarray
    psi_basis: np.ndarray  # orthonormal N x N, first column 1/sqrt(N)


def consensus_spectral_radius(plant: LtiPlant, gains: GainSet, graph: Graph) -> float:
    """rho(I_{N-1} (x) A - Lambda (x) B K) over the nonzero Laplacian spectrum."""
    spec = _connected_spectrum(graph)
    lam = np.diag(spec.nonzero)
    m = kron(np.eye(graph.n - 1), plant.a) - kron(lam, plant.b @ gains.k)
    return spectral_radius(m, "consensus dynamics matrix")


def check_full_conditions(plant: LtiPlant, obs: FullObserver, gains: GainSet,
                          graph: Graph, schedules) -> ConditionReport:
    """Consensus conditions for the full-order observer path."""
    rho_obs = spectral_radius(plant.a - obs.l @ plant.c, "A - L C")
    return _report(rho_obs, plant, gains, graph, schedules)


def check_reduced_conditions(rf: ReducedForm, gains: GainSet, graph: Graph,
                             schedules, plant: LtiPlant) -> ConditionReport:
    """Consensus conditions for the reduced-order observer path.

    The consensus radius is the same computation as the full path (same
    A, B, K); only the observer radius changes to rho(A11 - Lbar A21).
    """
    if rf.lbar is None:
        raise PreconditionError("reduced form has no gain Lbar attached")
    rho_obs = spectral_radius(rf.a11 - rf.lbar @ rf.a21, "A11 - Lbar A21")
    return _report(rho_obs, plant, gains, graph, schedules)


def _report(rho_obs, plant, gains, graph, schedules) -> ConditionReport:
    rho_cons = consensus_spectral_radius(plant, gains, graph)
    summable = tuple(bool(is_summable(s)) for s in schedules)
    passed = is_schur(rho_obs) and is_schur(rho_cons) and all(summable)
    return ConditionReport(rho_observer=float(rho_obs), rho_consensus=float(rho_cons),
                           summable_noise=summable, passed=passed)


def contraction_moduli_full(plant: LtiPlant, obs: FullObserver, gains: GainSet,
                            degree_seq) -> ContractionModuli:
    core = plant.a - obs.l @ plant.c
    bk = plant.b @ gains.k
    l = tuple(induced_one_norm(core - float(d) * bk) for d in degree_seq)
    return ContractionModuli(l=l)


def contraction_moduli_reduced(rf: ReducedForm, gains: GainSet,
                               degree_seq) -> ContractionModuli:
    k1, k2 = gains.split(rf.q)
    b1k1 = rf.b1 @ k1
    b1k2 = rf.b1 @ k2
    v = tuple(induced_one_norm(rf.a11 - float(d) * b1k1) for d in degree_seq)
    w = tuple(induced_one_norm(rf.a12 - float(d) * b1k2) for d in degree_seq)
    return ContractionModuli(v=v, w=w)


def theoretical_ms_rate(rho_observer: float, rho_consensus: float,
                        schedules) -> float:
    """Mean-square convergence rate max(rho_consensus, rho_observer, max g_i).

    Stated for exponential scale schedules only; agents with c = 0 carry
    no noise and contribute g = 0.
    """
    g_max = 0.0
    for s in schedules:
        if s.c == 0:
            continue
        if s.kind != "exponential":
            raise PreconditionError(
                "rate theorem requires exponential scales b(k) = c * g**k")
        g_max = max(g_max, float(s.g))
    return max(float(rho_consensus), float(rho_observer), g_max)


def rate_components_full(plant, obs, gains, graph):
    rho_obs = spectral_radius(plant.a - obs.l @ plant.c, "A - L C")
    return rho_obs, consensus_spectral_radius(plant, gains, graph)


def rate_components_reduced(rf, gains, graph, plant):
    if rf.lbar is None:
        raise PreconditionError("reduced form has no gain Lbar attached")
    rho_obs = spectral_radius(rf.a11 - rf.lbar @ rf.a21, "A11 - Lbar A21")
    return rho_obs, consensus_spectral_radius(plant, gains, graph)


def build_transformed(plant: LtiPlant, obs: FullObserver, gains: GainSet,
                      graph: Graph) -> TransformedSystem:
    """Assemble R1, R2, R3 and the noise map in Laplacian eigencoordinates.

    Psi's first column is fixed to 1/sqrt(N); the remaining columns are
    orthonormal Laplacian eigenvectors with each column's first nonzero
    component made positive for reproducibility.
    """
    spec = _connected_spectrum(graph)
    n_nodes = graph.n
    lap = laplacian(graph).astype(float)
    try:
        eigvals, eigvecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Laplacian eigendecomposition failed: {exc}") from exc
    order = np.argsort(eigvals)
    eigvecs = eigvecs[:, order]
    psi = eigvecs.copy()
    psi[:, 0] = 1.0 / np.sqrt(n_nodes)
    for j in range(n_nodes):
        col = psi[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if nz.size and col[nz[0]] < 0:
            psi[:, j] = -col

    check = psi.T @ lap @ psi
    if np.max(np.abs(check - np.diag(np.diag(check)))) > 1e-8:
        raise NumericError("Laplacian eigenvectors failed to diagonalize L_G")

    phi = psi[:, 1:]
    a_g = graph.adjacency.astype(float)
    j_n = np.full((n_nodes, n_nodes), 1.0 / n_nodes)
    bk = plant.b @ gains.k
    lam = np.diag(spec.nonzero)
    n_eye = np.eye(n_nodes - 1)
    return TransformedSystem(
        r1=kron(n_eye, plant.a) - kron(lam, bk),
        r2=kron(lam, bk),
        r3=kron(n_eye, plant.a - obs.l @ plant.c),
        mtilde=kron(phi.T @ (a_g - j_n @ a_g), bk),
        psi_basis=psi,
    )


def transformed_step(ts: TransformedSystem, xi, psi, eta_full):
    """One step of the eigencoordinate dynamics with the full noise stack."""
    xi_next = ts.r1 @ xi + ts.r2 @ psi + ts.mtilde @ eta_full
    return xi_next, ts.r3 @ psi


def xi_projection(ts: TransformedSystem, x_stack: np.ndarray, n: int) -> np.ndarray:
    """Project stacked agent states onto the nontrivial consensus coordinates."""
    phi = ts.psi_basis[:, 1:]
    return kron(phi.T, np.eye(n)) @ x_stack


def _connected_spectrum(graph: Graph):
    spec = spectrum(graph)
    if not spec.connected:
        raise PreconditionError(
            f"graph is not connected (lambda_2 = {spec.fiedler:.3e})")
    return spec


def moduli_for(plant: LtiPlant, gains: GainSet, graph: Graph,
               obs: FullObserver | None = None,
               rf: ReducedForm | None = None) -> ContractionModuli:
    """Contraction moduli for whichever observer path is configured."""
    deg = degrees(graph)
    if rf is not None:
        return contraction_moduli_reduced(rf, gains, deg)
    if obs is None:
        raise PreconditionError("need either a full observer or a reduced form")
    return contraction_moduli_full(plant, obs, gains, deg)
