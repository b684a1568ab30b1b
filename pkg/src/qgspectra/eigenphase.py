"""Eigenphase frames, spacing functions, branch tracking, phase velocities.

The eigenphases of the evolution operator are strictly increasing functions
of the wavenumber, with slope equal to the length expectation value of the
corresponding eigenvector.  That monotonicity is what the branch tracker
and every root bracket in this package rely on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _engine
from ._engine import TWO_PI, BranchMatchError, spacings_from_phases
from .graph import MetricGraph

__all__ = [
    "EigenphaseFrame",
    "BranchTrack",
    "BranchMatchError",
    "eigenphase_frame",
    "spacing_functions",
    "phase_velocity",
    "track_branches",
    "next_crossing_time",
    "branch_track_to_csv",
]


@dataclass(frozen=True)
class EigenphaseFrame:
    """Spectral data of one unitary evolution operator.

    phases : descending eigenphases in (0, 2*pi]; a phase of exactly 0 is
        reported as 2*pi
    vectors : orthonormal eigenvector columns aligned with `phases`
    velocities : length expectation value per eigenvector; each lies
        between the smallest and largest bond length
    point : the wavenumber or torus point the frame was computed at
    """

    phases: np.ndarray
    vectors: np.ndarray
    velocities: np.ndarray
    point: object = None


def eigenphase_frame(u, graph: MetricGraph, *, point=None,
                     unitary_tol: float = 1e-10) -> EigenphaseFrame:
    """Eigen-decompose a unitary into an ordered eigenphase frame.

    Uses a complex Schur decomposition, which for a (numerically) normal
    matrix yields an exactly orthonormal eigenbasis even at degeneracies.
    """
    u = np.asarray(u, dtype=complex)
    n = graph.dim
    if u.shape != (n, n):
        raise ValueError(f"matrix shape {u.shape} does not match directed-bond dimension {n}")
    dev = float(np.max(np.abs(u @ u.conj().T - np.eye(n))))
    if dev > unitary_tol:
        raise ValueError(f"matrix is not unitary: max deviation {dev:.3e} > {unitary_tol:.1e}")
    t, z = scipy.linalg.schur(u, output="complex")
    phases = np.mod(np.angle(np.diag(t)), TWO_PI)
    phases[phases == 0.0] = TWO_PI
    order = np.argsort(-phases)
    phases = phases[order]
    vectors = z[:, order]
    velocities = graph.doubled_lengths @ (np.abs(vectors) ** 2)
    return EigenphaseFrame(phases, vectors, velocities, point)


def spacing_functions(frame: EigenphaseFrame) -> np.ndarray:
    """Consecutive eigenphase gaps; the last entry wraps around 2*pi.

    The gaps are nonnegative and sum to exactly 2*pi.
    """
    return spacings_from_phases(frame.phases)


def phase_velocity(frame: EigenphaseFrame, graph: MetricGraph) -> np.ndarray:
    """Growth rate of each eigenphase under the flow, from its eigenvector."""
    return graph.doubled_lengths @ (np.abs(frame.vectors) ** 2)


@dataclass(frozen=True)
class BranchTrack:
    """Continuously labelled eigenphase branches over a wavenumber grid.

    thetas[k, j] is the unwrapped (monotone increasing) phase of branch j
    at lams[k]; vectors[k][:, j] the matching eigenvector, velocities[k, j]
    its length expectation value.
    """

    lams: np.ndarray
    thetas: np.ndarray
    vectors: np.ndarray
    velocities: np.ndarray


def track_branches(graph: MetricGraph, s0, lam_start: float, lam_end: float,
                   *, step=None) -> BranchTrack:
    """Follow all eigenphase branches from `lam_start` to `lam_end`.

    Branches at successive grid nodes are identified by maximal
    eigenvector overlap; each unwrapped increment is validated against
    the per-step bounds set by the extreme bond lengths.
    """
    if not lam_start < lam_end:
        raise ValueError("need lam_start < lam_end")
    step = _engine.check_step(graph, step)
    s0 = np.asarray(s0, dtype=complex)
    ld = graph.doubled_lengths
    n_nodes = max(int(np.ceil((lam_end - lam_start) / step)), 1) + 1
    lams = lam_start + np.arange(n_nodes) * step
    u = _engine.unitaries_at_phases(lams[:, None] * ld[None, :], s0)
    phases, vectors = _engine.eig_frames(u)

    dim = graph.dim
    thetas = np.empty((n_nodes, dim))
    vecs = np.empty((n_nodes, dim, dim), dtype=complex)
    thetas[0] = phases[0]
    vecs[0] = vectors[0]
    inc_tol = 1e-7
    lo_inc = graph.l_min * step - inc_tol
    hi_inc = graph.l_max * step + inc_tol
    for k in range(1, n_nodes):
        # vecs[k-1] is already in branch order, so perm[j] is the eig
        # column continuing branch j
        perm, _ = _engine.match_columns(vecs[k - 1], vectors[k], thetas[k - 1], phases[k])
        inc = np.mod(phases[k][perm] - thetas[k - 1], TWO_PI)
        inc[inc > 1.5 * np.pi] -= TWO_PI
        if np.any(inc < lo_inc) or np.any(inc > hi_inc):
            raise BranchMatchError(
                f"branch matching failed at lam = {lams[k]:.6g}: unwrapped "
                f"increment outside [{graph.l_min * step:.3g}, {graph.l_max * step:.3g}]"
            )
        thetas[k] = thetas[k - 1] + inc
        vecs[k] = vectors[k][:, perm]
    velocities = np.einsum("i,kij->kj", ld, np.abs(vecs) ** 2)
    return BranchTrack(lams, thetas, vecs, velocities)


def next_crossing_time(graph: MetricGraph, s0, x, *, step=None) -> float:
    """Time for the flow from torus point `x` to next hit the spectral surface.

    The largest eigenphase is tracked forward until it reaches 2*pi and the
    passage is refined by bracketed bisection.  A crossing always exists
    within 2*pi / L_min of the start, so the scan cannot come back empty.
    """
    horizon = TWO_PI / graph.l_min + _engine.default_step(graph)
    times = _engine.find_crossings_batch(
        graph, np.asarray(s0, dtype=complex), np.asarray(x, dtype=float),
        horizon, step=step, first_only=True,
    )[0]
    if times.size == 0:
        raise BranchMatchError("no surface crossing found within the guaranteed horizon")
    return float(times[0])


def branch_track_to_csv(track: BranchTrack, path) -> None:
    """Write a branch track as CSV rows (lambda, theta_1, ..., theta_2B)."""
    dim = track.thetas.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda"] + [f"theta_{j + 1}" for j in range(dim)])
        for lam, row in zip(track.lams, track.thetas):
            writer.writerow([f"{lam:.12g}"] + [f"{th:.12g}" for th in row])
