"""Batched eigenphase evaluation and monotone crossing detection.

Internal machinery shared by the branch tracker, the secular-equation
solver, and the torus-flow crossing scans.  Everything here works on the
family of unitaries ``U(t) = exp(1j*(p0 + t*Ld)) * s0`` where ``p0`` is the
doubled phase vector of a torus point and ``Ld`` the doubled bond lengths.
Each eigenphase of ``U(t)`` increases with t at a rate bounded between the
smallest and largest bond length, which gives guaranteed root brackets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .graph import MetricGraph, double_vector

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

# zero-crossing exclusion: roots at or below this time are discarded
EPS0 = 1e-8
# roots closer than this are one spectral point with multiplicity
CLUSTER_TOL = 1e-9
# bracket width at which refinement stops
REFINE_TOL = 1e-12
# phases closer than this get re-orthonormalized eigenvectors
DEGENERACY_GAP = 1e-8

_EIG_CHUNK = 16384
_SWEEP_NODE_BUDGET = 65536
# weight of the phase-proximity tie-breaker in overlap matching
_PHASE_TIE = 1e-6


class BranchMatchError(RuntimeError):
    """Eigenvector overlap matching failed to identify a permutation."""


def step_limit(graph: MetricGraph) -> float:
    """Largest sweep step for which per-branch unwrapping is unambiguous."""
    return np.pi / graph.l_max


def default_step(graph: MetricGraph) -> float:
    return 0.5 * step_limit(graph)


def check_step(graph: MetricGraph, step) -> float:
    if step is None:
        return default_step(graph)
    step = float(step)
    if step <= 0.0:
        raise ValueError("step must be positive")
    if step > step_limit(graph):
        raise ValueError(
            f"step {step:.6g} too large: must be <= pi/L_max = {step_limit(graph):.6g}"
        )
    return step


def unitaries_at_phases(phase_rows: np.ndarray, s0: np.ndarray) -> np.ndarray:
    """Stack of evolution operators for given doubled phase rows (n, 2B)."""
    return np.exp(1j * phase_rows)[:, :, None] * s0[None, :, :]


def _to_phase(eigvals: np.ndarray) -> np.ndarray:
    """Map eigenvalues to phases in (0, 2*pi]; a phase of 0 is reported as 2*pi."""
    th = np.mod(np.angle(eigvals), TWO_PI)
    th[th == 0.0] = TWO_PI
    return th


def eig_phases(u_stack: np.ndarray) -> np.ndarray:
    """Descending-sorted eigenphases in (0, 2*pi] for a stack of unitaries."""
    n = u_stack.shape[0]
    out = np.empty(u_stack.shape[:2])
    for lo in range(0, n, _EIG_CHUNK):
        hi = min(lo + _EIG_CHUNK, n)
        th = _to_phase(np.linalg.eigvals(u_stack[lo:hi]))
        th.sort(axis=1)
        out[lo:hi] = th[:, ::-1]
    return out


def eig_frames(u_stack: np.ndarray, orthonormalize: bool = False):
    """Eigenphases (descending) and aligned eigenvector columns for a stack.

    With ``orthonormalize`` the columns of near-degenerate phase clusters
    (circular gap below DEGENERACY_GAP) are replaced by an orthonormal
    basis of their span, so per-vector expectation values follow the
    sum-over-an-orthonormal-eigenspace-basis convention.
    """
    n, dim = u_stack.shape[:2]
    phases = np.empty((n, dim))
    vectors = np.empty((n, dim, dim), dtype=complex)
    for lo in range(0, n, _EIG_CHUNK):
        hi = min(lo + _EIG_CHUNK, n)
        w, v = np.linalg.eig(u_stack[lo:hi])
        th = _to_phase(w)
        order = np.argsort(-th, axis=1)
        phases[lo:hi] = np.take_along_axis(th, order, axis=1)
        vectors[lo:hi] = np.take_along_axis(v, order[:, None, :], axis=2)
    if orthonormalize:
        gaps = phases[:, :-1] - phases[:, 1:]
        wrap = phases[:, -1] + TWO_PI - phases[:, 0]
        flagged = np.nonzero(
            (np.min(gaps, axis=1) <= DEGENERACY_GAP) | (wrap <= DEGENERACY_GAP)
        )[0]
        for i in flagged:
            _orthonormalize_clusters(phases[i], vectors[i])
    return phases, vectors


def _orthonormalize_clusters(phases: np.ndarray, vectors: np.ndarray) -> None:
    """QR-orthonormalize eigenvector columns of phase clusters, in place.

    Clusters are maximal runs of descending-sorted phases with consecutive
    gaps below DEGENERACY_GAP, including the wrap-around pair near 0/2*pi.
    """
    dim = phases.shape[0]
    gaps = phases[:-1] - phases[1:]
    breaks = np.nonzero(gaps > DEGENERACY_GAP)[0]
    groups = np.split(np.arange(dim), breaks + 1)
    wrap_gap = phases[-1] + TWO_PI - phases[0]
    if wrap_gap <= DEGENERACY_GAP and len(groups) > 1:
        groups[0] = np.concatenate([groups[-1], groups[0]])
        groups = groups[:-1]
    for g in groups:
        if len(g) > 1:
            q, _ = np.linalg.qr(vectors[:, g])
            vectors[:, g] = q


def spacings_from_phases(phases: np.ndarray) -> np.ndarray:
    """Consecutive eigenphase spacings, including the 2*pi wrap-around term.

    Works on a single descending-sorted phase vector or a stack of them.
    """
    phases = np.asarray(phases)
    sig = np.empty_like(phases)
    sig[..., :-1] = phases[..., :-1] - phases[..., 1:]
    sig[..., -1] = phases[..., -1] + TWO_PI - phases[..., 0]
    return sig


def match_columns(prev_vectors, new_vectors, prev_phases, new_phases):
    """Permutation sending previous eigenvector columns to the new ones.

    Maximizes total overlap modulus; near-degenerate ties are broken by
    phase proximity.  Returns ``perm`` with new column ``perm[i]`` matched
    to previous column ``i``.
    """
    overlap = np.abs(prev_vectors.conj().T @ new_vectors)
    dist = np.abs(np.mod(new_phases[None, :] - prev_phases[:, None] + np.pi, TWO_PI) - np.pi)
    rows, cols = linear_sum_assignment(-(overlap - _PHASE_TIE * dist))
    perm = np.empty_like(cols)
    perm[rows] = cols
    return perm, overlap[rows, cols]


@dataclass
class _TaskBuffer:
    """Pending root refinements collected during a sweep (struct of arrays)."""

    line: list
    branch: list
    lo: list
    hi: list
    anchor_t: list
    anchor_theta: list
    target: list
    anchor_vec: list

    @classmethod
    def empty(cls):
        return cls([], [], [], [], [], [], [], [])

    def add(self, line, branch, lo, hi, anchor_t, anchor_theta, target, anchor_vec):
        self.line.append(line)
        self.branch.append(branch)
        self.lo.append(lo)
        self.hi.append(hi)
        self.anchor_t.append(anchor_t)
        self.anchor_theta.append(anchor_theta)
        self.target.append(target)
        self.anchor_vec.append(anchor_vec)

    def __len__(self):
        return len(self.lo)


def _sweep_chunk(graph, s0, p0s, t_maxes, step, tasks, line_offset, first_only,
                 pad_nodes):
    """Track branches over the grid of one chunk of lines, emitting root tasks."""
    l_min, l_max = graph.l_min, graph.l_max
    ld = graph.doubled_lengths
    dim = graph.dim
    n_lines = p0s.shape[0]
    n_nodes = np.maximum(np.ceil(np.asarray(t_maxes) / step).astype(int), 1) + 1 + pad_nodes

    flat_line = np.repeat(np.arange(n_lines), n_nodes)
    flat_t = np.concatenate([np.arange(k) * step for k in n_nodes])
    u = unitaries_at_phases(p0s[flat_line] + flat_t[:, None] * ld[None, :], s0)
    phases, vectors = eig_frames(u)

    inc_tol = 1e-7
    starts = np.concatenate([[0], np.cumsum(n_nodes)])
    for line in range(n_lines):
        base = starts[line]
        theta = phases[base].copy()          # unwrapped phase per branch
        cols = np.arange(dim)                # current eig column per branch
        target = np.full(dim, TWO_PI)
        done = False
        for k in range(1, n_nodes[line]):
            prev, cur = base + k - 1, base + k
            perm, _ = match_columns(
                vectors[prev], vectors[cur], phases[prev], phases[cur]
            )
            new_cols = perm[cols]
            inc = np.mod(phases[cur][new_cols] - phases[prev][cols], TWO_PI)
            inc[inc > 1.5 * np.pi] -= TWO_PI
            if np.any(inc < l_min * step - inc_tol) or np.any(inc > l_max * step + inc_tol):
                t_bad = flat_t[cur]
                raise BranchMatchError(
                    f"branch matching failed at t = {t_bad:.6g} "
                    f"(line {line_offset + line}): increment outside "
                    f"[{l_min * step:.3g}, {l_max * step:.3g}]"
                )
            new_theta = theta + inc
            crossed = np.nonzero(new_theta >= target)[0]
            for j in crossed:
                gap = target[j] - theta[j]
                lo = max(flat_t[prev], flat_t[prev] + gap / l_max)
                hi = min(flat_t[cur], flat_t[prev] + gap / l_min)
                hi = max(hi, lo)
                tasks.add(
                    line_offset + line, j, lo, hi,
                    flat_t[prev], theta[j], target[j],
                    vectors[prev][:, cols[j]].copy(),
                )
                target[j] += TWO_PI
                # the crossing at t = 0 of a start point already on the
                # surface refines to a bracket [0, 0] and is discarded
                # later, so it must not satisfy a first-crossing request
                if first_only and lo > EPS0:
                    done = True
            theta, cols = new_theta, new_cols
            if done:
                break


def refine_tasks(graph, s0, tasks: _TaskBuffer, p0_of_line, tol=REFINE_TOL):
    """Lipschitz-tightened bisection on unwrapped branch phases, batched.

    Every evaluation brackets the root two-sidedly: if the branch phase at
    time t falls short of the target by g, the root lies within
    [t + g/L_max, t + g/L_min].  The bracket never leaves the initial one,
    so convergence is at least as fast as plain bisection.
    """
    n = len(tasks)
    if n == 0:
        return np.empty(0)
    l_min, l_max = graph.l_min, graph.l_max
    ld = graph.doubled_lengths
    lo = np.array(tasks.lo)
    hi = np.array(tasks.hi)
    anchor_theta = np.array(tasks.anchor_theta)
    target = np.array(tasks.target)
    vec = np.array(tasks.anchor_vec)
    p0 = p0_of_line[np.array(tasks.line)]

    active = hi - lo > tol
    while np.any(active):
        idx = np.nonzero(active)[0]
        t_eval = 0.5 * (lo[idx] + hi[idx])
        u = unitaries_at_phases(p0[idx] + t_eval[:, None] * ld[None, :], s0)
        phases, vectors = eig_frames(u)
        ov = np.abs(np.einsum("ki,kij->kj", vec[idx].conj(), vectors))
        pick = np.argmax(ov, axis=1)
        rows = np.arange(len(idx))
        cand = phases[rows, pick]
        inc = np.mod(cand - anchor_theta[idx], TWO_PI)
        inc[inc > 1.5 * np.pi] -= TWO_PI
        theta_eval = anchor_theta[idx] + inc
        gap = target[idx] - theta_eval
        lo_new = t_eval + np.where(gap >= 0, gap / l_max, gap / l_min)
        hi_new = t_eval + np.where(gap >= 0, gap / l_min, gap / l_max)
        lo[idx] = np.maximum(lo[idx], lo_new)
        hi[idx] = np.minimum(hi[idx], hi_new)
        hi[idx] = np.maximum(hi[idx], lo[idx])
        anchor_theta[idx] = theta_eval
        vec[idx] = vectors[rows, :, pick]
        active[idx] = hi[idx] - lo[idx] > tol
    return 0.5 * (lo + hi)


def cluster_times(times: np.ndarray, tol: float = CLUSTER_TOL):
    """Group sorted crossing times into multiplicity clusters.

    Returns (distinct values, multiplicities, expanded values).
    """
    times = np.sort(np.asarray(times, dtype=float))
    if times.size == 0:
        return times, np.empty(0, dtype=int), times
    breaks = np.nonzero(np.diff(times) > tol)[0]
    groups = np.split(times, breaks + 1)
    distinct = np.array([g.mean() for g in groups])
    mult = np.array([len(g) for g in groups], dtype=int)
    expanded = np.repeat(distinct, mult)
    return distinct, mult, expanded


def find_crossings_batch(graph, s0, x0s, t_maxes, *, step=None, first_only=False,
                         eps0=EPS0, pad_nodes=1):
    """Crossing times of the torus flow with the spectral surface, per line.

    For each start point ``x0s[i]`` returns the multiplicity-expanded
    ascending times t in (eps0, t_maxes[i]] at which ``exp(1j*(x0+t*L))*s0``
    has eigenvalue 1.  With ``first_only`` only the earliest crossing per
    line is located.  ``pad_nodes`` extends the sweep beyond t_max so a
    root exactly on the boundary is bracketed even when rounding puts its
    phase a hair below target; samplers that never query boundary roots
    pass 0.
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    n_lines = x0s.shape[0]
    t_maxes = np.broadcast_to(np.asarray(t_maxes, dtype=float), (n_lines,))
    if np.any(t_maxes <= 0.0):
        raise ValueError("t_max must be positive")
    step = check_step(graph, step)
    s0 = np.asarray(s0, dtype=complex)
    p0s = np.mod(np.concatenate([x0s, x0s], axis=1), TWO_PI)

    # chunk lines so one sweep materializes a bounded stack of matrices
    nodes_per_line = np.maximum(np.ceil(t_maxes / step).astype(int), 1) + 1 + pad_nodes
    tasks = _TaskBuffer.empty()
    lo_line = 0
    while lo_line < n_lines:
        budget = _SWEEP_NODE_BUDGET
        hi_line = lo_line
        while hi_line < n_lines and (hi_line == lo_line or budget >= nodes_per_line[hi_line]):
            budget -= nodes_per_line[hi_line]
            hi_line += 1
        _sweep_chunk(
            graph, s0, p0s[lo_line:hi_line], t_maxes[lo_line:hi_line],
            step, tasks, lo_line, first_only, pad_nodes,
        )
        lo_line = hi_line
    roots = refine_tasks(graph, s0, tasks, p0s)

    task_line = np.array(tasks.line, dtype=int)
    order = np.argsort(task_line, kind="stable")
    sorted_lines = task_line[order]
    sorted_roots = roots[order]
    begins = np.searchsorted(sorted_lines, np.arange(n_lines), side="left")
    ends = np.searchsorted(sorted_lines, np.arange(n_lines), side="right")
    out = []
    for line in range(n_lines):
        t = np.sort(sorted_roots[begins[line]:ends[line]])
        t = t[(t > eps0) & (t <= t_maxes[line] + REFINE_TOL)]
        if first_only and t.size > 1:
            t = t[:1]
        _, _, expanded = cluster_times(t)
        out.append(expanded)
    return out
