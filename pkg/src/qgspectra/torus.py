"""Linear flow on the bond-phase torus and averages over its spectral surface.

The flow advances every bond phase at the rate of its bond length.  The
spectral surface is the set of torus points where the evolution operator
has eigenvalue 1; the crossing times of the flow started at the origin are
exactly the graph spectrum.  Functions defined on the surface can be
averaged two ways: along the crossings of a single flow line, or by Monte
Carlo integration of an epsilon-thickened extension over the whole torus.
The two agree for every start point and every thickening width, which is
what the residual report quantifies.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _engine
from ._engine import TWO_PI
from .graph import MetricGraph, double_vector
from .spectrum import LambdaSpectrum, solve_spectrum
from .statistics import StatResult, TestFunction

__all__ = [
    "SigmaPoint",
    "SurfaceFunction",
    "PropositionReport",
    "NotOnSigmaError",
    "flow_point",
    "on_sigma",
    "crossings_from",
    "constant_one",
    "first_spacing",
    "scaled_gap_after",
    "spacing_over_velocity",
    "fixed_vector_functional",
    "ergodic_average",
    "ergodic_average_multi",
    "thickened_average",
    "thickened_average_multi",
    "proposition_residual",
    "proposition_study",
]

log = logging.getLogger(__name__)

SIGMA_TOL = 1e-9
_MC_CHUNK = 4096


class NotOnSigmaError(ValueError):
    """A surface function was evaluated at a point off the spectral surface."""


def flow_point(x0, t: float, graph: MetricGraph) -> np.ndarray:
    """Advance a torus point by time `t` along the bond-length direction."""
    x0 = np.asarray(x0, dtype=float)
    return np.mod(x0 + t * graph.lengths, TWO_PI)


def on_sigma(x, graph: MetricGraph, s0, tol: float = SIGMA_TOL) -> bool:
    """Whether the evolution operator at torus point `x` has eigenvalue 1.

    Decided from the eigenphase nearest a multiple of 2*pi, not from the
    raw determinant, whose dynamic range is poorly conditioned.
    """
    p0 = double_vector(np.mod(np.asarray(x, dtype=float), TWO_PI))
    phases = _engine.eig_phases(
        _engine.unitaries_at_phases(p0[None, :], np.asarray(s0, dtype=complex))
    )[0]
    dist = np.minimum(phases % TWO_PI, TWO_PI - phases % TWO_PI)
    return bool(np.min(dist) <= tol)


def crossings_from(x0, graph: MetricGraph, s0, t_max: float, *, step=None,
                   want_vectors: bool = False) -> LambdaSpectrum:
    """Surface crossing times of the flow from `x0`, as a shifted spectrum.

    This is the spectrum solver applied with the scattering matrix phase
    shifted by the start point; crossings from the origin are the graph
    spectrum itself, via the identical code path.
    """
    return solve_spectrum(
        graph, s0, t_max, step=step, want_vectors=want_vectors,
        x0=np.asarray(x0, dtype=float),
    )


@dataclass(frozen=True)
class SigmaPoint:
    """Everything a surface function may consume at one crossing.

    A crossing of multiplicity m appears m times in a crossing list; the
    copies share the point but carry distinct ``copy_index`` values and
    their fixed-vector basis columns.  Consecutive-crossing gaps then give
    zero gaps between copies, so degenerate crossings contribute the sum
    over the eigenspace basis automatically.
    """

    x: np.ndarray
    phases: np.ndarray
    multiplicity: int
    copy_index: int
    mean_length: float
    next_crossing: float | None = None
    fixed_vectors: np.ndarray | None = None
    velocities: np.ndarray | None = None

    @property
    def sigma(self) -> np.ndarray:
        return _engine.spacings_from_phases(self.phases)

    @property
    def sigma1(self) -> float:
        return float(self.phases[0] - self.phases[1])


@dataclass(frozen=True)
class SurfaceFunction:
    """Bounded function on the spectral surface.

    evaluate : maps a :class:`SigmaPoint` to a real value
    bound : declared bound on |value|; exceeding it aborts the average
    needs_vectors / needs_next_crossing : drive what the averaging loops
        compute per crossing
    degeneracy_policy : "sum" evaluates each branch copy separately,
        "reject" raises at crossings with multiplicity above one
    """

    name: str
    bound: float
    evaluate: object
    needs_vectors: bool = False
    needs_next_crossing: bool = False
    degeneracy_policy: str = "sum"


def constant_one() -> SurfaceFunction:
    return SurfaceFunction("one", 1.0, lambda p: 1.0)


def first_spacing() -> SurfaceFunction:
    """The gap between the two largest eigenphases at the crossing point."""
    return SurfaceFunction("sigma1", TWO_PI, lambda p: p.sigma1)


def scaled_gap_after(h: TestFunction, graph: MetricGraph) -> SurfaceFunction:
    """Test function applied to the mean-length-normalized next crossing gap."""
    lbar = graph.mean_length

    def _eval(p: SigmaPoint) -> float:
        return float(h(lbar * p.next_crossing))

    return SurfaceFunction(f"h_gap[{h.name}]", h.bound, _eval, needs_next_crossing=True)


def spacing_over_velocity(h: TestFunction, graph: MetricGraph) -> SurfaceFunction:
    """Test function of the top spacing, weighted by the crossing branch speed."""

    def _eval(p: SigmaPoint) -> float:
        return float(h(p.sigma1) / p.velocities[p.copy_index])

    return SurfaceFunction(
        f"h_spacing[{h.name}]", h.bound / graph.l_min, _eval, needs_vectors=True
    )


def fixed_vector_functional(g, bound: float, name: str = "vector") -> SurfaceFunction:
    """Functional of the fixed-point eigenvector at the crossing.

    At a degenerate crossing each orthonormal basis vector is fed to `g`
    once, via the per-copy convention.
    """

    def _eval(p: SigmaPoint) -> float:
        return float(g(p.fixed_vectors[:, p.copy_index]))

    return SurfaceFunction(name, bound, _eval, needs_vectors=True)


def _group_copies(times: np.ndarray):
    """Copy index within each run of identical expanded crossing times."""
    copies = np.zeros(len(times), dtype=int)
    mults = np.ones(len(times), dtype=int)
    i = 0
    while i < len(times):
        j = i
        while j + 1 < len(times) and times[j + 1] == times[i]:
            j += 1
        m = j - i + 1
        mults[i:j + 1] = m
        copies[i:j + 1] = np.arange(m)
        i = j + 1
    return copies, mults


def _evaluate_lines(graph, s0, x0s, times_list, gaps_list, phis):
    """Evaluate surface functions at every crossing of a batch of flow lines.

    times_list[i] holds the multiplicity-expanded crossing times of line i,
    gaps_list[i] the matching next-crossing gaps (or None when no function
    needs them).  Returns one list of per-line value arrays per function.
    """
    needs_vec = any(p.needs_vectors for p in phis)
    flat_x = []
    meta = []
    for i, times in enumerate(times_list):
        copies, mults = _group_copies(times)
        gaps = gaps_list[i] if gaps_list is not None else [None] * len(times)
        for k, t in enumerate(times):
            flat_x.append(np.mod(x0s[i] + t * graph.lengths, TWO_PI))
            meta.append((i, copies[k], mults[k], gaps[k]))
    n = len(flat_x)
    counts = np.array([len(t) for t in times_list])
    if n == 0:
        return [[np.empty(0) for _ in times_list] for _ in phis], 0

    pts = np.asarray(flat_x)
    p0 = np.mod(np.concatenate([pts, pts], axis=1), TWO_PI)
    u = _engine.unitaries_at_phases(p0, np.asarray(s0, dtype=complex))
    if needs_vec:
        phases, vectors = _engine.eig_frames(u, orthonormalize=True)
    else:
        phases = _engine.eig_phases(u)
        vectors = None
    # the crossing phase may be computed fractionally past the wrap; pull
    # it back to the top so the sorted frame has its largest phase at 2*pi
    wrapped = phases < 1e-9
    if np.any(wrapped):
        phases = np.where(wrapped, phases + TWO_PI, phases)
        order = np.argsort(-phases, axis=1)
        phases = np.take_along_axis(phases, order, axis=1)
        if vectors is not None:
            vectors = np.take_along_axis(vectors, order[:, None, :], axis=2)

    off_sigma = np.abs(phases[:, 0] - TWO_PI) > SIGMA_TOL
    if np.any(off_sigma):
        k = int(np.nonzero(off_sigma)[0][0])
        raise NotOnSigmaError(
            f"crossing point {meta[k][0]} is off the surface: top phase "
            f"deviates by {abs(phases[k, 0] - TWO_PI):.3e}"
        )

    degenerate = sum(1 for (_, c, m, _) in meta if m > 1 and c == 0)
    if degenerate:
        if any(p.degeneracy_policy == "reject" for p in phis):
            raise NotOnSigmaError(f"{degenerate} degenerate crossings rejected by policy")
        log.warning("%d degenerate surface crossings evaluated by branch summation",
                    degenerate)

    ld = graph.doubled_lengths
    flat_vals = [np.empty(n) for _ in phis]
    for k in range(n):
        line, copy, mult, gap = meta[k]
        fixed = vel = None
        if needs_vec:
            fixed = vectors[k][:, :mult]
            vel = ld @ (np.abs(fixed) ** 2)
        point = SigmaPoint(
            x=pts[k], phases=phases[k], multiplicity=mult, copy_index=copy,
            mean_length=graph.mean_length, next_crossing=gap,
            fixed_vectors=fixed, velocities=vel,
        )
        for q, phi in enumerate(phis):
            val = phi.evaluate(point)
            if abs(val) > phi.bound + 1e-9:
                raise ValueError(
                    f"surface function {phi.name!r} exceeded its declared "
                    f"bound {phi.bound:.6g}: value {val:.6g}"
                )
            flat_vals[q][k] = val

    splits = np.cumsum(counts)[:-1]
    values = [np.split(flat_vals[q], splits) for q in range(len(phis))]
    return values, degenerate


def ergodic_average_multi(graph, s0, phis, x0, n_crossings: int, *,
                          step=None) -> list:
    """Running means of surface functions over the first crossings of one line."""
    if n_crossings < 1:
        raise ValueError("need at least one crossing")
    x0 = np.asarray(x0, dtype=float)
    needs_gap = any(p.needs_next_crossing for p in phis)
    needed = n_crossings + 1 if needs_gap else n_crossings
    t_max = (needed + 4 * graph.dim) * np.pi / graph.total_length
    times = _engine.find_crossings_batch(graph, np.asarray(s0, complex), x0,
                                         t_max, step=step)[0]
    while len(times) < needed:
        t_max *= 1.5
        times = _engine.find_crossings_batch(graph, np.asarray(s0, complex), x0,
                                             t_max, step=step)[0]
    gaps = None
    if needs_gap:
        gaps = np.diff(times)[:n_crossings]
    times = times[:n_crossings]
    values, _ = _evaluate_lines(graph, s0, x0[None, :], [times],
                                None if gaps is None else [gaps], phis)
    out = []
    for q in range(len(phis)):
        v = values[q][0]
        stderr = float(np.std(v, ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
        out.append(StatResult(float(np.mean(v)), len(v), stderr=stderr))
    return out


def ergodic_average(graph: MetricGraph, s0, phi: SurfaceFunction, x0,
                    n_crossings: int, *, step=None) -> StatResult:
    """Mean of a surface function over the first `n_crossings` crossings."""
    return ergodic_average_multi(graph, s0, [phi], x0, n_crossings, step=step)[0]


def _thickened_exact_circle(graph, s0, phis):
    """Exact surface average for a one-bond graph, whose torus is a circle.

    The surface is a finite set visited once per flow period, so the
    thickened integral reduces to the plain mean over those points and the
    Monte Carlo estimate is replaced by exact enumeration.
    """
    period = TWO_PI / graph.lengths[0]
    times = _engine.find_crossings_batch(
        graph, np.asarray(s0, complex), np.zeros(1), 2.0 * period)[0]
    in_period = times[times <= period + 1e-12]
    k = len(in_period)
    if k == 0 or len(times) <= k:
        raise RuntimeError("one-bond surface scan found no crossings")
    gaps = np.diff(times[:k + 1])
    values, _ = _evaluate_lines(graph, s0, np.zeros((1, 1)), [in_period], [gaps], phis)
    return [StatResult(float(np.mean(values[q][0])), k, stderr=0.0)
            for q in range(len(phis))]


def thickened_average_multi(graph, s0, phis, eps: float, n_samples: int,
                            seed: int, *, step=None, workers: int = 1) -> list:
    """Monte Carlo torus averages of flow-thickened surface functions.

    Uniform sample points contribute the sum of function values at all
    surface crossings within half a thickening width along the flow; the
    normalization by the mean crossing density and the thickening width
    makes the estimate directly comparable to the ergodic average.
    """
    if not 0.0 < eps < TWO_PI / graph.l_max:
        raise ValueError(
            f"eps must lie in (0, 2*pi/L_max) = (0, {TWO_PI / graph.l_max:.6g})"
        )
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if graph.n_bonds == 1:
        return _thickened_exact_circle(graph, s0, phis)

    s0 = np.asarray(s0, dtype=complex)
    needs_gap = any(p.needs_next_crossing for p in phis)
    seg_step = min(_engine.default_step(graph), eps)
    ext_horizon = TWO_PI / graph.l_min + _engine.default_step(graph)
    dbar = graph.total_length / np.pi

    n_chunks = (n_samples + _MC_CHUNK - 1) // _MC_CHUNK
    children = np.random.SeedSequence(seed).spawn(n_chunks)

    def _one_chunk(c):
        rng = np.random.default_rng(children[c])
        m = min(_MC_CHUNK, n_samples - c * _MC_CHUNK)
        x = rng.uniform(0.0, TWO_PI, size=(m, graph.n_bonds))
        y = np.mod(x - 0.5 * eps * graph.lengths[None, :], TWO_PI)
        times = _engine.find_crossings_batch(graph, s0, y, eps, step=seg_step,
                                             pad_nodes=0)
        gaps = None
        if needs_gap:
            gaps = []
            hit = [i for i, t in enumerate(times) if len(t)]
            ends = np.mod(y[hit] + eps * graph.lengths[None, :], TWO_PI) if hit else None
            nxt = {}
            if hit:
                firsts = _engine.find_crossings_batch(
                    graph, s0, ends, ext_horizon, step=step, first_only=True,
                    pad_nodes=0)
                for idx, f in zip(hit, firsts):
                    nxt[idx] = eps + float(f[0])
            for i, t in enumerate(times):
                if len(t) == 0:
                    gaps.append(np.empty(0))
                else:
                    g = np.empty(len(t))
                    g[:-1] = np.diff(t)
                    g[-1] = nxt[i] - t[-1]
                    gaps.append(g)
        values, degenerate = _evaluate_lines(graph, s0, y, times, gaps, phis)
        per_sample = [np.array([v.sum() for v in values[q]]) for q in range(len(phis))]
        sums = np.array([p.sum() for p in per_sample])
        sums_sq = np.array([(p ** 2).sum() for p in per_sample])
        return sums, sums_sq, m, degenerate

    results = [None] * n_chunks
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for c, res in enumerate(pool.map(_one_chunk, range(n_chunks))):
                results[c] = res
    else:
        for c in range(n_chunks):
            results[c] = _one_chunk(c)

    n_phi = len(phis)
    total = np.zeros(n_phi)
    total_sq = np.zeros(n_phi)
    count = 0
    degenerate_total = 0
    for s, sq, m, deg in results:
        total += s
        total_sq += sq
        count += m
        degenerate_total += deg
    if degenerate_total:
        log.warning("thickened average hit %d degenerate crossings", degenerate_total)

    out = []
    norm = dbar * eps
    for q in range(n_phi):
        mean = total[q] / count
        if count > 1:
            var = max((total_sq[q] - count * mean ** 2) / (count - 1), 0.0)
            stderr = float(np.sqrt(var / count) / norm)
        else:
            stderr = 0.0
        out.append(StatResult(float(mean / norm), count, stderr=stderr))
    return out


def thickened_average(graph: MetricGraph, s0, phi: SurfaceFunction, eps: float,
                      n_samples: int, seed: int, *, step=None,
                      workers: int = 1) -> StatResult:
    """Monte Carlo estimate of the thickened torus average of one function."""
    return thickened_average_multi(
        graph, s0, [phi], eps, n_samples, seed, step=step, workers=workers,
    )[0]


@dataclass(frozen=True)
class PropositionReport:
    """Ergodic versus thickened averages of one surface function.

    residuals[i, j] is the absolute difference between the ergodic average
    from start point i and the thickened average at width j.
    """

    phi_name: str
    x0s: np.ndarray
    epsilons: tuple
    ergodic: tuple
    thickened: tuple
    residuals: np.ndarray

    @property
    def estimates(self):
        return [r.estimate for r in self.ergodic] + [r.estimate for r in self.thickened]


def proposition_study(graph, s0, phis, x0s, epsilons, n_crossings: int,
                      mc_samples: int, seed: int, *, step=None,
                      workers: int = 1) -> list:
    """Residual matrices for several surface functions, sharing all scans."""
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    ergodic = [ergodic_average_multi(graph, s0, phis, x0, n_crossings, step=step)
               for x0 in x0s]
    thickened = [
        thickened_average_multi(graph, s0, phis, eps, mc_samples, seed + j,
                                step=step, workers=workers)
        for j, eps in enumerate(epsilons)
    ]
    reports = []
    for q, phi in enumerate(phis):
        erg = tuple(ergodic[i][q] for i in range(len(x0s)))
        thk = tuple(thickened[j][q] for j in range(len(epsilons)))
        res = np.array([[abs(e.estimate - t.estimate) for t in thk] for e in erg])
        reports.append(PropositionReport(
            phi_name=phi.name, x0s=x0s, epsilons=tuple(epsilons),
            ergodic=erg, thickened=thk, residuals=res,
        ))
    return reports


def proposition_residual(graph: MetricGraph, s0, phi: SurfaceFunction, x0s,
                         epsilons, n_crossings: int, mc_samples: int,
                         seed: int, *, step=None, workers: int = 1) -> PropositionReport:
    """Ergodic-versus-thickened residual matrix for one surface function."""
    return proposition_study(
        graph, s0, [phi], x0s, epsilons, n_crossings, mc_samples, seed,
        step=step, workers=workers,
    )[0]
