"""Spacing functionals and eigenvector moment estimators for both spectra.

Two families of statistics are implemented: test functions averaged over
normalized level gaps of the wavenumber spectrum versus eigenphase gaps of
the evolution operator, and moments of observable expectation values taken
over fixed-point eigenvectors, over eigenvectors along the wavenumber axis,
and over a random-phase ensemble.  The estimators are built so their
agreement can be checked at matched truncations with explicit dispersion
or quadrature diagnostics.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _engine
from ._engine import TWO_PI
from .graph import GraphError, MetricGraph, validate_observable
from .spectrum import LambdaSpectrum, solve_spectrum

__all__ = [
    "StatResult",
    "TestFunction",
    "EquivalenceRow",
    "constant_function",
    "gaussian_bump",
    "smoothed_indicator",
    "poly_gaussian",
    "test_function_from_string",
    "lambda_spacing_functional",
    "theta_spacing_functional",
    "spacing_equivalence_study",
    "spacing_histogram",
    "evec_moment_spectral",
    "evec_moment_lambda_average",
    "evec_moment_ensemble",
    "moment_three_way",
]

_MC_CHUNK = 8192
_QUAD_CHUNK = 16384


@dataclass(frozen=True)
class StatResult:
    """Estimate of a spectral functional with its dispersion.

    stderr is a standard error where the estimator is stochastic or an
    average of fluctuating terms; diagnostic carries a deterministic
    truncation or quadrature refinement difference where one applies.
    """

    estimate: float
    count: int
    stderr: float | None = None
    diagnostic: float | None = None


@dataclass(frozen=True)
class TestFunction:
    """Bounded continuous real test function on [0, infinity)."""

    name: str
    bound: float
    fn: object

    def __call__(self, s):
        return self.fn(np.asarray(s, dtype=float))


def constant_function(value: float = 1.0) -> TestFunction:
    return TestFunction(f"const({value:g})", abs(value),
                        lambda s: np.full_like(s, value))


def gaussian_bump(center: float = 1.0, width: float = 0.5) -> TestFunction:
    return TestFunction(
        f"gaussian(c={center:g},w={width:g})", 1.0,
        lambda s: np.exp(-((s - center) ** 2) / (2.0 * width ** 2)),
    )


def smoothed_indicator(lo: float, hi: float, sharpness: float = 0.05) -> TestFunction:
    return TestFunction(
        f"indicator(lo={lo:g},hi={hi:g},s={sharpness:g})", 1.0,
        lambda s: 0.5 * (np.tanh((s - lo) / sharpness) - np.tanh((s - hi) / sharpness)),
    )


def poly_gaussian(power: int = 2, width: float = 1.0) -> TestFunction:
    bound = (power * width ** 2) ** (power / 2.0) * np.exp(-power / 2.0) if power else 1.0
    return TestFunction(
        f"polygauss(k={power:d},w={width:g})", bound,
        lambda s: s ** power * np.exp(-(s ** 2) / (2.0 * width ** 2)),
    )


def test_function_from_string(text: str) -> TestFunction:
    """Parse 'name:key=val,...' test function syntax used by the CLI."""
    name, _, args = text.partition(":")
    kv = {}
    if args:
        for item in args.split(","):
            k, _, v = item.partition("=")
            if not _:
                raise ValueError(f"malformed test function argument {item!r}")
            kv[k.strip()] = float(v)
    name = name.strip().lower()
    try:
        if name == "one":
            return constant_function(kv.get("value", 1.0))
        if name == "gaussian":
            return gaussian_bump(kv.get("c", 1.0), kv.get("w", 0.5))
        if name == "indicator":
            return smoothed_indicator(kv["lo"], kv["hi"], kv.get("s", 0.05))
        if name == "polygauss":
            return poly_gaussian(int(kv.get("k", 2)), kv.get("w", 1.0))
    except KeyError as exc:
        raise ValueError(f"test function {name!r} is missing argument {exc}") from exc
    raise ValueError(f"unknown test function {name!r}")


def lambda_spacing_functional(spectrum: LambdaSpectrum, graph: MetricGraph,
                              h: TestFunction, r: int = 1) -> StatResult:
    """Average of `h` over mean-length-normalized r-th neighbor level gaps.

    Degenerate levels enter with multiplicity, contributing zero gaps.
    The diagnostic reports how much the estimate moves when the last tenth
    of the spectrum is dropped.
    """
    if r < 1:
        raise ValueError("spacing order r must be >= 1")
    values = spectrum.values
    if len(values) < r + 1:
        raise ValueError(f"too few eigenvalues: need more than {r}, have {len(values)}")
    terms = h(graph.mean_length * (values[r:] - values[:-r]))
    n = len(terms)
    estimate = float(np.mean(terms))
    n90 = max(int(0.9 * n), 1)
    diagnostic = abs(estimate - float(np.mean(terms[:n90])))
    stderr = float(np.std(terms, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return StatResult(estimate, n, stderr=stderr, diagnostic=diagnostic)


def _theta_quadrature_step(graph, step):
    limit = np.pi / (4.0 * graph.l_max)
    if step is None:
        return limit
    step = float(step)
    if step <= 0.0:
        raise ValueError("step must be positive")
    if step > limit:
        raise ValueError(
            f"step too coarse: quadrature step must be <= pi/(4*L_max) = {limit:.6g}"
        )
    return step


def _theta_integrand_mean(graph, s0, h, capital_lambda, step):
    """Midpoint-rule mean of the eigenphase gap statistic over wavenumber."""
    m = max(int(np.ceil(capital_lambda / step)), 1)
    width = capital_lambda / m
    ld = graph.doubled_lengths
    total = 0.0
    for lo in range(0, m, _QUAD_CHUNK):
        hi = min(lo + _QUAD_CHUNK, m)
        lams = (np.arange(lo, hi) + 0.5) * width
        phases = _engine.eig_phases(
            _engine.unitaries_at_phases(lams[:, None] * ld[None, :], s0))
        sig = _engine.spacings_from_phases(phases)
        total += float(np.sum(np.mean(h(sig), axis=1)))
    return total / m, m


def theta_spacing_functional(graph: MetricGraph, s0, h: TestFunction,
                             capital_lambda: float, step=None) -> StatResult:
    """Wavenumber average of `h` over all eigenphase gaps of one operator.

    Composite midpoint quadrature on a uniform grid; the integrand is
    piecewise smooth with kinks at surface crossings, which midpoint nodes
    avoid almost surely.  The diagnostic is the change under step halving.
    """
    if capital_lambda <= 0.0:
        raise ValueError("capital_lambda must be positive")
    step = _theta_quadrature_step(graph, step)
    s0 = np.asarray(s0, dtype=complex)
    est, m = _theta_integrand_mean(graph, s0, h, capital_lambda, step)
    est_half, _ = _theta_integrand_mean(graph, s0, h, capital_lambda, step / 2.0)
    return StatResult(float(est), m, stderr=None, diagnostic=abs(est - est_half))


def _first_n_levels(graph, s0, n_levels, step=None):
    """Expanded spectrum truncated to exactly the first n levels."""
    lam_max = (n_levels + 4 * graph.dim) * np.pi / graph.total_length
    spec = solve_spectrum(graph, s0, lam_max, step=step)
    while spec.n_levels < n_levels:
        lam_max *= 1.5
        spec = solve_spectrum(graph, s0, lam_max, step=step)
    return spec.values[:n_levels]


@dataclass(frozen=True)
class EquivalenceRow:
    """One bond-length spread in the spacing equivalence study."""

    delta: float
    lengths: np.ndarray
    p_lambda: StatResult
    p_theta: StatResult
    difference: float


def spacing_equivalence_study(graph: MetricGraph, s0, deltas, h: TestFunction,
                              n_levels: int, *, step=None,
                              theta_step=None) -> list:
    """Both spacing functionals along a family of shrinking length spreads.

    The supplied graph fixes the topology and the direction of the length
    deviations: its lengths correspond to the first (largest) delta, and
    smaller deltas scale the deviation from the mean length
    proportionally.  The total length is the same for every member, so the
    wavenumber ranges stay matched.
    """
    deltas = [float(d) for d in deltas]
    if any(d <= 0.0 for d in deltas):
        raise GraphError("degenerate equal lengths: every delta must be positive")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be strictly decreasing")
    direction = graph.lengths - graph.mean_length
    if np.unique(graph.lengths).size != graph.n_bonds:
        raise GraphError("direction vector must have distinct components")
    rows = []
    for d in deltas:
        lengths = graph.mean_length + (d / deltas[0]) * direction
        g = graph.with_lengths(lengths)
        values = _first_n_levels(g, s0, n_levels, step=step)
        fake = LambdaSpectrum(values, values, np.ones(len(values), dtype=int),
                              None, float(values[-1]), "truncated")
        p_lam = lambda_spacing_functional(fake, g, h)
        capital_lambda = n_levels * np.pi / g.total_length
        p_th = theta_spacing_functional(g, s0, h, capital_lambda, step=theta_step)
        rows.append(EquivalenceRow(
            delta=d, lengths=lengths, p_lambda=p_lam, p_theta=p_th,
            difference=abs(p_lam.estimate - p_th.estimate),
        ))
    return rows


def spacing_histogram(spectrum: LambdaSpectrum, graph: MetricGraph,
                      r: int = 1, bins: int = 40):
    """Histogram of normalized r-th neighbor gaps: (edges, counts, density)."""
    values = spectrum.values
    if len(values) < r + 1:
        raise ValueError("too few eigenvalues for a histogram")
    gaps = graph.mean_length * (values[r:] - values[:-r])
    counts, edges = np.histogram(gaps, bins=bins)
    widths = np.diff(edges)
    density = counts / (counts.sum() * widths)
    return edges, counts, density


def _expectations(a, vectors):
    """Real expectation values of observable `a` in the given column vectors."""
    return np.einsum("ij,jk,ik->k", vectors.conj(), a, vectors).real


def evec_moment_spectral(spectrum: LambdaSpectrum, graph: MetricGraph,
                         a, m: int) -> StatResult:
    """Length-weighted moment of an observable over fixed-point eigenvectors.

    Each level contributes the m-th power of its expectation value divided
    by the normalized length expectation of its eigenvector; degenerate
    levels contribute every orthonormal basis vector separately.
    """
    if m < 0:
        raise ValueError("moment order must be >= 0")
    validate_observable(a, graph)
    if spectrum.vectors is None:
        raise ValueError("spectrum was computed without eigenvectors")
    a = np.asarray(a, dtype=complex)
    ld = graph.doubled_lengths
    lbar = graph.mean_length
    terms = []
    for basis in spectrum.vectors:
        a_n = _expectations(a, basis)
        l_n = ld @ (np.abs(basis) ** 2)
        terms.append(a_n ** m * (lbar / l_n))
    terms = np.concatenate(terms) if terms else np.empty(0)
    n = len(terms)
    if n == 0:
        raise ValueError("empty spectrum")
    estimate = float(np.mean(terms))
    n90 = max(int(0.9 * n), 1)
    diagnostic = abs(estimate - float(np.mean(terms[:n90])))
    stderr = float(np.std(terms, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return StatResult(estimate, n, stderr=stderr, diagnostic=diagnostic)


def _moment_integrand_mean(graph, s0, a, m, capital_lambda, step):
    mm = max(int(np.ceil(capital_lambda / step)), 1)
    width = capital_lambda / mm
    ld = graph.doubled_lengths
    total = 0.0
    for lo in range(0, mm, _QUAD_CHUNK):
        hi = min(lo + _QUAD_CHUNK, mm)
        lams = (np.arange(lo, hi) + 0.5) * width
        u = _engine.unitaries_at_phases(lams[:, None] * ld[None, :], s0)
        _, vectors = _engine.eig_frames(u, orthonormalize=True)
        w = np.einsum("nij,njk->nik", np.broadcast_to(a, (hi - lo, *a.shape)), vectors)
        vals = np.sum(vectors.conj() * w, axis=1).real
        total += float(np.sum(np.mean(vals ** m, axis=1)))
    return total / mm, mm


def evec_moment_lambda_average(graph: MetricGraph, s0, a, m: int,
                               capital_lambda: float, step=None) -> StatResult:
    """Wavenumber average of the m-th moment of an observable expectation.

    Near-degenerate frames use an orthonormal eigenspace basis, with the
    power applied per basis vector before summing.  The diagnostic is the
    change under quadrature step halving.
    """
    if m < 0:
        raise ValueError("moment order must be >= 0")
    if capital_lambda <= 0.0:
        raise ValueError("capital_lambda must be positive")
    validate_observable(a, graph)
    step = _theta_quadrature_step(graph, step)
    s0 = np.asarray(s0, dtype=complex)
    a = np.asarray(a, dtype=complex)
    est, mm = _moment_integrand_mean(graph, s0, a, m, capital_lambda, step)
    est_half, _ = _moment_integrand_mean(graph, s0, a, m, capital_lambda, step / 2.0)
    return StatResult(float(est), mm, stderr=None, diagnostic=abs(est - est_half))


def evec_moment_ensemble(graph: MetricGraph, s0, a, m: int, n_samples: int,
                         seed: int, *, workers: int = 1) -> StatResult:
    """Random-phase ensemble moment of an observable expectation.

    Samples uniform bond phases, doubles them over directed bonds, and
    averages the per-operator mean of expectation value powers over the
    resulting ensemble of evolution operators.
    """
    if m < 0:
        raise ValueError("moment order must be >= 0")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    validate_observable(a, graph)
    s0 = np.asarray(s0, dtype=complex)
    a = np.asarray(a, dtype=complex)
    n_chunks = (n_samples + _MC_CHUNK - 1) // _MC_CHUNK
    children = np.random.SeedSequence(seed).spawn(n_chunks)

    def _one_chunk(c):
        rng = np.random.default_rng(children[c])
        k = min(_MC_CHUNK, n_samples - c * _MC_CHUNK)
        x = rng.uniform(0.0, TWO_PI, size=(k, graph.n_bonds))
        u = _engine.unitaries_at_phases(np.concatenate([x, x], axis=1), s0)
        _, vectors = _engine.eig_frames(u, orthonormalize=True)
        w = np.einsum("nij,njk->nik", np.broadcast_to(a, (k, *a.shape)), vectors)
        vals = np.sum(vectors.conj() * w, axis=1).real
        per_sample = np.mean(vals ** m, axis=1)
        return float(per_sample.sum()), float((per_sample ** 2).sum()), k

    results = [None] * n_chunks
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for c, res in enumerate(pool.map(_one_chunk, range(n_chunks))):
                results[c] = res
    else:
        for c in range(n_chunks):
            results[c] = _one_chunk(c)

    total = sum(r[0] for r in results)
    total_sq = sum(r[1] for r in results)
    mean = total / n_samples
    if n_samples > 1:
        var = max((total_sq - n_samples * mean ** 2) / (n_samples - 1), 0.0)
        stderr = float(np.sqrt(var / n_samples))
    else:
        stderr = 0.0
    return StatResult(float(mean), n_samples, stderr=stderr)


def moment_three_way(graph: MetricGraph, s0, a, m: int, *,
                     spectrum: LambdaSpectrum, capital_lambda: float,
                     samples: int, seed: int, step=None,
                     workers: int = 1) -> dict:
    """The three moment estimators side by side, reusing a solved spectrum."""
    return {
        "spectral": evec_moment_spectral(spectrum, graph, a, m),
        "lambda_average": evec_moment_lambda_average(
            graph, s0, a, m, capital_lambda, step=step),
        "ensemble": evec_moment_ensemble(
            graph, s0, a, m, samples, seed, workers=workers),
    }
