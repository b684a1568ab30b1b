"""Roots of the secular equation: the wavenumber spectrum of a metric graph.

The spectrum consists of the strictly positive wavenumbers at which the
evolution operator has eigenvalue 1.  Each monotone eigenphase branch is
tracked across a grid and every passage through a multiple of 2*pi is
refined by bracketed bisection; branches crossing within the clustering
tolerance of the same wavenumber form one spectral point with multiplicity.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from . import _engine
from ._engine import CLUSTER_TOL, EPS0, TWO_PI
from .graph import MetricGraph, double_vector, graph_fingerprint

__all__ = [
    "LambdaSpectrum",
    "WeylReport",
    "WindowReport",
    "SpectralPointError",
    "solve_spectrum",
    "eigenvector_at",
    "weyl_check",
    "window_count_bounds",
    "rational_dependence_scan",
    "spectrum_to_csv",
    "eigenvectors_to_csv",
]

FIXED_POINT_RESIDUAL = 1e-8


class SpectralPointError(ValueError):
    """A queried wavenumber is not a point of the spectrum."""


@dataclass(frozen=True)
class LambdaSpectrum:
    """Positive spectrum of a graph, sorted with multiplicity.

    values : all eigenvalues in ascending order, each repeated according
        to its multiplicity
    distinct / multiplicity : the distinct eigenvalues and their cluster
        sizes
    vectors : per distinct eigenvalue, an orthonormal basis (columns) of
        the fixed-point space of the evolution operator, or None when not
        requested
    """

    values: np.ndarray
    distinct: np.ndarray
    multiplicity: np.ndarray
    vectors: tuple | None
    lambda_max: float
    fingerprint: str

    @property
    def n_levels(self) -> int:
        return len(self.values)

    def expanded_vectors(self):
        """Yield one (eigenvalue, vector) pair per level with multiplicity."""
        if self.vectors is None:
            raise ValueError("spectrum was computed without eigenvectors")
        for lam, mult, basis in zip(self.distinct, self.multiplicity, self.vectors):
            for j in range(mult):
                yield lam, basis[:, j]

    def count_in(self, a: float, b: float) -> int:
        """Number of levels (with multiplicity) in the window (a, b]."""
        return int(
            np.searchsorted(self.values, b, side="right")
            - np.searchsorted(self.values, a, side="right")
        )


def _fixed_point_basis(graph, s0, x0, lams, mults):
    """Orthonormal eigenvalue-1 bases of the evolution operator at given roots."""
    ld = graph.doubled_lengths
    p0 = double_vector(np.mod(np.asarray(x0, dtype=float), TWO_PI))
    u = _engine.unitaries_at_phases(p0[None, :] + np.asarray(lams)[:, None] * ld[None, :], s0)
    phases, vectors = _engine.eig_frames(u)
    dist = np.minimum(phases % TWO_PI, TWO_PI - phases % TWO_PI)
    bases = []
    for i, mult in enumerate(mults):
        pick = np.argsort(dist[i])[:mult]
        basis, _ = np.linalg.qr(vectors[i][:, pick])
        residual = float(np.max(np.abs(u[i] @ basis - basis)))
        if residual > FIXED_POINT_RESIDUAL:
            raise SpectralPointError(
                f"fixed-point residual {residual:.3e} at lam = {lams[i]:.12g} "
                f"exceeds {FIXED_POINT_RESIDUAL:.1e}"
            )
        # fix the global phase so stored vectors are reproducible
        for j in range(basis.shape[1]):
            k = np.argmax(np.abs(basis[:, j]))
            basis[:, j] *= np.exp(-1j * np.angle(basis[k, j]))
        bases.append(basis)
    return tuple(bases)


def solve_spectrum(graph: MetricGraph, s0, lam_max: float, *, step=None,
                   want_vectors: bool = False, x0=None) -> LambdaSpectrum:
    """All spectral points in (0, lam_max], with multiplicities.

    Zero is never part of the reported spectrum: roots at or below 1e-8
    are discarded.  With `want_vectors` an orthonormal fixed-point basis is
    stored per distinct eigenvalue.  `x0` shifts the problem to the flow
    line through an arbitrary torus point (the default is the origin,
    which gives the graph spectrum itself).
    """
    if lam_max <= 0.0:
        raise ValueError("lam_max must be positive")
    s0 = np.asarray(s0, dtype=complex)
    if x0 is None:
        x0 = np.zeros(graph.n_bonds)
    x0 = np.asarray(x0, dtype=float)
    expanded = _engine.find_crossings_batch(graph, s0, x0, float(lam_max), step=step)[0]
    distinct, mult, expanded = _engine.cluster_times(expanded)
    vectors = None
    if want_vectors and len(distinct):
        vectors = _fixed_point_basis(graph, s0, x0, distinct, mult)
    elif want_vectors:
        vectors = ()
    return LambdaSpectrum(
        values=expanded,
        distinct=distinct,
        multiplicity=mult,
        vectors=vectors,
        lambda_max=float(lam_max),
        fingerprint=graph_fingerprint(graph, s0) + (
            "" if not np.any(x0) else f":x0={np.array2string(x0, precision=10)}"
        ),
    )


def eigenvector_at(graph: MetricGraph, s0, lam: float) -> np.ndarray:
    """Orthonormal fixed-point basis of the evolution operator at `lam`.

    Raises :class:`SpectralPointError` when `lam` is not a spectral point,
    i.e. when no eigenphase is within the fixed-point residual tolerance
    of a multiple of 2*pi.
    """
    s0 = np.asarray(s0, dtype=complex)
    ld = graph.doubled_lengths
    u = _engine.unitaries_at_phases(np.array([lam * ld]), s0)
    phases, _ = _engine.eig_frames(u)
    dist = np.minimum(phases[0] % TWO_PI, TWO_PI - phases[0] % TWO_PI)
    mult = int(np.sum(dist <= FIXED_POINT_RESIDUAL))
    if mult == 0:
        raise SpectralPointError(
            f"lam = {lam:.12g} is not in the spectrum: nearest eigenphase is "
            f"{float(np.min(dist)):.3e} away from a multiple of 2*pi"
        )
    return _fixed_point_basis(graph, s0, np.zeros(graph.n_bonds), [lam], [mult])[0]


@dataclass(frozen=True)
class WeylReport:
    """Eigenvalue count against the leading-order asymptotic density."""

    n_levels: int
    lambda_max: float
    expected: float
    ratio: float


def weyl_check(spectrum: LambdaSpectrum, graph: MetricGraph) -> WeylReport:
    """Compare N(lam_max) with total_length * lam_max / pi."""
    if spectrum.n_levels == 0:
        raise ValueError("empty spectrum")
    expected = graph.total_length * spectrum.lambda_max / np.pi
    return WeylReport(
        n_levels=spectrum.n_levels,
        lambda_max=spectrum.lambda_max,
        expected=expected,
        ratio=spectrum.n_levels / expected,
    )


@dataclass(frozen=True)
class WindowReport:
    """Eigenvalue counts in randomly placed windows of the two extreme widths.

    Windows of width 2*pi/L_min must contain at least 2B levels, windows of
    width 2*pi/L_max at most 2B.
    """

    window_min: float
    window_max: float
    counts_lower: np.ndarray
    counts_upper: np.ndarray
    trials: int
    seed: int

    @property
    def lower_violations(self) -> int:
        return int(np.sum(self.counts_lower < self._dim))

    @property
    def upper_violations(self) -> int:
        return int(np.sum(self.counts_upper > self._dim))

    @property
    def passed(self) -> bool:
        return self.lower_violations == 0 and self.upper_violations == 0

    _dim: int = 0


def window_count_bounds(spectrum: LambdaSpectrum, graph: MetricGraph,
                        trials: int, seed: int) -> WindowReport:
    """Counted-with-multiplicity window statistics at the two extreme widths."""
    w_lower = TWO_PI / graph.l_min
    w_upper = TWO_PI / graph.l_max
    if spectrum.lambda_max <= w_lower:
        raise ValueError(
            f"windows of width {w_lower:.4g} do not fit in the computed "
            f"range (0, {spectrum.lambda_max:.4g}]"
        )
    rng = np.random.default_rng(seed)
    starts_lower = rng.uniform(0.0, spectrum.lambda_max - w_lower, size=trials)
    starts_upper = rng.uniform(0.0, spectrum.lambda_max - w_upper, size=trials)
    counts_lower = np.array([spectrum.count_in(a, a + w_lower) for a in starts_lower])
    counts_upper = np.array([spectrum.count_in(a, a + w_upper) for a in starts_upper])
    return WindowReport(
        window_min=w_lower,
        window_max=w_upper,
        counts_lower=counts_lower,
        counts_upper=counts_upper,
        trials=trials,
        seed=seed,
        _dim=graph.dim,
    )


def rational_dependence_scan(lengths, max_coeff: int = 20, tol: float = 1e-9):
    """Small-coefficient integer relations among the bond lengths.

    Searches integer vectors c with entries in [-max_coeff, max_coeff] such
    that |c . L| < tol.  Exhaustive for up to 4 bonds, pairwise beyond
    that.  Returns primitive relations (first nonzero entry positive).
    The spacing and moment equivalences assume no such relation exists, so
    any hit deserves a warning.
    """
    lengths = np.asarray(lengths, dtype=float)
    b = len(lengths)
    hits = []

    def _emit(c):
        c = np.array(c, dtype=int)
        if not np.any(c):
            return
        g = np.gcd.reduce(np.abs(c[c != 0]))
        c = c // g
        first = c[np.nonzero(c)[0][0]]
        if first < 0:
            c = -c
        key = tuple(c)
        if key not in seen:
            seen.add(key)
            hits.append(key)

    seen = set()
    rng_coeff = np.arange(-max_coeff, max_coeff + 1)
    if b <= 4:
        grids = np.meshgrid(*([rng_coeff] * b), indexing="ij")
        coeffs = np.stack([g.ravel() for g in grids], axis=1)
        vals = coeffs @ lengths
        for c in coeffs[np.abs(vals) < tol]:
            _emit(c)
    else:
        for i, j in itertools.combinations(range(b), 2):
            ci, cj = np.meshgrid(rng_coeff, rng_coeff, indexing="ij")
            vals = ci * lengths[i] + cj * lengths[j]
            for a, bb in zip(ci[np.abs(vals) < tol], cj[np.abs(vals) < tol]):
                c = np.zeros(b, dtype=int)
                c[i], c[j] = a, bb
                _emit(c)
    return hits


def spectrum_to_csv(spectrum: LambdaSpectrum, path) -> None:
    """Write the expanded spectrum as CSV rows (n, lambda, multiplicity)."""
    mult_of_value = np.repeat(spectrum.multiplicity, spectrum.multiplicity)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "lambda", "multiplicity"])
        for n, (lam, m) in enumerate(zip(spectrum.values, mult_of_value), start=1):
            writer.writerow([n, f"{lam:.12f}", m])


def eigenvectors_to_csv(spectrum: LambdaSpectrum, path) -> None:
    """Write fixed-point eigenvectors as interleaved re/im per directed bond."""
    if spectrum.vectors is None:
        raise ValueError("spectrum was computed without eigenvectors")
    dim = spectrum.vectors[0].shape[0] if spectrum.vectors else 0
    header = ["n", "lambda"]
    for i in range(dim):
        header += [f"re_{i + 1}", f"im_{i + 1}"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for n, (lam, vec) in enumerate(spectrum.expanded_vectors(), start=1):
            row = [n, f"{lam:.12f}"]
            for z in vec:
                row += [f"{z.real:.12g}", f"{z.imag:.12g}"]
            writer.writerow(row)
