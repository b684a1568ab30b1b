import numpy as np
import pytest

from qgspectra import (
    SpectralPointError,
    build_graph,
    eigenvector_at,
    evolution_operator,
    kirchhoff_s0,
    rational_dependence_scan,
    solve_spectrum,
    weyl_check,
    window_count_bounds,
)

from oracles import dense_scan_spectrum, fixed_space_dimension

TWO_PI = 2.0 * np.pi


def test_interval_integers(interval):
    g, s0 = interval
    spec = solve_spectrum(g, s0, 50.0)
    assert spec.n_levels == 50
    assert np.max(np.abs(spec.values - np.arange(1, 51))) < 1e-9
    assert np.all(spec.multiplicity == 1)


def test_interval_general_length():
    length = 1.37
    g = build_graph(["u", "v"], [("u", "v")], [length])
    s0 = kirchhoff_s0(g)
    spec = solve_spectrum(g, s0, 30.0)
    n = np.arange(1, spec.n_levels + 1)
    assert np.max(np.abs(spec.values - n * np.pi / length)) < 1e-9


def test_lambda_max_positive_required(interval):
    g, s0 = interval
    with pytest.raises(ValueError, match="positive"):
        solve_spectrum(g, s0, -1.0)


def test_star_matches_dense_scan_oracle(star3):
    g, s0 = star3
    spec = solve_spectrum(g, s0, 50.0)
    oracle = dense_scan_spectrum(g, s0, 50.0)
    assert spec.n_levels == len(oracle)
    assert np.max(np.abs(spec.values - oracle)) < 1e-7


def test_equilateral_star_known_spectrum(star3_equilateral):
    g, s0 = star3_equilateral
    spec = solve_spectrum(g, s0, 4.0 * np.pi)
    # scattering eigenphases are {0, pi/2 (x2), pi, 3pi/2 (x2)} mod 2pi,
    # so the roots repeat with period 2pi and multiplicities (2,1,2,1)
    expected = np.array([np.pi / 2, np.pi / 2, np.pi, 3 * np.pi / 2, 3 * np.pi / 2,
                         TWO_PI])
    expected = np.concatenate([expected, expected + TWO_PI])
    assert spec.n_levels == len(expected)
    assert np.max(np.abs(spec.values - expected)) < 1e-9
    mults = {round(v, 6): m for v, m in zip(spec.distinct, spec.multiplicity)}
    assert mults[round(np.pi / 2, 6)] == 2
    assert mults[round(np.pi, 6)] == 1


def test_spectrum_invariants(star3):
    g, s0 = star3
    spec = solve_spectrum(g, s0, 200.0, want_vectors=True)
    assert spec.values[0] > 0.0
    assert np.all(np.diff(spec.values) >= 0.0)
    assert np.all(np.diff(spec.distinct) > 1e-9)
    # every stored vector is a fixed point of the evolution operator
    for lam, mult, basis in zip(spec.distinct, spec.multiplicity, spec.vectors):
        u = evolution_operator(g, s0, lam)
        assert basis.shape == (g.dim, mult)
        assert np.max(np.abs(u @ basis - basis)) <= 1e-8


def test_crossing_at_grid_node_not_duplicated(interval):
    g, s0 = interval
    # grid nodes land exactly on the integer roots
    spec = solve_spectrum(g, s0, 10.0, step=0.5)
    assert spec.n_levels == 10
    assert np.max(np.abs(spec.values - np.arange(1, 11))) < 1e-9


def test_eigenvector_at_single_bond(interval):
    g, s0 = interval
    basis = eigenvector_at(g, s0, 1.0)
    assert basis.shape == (2, 1)
    target = np.array([1.0, -1.0]) / np.sqrt(2.0)
    overlap = np.abs(np.vdot(target, basis[:, 0]))
    assert overlap == pytest.approx(1.0, abs=1e-10)


def test_eigenvector_at_degenerate_point(star3_equilateral):
    g, s0 = star3_equilateral
    lam = 1.5 * np.pi
    assert fixed_space_dimension(g, s0, lam) == 2
    basis = eigenvector_at(g, s0, lam)
    assert basis.shape == (6, 2)
    gram = basis.conj().T @ basis
    assert np.max(np.abs(gram - np.eye(2))) < 1e-10


def test_eigenvector_at_off_spectrum_rejected(star3):
    g, s0 = star3
    spec = solve_spectrum(g, s0, 10.0)
    lam_between = 0.5 * (spec.values[3] + spec.values[4])
    with pytest.raises(SpectralPointError, match="not in the spectrum"):
        eigenvector_at(g, s0, lam_between)


def test_weyl_interval(interval):
    g, s0 = interval
    spec = solve_spectrum(g, s0, 100.0)
    report = weyl_check(spec, g)
    assert report.n_levels == 100
    assert report.expected == pytest.approx(100.0)
    assert report.ratio == pytest.approx(1.0, abs=1e-9)


def test_weyl_star_converges(star3):
    g, s0 = star3
    spec = solve_spectrum(g, s0, 500.0)
    report = weyl_check(spec, g)
    assert abs(report.ratio - 1.0) < 0.02


def test_window_bounds_interval(interval):
    g, s0 = interval
    spec = solve_spectrum(g, s0, 100.0)
    report = window_count_bounds(spec, g, trials=200, seed=1)
    assert report.passed
    # equal lengths make both windows identical: exactly 2B per window
    assert np.all(report.counts_lower == 2)
    assert np.all(report.counts_upper == 2)


def test_window_bounds_star(star3):
    g, s0 = star3
    spec = solve_spectrum(g, s0, 300.0)
    report = window_count_bounds(spec, g, trials=500, seed=2)
    assert report.passed
    assert report.lower_violations == 0 and report.upper_violations == 0


def test_window_longer_than_range_rejected(star3):
    g, s0 = star3
    spec = solve_spectrum(g, s0, 5.0)
    with pytest.raises(ValueError, match="do not fit"):
        window_count_bounds(spec, g, trials=10, seed=0)


def test_mean_normalized_spacing(star3):
    g, s0 = star3
    spec = solve_spectrum(g, s0, 1000.0)
    gaps = np.diff(spec.values)
    mean_gap = g.mean_length * float(np.mean(gaps))
    assert abs(mean_gap - np.pi / g.n_bonds) < 0.02 * np.pi / g.n_bonds


def test_multiplicity_window_consistency(star3):
    g, s0 = star3
    spec = solve_spectrum(g, s0, 100.0)
    w = TWO_PI / g.l_max
    for a in np.linspace(0.0, 100.0 - w, 37):
        assert spec.count_in(a, a + w) <= g.dim


def test_rational_dependence_detects_benchmark_relation():
    hits = rational_dependence_scan([1.0, 1.05, 0.95])
    assert (2, -1, -1) in hits


def test_rational_dependence_clean_for_irrational(star3_irrational):
    g, _ = star3_irrational
    assert rational_dependence_scan(g.lengths) == []


def test_rational_dependence_flags_equal_lengths():
    hits = rational_dependence_scan([1.0, 1.0, 2.0])
    assert (1, -1, 0) in hits
