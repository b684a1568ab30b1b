import numpy as np
import pytest

from qgspectra import (
    eigenphase_frame,
    evolution_operator,
    next_crossing_time,
    phase_velocity,
    spacing_functions,
    track_branches,
)
from qgspectra._engine import eig_phases, unitaries_at_phases

from oracles import char_poly_phases

TWO_PI = 2.0 * np.pi


def test_frame_swap_matrix(interval):
    g, s0 = interval
    frame = eigenphase_frame(s0, g)
    assert np.allclose(frame.phases, [TWO_PI, np.pi])


def test_frame_single_bond_quarter_turn(interval):
    g, s0 = interval
    u = evolution_operator(g, s0, 0.5)
    frame = eigenphase_frame(u, g)
    assert np.allclose(frame.phases, [1.5 * np.pi, 0.5 * np.pi])


def test_frame_matches_char_poly_oracle(star3):
    g, s0 = star3
    u = evolution_operator(g, s0, 1.7)
    frame = eigenphase_frame(u, g)
    assert np.allclose(frame.phases, char_poly_phases(u), atol=1e-8)


def test_frame_invariants(star3):
    g, s0 = star3
    u = evolution_operator(g, s0, 2.9)
    frame = eigenphase_frame(u, g)
    assert np.all(np.diff(frame.phases) <= 0.0)
    assert 0.0 < frame.phases[-1] <= frame.phases[0] <= TWO_PI
    # eigen-residual and orthonormality
    residual = u @ frame.vectors - frame.vectors * np.exp(1j * frame.phases)[None, :]
    assert np.max(np.abs(residual)) <= 1e-10
    gram = frame.vectors.conj().T @ frame.vectors
    assert np.max(np.abs(gram - np.eye(g.dim))) <= 1e-10
    assert np.all(frame.velocities >= g.l_min - 1e-12)
    assert np.all(frame.velocities <= g.l_max + 1e-12)


def test_frame_rejects_non_unitary(star3):
    g, s0 = star3
    with pytest.raises(ValueError, match="not unitary"):
        eigenphase_frame(s0 + 1e-4, g)


def test_spacings_simple(interval):
    g, s0 = interval
    frame = eigenphase_frame(s0, g)
    assert np.allclose(spacing_functions(frame), [np.pi, np.pi])


def test_spacings_full_degeneracy(interval):
    g, _ = interval
    from qgspectra.eigenphase import EigenphaseFrame
    frame = EigenphaseFrame(
        phases=np.array([1.0, 1.0]), vectors=np.eye(2, dtype=complex),
        velocities=np.full(2, np.pi),
    )
    assert np.allclose(spacing_functions(frame), [0.0, TWO_PI])


def test_spacings_match_sort_oracle(star3):
    g, s0 = star3
    u = evolution_operator(g, s0, 1.7)
    frame = eigenphase_frame(u, g)
    th = np.sort(frame.phases)
    expected = np.concatenate([np.diff(th)[::-1], [th[0] + TWO_PI - th[-1]]])
    assert np.allclose(spacing_functions(frame), expected, atol=1e-12)


def test_spacing_sum_over_random_points(star3):
    g, s0 = star3
    rng = np.random.default_rng(11)
    x = rng.uniform(0.0, TWO_PI, size=(10_000, 3))
    phases = eig_phases(unitaries_at_phases(np.concatenate([x, x], axis=1), s0))
    sig = phases.copy()
    sig[:, :-1] = phases[:, :-1] - phases[:, 1:]
    sig[:, -1] = phases[:, -1] + TWO_PI - phases[:, 0]
    assert np.all(np.abs(sig.sum(axis=1) - TWO_PI) < 1e-9)
    # velocity bound holds pointwise, so spacendings are nonnegative
    assert np.all(sig >= -1e-12)


def test_velocity_single_bond_exact(interval):
    g, s0 = interval
    frame = eigenphase_frame(evolution_operator(g, s0, 0.3), g)
    assert np.allclose(phase_velocity(frame, g), np.pi)


def test_velocity_equilateral_exact(star3_equilateral):
    g, s0 = star3_equilateral
    frame = eigenphase_frame(evolution_operator(g, s0, 1.23), g)
    assert np.allclose(phase_velocity(frame, g), 1.0, atol=1e-12)


def test_velocity_sum_is_trace(star3):
    g, s0 = star3
    frame = eigenphase_frame(evolution_operator(g, s0, 4.56), g)
    assert np.sum(frame.velocities) == pytest.approx(2.0 * g.total_length, abs=1e-10)


def test_velocity_matches_finite_difference(star3):
    g, s0 = star3
    track = track_branches(g, s0, 1.0, 1.0002, step=1e-4)
    # central difference on the tracked branches at the middle node
    fd = (track.thetas[2] - track.thetas[0]) / 2e-4
    assert np.allclose(fd, track.velocities[1], atol=1e-6)


def test_track_single_bond_slopes(interval):
    g, s0 = interval
    track = track_branches(g, s0, 0.0, 2.0, step=0.25)
    slopes = (track.thetas[-1] - track.thetas[0]) / (track.lams[-1] - track.lams[0])
    assert np.allclose(slopes, np.pi, atol=1e-9)
    assert np.allclose(track.thetas[0], [TWO_PI, np.pi])


def test_track_equilateral_slopes(star3_equilateral):
    g, s0 = star3_equilateral
    track = track_branches(g, s0, 0.0, 5.0, step=0.5)
    inc = np.diff(track.thetas, axis=0)
    assert np.allclose(inc, 0.5, atol=1e-9)


def test_track_star_increment_bounds(star3):
    g, s0 = star3
    step = 0.5
    track = track_branches(g, s0, 0.0, 50.0, step=step)
    inc = np.diff(track.thetas, axis=0)
    assert np.all(inc >= g.l_min * step - 1e-9)
    assert np.all(inc <= g.l_max * step + 1e-9)
    # branches are strictly monotone
    assert np.all(inc > 0.0)


def test_track_step_too_large(star3):
    g, s0 = star3
    with pytest.raises(ValueError, match="too large"):
        track_branches(g, s0, 0.0, 10.0, step=4.0)


def test_next_crossing_single_bond(interval):
    g, s0 = interval
    assert next_crossing_time(g, s0, [0.0]) == pytest.approx(1.0, abs=1e-9)


def test_next_crossing_equilateral_exact(star3_equilateral):
    g, s0 = star3_equilateral
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.uniform(0.0, TWO_PI, size=3)
        d = next_crossing_time(g, s0, x)
        u = unitaries_at_phases(np.concatenate([x, x])[None, :], s0)
        phases = eig_phases(u)[0]
        sigma1 = phases[0] - phases[1]
        gap_to_top = TWO_PI - phases[0]
        # with equal lengths the crossing time is the phase gap over the speed
        expected = gap_to_top if gap_to_top > 1e-9 else sigma1
        assert d == pytest.approx(expected, abs=1e-8)


def test_next_crossing_sandwich(star3):
    g, s0 = star3
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = rng.uniform(0.0, TWO_PI, size=3)
        d = next_crossing_time(g, s0, x)
        u = unitaries_at_phases(np.concatenate([x, x])[None, :], s0)
        phases = eig_phases(u)[0]
        gap_to_top = TWO_PI - phases[0]
        assert gap_to_top / g.l_max - 1e-9 <= d <= gap_to_top / g.l_min + 1e-9
