"""Independent brute-force oracles used to cross-check the solvers.

Nothing here shares a code path with the library: eigenphases come from
characteristic polynomial roots, spectra from dense determinant scans, and
multiplicities from singular values.
"""

import numpy as np
from scipy.optimize import minimize_scalar

TWO_PI = 2.0 * np.pi


def char_poly_phases(u):
    """Eigenphases in (0, 2*pi] from the characteristic polynomial of `u`.

    Coefficients are built with the Faddeev-LeVerrier trace recursion and
    passed to a companion-matrix root finder, avoiding the library's
    eigendecomposition route entirely.
    """
    u = np.asarray(u, dtype=complex)
    n = u.shape[0]
    coeffs = [1.0 + 0.0j]
    mk = np.eye(n, dtype=complex)
    for k in range(1, n + 1):
        mk = u @ mk
        ck = -np.trace(mk) / k
        coeffs.append(ck)
        mk += ck * np.eye(n)
    roots = np.roots(coeffs)
    th = np.mod(np.angle(roots), TWO_PI)
    th[th == 0.0] = TWO_PI
    return np.sort(th)[::-1]


def secular_abs_det(graph, s0, lams):
    """|det(U(lam) - I)| evaluated densely, in chunks."""
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    ld = graph.doubled_lengths
    out = np.empty(len(lams))
    eye = np.eye(graph.dim)
    chunk = 50000
    for lo in range(0, len(lams), chunk):
        hi = min(lo + chunk, len(lams))
        u = np.exp(1j * lams[lo:hi, None] * ld[None, :])[:, :, None] * s0[None, :, :]
        out[lo:hi] = np.abs(np.linalg.det(u - eye))
    return out


def dense_scan_spectrum(graph, s0, lam_max, grid_step=1e-4, candidate_level=0.05):
    """Spectrum from a dense determinant scan with local refinement.

    Scans |det(U - I)| on a uniform grid, refines every local minimum that
    dips below `candidate_level` with a bounded scalar minimizer, keeps the
    minima that are numerically zero, and reads multiplicities from the
    singular values of U - I at the refined points.
    """
    lams = np.arange(grid_step, lam_max + grid_step, grid_step)
    f = secular_abs_det(graph, s0, lams)
    interior = np.nonzero(
        (f[1:-1] <= f[:-2]) & (f[1:-1] <= f[2:]) & (f[1:-1] < candidate_level)
    )[0] + 1

    roots = []
    mults = []
    ld = graph.doubled_lengths
    eye = np.eye(graph.dim)
    for i in interior:
        # the squared modulus is smooth through the root, so the bounded
        # minimizer converges quadratically instead of stalling on a kink
        res = minimize_scalar(
            lambda lam: secular_abs_det(graph, s0, np.array([lam]))[0] ** 2,
            bounds=(lams[i] - grid_step, lams[i] + grid_step),
            method="bounded",
            options={"xatol": 1e-12},
        )
        lam = float(res.x)
        u = np.exp(1j * lam * ld)[:, None] * s0
        sv = np.linalg.svd(u - eye, compute_uv=False)
        mult = int(np.sum(sv < 1e-6))
        if mult == 0:
            continue
        if roots and abs(lam - roots[-1]) < 1e-8:
            continue
        roots.append(lam)
        mults.append(mult)
    expanded = np.repeat(np.array(roots), np.array(mults))
    return expanded[expanded <= lam_max]


def fixed_space_dimension(graph, s0, lam, tol=1e-6):
    """Multiplicity of eigenvalue 1 of U(lam) via singular values of U - I."""
    u = np.exp(1j * lam * graph.doubled_lengths)[:, None] * s0
    sv = np.linalg.svd(u - np.eye(graph.dim), compute_uv=False)
    return int(np.sum(sv < tol))
