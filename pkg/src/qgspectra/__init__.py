"""Spectra of metric quantum graphs and their statistical comparison.

The package computes two spectra of a metric graph: the wavenumber
spectrum, given by the positive roots of the secular determinant of the
bond evolution operator, and the eigenphase spectrum of that operator at
fixed wavenumber.  On top of the solvers it provides the linear torus
flow whose surface crossings reproduce the wavenumber spectrum, ergodic
and thickened surface averages, level-spacing functionals and eigenvector
moment estimators for comparing the two spectra, and a CLI driver.
"""

from .graph import (
    GraphError,
    MetricGraph,
    UnitarityReport,
    bond_projector,
    build_graph,
    connectivity_mask,
    double_vector,
    evolution_operator,
    graph_fingerprint,
    kirchhoff_s0,
    length_observable,
    load_graph_file,
    validate_observable,
    validate_unitary,
)
from .eigenphase import (
    BranchMatchError,
    BranchTrack,
    EigenphaseFrame,
    branch_track_to_csv,
    eigenphase_frame,
    next_crossing_time,
    phase_velocity,
    spacing_functions,
    track_branches,
)
from .spectrum import (
    LambdaSpectrum,
    SpectralPointError,
    WeylReport,
    WindowReport,
    eigenvector_at,
    eigenvectors_to_csv,
    rational_dependence_scan,
    solve_spectrum,
    spectrum_to_csv,
    weyl_check,
    window_count_bounds,
)
from .torus import (
    PropositionReport,
    SigmaPoint,
    SurfaceFunction,
    constant_one,
    crossings_from,
    ergodic_average,
    first_spacing,
    fixed_vector_functional,
    flow_point,
    on_sigma,
    proposition_residual,
    scaled_gap_after,
    spacing_over_velocity,
    thickened_average,
)
from .statistics import (
    StatResult,
    TestFunction,
    constant_function,
    evec_moment_ensemble,
    evec_moment_lambda_average,
    evec_moment_spectral,
    gaussian_bump,
    lambda_spacing_functional,
    moment_three_way,
    poly_gaussian,
    smoothed_indicator,
    spacing_equivalence_study,
    spacing_histogram,
    test_function_from_string,
    theta_spacing_functional,
)

__version__ = "0.1.0"
