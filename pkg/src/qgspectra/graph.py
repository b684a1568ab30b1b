"""Metric graphs, vertex scattering matrices, and the bond evolution operator.

A metric graph is a finite combinatorial graph whose bonds carry positive
lengths.  Wave amplitudes live on *directed* bonds: bond ``b`` (0-based, in
construction order) has a forward copy with index ``b`` and a reversed copy
with index ``b + n_bonds``.  Every matrix in this package acts on coefficient
vectors in this doubled directed-bond basis, so all matrices are square of
dimension ``2 * n_bonds``.

Convention: the entry ``S[out, in]`` scatters the amplitude arriving on
directed bond ``in`` into directed bond ``out``.  It may be nonzero only when
``in`` terminates at the vertex where ``out`` originates.  Spectral
quantities are insensitive to transposing this convention.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GraphError",
    "MetricGraph",
    "UnitarityReport",
    "build_graph",
    "load_graph_file",
    "kirchhoff_s0",
    "connectivity_mask",
    "validate_unitary",
    "evolution_operator",
    "length_observable",
    "bond_projector",
    "validate_observable",
    "double_vector",
    "graph_fingerprint",
]


class GraphError(ValueError):
    """Invalid graph description or matrix constraint violation."""


@dataclass(frozen=True)
class MetricGraph:
    """Finite metric graph with a fixed directed-bond ordering.

    Parameters
    ----------
    vertices : tuple of vertex names
    bonds : tuple of (origin, terminus) pairs, in fixed order
    lengths : positive bond lengths, one per bond
    """

    vertices: tuple
    bonds: tuple
    lengths: np.ndarray

    def __post_init__(self):
        vertices = tuple(self.vertices)
        bonds = tuple((u, v) for u, v in self.bonds)
        lengths = np.asarray(self.lengths, dtype=float).copy()
        lengths.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "bonds", bonds)
        object.__setattr__(self, "lengths", lengths)

        if len(bonds) == 0:
            raise GraphError("graph must have at least one bond")
        if lengths.shape != (len(bonds),):
            raise GraphError(
                f"need one length per bond: got {lengths.shape[0]} lengths "
                f"for {len(bonds)} bonds"
            )
        if not np.all(np.isfinite(lengths)) or np.any(lengths <= 0.0):
            raise GraphError("non-positive length: every bond length must be finite and > 0")
        if len(set(vertices)) != len(vertices):
            raise GraphError("duplicate vertex names")
        known = set(vertices)
        for u, v in bonds:
            if u not in known or v not in known:
                raise GraphError(f"bond ({u!r}, {v!r}) references an undeclared vertex")
        degree = {v: 0 for v in vertices}
        for u, v in bonds:
            degree[u] += 1
            degree[v] += 1
        isolated = [v for v, d in degree.items() if d == 0]
        if isolated:
            raise GraphError(f"isolated vertices with no bonds: {isolated}")
        loops = [b for b, (u, v) in enumerate(bonds) if u == v]
        if loops:
            warnings.warn(
                f"graph has loop bonds {loops}; loops force persistently "
                "degenerate eigenvalues and non-generic spectral statistics",
                stacklevel=2,
            )

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @property
    def dim(self) -> int:
        """Dimension of the directed-bond space, 2 * n_bonds."""
        return 2 * len(self.bonds)

    @property
    def doubled_lengths(self) -> np.ndarray:
        """Lengths repeated over forward and reversed directed bonds."""
        return np.concatenate([self.lengths, self.lengths])

    @property
    def l_min(self) -> float:
        return float(np.min(self.lengths))

    @property
    def l_max(self) -> float:
        return float(np.max(self.lengths))

    @property
    def total_length(self) -> float:
        return float(np.sum(self.lengths))

    @property
    def mean_length(self) -> float:
        return float(np.mean(self.lengths))

    def degree(self, vertex) -> int:
        """Number of bond ends at `vertex` (a loop contributes two)."""
        return sum((u == vertex) + (v == vertex) for u, v in self.bonds)

    def directed_origins(self):
        """Origin vertex of each directed bond, forward bonds first."""
        fwd = [u for u, _ in self.bonds]
        rev = [v for _, v in self.bonds]
        return fwd + rev

    def directed_termini(self):
        """Terminus vertex of each directed bond, forward bonds first."""
        fwd = [v for _, v in self.bonds]
        rev = [u for u, _ in self.bonds]
        return fwd + rev

    def with_lengths(self, lengths) -> "MetricGraph":
        """Same topology with replaced bond lengths."""
        return MetricGraph(self.vertices, self.bonds, np.asarray(lengths, dtype=float))


def build_graph(vertices, bonds, lengths) -> MetricGraph:
    """Validate and construct a :class:`MetricGraph`.

    Bonds keep their given order; directed-bond indices are forward
    0..B-1 and reversed B..2B-1, which fixes the basis of every matrix
    and makes stored eigenvectors reproducible across runs.
    """
    return MetricGraph(tuple(vertices), tuple(tuple(b) for b in bonds), lengths)


def double_vector(x) -> np.ndarray:
    """Repeat a per-bond vector over forward and reversed directed bonds."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, x])


def connectivity_mask(graph: MetricGraph) -> np.ndarray:
    """Boolean mask of scattering entries allowed by vertex connectivity.

    ``mask[out, in]`` is True iff directed bond ``in`` ends where directed
    bond ``out`` starts.
    """
    origins = np.array(graph.directed_origins(), dtype=object)
    termini = np.array(graph.directed_termini(), dtype=object)
    return origins[:, None] == termini[None, :]


def kirchhoff_s0(graph: MetricGraph) -> np.ndarray:
    """Vertex scattering matrix for Kirchhoff (natural) matching conditions.

    At a vertex of degree d the amplitude is reflected with coefficient
    2/d - 1 and transmitted into each other outgoing bond with coefficient
    2/d.  The result is real and unitary for every graph.
    """
    origins = graph.directed_origins()
    termini = graph.directed_termini()
    deg = {v: graph.degree(v) for v in graph.vertices}
    n = graph.dim
    s0 = np.zeros((n, n))
    rev = np.arange(n)
    rev = np.concatenate([rev[graph.n_bonds:], rev[:graph.n_bonds]])
    for col in range(n):
        v_in = termini[col]
        coeff = 2.0 / deg[v_in]
        for row in range(n):
            if origins[row] != v_in:
                continue
            s0[row, col] = coeff - (1.0 if row == rev[col] else 0.0)
    return s0


@dataclass(frozen=True)
class UnitarityReport:
    """Result of checking a scattering matrix against its contracts."""

    max_unitarity_deviation: float
    mask_violations: tuple
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_unitarity_deviation <= self.tol and not self.mask_violations


def validate_unitary(matrix, graph: MetricGraph, tol: float = 1e-12) -> UnitarityReport:
    """Check unitarity and the connectivity sparsity pattern of a matrix.

    Reports the max-norm deviation of ``M M*`` from the identity and every
    entry that is nonzero where the graph connectivity forbids it.
    """
    m = np.asarray(matrix, dtype=complex)
    n = graph.dim
    if m.shape != (n, n):
        raise GraphError(f"matrix shape {m.shape} does not match directed-bond dimension {n}")
    dev = float(np.max(np.abs(m @ m.conj().T - np.eye(n))))
    mask = connectivity_mask(graph)
    bad = np.argwhere(~mask & (np.abs(m) > tol))
    return UnitarityReport(dev, tuple(map(tuple, bad)), tol)


def evolution_operator(graph: MetricGraph, s0, lam: float) -> np.ndarray:
    """One-step quantum evolution operator at wavenumber `lam`.

    Free propagation multiplies the amplitude on directed bond ``i`` by
    ``exp(1j * lam * length_i)``; the rows of `s0` then redistribute
    amplitudes at the vertices.
    """
    phases = np.exp(1j * lam * graph.doubled_lengths)
    return phases[:, None] * np.asarray(s0, dtype=complex)


def length_observable(graph: MetricGraph) -> np.ndarray:
    """Diagonal observable of bond lengths on the directed-bond space."""
    return np.diag(graph.doubled_lengths).astype(complex)


def bond_projector(graph: MetricGraph, bond: int) -> np.ndarray:
    """Projector onto the two directed copies of a single bond."""
    if not 0 <= bond < graph.n_bonds:
        raise GraphError(f"bond index {bond} out of range")
    p = np.zeros((graph.dim, graph.dim), dtype=complex)
    p[bond, bond] = 1.0
    p[bond + graph.n_bonds, bond + graph.n_bonds] = 1.0
    return p


def validate_observable(a, graph: MetricGraph, tol: float = 1e-12) -> None:
    """Raise unless `a` is Hermitian and matches the graph dimension."""
    a = np.asarray(a)
    n = graph.dim
    if a.shape != (n, n):
        raise GraphError(f"observable shape {a.shape} does not match dimension {n}")
    dev = float(np.max(np.abs(a - a.conj().T)))
    if dev > tol:
        raise GraphError(f"observable is not Hermitian: max deviation {dev:.3e}")


def graph_fingerprint(graph: MetricGraph, s0) -> str:
    """Short stable hash of the graph data and scattering matrix."""
    h = hashlib.sha256()
    h.update(repr(graph.vertices).encode())
    h.update(repr(graph.bonds).encode())
    h.update(np.ascontiguousarray(graph.lengths).tobytes())
    h.update(np.ascontiguousarray(np.asarray(s0, dtype=complex)).tobytes())
    return h.hexdigest()[:16]


def load_graph_file(path):
    """Load a graph description file.

    The file is JSON with fields:

    - ``vertices``: list of vertex names,
    - ``bonds``: list of ``{"from": u, "to": v, "length": x}`` objects,
    - ``conditions`` (optional): ``"kirchhoff"`` (default) or an inline
      unitary matrix given row-major as a list of rows of ``[re, im]``
      pairs.

    Returns ``(graph, s0)``.  An inline matrix must pass
    :func:`validate_unitary` at 1e-12 and the connectivity mask.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphError(f"could not parse graph file {path}: {exc}") from exc
    try:
        vertices = list(data["vertices"])
        bonds = [(b["from"], b["to"]) for b in data["bonds"]]
        lengths = [float(b["length"]) for b in data["bonds"]]
    except (KeyError, TypeError) as exc:
        raise GraphError(f"graph file {path} is missing required fields: {exc}") from exc
    graph = build_graph(vertices, bonds, lengths)
    conditions = data.get("conditions", "kirchhoff")
    if isinstance(conditions, str):
        if conditions != "kirchhoff":
            raise GraphError(f"unknown conditions {conditions!r}")
        s0 = kirchhoff_s0(graph)
    else:
        try:
            s0 = np.array(
                [[complex(re, im) for re, im in row] for row in conditions],
                dtype=complex,
            )
        except (TypeError, ValueError) as exc:
            raise GraphError(f"inline scattering matrix is malformed: {exc}") from exc
        report = validate_unitary(s0, graph)
        if not report.passed:
            raise GraphError(
                "inline scattering matrix rejected: "
                f"unitarity deviation {report.max_unitarity_deviation:.3e}, "
                f"{len(report.mask_violations)} connectivity violations"
            )
    return graph, s0
