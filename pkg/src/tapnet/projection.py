"""Task-adaptive projection: modified references, error vectors and null-space bases.

Row-vector convention throughout: a feature is a length-L row, a projection
basis is an (L, D) matrix ``M`` with orthonormal columns, and projecting
``v`` means ``v @ M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, DimensionError, InvalidEpisodeError, NumericError, ShapeError

TOL_NORM = 1e-12


@dataclass(frozen=True)
class ClassCentroids:
    rows: np.ndarray
    class_order: tuple = ()

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ShapeError(f"centroids must be 2-D, got shape {rows.shape}")
        if not np.isfinite(rows).all():
            raise NumericError("non-finite centroid")
        object.__setattr__(self, "rows", rows)
        if not self.class_order:
            object.__setattr__(self, "class_order", tuple(range(len(rows))))


def class_centroids(support: np.ndarray, class_order=()) -> ClassCentroids:
    """Per-class mean of embedded supports, ``support`` shaped (N_c, N_s, L)."""
    support = np.asarray(support, dtype=np.float64)
    if support.ndim != 3:
        raise ShapeError(f"support embeddings must be (N_c, N_s, L), got {support.shape}")
    return ClassCentroids(support.mean(axis=1), tuple(class_order))


@dataclass(frozen=True)
class ErrorMatrix:
    rows: np.ndarray
    class_order: tuple = ()
    degenerate_rows: tuple = field(default=())

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ShapeError(f"error matrix must be 2-D, got shape {rows.shape}")
        n_c, L = rows.shape
        if n_c < 2:
            raise InvalidEpisodeError(f"need at least 2 classes, got {n_c}")
        if L < n_c + 1:
            raise DimensionError(f"row length {L} leaves no null space for {n_c} rows")
        if not np.isfinite(rows).all():
            raise NumericError("non-finite error vector")
        object.__setattr__(self, "rows", rows)
        if not self.class_order:
            object.__setattr__(self, "class_order", tuple(range(n_c)))


@dataclass(frozen=True)
class ProjectionSpace:
    basis: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def length(self) -> int:
        return self.basis.shape[0]

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T


def modified_references(phi: np.ndarray) -> np.ndarray:
    """All rows ``phi_k - mean(phi_l for l != k)`` at once."""
    phi = np.asarray(phi, dtype=np.float64)
    n_c = phi.shape[0]
    if n_c < 2:
        raise InvalidEpisodeError(f"need at least 2 references, got {n_c}")
    total = phi.sum(axis=0)
    return phi - (total - phi) / (n_c - 1)


def modified_reference(phi: np.ndarray, k: int) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    n_c = phi.shape[0]
    if n_c < 2:
        raise InvalidEpisodeError(f"need at least 2 references, got {n_c}")
    others = np.delete(phi, k, axis=0)
    return phi[k] - others.sum(axis=0) / (n_c - 1)


def error_vector(phi_tilde, c, tol: float = TOL_NORM) -> np.ndarray:
    """Difference of the unit directions of a modified reference and a centroid."""
    phi_tilde = np.asarray(phi_tilde, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if phi_tilde.shape != c.shape:
        raise ShapeError(f"shape mismatch {phi_tilde.shape} vs {c.shape}")
    n_phi = np.linalg.norm(phi_tilde)
    n_c = np.linalg.norm(c)
    if n_phi <= tol:
        raise DegenerateError(f"modified reference norm {n_phi:.3g} below {tol:g}")
    if n_c <= tol:
        raise DegenerateError(f"centroid norm {n_c:.3g} below {tol:g}")
    return phi_tilde / n_phi - c / n_c


def build_error_matrix(phi: np.ndarray, centroids) -> ErrorMatrix:
    """Stack error vectors for references ``phi`` (N_c, L) against matching centroids.

    Rows whose reference or centroid direction is undefined are left at zero
    (they constrain nothing) and listed in ``degenerate_rows``.
    """
    if not isinstance(centroids, ClassCentroids):
        centroids = ClassCentroids(centroids)
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != centroids.rows.shape:
        raise ShapeError(f"references {phi.shape} do not match centroids {centroids.rows.shape}")
    tilde = modified_references(phi)
    rows = np.zeros_like(phi)
    bad = []
    for k in range(len(phi)):
        try:
            rows[k] = error_vector(tilde[k], centroids.rows[k])
        except DegenerateError:
            bad.append(k)
    return ErrorMatrix(rows, centroids.class_order, tuple(bad))


def build_projection(E, dim: int) -> ProjectionSpace:
    """Basis of ``dim`` right singular vectors of ``E`` past index N_c.

    Singular values are sorted descending; the columns returned are right
    singular vectors N_c+1 ... N_c+dim (1-based), which lie in the null space
    of ``E`` whatever its numerical rank.
    """
    rows = E.rows if isinstance(E, ErrorMatrix) else ErrorMatrix(E).rows
    n_c, L = rows.shape
    if dim < 1:
        raise DimensionError(f"projection dimension must be >= 1, got {dim}")
    if L < n_c + dim:
        raise DimensionError(f"L={L} < N_c + D = {n_c} + {dim}")
    try:
        _, _, vh = np.linalg.svd(rows, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    return ProjectionSpace(np.ascontiguousarray(vh[n_c : n_c + dim].T))


def full_dim(L: int, n_c: int) -> int:
    return L - n_c


def project(M: ProjectionSpace, v) -> np.ndarray:
    """Coordinates ``v @ M`` for a row vector or a stack of rows."""
    v = np.asarray(v, dtype=np.float64)
    basis = M.basis if isinstance(M, ProjectionSpace) else np.asarray(M)
    if v.shape[-1] != basis.shape[0]:
        raise ShapeError(f"vector length {v.shape[-1]} does not match basis rows {basis.shape[0]}")
    return v @ basis


def sq_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    return float(diff @ diff)


def distance(a, b, kind: str = "squared") -> float:
    d2 = sq_distance(a, b)
    if kind == "squared":
        return d2
    if kind == "euclidean":
        return float(np.sqrt(d2))
    raise ValueError(f"unknown distance kind {kind!r}")


def pairwise_distances(A, B, kind: str = "squared") -> np.ndarray:
    """(n, m) distances between rows of A (n, d) and rows of B (m, d)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[-1] != B.shape[-1]:
        raise ShapeError(f"row lengths differ: {A.shape[-1]} vs {B.shape[-1]}")
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=-1)
    if kind == "squared":
        return d2
    if kind == "euclidean":
        return np.sqrt(d2)
    raise ValueError(f"unknown distance kind {kind!r}")


@dataclass(frozen=True)
class ProjectorReport:
    orthonormality: float
    idempotence: float
    similarity: float
    tol: float

    @property
    def ok(self) -> bool:
        return max(self.orthonormality, self.idempotence, self.similarity) <= self.tol


def projector_check(M: ProjectionSpace, phi=None, f=None, tol: float = 1e-8, seed: int = 0) -> ProjectorReport:
    """Check that ``P = M M^T`` is an orthogonal projector and that
    reference/feature similarities in projected coordinates, ``phi M (f M)^T``,
    equal ``phi P f^T``. Random ``phi``/``f`` are drawn when not supplied.
    """
    basis = M.basis
    L, D = basis.shape
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((5, L)) if phi is None else np.atleast_2d(phi)
    f = rng.standard_normal((3, L)) if f is None else np.atleast_2d(f)
    P = basis @ basis.T
    ortho = np.abs(basis.T @ basis - np.eye(D)).max()
    idem = np.abs(P @ P - P).max()
    sim = np.abs((phi @ basis) @ (f @ basis).T - phi @ P @ f.T).max()
    return ProjectorReport(float(ortho), float(idem), float(sim), tol)
