"""Learnable per-class reference vectors and test-time selection."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .errors import CapacityError, DegenerateError, DimensionError, InvalidEpisodeError, ShapeError
from .projection import ClassCentroids

INIT_STD = 0.05


class ReferenceBank:
    """``phi`` is an (n_way_train, L) learnable tensor; row k is training label k.

    Rows are never permuted: the same label stays on the same row for the
    whole of training.
    """

    def __init__(self, phi):
        phi = phi if isinstance(phi, Tensor) else Tensor(np.asarray(phi, dtype=np.float64), requires_grad=True)
        if phi.ndim != 2:
            raise ShapeError(f"reference matrix must be 2-D, got {phi.shape}")
        phi.requires_grad = True
        self.phi = phi

    @property
    def n_way(self) -> int:
        return self.phi.shape[0]

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    @property
    def labels(self) -> tuple:
        return tuple(range(self.n_way))

    @property
    def rows(self) -> np.ndarray:
        return self.phi.data


def init_references(n_way_train: int, L: int, seed: int = 0, std: float = INIT_STD) -> ReferenceBank:
    if n_way_train < 2:
        raise InvalidEpisodeError(f"need at least 2 references, got {n_way_train}")
    if L < n_way_train + 1:
        raise DimensionError(f"L={L} must be at least n_way_train + 1 = {n_way_train + 1}")
    rng = np.random.default_rng(seed)
    return ReferenceBank(rng.normal(0.0, std, size=(n_way_train, L)))


def select_and_relabel(bank, centroids) -> tuple[np.ndarray, np.ndarray]:
    """Greedy nearest-reference assignment for a test episode.

    Episode classes are visited in ascending label order; each takes the
    nearest (Euclidean) bank row not yet taken, ties going to the lowest row
    index. Returns ``(rows, picked)`` where ``rows[k]`` is the reference now
    labelled as episode class k and ``picked[k]`` its bank row index.
    """
    phi = bank.rows if isinstance(bank, ReferenceBank) else np.asarray(bank, dtype=np.float64)
    cents = centroids.rows if isinstance(centroids, ClassCentroids) else np.asarray(centroids, dtype=np.float64)
    n_c, n_bank = len(cents), len(phi)
    if n_c > n_bank:
        raise CapacityError(f"episode has {n_c} classes but only {n_bank} references were trained")
    if cents.shape[1] != phi.shape[1]:
        raise ShapeError(f"centroid length {cents.shape[1]} != reference length {phi.shape[1]}")
    if (np.linalg.norm(cents, axis=1) == 0).any():
        raise DegenerateError("zero centroid in reference selection")

    dist = np.sqrt(((cents[:, None, :] - phi[None, :, :]) ** 2).sum(axis=-1))
    taken = np.zeros(n_bank, dtype=bool)
    picked = np.empty(n_c, dtype=np.int64)
    for k in range(n_c):
        row = np.where(taken, np.inf, dist[k])
        j = int(np.argmin(row))
        picked[k] = j
        taken[j] = True
    return phi[picked].copy(), picked


def min_pairwise_distance(bank) -> float:
    """Smallest Euclidean distance between L2-normalized reference rows (in [0, 2])."""
    phi = bank.rows if isinstance(bank, ReferenceBank) else np.asarray(bank, dtype=np.float64)
    if len(phi) < 2:
        raise InvalidEpisodeError("need at least 2 references")
    norms = np.linalg.norm(phi, axis=1)
    if (norms == 0).any():
        raise DegenerateError(f"zero-norm reference row(s): {np.flatnonzero(norms == 0).tolist()}")
    unit = phi / norms[:, None]
    d = np.sqrt(np.maximum(((unit[:, None, :] - unit[None, :, :]) ** 2).sum(axis=-1), 0.0))
    iu = np.triu_indices(len(phi), k=1)
    return float(d[iu].min())
