"""Few-shot test protocol: per-episode accuracy, 95% confidence interval, dimension sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSplit
from .episodes import TEST_STREAM, Episode, episode_rng, resolve_dim, sample_episode
from .errors import CapacityError
from .nn import EmbeddingNetwork
from .projection import ProjectionSpace, build_error_matrix, build_projection, class_centroids, pairwise_distances
from .references import ReferenceBank, select_and_relabel


@dataclass
class EvalReport:
    n_episodes: int
    mean_accuracy: float
    ci95_halfwidth: float
    accuracies: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "mean_accuracy": self.mean_accuracy,
            "ci95_halfwidth": self.ci95_halfwidth,
            **self.config,
        }


def ci95_halfwidth(accuracies) -> float:
    """1.96 * sample stdev / sqrt(n); zero for a single episode."""
    acc = np.asarray(accuracies, dtype=np.float64)
    if len(acc) < 2:
        return 0.0
    return float(1.96 * acc.std(ddof=1) / math.sqrt(len(acc)))


def make_report(accuracies, config: dict | None = None) -> EvalReport:
    acc = [float(a) for a in accuracies]
    mean = float(np.mean(acc)) if acc else float("nan")
    return EvalReport(len(acc), mean, ci95_halfwidth(acc), acc, dict(config or {}))


def classify_projected(query_emb: np.ndarray, refs: np.ndarray, M: ProjectionSpace, distance: str = "squared") -> np.ndarray:
    """Label of the nearest projected reference for each query row (ties -> lowest label)."""
    d = pairwise_distances(np.atleast_2d(query_emb) @ M.basis, refs @ M.basis, distance)
    return d.argmin(axis=1)


def classify_query(net: EmbeddingNetwork, selected_refs: np.ndarray, M: ProjectionSpace, query_sample, distance: str = "squared") -> int:
    emb = net.embed(np.asarray(query_sample)[None, ...])
    return int(classify_projected(emb, selected_refs, M, distance)[0])


def episode_references(bank, centroids, n_way: int, relabel: bool = True) -> np.ndarray:
    rows = bank.rows if isinstance(bank, ReferenceBank) else np.asarray(bank, dtype=np.float64)
    if relabel:
        return select_and_relabel(rows, centroids)[0]
    if n_way != len(rows):
        raise CapacityError(f"fixed labelling needs a {len(rows)}-way episode, got {n_way}")
    return rows.copy()


def predict_episode(net: EmbeddingNetwork, bank, episode: Episode, dim="full", distance: str = "squared", relabel: bool = True):
    """Predicted labels for every query of ``episode`` (in ``episode.query_labels`` order)."""
    n, s = episode.n_way, episode.n_shot
    cents = class_centroids(net.embed(episode.flat_support()).reshape(n, s, -1))
    refs = episode_references(bank, cents, n, relabel)
    M = build_projection(build_error_matrix(refs, cents), resolve_dim(dim, refs.shape[1], n))
    return classify_projected(net.embed(episode.flat_query()), refs, M, distance)


def evaluate(
    net: EmbeddingNetwork,
    bank,
    split: DatasetSplit,
    n_way_eval: int,
    n_shot: int,
    n_query: int,
    n_episodes: int,
    dim="full",
    seed: int = 0,
    distance: str = "squared",
    stream: int = TEST_STREAM,
    relabel: bool = True,
) -> EvalReport:
    """Mean query accuracy over ``n_episodes`` seeded test episodes.

    Episode i is drawn from an RNG derived from ``(seed, stream, i)`` only, so
    reports are reproducible and episodes are identical across calls that
    differ only in ``dim``.
    """
    n_bank = bank.n_way if isinstance(bank, ReferenceBank) else len(bank)
    if n_way_eval > n_bank:
        raise CapacityError(f"{n_way_eval}-way evaluation with only {n_bank} trained references")
    resolve_dim(dim, net.output_dim, n_way_eval)
    accs = []
    for i in range(n_episodes):
        ep = sample_episode(split, n_way_eval, n_shot, n_query, episode_rng(seed, stream, i))
        pred = predict_episode(net, bank, ep, dim, distance, relabel)
        accs.append(float(np.mean(pred == ep.query_labels)))
    cfg = {"way": n_way_eval, "shot": n_shot, "query": n_query, "D": dim, "seed": seed, "distance": distance}
    return make_report(accs, cfg)


def dimension_sweep(net, bank, split, dims, n_way_eval: int, n_shot: int, n_query: int, n_episodes: int, seed: int = 0, distance: str = "squared") -> list:
    """Evaluate at every D in ``dims`` on the same seeded episodes. Returns [(D, EvalReport)]."""
    for d in dims:
        resolve_dim(d, net.output_dim, n_way_eval)
    return [
        (d, evaluate(net, bank, split, n_way_eval, n_shot, n_query, n_episodes, d, seed, distance))
        for d in dims
    ]


def nearest_centroid_baseline(net: EmbeddingNetwork, episode: Episode, distance: str = "squared") -> np.ndarray:
    """Queries labelled by the nearest raw embedded centroid: no projection, no references."""
    n, s = episode.n_way, episode.n_shot
    cents = net.embed(episode.flat_support()).reshape(n, s, -1).mean(axis=1)
    return pairwise_distances(net.embed(episode.flat_query()), cents, distance).argmin(axis=1)


def evaluate_baseline(net, split, n_way_eval, n_shot, n_query, n_episodes, seed: int = 0, stream: int = TEST_STREAM) -> EvalReport:
    """Nearest-centroid accuracy on exactly the episodes :func:`evaluate` would draw."""
    accs = []
    for i in range(n_episodes):
        ep = sample_episode(split, n_way_eval, n_shot, n_query, episode_rng(seed, stream, i))
        accs.append(float(np.mean(nearest_centroid_baseline(net, ep) == ep.query_labels)))
    return make_report(accs, {"way": n_way_eval, "shot": n_shot, "query": n_query, "seed": seed, "method": "nearest-centroid"})
