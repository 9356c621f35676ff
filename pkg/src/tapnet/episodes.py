"""Episodic meta-training: sample a task, build its projection, score queries, update."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import Tensor
from .data import DatasetSplit
from .errors import ConfigError, DataError, DimensionError, InvalidEpisodeError, NumericError, ShapeError
from .nn import EmbeddingNetwork
from .optim import Adam, lr_schedule
from .projection import ErrorMatrix, ProjectionSpace, build_error_matrix, build_projection, class_centroids
from .references import ReferenceBank, min_pairwise_distance

log = logging.getLogger(__name__)

# independent RNG streams per purpose, so validation never shifts training episodes
TRAIN_STREAM, VAL_STREAM, TEST_STREAM = 0, 1, 2


def episode_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index])


@dataclass(frozen=True)
class Episode:
    classes: tuple  # positions in split.classes, in episode-label order
    support: np.ndarray  # (n_way, n_shot, *sample_shape)
    query: np.ndarray  # (n_way, n_query, *sample_shape)
    support_idx: np.ndarray  # (n_way, n_shot) sample indices within each class
    query_idx: np.ndarray

    @property
    def n_way(self) -> int:
        return self.support.shape[0]

    @property
    def n_shot(self) -> int:
        return self.support.shape[1]

    @property
    def n_query(self) -> int:
        return self.query.shape[1]

    @property
    def sample_shape(self) -> tuple:
        return self.support.shape[2:]

    def flat_support(self) -> np.ndarray:
        return self.support.reshape((-1,) + self.sample_shape)

    def flat_query(self) -> np.ndarray:
        return self.query.reshape((-1,) + self.sample_shape)

    @property
    def query_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_way), self.n_query)


def sample_episode(split: DatasetSplit, n_c: int, n_s: int, n_q: int, rng: np.random.Generator) -> Episode:
    """Draw ``n_c`` classes without replacement, then ``n_s + n_q`` samples per
    class without replacement; the first ``n_s`` are the support."""
    if n_c < 2:
        raise InvalidEpisodeError(f"an episode needs at least 2 classes, got {n_c}")
    if n_s < 1 or n_q < 1:
        raise InvalidEpisodeError(f"need n_shot >= 1 and n_query >= 1, got {n_s}, {n_q}")
    if len(split.classes) < n_c:
        raise DataError(f"split has {len(split.classes)} classes, episode needs {n_c}")
    need = n_s + n_q
    short = [c.id for c in split.classes if len(c) < need]
    if short:
        raise DataError(f"{len(short)} class(es) have fewer than {need} samples: {', '.join(short[:10])}")

    classes = rng.choice(len(split.classes), size=n_c, replace=False)
    s_idx = np.empty((n_c, n_s), dtype=np.int64)
    q_idx = np.empty((n_c, n_q), dtype=np.int64)
    support, query = [], []
    for k, ci in enumerate(classes):
        samples = split.classes[ci].samples
        picked = rng.choice(len(samples), size=need, replace=False)
        s_idx[k], q_idx[k] = picked[:n_s], picked[n_s:]
        support.append(samples[s_idx[k]])
        query.append(samples[q_idx[k]])
    return Episode(tuple(int(c) for c in classes), np.stack(support), np.stack(query), s_idx, q_idx)


def resolve_dim(dim, L: int, n_c: int) -> int:
    """``"full"`` means L - N_c; integers are checked against that bound."""
    if dim in (None, "full"):
        d = L - n_c
    else:
        d = int(dim)
    if d < 1 or L < n_c + d:
        raise DimensionError(f"projection dimension {dim} does not fit L={L} with {n_c} classes")
    return d


def episode_projection(net: EmbeddingNetwork, refs: np.ndarray, episode: Episode, dim) -> tuple[ProjectionSpace, ErrorMatrix]:
    """Null-space projection for an episode; supports are embedded off the tape."""
    refs = np.asarray(refs, dtype=np.float64)
    if refs.shape[0] != episode.n_way:
        raise ShapeError(f"{refs.shape[0]} reference rows for a {episode.n_way}-way episode")
    emb = net.embed(episode.flat_support()).reshape(episode.n_way, episode.n_shot, -1)
    cents = class_centroids(emb)
    E = build_error_matrix(refs, cents)
    return build_projection(E, resolve_dim(dim, refs.shape[1], episode.n_way)), E


def projected_loss(query_emb: Tensor, refs: Tensor, M: ProjectionSpace, labels, distance: str = "squared") -> Tensor:
    """Mean of -log softmax(-d(q M, phi_l M)) at each query's own class.

    ``M`` is a constant here: gradients reach ``query_emb`` and ``refs`` only
    through the projected distances.
    """
    basis = Tensor(M.basis)
    q = query_emb @ basis
    r = refs @ basis
    n, D = q.shape
    c = r.shape[0]
    diff = q.reshape(n, 1, D) - r.reshape(1, c, D)
    d = (diff * diff).sum(axis=2)
    if distance == "euclidean":
        d = d.sqrt()
    elif distance != "squared":
        raise ConfigError(f"unknown distance {distance!r}")
    logp = (-d).log_softmax(axis=1)
    labels = np.asarray(labels, dtype=np.int64)
    return -(logp[np.arange(n), labels].mean())


def neg_log_softmax(dists: np.ndarray, target: int) -> float:
    """Plain-numpy counterpart of one query's loss term, max-shifted."""
    z = -np.asarray(dists, dtype=np.float64)
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()) - z[target])


def check_grad_policy(policy: str):
    if policy == "on":
        raise NotImplementedError("gradients through the null-space projection are not implemented")
    if policy != "off":
        raise ConfigError(f"grad_through_projection must be 'off' or 'on', got {policy!r}")


def episode_loss(
    net: EmbeddingNetwork,
    bank_rows: Tensor,
    episode: Episode,
    dim="full",
    grad_policy: str = "off",
    distance: str = "squared",
    projection: ProjectionSpace | None = None,
) -> Tensor:
    """Taped training loss of one episode; row k of ``bank_rows`` is episode class k.

    ``projection`` overrides the basis built from the supports, which lets a
    caller hold ``M`` fixed (finite-difference checks).
    """
    check_grad_policy(grad_policy)
    bank_rows = bank_rows if isinstance(bank_rows, Tensor) else Tensor(bank_rows)
    M = projection if projection is not None else episode_projection(net, bank_rows.data, episode, dim)[0]
    loss = projected_loss(net(episode.flat_query()), bank_rows, M, episode.query_labels, distance)
    if not np.isfinite(loss.data):
        raise NumericError(f"non-finite episode loss {loss.item()}")
    return loss


@dataclass
class TrainConfig:
    n_way_train: int = 10
    n_way_eval: int = 5
    n_shot: int = 1
    n_query: int = 8
    n_episodes: int = 2000
    proj_dim: int | str = "full"
    lr: float = 1e-3
    lr_decay_every: int = 40_000
    lr_decay_factor: float = 0.5
    seed: int = 0
    distance: str = "squared"
    grad_through_projection: str = "off"
    val_every: int = 500
    val_episodes: int = 200
    val_query: int = 15

    def validate(self, L: int | None = None):
        if self.n_way_train < 2 or self.n_way_eval < 2:
            raise ConfigError("way must be >= 2")
        if self.n_way_eval > self.n_way_train:
            raise ConfigError(f"n_way_eval {self.n_way_eval} > n_way_train {self.n_way_train}")
        if self.n_episodes < 0:
            raise ConfigError("n_episodes must be >= 0")
        if self.distance not in ("squared", "euclidean"):
            raise ConfigError(f"unknown distance {self.distance!r}")
        if self.val_every < 1:
            raise ConfigError("val_every must be >= 1")
        lr_schedule(0, self.lr, self.lr_decay_every, self.lr_decay_factor)
        if L is not None:
            resolve_dim(self.proj_dim, L, self.n_way_train)
        return self


@dataclass
class TrainResult:
    net: EmbeddingNetwork
    bank: ReferenceBank
    optimizer: Adam
    log: list = field(default_factory=list)
    best_state: dict | None = None  # {"net": state_dict, "phi": array, "episode": int, "val_accuracy": float}
    episodes_done: int = 0

    def best_model(self) -> tuple[dict, np.ndarray]:
        if self.best_state is None:
            return self.net.state_dict(), self.bank.rows.copy()
        return self.best_state["net"], self.best_state["phi"]


def train(
    config: TrainConfig,
    splits: dict,
    net: EmbeddingNetwork,
    bank: ReferenceBank,
    optimizer: Adam | None = None,
) -> TrainResult:
    """Run ``config.n_episodes`` episodes of meta-training on ``splits['train']``.

    Validation on ``splits['val']`` (if present) runs every ``val_every``
    episodes and after the last one; the parameters with the best validation
    accuracy are kept in ``best_state``.
    """
    from .evaluation import evaluate

    config.validate(net.output_dim)
    check_grad_policy(config.grad_through_projection)
    if bank.n_way != config.n_way_train:
        raise ConfigError(f"bank has {bank.n_way} rows but n_way_train is {config.n_way_train}")
    if bank.dim != net.output_dim:
        raise ShapeError(f"bank row length {bank.dim} != embedding size {net.output_dim}")

    train_split = splits["train"]
    val_split = splits.get("val")
    optimizer = optimizer or Adam()
    params = dict(net.named_parameters())
    params["bank.phi"] = bank.phi
    result = TrainResult(net, bank, optimizer)
    best_acc = -1.0

    for i in range(config.n_episodes):
        ep = sample_episode(train_split, config.n_way_train, config.n_shot, config.n_query, episode_rng(config.seed, TRAIN_STREAM, i))
        for p in params.values():
            p.zero_grad()
        try:
            M, E = episode_projection(net, bank.rows, ep, config.proj_dim)
            loss = projected_loss(net(ep.flat_query()), bank.phi, M, ep.query_labels, config.distance)
        except NumericError as exc:
            raise NumericError(f"training aborted at episode {i}: {exc}") from exc
        if not np.isfinite(loss.data):
            raise NumericError(f"training aborted at episode {i}: non-finite loss {loss.item()}")
        loss.backward()
        lr = lr_schedule(i, config.lr, config.lr_decay_every, config.lr_decay_factor)
        optimizer.step(params, lr)

        rec = {
            "episode": i,
            "loss": loss.item(),
            "lr": lr,
            "min_ref_distance": min_pairwise_distance(bank),
            "degenerate": len(E.degenerate_rows),
        }
        if val_split is not None and ((i + 1) % config.val_every == 0 or i + 1 == config.n_episodes):
            rep = evaluate(
                net, bank, val_split, config.n_way_eval, config.n_shot, config.val_query,
                config.val_episodes, dim=config.proj_dim, seed=config.seed, distance=config.distance, stream=VAL_STREAM,
            )
            rec["val_accuracy"] = rep.mean_accuracy
            if rep.mean_accuracy > best_acc:
                best_acc = rep.mean_accuracy
                result.best_state = {
                    "net": net.state_dict(), "phi": bank.rows.copy(),
                    "episode": i + 1, "val_accuracy": rep.mean_accuracy,
                }
            log.info("episode %d loss %.4f val %.4f", i + 1, rec["loss"], rep.mean_accuracy)
        result.log.append(rec)
        result.episodes_done = i + 1
    return result


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
