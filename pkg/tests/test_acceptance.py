"""Acceptance criteria, one test each. Every test records a PASS/FAIL line
that is printed in the terminal summary (see conftest)."""

import json
import os
import time

import numpy as np
import pytest

from tapnet import checkpoint as ck
from tapnet.autograd import Tensor, conv2d, max_pool2d
from tapnet.cli import build_splits, main
from tapnet.config import parse_text
from tapnet.data import SyntheticTaskSpec, synthetic_splits
from tapnet.episodes import TEST_STREAM, TRAIN_STREAM, episode_loss, episode_projection, episode_rng, sample_episode
from tapnet.evaluation import evaluate_baseline, predict_episode
from tapnet.nn import Dense, mlp
from tapnet.projection import build_error_matrix, build_projection, class_centroids, modified_references
from tapnet.references import ReferenceBank, init_references, select_and_relabel

from conftest import ACCEPTANCE, grad_check, greedy_oracle

SYNTHETIC = """\
[data]
dataset = synthetic
n_classes_pool = 20
input_dim = 32
cluster_std = 0.1
cluster_separation = 1.0
samples_per_class = 20
[model]
arch = mlp
hidden = 64,64
embed_dim = 64
[train]
n_way_train = 10
n_way_eval = 5
n_shot = 1
n_query = 8
n_episodes = 2000
val_every = 500
val_episodes = 200
seed = 0
[eval]
n_way = 5
n_shot = 1
n_query = 15
n_episodes = 1000
seed = 0
"""


def record(name, ok, detail):
    ACCEPTANCE[name] = (ok, detail)
    assert ok, f"{name}: {detail}"


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory):
    """Train the synthetic model twice with the same seed, then evaluate it."""
    root = tmp_path_factory.mktemp("synthetic")
    cfg_path = root / "synthetic.ini"
    cfg_path.write_text(SYNTHETIC)
    t0 = time.perf_counter()
    runs = []
    for name in ("run1", "run2"):
        assert main(["train", "--config", str(cfg_path), "--out", str(root / name)]) == 0
        runs.append(root / name)
    assert main(["eval", "--checkpoint", str(runs[0] / "best.tapn")]) == 0
    elapsed = (time.perf_counter() - t0) / 2  # one train+eval, the second run only checks determinism
    return {"root": root, "runs": runs, "elapsed": elapsed, "config": parse_text(SYNTHETIC)}


@pytest.fixture(scope="module")
def synthetic_model(synthetic_run):
    net, bank = ck.load(synthetic_run["runs"][0] / "best.tapn").build()
    return net, bank, build_splits(synthetic_run["config"].data)


def test_null_space_suite():
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    worst_null = worst_orth = 0.0
    for _ in range(1000):
        n_c = int(rng.integers(2, 21))
        L = int(rng.choice([32, 64, 128]))
        D = int(rng.integers(1, L - n_c + 1))
        E = build_error_matrix(rng.standard_normal((n_c, L)), rng.standard_normal((n_c, L)))
        M = build_projection(E, D).basis
        worst_null = max(worst_null, np.abs(E.rows @ M).max())
        worst_orth = max(worst_orth, np.abs(M.T @ M - np.eye(D)).max())
    dt = time.perf_counter() - t0
    ok = worst_null <= 1e-8 and worst_orth <= 1e-10 and dt < 60
    record("null-space suite", ok, f"1000 instances, max|EM|={worst_null:.1e}, max|MtM-I|={worst_orth:.1e}, {dt:.1f}s")


def test_alignment_suite():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n_c = int(rng.integers(2, 21))
        L = int(rng.choice([32, 64, 128]))
        D = int(rng.integers(1, L - n_c + 1))
        phi = rng.standard_normal((n_c, L))
        cents = rng.standard_normal((n_c, L)) * rng.uniform(0.1, 10)
        M = build_projection(build_error_matrix(phi, cents), D).basis
        tilde = modified_references(phi)
        u = tilde / np.linalg.norm(tilde, axis=1, keepdims=True) - cents / np.linalg.norm(cents, axis=1, keepdims=True)
        worst = max(worst, np.linalg.norm(u @ M, axis=1).max())
    dt = time.perf_counter() - t0
    record("alignment suite", worst <= 1e-8 and dt < 60, f"1000 instances, max norm={worst:.1e}, {dt:.1f}s")


def test_basis_invariance(synthetic_model):
    net, bank, splits = synthetic_model
    worst, mismatches = 0.0, 0
    for i in range(100):
        ep = sample_episode(splits["test"], 5, 1, 15, episode_rng(99, TEST_STREAM, i))
        cents = class_centroids(net.embed(ep.flat_support()).reshape(5, 1, -1))
        refs, _ = select_and_relabel(bank, cents)
        M = build_projection(build_error_matrix(refs, cents), net.output_dim - 5)
        q = net.embed(ep.flat_query())
        via_m = (((q @ M.basis)[:, None, :] - (refs @ M.basis)[None]) ** 2).sum(-1)
        diff = q[:, None, :] - refs[None]
        via_p = np.einsum("nci,ij,ncj->nc", diff, M.projector, diff)
        worst = max(worst, np.abs(via_m - via_p).max())
        mismatches += int((via_m.argmin(1) != via_p.argmin(1)).sum())
        mismatches += int((predict_episode(net, bank, ep) != via_p.argmin(1)).sum())
    record("basis invariance", worst <= 1e-8 and mismatches == 0, f"100 episodes, max|d_M - d_P|={worst:.1e}, {mismatches} differing predictions")


def gradient_cases(seed):
    """One small random instance per layer type plus the full episode loss."""
    r = np.random.default_rng(seed)

    def leaf(*shape, scale=1.0):
        return Tensor(scale * r.standard_normal(shape), requires_grad=True)

    x, layer = leaf(4, 5), Dense(5, 3, r)
    yield "dense", lambda: (layer(x) ** 2).sum(), [x, layer.W, layer.b]

    a = r.standard_normal((3, 6))
    a[np.abs(a) < 0.05] += 0.1  # away from the kink
    xr, cr = Tensor(a, requires_grad=True), Tensor(r.standard_normal((3, 6)))
    yield "relu", lambda: (xr.relu() * cr).sum(), [xr]

    xc, w, b = leaf(2, 2, 4, 4), leaf(3, 2, 3, 3, scale=0.5), leaf(3)
    cc = Tensor(r.standard_normal((2, 3, 4, 4)))
    yield "conv2d", lambda: (conv2d(xc, w, b, padding=1) * cc).sum(), [xc, w, b]

    xp, cp = leaf(2, 2, 4, 4), Tensor(r.standard_normal((2, 2, 2, 2)))
    yield "maxpool", lambda: (max_pool2d(xp, 2) * cp).sum(), [xp]

    xf, cf = leaf(2, 3, 2, 2), Tensor(r.standard_normal((2, 12)))
    yield "flatten", lambda: (xf.reshape(2, -1) * cf).sum(), [xf]

    net = mlp(4, hidden=(5,), output_dim=9, seed=seed)
    bank = ReferenceBank(r.standard_normal((3, 9)))
    split = synthetic_splits(SyntheticTaskSpec(n_classes_pool=4, input_dim=4, samples_per_class=6, seed=seed))["train"]
    ep = sample_episode(split, 3, 2, 2, r)
    M, _ = episode_projection(net, bank.rows, ep, "full")
    yield "episode_loss", lambda: episode_loss(net, bank.phi, ep, projection=M), net.parameters() + [bank.phi]


def test_gradient_suite():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(20):
        for name, fn, tensors in gradient_cases(seed):
            worst[name] = max(worst.get(name, 0.0), grad_check(fn, tensors))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and dt < 300
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record("gradient suite", ok, f"20 instances per case, max rel err: {detail}; {dt:.1f}s")


def test_loss_sanity():
    splits = synthetic_splits(SyntheticTaskSpec(input_dim=32, seed=0))
    net = mlp(32, seed=0)
    bank = init_references(5, net.output_dim, seed=0)
    losses = []
    for i in range(100):
        ep = sample_episode(splits["train"], 5, 1, 8, episode_rng(0, TRAIN_STREAM, i))
        losses.append(episode_loss(net, bank.phi, ep).item())
    mean, target = float(np.mean(losses)), float(np.log(5))
    rel = (mean - target) / target
    record("loss sanity", abs(rel) <= 0.15, f"mean initial loss {mean:.4f} vs ln 5 = {target:.4f} ({100 * rel:+.1f}%)")


@pytest.mark.slow
def test_synthetic_end_to_end(synthetic_run, synthetic_model):
    run1, run2 = synthetic_run["runs"]
    same = all((run1 / f).read_bytes() == (run2 / f).read_bytes() for f in ("best.tapn", "final.tapn", "metrics.jsonl"))
    summary = read_jsonl(run1 / "eval_report.jsonl")[-1]["summary"]
    acc, ci = summary["mean_accuracy"], summary["ci95_halfwidth"]
    net, _, splits = synthetic_model
    e = synthetic_run["config"].eval
    base = evaluate_baseline(net, splits["test"], e.n_way, e.n_shot, e.n_query, e.n_episodes, e.seed).mean_accuracy
    dt = synthetic_run["elapsed"]
    ok = acc >= 0.95 and acc >= base - 0.02 and same and dt < 600
    record(
        "synthetic end-to-end",
        ok,
        f"5-way 1-shot on novel classes {100 * acc:.2f}% +- {100 * ci:.2f}% (need >= 95%), "
        f"nearest-centroid {100 * base:.2f}%, deterministic={same}, {dt:.0f}s",
    )


def test_selection_relabel():
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(500):
        n_b = int(rng.integers(2, 7))
        n_c = int(rng.integers(2, min(4, n_b) + 1))
        dim = int(rng.integers(1, 5))
        bank = rng.standard_normal((n_b, dim)) * rng.uniform(0.1, 5)
        cents = rng.standard_normal((n_c, dim))
        rows, picked = select_and_relabel(bank, cents)
        bad += int(not np.array_equal(picked, greedy_oracle(bank, cents)) or not np.array_equal(rows, bank[picked]))
    record("selection/relabel", bad == 0, f"500 trials, {bad} disagreements with the exhaustive oracle")


@pytest.mark.optional
def test_scaled_image_run(tmp_path):
    root = os.environ.get("TAPNET_IMAGE_ROOT")
    if not root:
        ACCEPTANCE["scaled image run"] = (None, "set TAPNET_IMAGE_ROOT to an Omniglot-style folder to run")
        pytest.skip("no image folder configured")
    cfg = tmp_path / "image.ini"
    cfg.write_text(
        f"[data]\ndataset = image-folder:{root}\naugment_rotations = true\n"
        f"train_classes = {os.environ.get('TAPNET_TRAIN_CLASSES', '1200')}\n"
        f"val_classes = {os.environ.get('TAPNET_VAL_CLASSES', '100')}\n"
        "[model]\narch = conv4\n[train]\nn_way_train = 20\nn_query = 5\n"
        f"n_episodes = {os.environ.get('TAPNET_IMAGE_EPISODES', '20000')}\nval_every = 2000\n"
        "[eval]\nn_way = 5\nn_shot = 1\nn_query = 15\nn_episodes = 1000\n"
    )
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert main(["eval", "--checkpoint", str(tmp_path / "best.tapn")]) == 0
    acc = read_jsonl(tmp_path / "eval_report.jsonl")[-1]["summary"]["mean_accuracy"]
    record("scaled image run", acc >= 0.85, f"5-way 1-shot {100 * acc:.2f}% (need >= 85%)")


def test_checkpoint_roundtrip(synthetic_run, tmp_path):
    files = sorted(synthetic_run["root"].rglob("*.tapn"))
    same = []
    for f in files:
        out = tmp_path / f.name
        ck.save(out, ck.load(f))
        same.append(out.read_bytes() == f.read_bytes())
    record("checkpoint round-trip", bool(files) and all(same), f"{sum(same)}/{len(files)} checkpoints byte-identical after load+save")


@pytest.mark.slow
def test_dimension_sweep(synthetic_run):
    ckpt = synthetic_run["runs"][0] / "best.tapn"
    out = synthetic_run["root"] / "sweep"
    assert main(["sweep", "--checkpoint", str(ckpt), "--d-list", "1,2,4,8,16,full", "--out", str(out)]) == 0
    recs = read_jsonl(out / "sweep_report.jsonl")
    complete = all("mean_accuracy" in r for r in recs) and len(recs) == 6
    acc = {r["D"]: r["mean_accuracy"] for r in recs if "mean_accuracy" in r}
    ok = complete and acc["full"] > acc[1]
    curve = ", ".join(f"D={d}: {100 * a:.1f}%" for d, a in acc.items())
    record("dimension sweep", ok, curve)
