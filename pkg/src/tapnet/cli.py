"""Command-line entry point: ``tapnet {train,eval,sweep,inspect}``.

Exit status: 0 success, 1 usage/config error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import config as cfg_io
from .config import RunConfig
from .data import SyntheticTaskSpec, load_image_splits, synthetic_splits
from .episodes import resolve_dim, train
from .errors import ConfigError, DataError, DimensionError, TapNetError
from .evaluation import dimension_sweep, evaluate
from .nn import conv4, mlp
from .references import init_references, min_pairwise_distance

log = logging.getLogger("tapnet")

TRAIN_FLAGS = {"seed": "seed", "episodes": "n_episodes", "way": "n_way_train", "shot": "n_shot", "query": "n_query", "proj_dim": "proj_dim"}
EVAL_FLAGS = {"seed": "seed", "episodes": "n_episodes", "way": "n_way", "shot": "n_shot", "query": "n_query", "proj_dim": "proj_dim"}


def build_splits(data: cfg_io.DataConfig) -> dict:
    if data.dataset == "synthetic":
        spec = SyntheticTaskSpec(
            data.n_classes_pool, data.input_dim, data.cluster_std, data.cluster_separation,
            data.samples_per_class, data.seed,
        )
        return synthetic_splits(spec)
    if data.dataset.startswith("image-folder:"):
        root = data.dataset.split(":", 1)[1]
        return load_image_splits(root, data.train_classes, data.val_classes, data.augment_rotations)
    raise ConfigError(f"unknown dataset {data.dataset!r} (expected 'synthetic' or 'image-folder:PATH')")


def _seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def build_model(cfg: RunConfig, sample_shape: tuple):
    m = cfg.model
    net_seed = _seed(cfg.train.seed, m.seed, 0)
    if m.arch == "mlp":
        if len(sample_shape) != 1:
            raise ConfigError(f"mlp needs flat samples, dataset has shape {sample_shape}")
        net = mlp(sample_shape[0], m.hidden, m.embed_dim, seed=net_seed)
    elif m.arch == "conv4":
        net = conv4(sample_shape, m.channels, seed=net_seed)
    else:
        raise ConfigError(f"unknown arch {m.arch!r}")
    bank = init_references(cfg.train.n_way_train, net.output_dim, seed=_seed(cfg.train.seed, m.seed, 1))
    return net, bank


def _overrides(args, mapping: dict, section: str) -> dict:
    values = {section: {}}
    for flag, key in mapping.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[section][key] = str(v)
    if getattr(args, "dataset", None):
        values["data"] = {"dataset": args.dataset}
    return values


def _write_jsonl(path: Path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    cfg = cfg_io.load(args.config) if args.config else RunConfig()
    cfg_io.apply(cfg, _overrides(args, TRAIN_FLAGS, "train"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = build_splits(cfg.data)
    net, bank = build_model(cfg, splits["train"].sample_shape)
    cfg.train.validate(net.output_dim)
    echo = cfg_io.dump(cfg)
    (out / "config.ini").write_text(echo, encoding="utf-8")

    result = train(cfg.train, splits, net, bank)

    meta = {"config": echo, "seed": cfg.train.seed, "episodes": result.episodes_done, "kind": "final"}
    ckpt_io.save(out / "final.tapn", ckpt_io.Checkpoint.from_model(net, bank, result.optimizer, meta))
    best_net, best_phi = result.best_model()
    best = ckpt_io.Checkpoint(net.descriptor, net.output_dim, bank.n_way, best_net, best_phi, None, dict(meta, kind="best"))
    if result.best_state is not None:
        best.metadata.update(episodes=result.best_state["episode"], val_accuracy=result.best_state["val_accuracy"])
    ckpt_io.save(out / "best.tapn", best)
    _write_jsonl(out / "metrics.jsonl", result.log)
    last = result.log[-1] if result.log else {}
    print(f"trained {result.episodes_done} episodes; final loss {last.get('loss', float('nan')):.4f}; wrote {out}")
    return 0


def _load_for_eval(args):
    ck = ckpt_io.load(args.checkpoint)
    cfg = cfg_io.parse_text(ck.metadata.get("config", ""))
    if args.config:
        cfg = cfg_io.load(args.config, cfg)
    cfg_io.apply(cfg, _overrides(args, EVAL_FLAGS, "eval"))
    net, bank = ck.build()
    splits = build_splits(cfg.data)
    if "test" not in splits:
        raise DataError("dataset has no test split")
    return ck, cfg, net, bank, splits["test"]


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_eval(args) -> int:
    _, cfg, net, bank, test = _load_for_eval(args)
    e = cfg.eval
    rep = evaluate(net, bank, test, e.n_way, e.n_shot, e.n_query, e.n_episodes, e.proj_dim, e.seed, cfg.train.distance)
    records = [{"episode": i, "accuracy": a} for i, a in enumerate(rep.accuracies)]
    records.append({"summary": rep.summary()})
    path = _out_dir(args) / "eval_report.jsonl"
    _write_jsonl(path, records)
    print(f"accuracy {100 * rep.mean_accuracy:.2f}% +- {100 * rep.ci95_halfwidth:.2f}% over {rep.n_episodes} episodes ({e.n_way}-way {e.n_shot}-shot); wrote {path}")
    return 0


def _parse_dims(text: str) -> list:
    dims = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok == "full":
            dims.append("full")
        else:
            try:
                dims.append(int(tok))
            except ValueError:
                raise ConfigError(f"bad --d-list entry {tok!r}") from None
    if not dims:
        raise ConfigError("--d-list is empty")
    return dims


def cmd_sweep(args) -> int:
    dims = _parse_dims(args.d_list)
    _, cfg, net, bank, test = _load_for_eval(args)
    e = cfg.eval
    records = []
    for d in dims:
        try:
            resolve_dim(d, net.output_dim, e.n_way)
        except DimensionError as exc:
            records.append({"D": d, "error": str(exc)})
            continue
        [(_, rep)] = dimension_sweep(net, bank, test, [d], e.n_way, e.n_shot, e.n_query, e.n_episodes, e.seed, cfg.train.distance)
        records.append({"D": d, "D_resolved": resolve_dim(d, net.output_dim, e.n_way), **rep.summary()})
    path = _out_dir(args) / "sweep_report.jsonl"
    _write_jsonl(path, records)
    for rec in records:
        if "error" in rec:
            print(f"D={rec['D']}: error: {rec['error']}")
        else:
            print(f"D={rec['D']}: {100 * rec['mean_accuracy']:.2f}% +- {100 * rec['ci95_halfwidth']:.2f}%")
    return 0


def cmd_inspect(args) -> int:
    ck = ckpt_io.load(args.checkpoint)
    meta = ck.metadata
    print(f"architecture: {json.dumps(ck.arch, sort_keys=True)}")
    print(f"embedding length L: {ck.L}")
    print(f"training way: {ck.n_way_train}")
    print(f"episodes: {meta.get('episodes', 0)}")
    print(f"kind: {meta.get('kind', '?')}")
    print(f"min_pairwise_distance: {min_pairwise_distance(ck.phi)!r}")
    if ck.optimizer is not None:
        print(f"optimizer steps: {ck.optimizer['t']}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tapnet", description="Few-shot classification with task-adaptive projection.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="config file (key = value with [sections])")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--way", type=int)
        sp.add_argument("--shot", type=int)
        sp.add_argument("--query", type=int)
        sp.add_argument("--proj-dim", dest="proj_dim", help="integer or 'full'")
        sp.add_argument("--dataset", help="synthetic | image-folder:PATH")

    t = sub.add_parser("train", help="meta-train and write checkpoints + metrics")
    common(t)
    t.set_defaults(func=cmd_train, out="runs/tapnet")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="evaluate over several projection dimensions")
    common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--d-list", dest="d_list", required=True, help="comma-separated, e.g. 1,2,4,full")
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("inspect", help="summarize a checkpoint")
    i.add_argument("--checkpoint", required=True)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except TapNetError as exc:
        print(f"tapnet: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except NotImplementedError as exc:
        print(f"tapnet: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"tapnet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
