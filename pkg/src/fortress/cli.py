"""Command-line interface.

Subcommands: synth, train, eval, predict, analyze, verify, gradcheck.
Exit codes: 0 success, 1 check/operation failure, 2 configuration or
usage error, 3 numeric failure (non-finite values during training).
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import analysis, dataio, model as model_io, training, verify
from .dataio import IMAGENET_MEAN, IMAGENET_STD, SynthConfig
from .errors import ConfigurationError, DataError, FormatError, FortressError, NumericError
from .metrics import ConfusionMatrix, accumulate, report
from .model import ModelConfig, build
from .tensor import Tensor
from .training import TrainConfig

_PALETTE = np.asarray([
    (0, 0, 0), (220, 40, 40), (40, 90, 220), (240, 180, 40), (40, 180, 90),
    (170, 60, 190), (240, 120, 40), (90, 200, 220), (200, 200, 200),
], dtype=np.float32) / 255.0


def _default_seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("FORTRESS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigurationError(f"FORTRESS_SEED must be an integer, got '{env}'") from exc
    return 0


def _parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got '{item}'")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out


def _merge(base, override):
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def _load_sections(args):
    """Config file sections merged with --set overrides."""
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            try:
                cfg = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"bad config file: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigurationError("config file must hold a JSON object")
    return _merge(cfg, _parse_set(getattr(args, "set", None)))


def _dataclass_from(cls, d, what):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown {what} config keys: {sorted(unknown)}")
    return cls(**d)


def _echo(label, obj):
    print(f"{label}: {json.dumps(obj, sort_keys=True)}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    sections = _load_sections(args)
    d = sections.get("synth", {})
    d.setdefault("seed", _default_seed(args))
    if args.n is not None:
        d["n_samples"] = args.n
    if args.size is not None:
        d["size"] = args.size
    if args.classes is not None:
        d["num_classes"] = args.classes
    cfg = _dataclass_from(SynthConfig, d, "synth")
    _echo("synth config", dataclasses.asdict(cfg))
    manifest = dataio.synth_generate(cfg, args.out)
    counts = {}
    for e in manifest["samples"]:
        counts[e["split"]] = counts.get(e["split"], 0) + 1
    _echo("written", {"dir": args.out, "splits": counts})
    return 0


def _configs_from(sections, args):
    mcfg = ModelConfig.from_dict(sections.get("model", {}))
    td = dict(sections.get("train", {}))
    td.setdefault("seed", _default_seed(args))
    tcfg = _dataclass_from(TrainConfig, td, "train")
    return mcfg, tcfg


def cmd_train(args):
    sections = _load_sections(args)
    mcfg, tcfg = _configs_from(sections, args)
    _echo("model config", mcfg.to_dict())
    _echo("train config", dataclasses.asdict(tcfg))
    train_set = dataio.load_dataset(args.data, "train")
    val_set = dataio.load_dataset(args.data, "val")
    os.makedirs(args.out, exist_ok=True)
    model = build(mcfg, seed=tcfg.seed)
    history = training.fit(
        model, train_set, val_set, tcfg,
        checkpoint_dir=args.out, log=print,
    )
    hist_path = os.path.join(args.out, "history.json")
    with open(hist_path, "w") as f:
        json.dump({
            "records": history.records,
            "best_epoch": history.best_epoch,
            "best_f1": history.best_f1,
            "stopped_early": history.stopped_early,
        }, f, indent=1)
    _echo("result", {"best_epoch": history.best_epoch, "best_f1": history.best_f1,
                     "checkpoint": os.path.join(args.out, "best.fkpt")})
    return 0


def cmd_eval(args):
    model = model_io.load(args.checkpoint)
    samples = dataio.load_dataset(args.data, args.split)
    if not samples:
        raise DataError(f"no samples in split '{args.split}'")
    cm = ConfusionMatrix(model.cfg.num_classes)
    for x, y in dataio.load_batches(samples, args.batch, rng=None, size=args.size):
        pred = model.predict(Tensor(x.astype(model.cfg.np_dtype)))
        accumulate(cm, pred, y)
    rep = report(cm)
    _echo("metrics", rep)
    return 0


def cmd_predict(args):
    model = model_io.load(args.checkpoint)
    image = dataio.read_image(args.image)
    h, w = image.shape[1], image.shape[2]
    size = model.cfg.input_size
    img_in, _ = dataio.resize_pair(image, np.zeros((h, w), dtype=np.int64), size)
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(IMAGENET_STD, dtype=np.float32).reshape(3, 1, 1)
    x = ((img_in - mean) / std)[None].astype(model.cfg.np_dtype)
    pred = model.predict(Tensor(x))[0]
    if pred.shape != (h, w):
        iy = dataio._nearest_index(pred.shape[0], h)
        ix = dataio._nearest_index(pred.shape[1], w)
        pred = pred[np.ix_(iy, ix)]
    dataio.write_mask(args.out, pred)
    if args.overlay:
        color = _PALETTE[pred % len(_PALETTE)].transpose(2, 0, 1)
        alpha = np.where(pred > 0, 0.45, 0.0)[None]
        dataio.write_image(args.overlay, (1 - alpha) * image + alpha * color)
    _echo("written", {"mask": args.out, "overlay": args.overlay})
    return 0


def cmd_analyze(args):
    if args.checkpoint:
        model = model_io.load(args.checkpoint)
    else:
        sections = _load_sections(args)
        model = build(ModelConfig.from_dict(sections.get("model", {})), seed=0)
    rep = analysis.analyze(model, args.size)
    print(rep.to_json() if args.json else rep.to_text())
    if args.bench:
        _echo("forward seconds", analysis.bench_forward(model, args.size))
    return 0


def cmd_verify(args):
    names = args.suite.split(",") if args.suite else list(verify.SUITES)
    unknown = [n for n in names if n not in verify.SUITES]
    if unknown:
        raise ConfigurationError(f"unknown suites: {unknown}; "
                                 f"available: {sorted(verify.SUITES)}")
    failed = False
    for name in names:
        ok, details = verify.SUITES[name]()
        print(f"{name}: {'pass' if ok else 'fail'}")
        if not ok:
            print(f"  details: {details}")
            failed = True
    return 1 if failed else 0


def cmd_gradcheck(args):
    err = verify.e2e_gradcheck(eps=args.eps, seed=_default_seed(args))
    ok = err < args.threshold
    print(f"end-to-end gradcheck: max relative error {err:.3e} "
          f"({'pass' if ok else 'fail'}, threshold {args.threshold:g})")
    return 0 if ok else 1


# ---------------------------------------------------------------------------


def _add_common(p, config=True, seed=True):
    if config:
        p.add_argument("--config", help="JSON config file with model/train/synth sections")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted config override, e.g. model.num_classes=4")
    if seed:
        p.add_argument("--seed", type=int, default=None,
                       help="seed (falls back to FORTRESS_SEED, then 0)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fortress",
        description="Deterministic depthwise-separable segmentation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic defect dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None, help="number of samples")
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    _add_common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint/history directory")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--size", type=int, default=None, help="resize samples before scoring")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="segment one PPM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output PGM mask path")
    p.add_argument("--overlay", default=None, help="optional PPM overlay path")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("analyze", help="parameter/FLOP report")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.add_argument("--bench", action="store_true", help="time the forward pass")
    _add_common(p, seed=False)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("verify", help="run self-check suites")
    p.add_argument("--suite", default=None,
                   help=f"comma-separated subset of {sorted(verify.SUITES)}")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("gradcheck", help="miniature end-to-end gradient check")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--threshold", type=float, default=1e-3)
    _add_common(p, config=False)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigurationError, FormatError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FortressError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
