"""Command-line entry point.

Settings resolve in this order, later wins: built-in defaults, the JSON
``--config`` file (flat keys or a section named after the command), then
environment variables ``LATENTVIEW_<FLAG>`` (e.g. ``LATENTVIEW_EPOCHS=5``),
then explicit flags.  Every command writes its outputs together with a
config echo, the seed and the format version, prints one JSON status line
on success and exits 0.  Failures print a single ``error: {...}`` JSON line
to stderr and exit nonzero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import TrainConfig, aligned_stacks, train
from .baselines import compare_methods, orientation_experiment, write_orientation_csv, write_report_csv
from .data import FORMAT_VERSION, DataConfig, generate_dataset, load_dataset, save_dataset
from .geometry import build_setup, enumerate_candidates, orientation_sweep, setup_to_json
from .inference import build_pose_table, evaluate, write_metrics_csv
from .model import CHECKPOINT_FORMAT, NetConfig, init_network, load_checkpoint, save_checkpoint
from .report import export_class_averages, plot_table

ENV_PREFIX = "LATENTVIEW_"
RUN_FORMAT = 1
log = logging.getLogger("latentview")


class UsageError(Exception):
    pass


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show the default of every option, with or without a help string."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default" in text or action.default is argparse.SUPPRESS or not action.option_strings:
            return text
        if isinstance(action, (argparse._HelpAction, argparse._VersionAction)):
            return text
        return (text + " " if text else "") + "(default: %(default)s)"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_views(text: str) -> list[int]:
    """``"1..12"``, ``"3"`` or ``"1,2,4"``."""
    text = str(text).strip()
    try:
        if ".." in text:
            a, b = text.split("..")
            out = list(range(int(a), int(b) + 1))
        else:
            out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad view list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty view list")
    return out


def parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _setup_case(text: str) -> str:
    case = str(text).upper()
    if case not in ("I", "II", "III"):
        raise argparse.ArgumentTypeError(f"setup must be i, ii or iii, got {text!r}")
    return case


# ---------------------------------------------------------------- arguments

def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--classes", type=int, default=4, help="number of classes N")
    p.add_argument("--instances", type=int, default=20, help="training instances per class")
    p.add_argument("--test-instances", type=int, default=10, help="test instances per class")
    p.add_argument("--setup", type=_setup_case, default="I", help="viewpoint rig: i, ii or iii")
    p.add_argument("--theta", type=float, default=30.0, help="azimuth step in degrees")
    p.add_argument("--phi", type=float, default=30.0, help="elevation step in degrees (case iii)")
    p.add_argument("--jitter", type=float, default=0.2, help="per-instance shape jitter")
    p.add_argument("--variant", choices=["default", "confusable", "spheres"], default="default",
                   help="object family")
    p.add_argument("--pose", choices=["random", "identity"], default="random",
                   help="per-instance pose distribution")
    p.add_argument("--image-size", type=int, default=16, help="image side in pixels")
    p.add_argument("--orientation", type=int, default=1, help="camera-system orientation trial 1..11")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=30, help="passes over the training split")
    p.add_argument("--lr", type=float, default=0.0005, help="learning rate")
    p.add_argument("--momentum", type=float, default=0.9, help="SGD momentum")
    p.add_argument("--batch-objects", type=int, default=1, help="objects per optimizer step")
    p.add_argument("--hidden", type=parse_ints, default=(64, 64), help="hidden layer widths, comma separated")
    p.add_argument("--conv-channels", type=int, default=0, help="3x3 conv channels before the dense layers (0: none)")
    p.add_argument("--net-seed", type=int, default=42, help="weight initialization seed")


def build_parser() -> _Parser:
    fmt = _HelpFormatter
    parser = _Parser(prog="latentview", description=__doc__.split("\n\n")[0], formatter_class=fmt)
    parser.add_argument("--config", help="JSON file with flag values")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--version", action="version", version=f"latentview {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("generate", help="render a synthetic multi-view dataset", formatter_class=fmt)
    _data_flags(p)
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", required=True, help="dataset container path")

    p = sub.add_parser("train", help="train the latent-viewpoint classifier", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset container")
    _train_flags(p)
    p.add_argument("--seed", type=int, default=0, help="object-order shuffling seed")
    p.add_argument("--assignment", choices=["latent", "fixed"], default="latent",
                   help="latent viewpoints, or ground-truth views")
    p.add_argument("--variance-every", type=int, default=50, help="alignment-variance period (0: off)")
    p.add_argument("--max-iterations", type=int, default=None, help="stop after this many steps")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", default=None, help="training history CSV")
    p.add_argument("--aligned-png", default=None, help="export per-class aligned average images")

    p = sub.add_parser("eval", help="accuracy and pose error over random view subsets", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset container")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--views", type=parse_views, default=None,
                   help="views per trial, e.g. 1..12 or 1,3,12 (default: all views)")
    p.add_argument("--trials", type=int, default=120, help="random view subsets per view count")
    p.add_argument("--seed", type=int, default=0, help="view-subset sampling seed")
    p.add_argument("--split", choices=["train", "test"], default="test", help="split to score")
    p.add_argument("--per-class-table", type=parse_bool, default=True,
                   help="key the pose table by (class, viewpoint)")
    p.add_argument("--out", required=True, help="metrics CSV (a .json summary is written beside it)")

    p = sub.add_parser("candidates", help="export a rig and its rotation candidates", formatter_class=fmt)
    p.add_argument("--setup", type=_setup_case, default="I", help="viewpoint rig: i, ii or iii")
    p.add_argument("--theta", type=float, default=30.0, help="azimuth step in degrees")
    p.add_argument("--phi", type=float, default=30.0, help="elevation step in degrees")
    p.add_argument("--orientation", type=int, default=1, help="camera-system orientation trial 1..11")
    p.add_argument("--out", default=None, help="JSON path (default: stdout)")

    p = sub.add_parser("sweep", help="train one model per camera-system orientation", formatter_class=fmt)
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--seed", type=int, default=0, help="dataset seed (shared by all orientations)")
    p.add_argument("--trials", type=int, default=11, help="number of orientations")
    p.add_argument("--views", type=int, default=None, help="views per evaluation trial (default: all views)")
    p.add_argument("--eval-trials", type=int, default=1, help="view subsets per orientation")
    p.add_argument("--out", required=True, help="orientation CSV")

    p = sub.add_parser("compare", help="latent viewpoints against the baselines", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset container")
    _train_flags(p)
    p.add_argument("--seed", type=int, default=0, help="object-order shuffling seed")
    p.add_argument("--views", type=parse_views, default=None, help="views per trial (default: all views)")
    p.add_argument("--trials", type=int, default=120, help="random view subsets per view count")
    p.add_argument("--marginal", choices=["max", "sum"], default="max",
                   help="fine-grained class score over views")
    p.add_argument("--out", required=True, help="report CSV")

    p = sub.add_parser("plot", help="render a CSV from eval/train/sweep to SVG", formatter_class=fmt)
    p.add_argument("--input", required=True, help="CSV from eval, train --history or sweep")
    p.add_argument("--out", required=True, help="SVG path")
    return parser


# ---------------------------------------------------------------- config layering

def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _coerce(action: argparse.Action, value):
    if isinstance(action, argparse._StoreTrueAction):
        return parse_bool(value)
    if isinstance(value, (list, tuple)):
        value = ",".join(str(v) for v in value)
    if action.type is None or isinstance(value, str):
        return value
    return action.type(str(value))


def layered_defaults(sub: argparse.ArgumentParser, command: str, config: dict, env) -> dict:
    """Defaults from the config file, then the environment, for one command."""
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}
    merged = {k: v for k, v in config.items() if not isinstance(v, dict)}
    merged.update(config.get(command, {}))
    out = {}
    for key, value in merged.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise UsageError(f"unknown config key {key!r} for command {command!r}")
        out[dest] = _coerce(actions[dest], value)
    for dest, action in actions.items():
        raw = env.get(ENV_PREFIX + dest.upper())
        if raw is not None:
            out[dest] = _coerce(action, raw)
    for dest, action in actions.items():
        if dest in out and action.required:
            action.required = False
    return out


def parse_args(argv=None, env=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    env = os.environ if env is None else env
    parser = build_parser()
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    config = {}
    if known.config:
        path = Path(known.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        config = json.loads(path.read_text())
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
    command = next((a for a in argv if not a.startswith("-") and a in _commands(parser)), None)
    if command is not None:
        sub = _subparser(parser, command)
        sub.set_defaults(**layered_defaults(sub, command, config, env))
    return parser.parse_args(argv)


def _commands(parser) -> set[str]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return set(action.choices)
    return set()


def _echo(args: argparse.Namespace, drop=("config", "verbose", "command")) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())
            if k not in drop}


def _require(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {p}")
    return p


def _data_config(args) -> DataConfig:
    return DataConfig(n_classes=args.classes, n_train=args.instances, n_test=args.test_instances,
                      case=args.setup, theta=args.theta, phi=args.phi, image_size=args.image_size,
                      jitter=args.jitter, pose=args.pose, variant=args.variant,
                      orientation_trial=args.orientation)


def _net_config(args, ds) -> NetConfig:
    s = ds.config.image_size
    return NetConfig(image_shape=(s, s), rows=ds.M, cols=ds.config.n_classes + 1,
                     hidden=tuple(args.hidden), conv_channels=args.conv_channels, seed=args.net_seed)


def _train_config(args, **kw) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, lr=args.lr, momentum=args.momentum,
                       batch_objects=args.batch_objects, seed=args.seed, **kw)


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> dict:
    cfg = _data_config(args)
    ds = generate_dataset(cfg, args.seed, jobs=args.jobs)
    save_dataset(ds, args.out)
    return {"outputs": [args.out], "train": len(ds.train), "test": len(ds.test),
            "sha256": _sha256(args.out)}


def cmd_train(args) -> dict:
    ds = load_dataset(_require(args.data))
    setup = ds.setup
    cands = enumerate_candidates(setup)
    net = init_network(_net_config(args, ds))
    cfg = _train_config(args, variance_every=args.variance_every,
                        max_iterations=args.max_iterations, assignment=args.assignment)
    net, hist = train(ds.train, cands, net, cfg)
    echo = _echo(args, drop=("config", "verbose", "command", "out", "history", "aligned_png", "data"))
    extra = {"run_format": RUN_FORMAT, "command": "train", "run": echo, "train_config": asdict(cfg),
             "data": {"sha256": _sha256(args.data), "seed": ds.seed, "format_version": FORMAT_VERSION,
                      "config": asdict(ds.config)}}
    save_checkpoint(net, args.out, extra)
    outputs = [args.out]
    if args.history:
        hist.to_csv(args.history)
        outputs.append(args.history)
    if args.aligned_png:
        stacks = aligned_stacks(ds.train, net, cands)
        unaligned = {}
        for s in ds.train:
            unaligned.setdefault(s.y, []).append(s.images)
        export_class_averages(stacks, args.aligned_png, {c: np.stack(v) for c, v in unaligned.items()})
        outputs.append(args.aligned_png)
    summary = {"iterations": len(hist.iterations), "final_loss": hist.loss[-1] if hist.loss else None,
               "skipped_steps": hist.skipped_steps}
    if hist.mean_variance:
        summary["alignment_variance_first"] = hist.mean_variance[0]
        summary["alignment_variance_last"] = hist.mean_variance[-1]
    return {"outputs": outputs, **summary}


def cmd_eval(args) -> dict:
    ds = load_dataset(_require(args.data))
    net, extra = load_checkpoint(_require(args.checkpoint))
    expected_rows, expected_cols = ds.M, ds.config.n_classes + 1
    if (net.config.rows, net.config.cols) != (expected_rows, expected_cols):
        raise ValueError(f"checkpoint head {net.config.rows}x{net.config.cols} does not fit dataset "
                         f"{expected_rows}x{expected_cols}")
    setup = ds.setup
    cands = enumerate_candidates(setup)
    views = args.views or [setup.M]
    table = build_pose_table(ds.train, net, cands, setup, per_class=args.per_class_table)
    samples = ds.test if args.split == "test" else ds.train
    metrics = evaluate(samples, net, setup, cands, views, args.trials, args.seed, table)
    write_metrics_csv(metrics, args.out)
    summary_path = str(Path(args.out).with_suffix(".json"))
    _write_json(summary_path, {
        "format_version": RUN_FORMAT, "command": "eval", "seed": args.seed, "config": _echo(args),
        "checkpoint": {"sha256": _sha256(args.checkpoint), "config_hash": net.config.config_hash(),
                       "format": CHECKPOINT_FORMAT},
        "data": {"sha256": _sha256(args.data), "seed": ds.seed},
        "rows": [m.to_dict() for m in metrics],
    })
    best = metrics[-1]
    return {"outputs": [args.out, summary_path], "views": views[-1],
            "class_acc": best.class_acc, "view_acc": best.view_acc}


def cmd_candidates(args) -> dict:
    setup = orientation_sweep(build_setup(args.setup, args.theta, args.phi), args.orientation)
    cands = enumerate_candidates(setup)
    doc = json.loads(setup_to_json(setup, cands))
    doc.update({"format_version": RUN_FORMAT, "seed": None, "config": _echo(args)})
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
        return {"outputs": [args.out], "candidates": len(cands)}
    sys.stdout.write(text + "\n")
    return {"outputs": [], "candidates": len(cands), "quiet": True}


def cmd_sweep(args) -> dict:
    base = _data_config(args)
    def factory(t: int):
        return generate_dataset(replace(base, orientation_trial=t), args.seed)

    probe = factory(1)
    result = orientation_experiment(factory, _net_config(args, probe), _train_config(args, variance_every=0),
                                    trials=args.trials, views=args.views,
                                    eval_trials=args.eval_trials)
    write_orientation_csv(result, args.out)
    meta = str(Path(args.out).with_suffix(".json"))
    _write_json(meta, {"format_version": RUN_FORMAT, "command": "sweep", "seed": args.seed,
                       "config": _echo(args), "result": result})
    return {"outputs": [args.out, meta], "mean": result["mean"], "std": result["std"]}


def cmd_compare(args) -> dict:
    ds = load_dataset(_require(args.data))
    rows = compare_methods(ds, _net_config(args, ds), _train_config(args, variance_every=0),
                           args.views, args.trials, marginal=args.marginal)
    write_report_csv(rows, args.out)
    meta = str(Path(args.out).with_suffix(".json"))
    _write_json(meta, {"format_version": RUN_FORMAT, "command": "compare", "seed": args.seed,
                       "config": _echo(args), "data": {"sha256": _sha256(args.data), "seed": ds.seed},
                       "rows": rows})
    return {"outputs": [args.out, meta]}


def cmd_plot(args) -> dict:
    with open(_require(args.input), newline="") as f:
        rows = list(csv.DictReader(f))
    meta = {"source": Path(args.input).name, "source_sha256": _sha256(args.input),
            "format_version": RUN_FORMAT}
    plot_table(rows, args.out, meta)
    return {"outputs": [args.out]}


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "candidates": cmd_candidates, "sweep": cmd_sweep, "compare": cmd_compare, "plot": cmd_plot}


def _fail(kind: str, message: str, code: int) -> int:
    line = json.dumps({"type": kind, "message": " ".join(str(message).split())})
    sys.stderr.write(f"error: {line}\n")
    return code


def main(argv=None, env=None) -> int:
    try:
        args = parse_args(argv, env)
    except UsageError as e:
        return _fail("usage", e, 2)
    except (OSError, ValueError) as e:
        return _fail(type(e).__name__, e, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = COMMANDS[args.command](args)
    except UsageError as e:
        return _fail("usage", e, 2)
    except Exception as e:  # noqa: BLE001 - every failure becomes one parsable line
        log.debug("command failed", exc_info=True)
        return _fail(type(e).__name__, e, 1)
    if not result.pop("quiet", False):
        sys.stdout.write(json.dumps({"status": "ok", "command": args.command, **result}) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
