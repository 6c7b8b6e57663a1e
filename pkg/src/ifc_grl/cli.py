"""Command-line interface: ``ifc-grl <command> ...``.

Exit status is 0 on success, 1 on bad input or usage, 2 when an internal
invariant is violated.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from . import dataset, geometry, step, synthetic
from .evaluation import ablation_suite, evaluate, format_ablation, format_history, write_report
from .model import (GRModel, VARIANT_ALIASES, count_linear_macs, count_parameters, load_model,
                    parameter_cost, read_arch, save_model)
from .nn import CheckpointError
from .relations import CONNECTS_SUBTYPES, RelationError, build_vectors
from .training import TrainConfig, train

logger = logging.getLogger("ifc_grl")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2

INPUT_ERRORS = (step.StepError, RelationError, geometry.GeometryError, dataset.DatasetError,
                CheckpointError, FileNotFoundError, NotADirectoryError, configparser.Error, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")

    def parse_args(self, args=None, namespace=None):
        # name an unknown flag even when required arguments are also missing
        required = [a for p in self._all_parsers() for a in p._actions if a.required]
        for action in required:
            action.required = False
        try:
            _, extras = self.parse_known_args(args, namespace)
        finally:
            for action in required:
                action.required = True
        if extras:
            self._subparser_for(args).error(f"unrecognized arguments: {' '.join(extras)}")
        return super().parse_args(args, namespace)

    def _all_parsers(self):
        parsers = [self]
        for action in self._actions:
            if isinstance(action, argparse._SubParsersAction):
                for sub in action.choices.values():
                    parsers += sub._all_parsers()
        return parsers

    def _subparser_for(self, args):
        for action in self._actions:
            if isinstance(action, argparse._SubParsersAction):
                for token in args if args is not None else sys.argv[1:]:
                    if token in action.choices:
                        return action.choices[token]
        return self


def _thread_limit():
    value = os.environ.get("IFC_GRL_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"IFC_GRL_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise UsageError("IFC_GRL_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_extract(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    subtypes = CONNECTS_SUBTYPES if args.connects_subtypes else ()
    dangling_total = 0
    for path in args.ifc:
        model = step.load(path)
        dangling = step.validate_references(model)
        dangling_total += len(dangling)
        for src, missing in dangling:
            print(f"{path}: #{src} references missing #{missing}", file=sys.stderr)
        ids = [i for i, inst in model.instances.items() if dataset.label_for_type(inst.type_name) is not None]
        vectors = build_vectors(model, ids, subtypes)
        lines = [f"source\t{Path(path).name}", f"instances\t{len(model)}",
                 f"dangling\t{len(dangling)}", "id\ttype\tlabel\tcounts"]
        for i in ids:
            label = dataset.label_for_type(model[i].type_name)
            lines.append(f"{i}\t{model[i].type_name}\t{label.name}\t{','.join(map(str, vectors[i]))}")
        target = out / f"{Path(path).stem}.relations.txt"
        target.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"{path}: {len(ids)} objects -> {target}")
    if dangling_total:
        print(f"{dangling_total} dangling references", file=sys.stderr)
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    subtypes = CONNECTS_SUBTYPES if args.connects_subtypes else ()
    objects, stats = dataset.assemble_from_dirs(args.ifc_dir, args.obj_dir, args.points, args.seed,
                                                connects_subtypes=subtypes)
    capped = dataset.cap_per_class(objects, args.cap, args.seed)
    split = dataset.split(capped, args.split, args.seed)
    dataset.save(split, args.out)
    print(f"objects {stats.objects}, duplicates {stats.duplicates}, skipped types {stats.skipped_type}, "
          f"missing meshes {stats.missing_mesh}, failed {len(stats.failed_files)}")
    train_counts = dataset.label_counts(split.train)
    test_counts = dataset.label_counts(split.test)
    for label in dataset.ClassLabel:
        if train_counts[label] or test_counts[label]:
            print(f"{label.name:<16}{train_counts[label]:>7}{test_counts[label]:>7}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                       seed=args.seed, weight_decay=args.weight_decay)


def cmd_train(args) -> int:
    split = dataset.load(args.dataset)
    model = GRModel(args.variant, args.seed, relation_transform=args.relation_transform)
    history = train(model, split, _train_config(args))
    out = save_model(model, args.out)
    (out / "history.txt").write_text(format_history(history), encoding="utf-8")
    if history.epochs:
        best = history.epochs[history.best_epoch - 1]
        print(f"best epoch {best.epoch}: test accuracy {best.test_accuracy:.4f}")
    print(f"checkpoint written to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    split = dataset.load(args.dataset)
    if not split.test:
        raise dataset.DatasetError("dataset has no test objects")
    model = load_model(args.ckpt)
    ev = evaluate(model, split.test)
    text_path, kv_path = write_report(ev, args.report, title=f"variant {model.variant}")
    print(text_path.read_text(encoding="utf-8"), end="")
    print(f"report written to {text_path} and {kv_path}")
    return EXIT_OK


def _read_ablation_config(path: Optional[str]):
    values = {}
    if path:
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise FileNotFoundError(f"config file {path} not found")
        if parser.has_section("train"):
            values = dict(parser["train"])
    config = TrainConfig(
        lr=float(values.pop("lr", 1e-3)),
        epochs=int(values.pop("epochs", 50)),
        batch_size=int(values.pop("batch_size", 64)),
        seed=int(values.pop("seed", 0)),
        weight_decay=float(values.pop("weight_decay", 0.0)),
    )
    transform = values.pop("relation_transform", "log1p")
    out = values.pop("out", None)
    if values:
        raise ValueError(f"unknown config keys: {', '.join(sorted(values))}")
    return config, transform, out


def cmd_ablate(args) -> int:
    split = dataset.load(args.dataset)
    config, transform, out = _read_ablation_config(args.config)
    out = args.out or out or "ablation"
    results = ablation_suite(split, config, out, relation_transform=transform)
    print(format_ablation(results), end="")
    print(f"checkpoints and tables written to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    arch = read_arch(args.ckpt)
    model = load_model(args.ckpt)
    counts = count_parameters(model)
    macs = count_linear_macs(model, args.points)
    print(f"variant {arch['variant']}")
    print(f"{'module':<14}{'params':>12}{'linear MACs':>16}")
    for name in counts:
        print(f"{name:<14}{counts[name]:>12}{macs[name]:>16}")
    if model.variant != "geometric_only" and model.uses_geometry:
        cost = parameter_cost(model)
        print(f"cost over geometric_only: {cost['params']} params, {cost['macs']} MACs")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    objects = synthetic.disambiguation_dataset(args.per_class, args.points, args.seed)
    split = dataset.split(objects, args.split, args.seed)
    dataset.save(split, args.out)
    print(f"{len(split.train)} train / {len(split.test)} test objects written to {args.out}")
    return EXIT_OK


def cmd_make_corpus(args) -> int:
    written = synthetic.write_corpus(args.ifc_dir, args.obj_dir, args.files, args.seed)
    for name, n in written.items():
        print(f"{name}: {n} elements")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ifc-grl", description="Geometric-relational BIM object classification")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="parse IFC files and write relation-count vectors")
    p.add_argument("ifc", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--connects-subtypes", action="store_true",
                   help="also count IfcRelConnectsPathElements / ...WithRealizingElements")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("build-dataset", help="assemble, deduplicate, cap, split and save a dataset")
    p.add_argument("--ifc-dir", required=True)
    p.add_argument("--obj-dir", required=True, help="meshes at <obj-dir>/<ifc stem>/<instance id>.obj")
    p.add_argument("--out", required=True)
    p.add_argument("--cap", type=int, default=dataset.DEFAULT_CAP)
    p.add_argument("--split", type=float, default=dataset.DEFAULT_TRAIN_FRACTION)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=geometry.DEFAULT_POINTS)
    p.add_argument("--connects-subtypes", action="store_true")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--dataset", required=True)
    p.add_argument("--variant", choices=sorted(VARIANT_ALIASES), default="full")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--relation-transform", choices=["log1p", "raw"], default="log1p")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics and confusion rates of a checkpoint on the test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare all four variants")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="INI file with a [train] section")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="parameter and MAC counts of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--points", type=int, default=geometry.DEFAULT_POINTS)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synthesize", help="write the synthetic four-class disambiguation dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=300)
    p.add_argument("--points", type=int, default=64)
    p.add_argument("--split", type=float, default=dataset.DEFAULT_TRAIN_FRACTION)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("make-corpus", help="write random IFC files with per-element OBJ meshes")
    p.add_argument("--ifc-dir", required=True)
    p.add_argument("--obj-dir", required=True)
    p.add_argument("--files", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_corpus)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        print(f"ifc-grl: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        print(f"ifc-grl: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # invariant violations and bugs
        print(f"ifc-grl: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
