"""Command line entry point: ``chestnet {train,eval,predict,split,report}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint as ckpt
from .data import DataError, load_manifest, save_manifest, scan_dataset, split
from .metrics import EvalReport, emit_report
from .models import BUILDERS
from .train import NumericError, TrainConfig, evaluate, predict_image, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
FORMATS = {"json": "json", "csv": "csv", "md": "markdown"}

logger = logging.getLogger("chestnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="chestnet", description="Chest X-ray classification toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", help="corpus root with one folder per class")
    t.add_argument("--manifest", help="split manifest JSON (instead of splitting --data)")
    t.add_argument("--model", choices=sorted(BUILDERS), default="paper-cnn")
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--momentum", type=float, default=0.0)
    t.add_argument("--val-every", type=int, default=20)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--ratio", type=float, default=0.8)
    t.add_argument("--out", required=True, help="checkpoint path to write")
    t.add_argument("--ckpt", help="initial checkpoint to fine-tune from")
    t.add_argument("--input-size", type=int)
    t.add_argument("--channels", type=int, choices=(1, 3))
    t.add_argument("--fine-tune", choices=("none", "head"), default="none")
    t.add_argument("--augment", choices=("on", "off"), default="off")
    t.add_argument("--precision", choices=("float32", "float64"), default="float32")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split side or corpus")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", help="corpus root (all samples unless --manifest is given)")
    e.add_argument("--manifest")
    e.add_argument("--side", choices=("train", "test"), default="test")
    e.add_argument("--format", choices=sorted(FORMATS), default="md")
    e.add_argument("--out", help="write the JSON report here")

    pr = sub.add_parser("predict", help="classify one image")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--image", required=True)

    s = sub.add_parser("split", help="write a stratified train/test manifest")
    s.add_argument("--data", required=True)
    s.add_argument("--ratio", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    r = sub.add_parser("report", help="tabulate JSON eval reports")
    r.add_argument("inputs", nargs="+", help="report.json files")
    r.add_argument("--format", choices=sorted(FORMATS), default="md")
    r.add_argument("--out")
    return p


def _emit(text, out=None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_train(args):
    try:
        config = TrainConfig(
            model=args.model, data=args.data, manifest=args.manifest, epochs=args.epochs,
            batch=args.batch, lr=args.lr, momentum=args.momentum, val_every=args.val_every,
            seed=args.seed, ratio=args.ratio, augment=args.augment == "on", out=args.out,
            init_checkpoint=args.ckpt, fine_tune=args.fine_tune, precision=args.precision,
            input_size=args.input_size, channels=args.channels)
    except ValueError as e:
        raise UsageError(str(e)) from e
    result = train(config)
    h = result.history
    logger.info("done: %d iterations, final train loss %.6f, train accuracy %.4f, %.1fs",
                h.iterations, h.train_loss[-1], h.final_train_accuracy, h.wall_time_s)
    print(json.dumps({"checkpoint": args.out, "iterations": h.iterations,
                      "final_train_loss": h.train_loss[-1],
                      "final_train_accuracy": h.final_train_accuracy}))


def cmd_eval(args):
    model = ckpt.load_checkpoint(args.ckpt)
    if args.manifest:
        dataset, manifest = load_manifest(args.manifest, root=args.data)
        ids = manifest.side(args.side)
    elif args.data:
        dataset = scan_dataset(args.data)
        ids = None
    else:
        raise UsageError("eval needs --data or --manifest")
    names = model.metadata.get("class_names")
    if names and list(names) != list(dataset.class_names):
        raise DataError(f"checkpoint classes {names} differ from corpus classes {dataset.class_names}")
    report = evaluate(model, dataset, ids)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2))
    _emit(emit_report([report], FORMATS[args.format]))


def cmd_predict(args):
    model = ckpt.load_checkpoint(args.ckpt)
    name, probs = predict_image(model, args.image)
    print(json.dumps({"class": name, "probabilities": [float(p) for p in probs]}))


def cmd_split(args):
    if not 0 < args.ratio < 1:
        raise UsageError("--ratio must lie in (0, 1)")
    dataset = scan_dataset(args.data)
    manifest = split(dataset, args.ratio, args.seed)
    save_manifest(manifest, dataset, args.out)
    print(json.dumps({"train": len(manifest.train), "test": len(manifest.test),
                      "manifest": args.out}))


def _load_reports(path):
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read report {path}: {e}") from e
    items = d["reports"] if "reports" in d else [d]
    try:
        return [EvalReport.from_dict(x) for x in items]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed report {path}: {e}") from e


def cmd_report(args):
    reports = [r for path in args.inputs for r in _load_reports(path)]
    _emit(emit_report(reports, FORMATS[args.format]), args.out)


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "split": cmd_split, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except (DataError, ckpt.CheckpointError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as e:
        logger.error("%s", e)
        return EXIT_NUMERIC
    except ValueError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
