"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (non-finite loss, failed gradient check or selftest).
"""

import argparse
import json
import logging
import os
import sys

from . import __version__
from .engine.checkpoint import CheckpointError
from .engine.ops import NumericError
from .experiment import Experiment, preset_path, run_crossval, run_train, write_json
from .model import ConcadModel, ConfigError, ModelConfig
from .signal.dataset import load_prepared, prepare_directory, save_prepared
from .signal.io import DataError, LabelMap
from .signal.segments import SegmentConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ROOT_ENV = "CONCAD_DATA_ROOT"
GRADCHECK_TOL = 1e-4

log = logging.getLogger("concad")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _data_dir(args):
    return args.data_dir or os.environ.get(DATA_ROOT_ENV)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_prepare(args):
    data_dir = _data_dir(args)
    if not data_dir:
        raise UsageError(f"prepare needs --data-dir or ${DATA_ROOT_ENV}")
    if not args.out:
        raise UsageError("prepare needs --out")
    config = SegmentConfig(epoch_length_s=args.epoch_length, context=args.context,
                           resample_per_epoch=args.resample)
    bundles, report = prepare_directory(data_dir, config, LabelMap(), strict=not args.lenient)
    if not bundles:
        raise DataError(f"{data_dir}: every segment was rejected by the heart-rate filter")
    save_prepared(args.out, bundles, config, {"source": os.path.abspath(data_dir), "report": report},
                  fs=report["fs"])
    summary = {k: report[k] for k in ("records", "segments", "dropped_hr", "per_class", "fs")}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _experiment(args):
    if not args.manifest:
        raise UsageError(f"{args.command} needs --manifest")
    if not args.out:
        raise UsageError(f"{args.command} needs --out")
    return Experiment.load(args.manifest)


def cmd_train(args):
    exp = _experiment(args)
    result, _ = run_train(exp, args.out, args.data_dir, args.seed)
    _print_summary(result)
    return EXIT_OK


def cmd_subset_train(args):
    exp = _experiment(args)
    fraction = args.fraction if args.fraction is not None else exp.spec.get("subset", {}).get("fraction")
    if fraction is None:
        raise UsageError("subset-train needs --fraction or a subset.fraction manifest entry")
    result, _ = run_train(exp, args.out, args.data_dir, args.seed, fraction=fraction)
    _print_summary(result)
    return EXIT_OK


def cmd_crossval(args):
    exp = _experiment(args)
    result = run_crossval(exp, args.out, args.data_dir, args.seed, args.folds, args.fold_mode)
    print(f"{result['folds']}-fold ({result['fold_mode']}): accuracy {result['mean_accuracy']:.4f} "
          f"± {result['std_accuracy']:.4f}, macro F1 {result['mean_macro_f1']:.4f}")
    return EXIT_OK


def _print_summary(result):
    line = f"train accuracy {result['train_metrics']['accuracy']:.4f}"
    if "eval_metrics" in result:
        ev = result["eval_metrics"]
        line += f", eval accuracy {ev['accuracy']:.4f}, eval macro F1 {ev['macro_f1']:.4f}"
    print(line)


def _eval_data(args):
    """Bundles from --data-dir (prepared) or else the manifest's evaluation set."""
    data_dir = _data_dir(args)
    if args.data_dir or (data_dir and not args.manifest):
        bundles, _, _ = load_prepared(data_dir)
        return bundles, {"data": os.path.abspath(data_dir)}
    if args.manifest:
        exp = Experiment.load(args.manifest)
        tr, ev = exp.datasets()
        return (ev or tr), {"manifest_hash": exp.config_hash}
    raise UsageError(f"{args.command} needs --data-dir (prepared dataset) or --manifest")


def _load_model(args):
    if not args.checkpoint:
        raise UsageError(f"{args.command} needs --checkpoint")
    if not os.path.exists(args.checkpoint):
        raise DataError(f"checkpoint {args.checkpoint} not found")
    return ConcadModel.load(args.checkpoint)


def cmd_eval(args):
    from .training import evaluate

    model, meta = _load_model(args)
    bundles, source = _eval_data(args)
    report = evaluate(model, bundles).to_dict()
    report.update(source)
    report["checkpoint"] = {k: meta.get(k) for k in ("config_hash", "seed", "epoch")}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        write_json(args.out, report)
    print(text)
    return EXIT_OK


def cmd_export(args):
    from .training import export_embeddings

    if not args.out:
        raise UsageError("export-embeddings needs --out (CSV path)")
    model, _ = _load_model(args)
    bundles, _ = _eval_data(args)
    export_embeddings(model, bundles, args.out)
    print(f"wrote {len(bundles)} rows to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .verify import model_gradcheck

    ref = args.config
    path = ref if os.path.exists(ref) else preset_path(ref)
    if not os.path.exists(path):
        raise UsageError(f"model config {ref!r} not found")
    report = model_gradcheck(ModelConfig.load(path), n=4, seed=args.seed or 0,
                             max_coords=args.max_coords or None)
    for name, err in report.errors.items():
        log.info("%-24s %.3e", name, err)
    print(f"max relative error {report.max_error:.3e} ({report.worst}); "
          f"{report.n_checked} of {report.n_params} coordinates checked")
    if report.max_error < GRADCHECK_TOL:
        return EXIT_OK
    print(f"gradient check failed: {report.max_error:.3e} >= {GRADCHECK_TOL:g}", file=sys.stderr)
    return EXIT_NUMERIC


def cmd_selftest(args):
    from .selftest import run_all

    results = run_all(sys.stdout)
    failed = [name for name, ok, _ in results if not ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="concad", description="Cross-attention ECG apnea classifier with hybrid contrastive training.",
                epilog=f"Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure. "
                       f"${DATA_ROOT_ENV} supplies the default --data-dir.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
        return sp

    def data_dir(sp, what):
        sp.add_argument("--data-dir", help=f"{what} (default: ${DATA_ROOT_ENV})")

    sp = add("prepare", cmd_prepare, "segment a directory of WFDB/CSV records into a prepared dataset")
    data_dir(sp, "directory of records with annotation files")
    sp.add_argument("--out", help="output directory for the prepared dataset")
    sp.add_argument("--context", type=int, default=2, help="neighbouring epochs on each side (default 2)")
    sp.add_argument("--epoch-length", type=float, default=60.0, help="annotation epoch in seconds (default 60)")
    sp.add_argument("--resample", type=int, default=180, help="RRI/RPE points per epoch (default 180)")
    sp.add_argument("--lenient", action="store_true", help="skip unmapped or duplicate labels instead of failing")

    for name, fn, help_ in (("train", cmd_train, "train one model from a manifest"),
                            ("subset-train", cmd_subset_train, "train on a stratified fraction of the training set"),
                            ("crossval", cmd_crossval, "k-fold cross-validation from a manifest")):
        sp = add(name, fn, help_)
        sp.add_argument("--manifest", help="experiment manifest (YAML)")
        sp.add_argument("--out", help="output directory")
        data_dir(sp, "prepared dataset overriding the manifest's data.path")
        sp.add_argument("--seed", type=int, help="override train.seed")
        if name == "subset-train":
            sp.add_argument("--fraction", type=float, help="fraction of the training set, in (0, 1]")
        if name == "crossval":
            sp.add_argument("--folds", type=int, help="number of folds (default: manifest or 10)")
            sp.add_argument("--fold-mode", choices=("segment", "recording"), help="fold granularity")

    for name, fn, help_, out_help in (
            ("eval", cmd_eval, "evaluate a checkpoint", "optional JSON path for the metrics report"),
            ("export-embeddings", cmd_export, "write fused feature vectors to CSV", "CSV output path")):
        sp = add(name, fn, help_)
        sp.add_argument("--checkpoint", help="checkpoint file written by train")
        data_dir(sp, "prepared dataset to evaluate")
        sp.add_argument("--manifest", help="use this manifest's evaluation data instead of --data-dir")
        sp.add_argument("--out", help=out_help)

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of the whole model on a 4-instance batch")
    sp.add_argument("--config", default="toy", help="model preset name or YAML path (default toy)")
    sp.add_argument("--seed", type=int, default=0, help="seed for weights and data")
    sp.add_argument("--max-coords", type=int, default=0,
                    help="cap on coordinates checked per tensor, 0 for all (default 0)")

    add("selftest", cmd_selftest, "run the built-in numeric checks")
    return p


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
