# ocular/main.py - command-line front end for the detection experiments
from typing import List, Optional, Sequence
import argparse
import logging
import sys

from .config import load_experiment_config, settings
from .exceptions import ConfigError, NumericalError, OcularError
from .models import build_yolov2, load_model, read_weights_header, save_weights
from .schemas.box import RegionClass
from .schemas.dataset import Split
from .services.anchors import format_anchors, kmeans_priors
from .services.annotations import write_detections
from .services.dataset import load_ground_truth, read_manifest, resplit, write_manifest
from .services.pipeline import (
    THROUGHPUT_SUFFIX,
    compare,
    detect_with_throughput,
    evaluate,
    write_compare_report,
    write_compare_throughput,
    write_eval_report,
    write_throughput,
)
from .services.synth import synth_generate
from .services.trainer import train, write_loss_history

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL, logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

# --classes value -> dataset class ids in model order
CLASS_CHOICES = {
    "iris": (int(RegionClass.IRIS),),
    "periocular": (int(RegionClass.PERIOCULAR),),
    "both": (int(RegionClass.IRIS), int(RegionClass.PERIOCULAR)),
}


class UsageError(Exception):
    """Bad command line"""
    pass


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> CliParser:
    parser = CliParser(prog="ocular", description="Simultaneous iris and periocular region detection")
    parser.add_argument("--log-level", type=str.upper, choices=LOG_LEVELS, default=None, help="overrides OCULAR_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("synth", help="generate a synthetic ocular dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--size", type=int, required=True, help="image side in pixels")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--channels", type=int, choices=(1, 3), default=3, help="1 = NIR-like P5, 3 = VIS-like P6")

    p = sub.add_parser("split", help="reassign train/test/val splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("train", help="train a 1-class or 2-class detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--classes", choices=sorted(CLASS_CHOICES), required=True)
    p.add_argument("--config", default=None, help="key=value experiment config")
    p.add_argument("--weights-out", required=True)
    p.add_argument("--loss-csv", default=None, help="defaults to <weights-out>.loss.csv")

    p = sub.add_parser("detect", help="write detections over the test split")
    p.add_argument("--weights", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--classes", choices=sorted(CLASS_CHOICES), default=None,
                   help="regions the weights detect; required for 1-class weights")
    p.add_argument("--conf-threshold", type=float, default=None)
    p.add_argument("--nms-threshold", type=float, default=None)

    p = sub.add_parser("eval", help="evaluate detection files against the test split")
    p.add_argument("--detections", required=True)
    p.add_argument("--detections2", default=None, help="second 1-class file merged into a single run")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--classes", choices=sorted(CLASS_CHOICES), default="both")
    p.add_argument("--ap-method", choices=("all_point", "eleven_point"), default=None)

    p = sub.add_parser("compare", help="simultaneous vs single detection with Wilcoxon tests")
    p.add_argument("--multi", required=True)
    p.add_argument("--single-iris", required=True)
    p.add_argument("--single-peri", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--ap-method", choices=("all_point", "eleven_point"), default=None)

    p = sub.add_parser("anchors", help="k-means anchor priors from training boxes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--grid", type=int, default=13, help="output grid size S")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", choices=sorted(CLASS_CHOICES), default="both")
    return parser


def cmd_synth(args) -> int:
    synth_generate(args.count, args.seed, args.size, args.out, channels=args.channels)
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = resplit(read_manifest(args.manifest), args.seed)
    write_manifest(args.manifest, manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    experiment = load_experiment_config(args.config)
    classes = CLASS_CHOICES[args.classes]
    net_config = experiment.network_config(len(classes))
    model = build_yolov2(net_config, seed=experiment.seed)
    result = train(model, read_manifest(args.manifest), experiment.train_config(), classes)
    save_weights(result.model, args.weights_out)
    write_loss_history(args.loss_csv or args.weights_out + ".loss.csv", result.history)
    return EXIT_OK


def cmd_detect(args) -> int:
    num_classes = read_weights_header(args.weights)[0]
    if args.classes is None:
        if num_classes != 2:
            raise ConfigError("1-class weights need --classes iris or --classes periocular")
        args.classes = "both"
    class_ids = CLASS_CHOICES[args.classes]
    if len(class_ids) != num_classes:
        raise ConfigError(f"--classes {args.classes} does not fit {num_classes}-class weights")

    config = None
    if args.config is not None:
        config = load_experiment_config(args.config).network_config(num_classes)
    model = load_model(args.weights, config)
    detections, throughput = detect_with_throughput(
        model, read_manifest(args.manifest), class_ids, args.conf_threshold, args.nms_threshold
    )
    write_detections(args.out, detections)
    write_throughput(args.out + THROUGHPUT_SUFFIX, throughput)
    return EXIT_OK


def cmd_eval(args) -> int:
    files = [args.detections] + ([args.detections2] if args.detections2 else [])
    report = evaluate(files, read_manifest(args.manifest), CLASS_CHOICES[args.classes], ap_method=args.ap_method)
    write_eval_report(args.report, report)
    return EXIT_OK


def cmd_compare(args) -> int:
    report = compare(
        args.multi, args.single_iris, args.single_peri, read_manifest(args.manifest),
        alpha=args.alpha, ap_method=args.ap_method,
    )
    write_compare_report(args.report, report)
    write_compare_throughput(args.multi, args.single_iris, args.single_peri, args.report)
    return EXIT_OK


def cmd_anchors(args) -> int:
    classes = CLASS_CHOICES[args.classes]
    truth = load_ground_truth(read_manifest(args.manifest), Split.TRAIN)
    sizes = [(a.box.w, a.box.h) for anns in truth.values() for a in anns if int(a.class_id) in classes]
    print(format_anchors(kmeans_priors(sizes, args.k, args.grid, args.seed)))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "train": cmd_train,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "anchors": cmd_anchors,
}


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one subcommand; returns the process exit code"""
    try:
        args = build_parser().parse_args(list(argv) if argv is not None else None)
    except UsageError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    if args.log_level:
        logging.getLogger().setLevel(args.log_level)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        return EXIT_USAGE
    except NumericalError as e:
        logger.error(f"numerical failure: {e}")
        return EXIT_NUMERICAL
    except (OcularError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_IO


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
