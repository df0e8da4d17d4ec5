"""
Command line interface: train, crop, extend, reconstruct, eval and info.

Every command prints one JSON summary record to stdout, logging goes to stderr (or --log-file).
Exit codes: 0 success, 2 usage error, 3 data, format, partition or crop error, 4 divergence.

Partition selections (--drop, --partitions) are either explicit flat indices, "0,5,17", or
inclusive index ranges per dimension, "0..3,12..15" for rows 0-3 and columns 12-15. Several
selections are joined with ";".
"""
import argparse
import itertools
import json
import logging
import os
import sys
import numpy as np
import pandas as pd
import catalogue
import edit
import engine
import model
import partition
import signalio
import store
from history import HistoryWriter
from train import TrainConfig
from errors import CropError, DivergenceError, FormatError, PartitionError, ShapeError

LOGGER = logging.getLogger("lginr_logger")
THREADS_VARIABLE = "LGINR_NUM_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
DATA_ERRORS = (FormatError, PartitionError, CropError, ShapeError, OSError)
RECONSTRUCTION_FILL = 0.0
AUTO_DEFAULTS = {"global_ratio": 0.11}
TRAIN_DEFAULTS = {"depth": 5, "omega": model.DEFAULT_OMEGA, "merge": "concat_fc",
                  "local_hidden": 256, "global_hidden": 0, "iters": 2000, "lr": 5e-4}


class UsageError(Exception):
    """
    Raised for invalid flag values that argparse cannot catch itself.
    """


def parse_ints(text, name="value"):
    """
    "16,16" -> (16, 16)
    """
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise UsageError("{} needs comma separated integers, got {!r}".format(name, text)) \
            from None


def parse_selection(text, grid):
    """
    Translate a partition selection into flat partition indices.

        >>> parse_selection("0..1,14..15", PartitionGrid(Bounds.unit(2), (16, 16)))
        [14, 15, 30, 31]

    :param text: selection string, see module documentation
    :param grid: partition.PartitionGrid
    :return: sorted list of flat indices
    """
    selected = set()
    for part in filter(None, (piece.strip() for piece in text.split(";"))):
        if ".." not in part:
            flat = parse_ints(part, "partition list")
            for index in flat:
                partition.unflatten(grid, index)
            selected.update(flat)
            continue
        ranges = []
        for piece in part.split(","):
            bounds = piece.split("..")
            try:
                low, high = (int(bounds[0]), int(bounds[-1]))
            except ValueError:
                raise UsageError("Invalid range {!r} in {!r}".format(piece, text)) from None
            if len(bounds) > 2 or low > high:
                raise UsageError("Invalid range {!r} in {!r}".format(piece, text))
            ranges.append(range(low, high + 1))
        if len(ranges) != grid.dim:
            raise UsageError("Range selection {!r} needs {} ranges".format(part, grid.dim))
        selected.update(partition.flat_index(grid, index) for index in itertools.product(*ranges))
    return sorted(selected)


def thread_count(environ=None):
    """
    Thread count from LGINR_NUM_THREADS (default 1). Kernels run single threaded, other counts are
    accepted but ignored.

    :return: int
    """
    environ = os.environ if environ is None else environ
    text = environ.get(THREADS_VARIABLE, "1")
    try:
        threads = int(text)
    except ValueError:
        raise UsageError("{} needs a positive integer, got {!r}".format(THREADS_VARIABLE, text)) \
            from None
    if threads < 1:
        raise UsageError("{} needs a positive integer, got {!r}".format(THREADS_VARIABLE, text))
    if threads != 1:
        LOGGER.warning("%s=%d ignored, kernels run single threaded", THREADS_VARIABLE, threads)
    return threads


def json_safe(value):
    """
    Replace non-finite floats by the strings "inf", "-inf" and "nan", recursively, so summaries
    stay standard JSON (a perfect reconstruction has infinite PSNR).
    """
    if isinstance(value, dict):
        return {key: json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def emit(summary):
    """
    Print a summary record as one JSON line.
    :param summary: dict
    :return:
    """
    print(json.dumps(json_safe(summary), allow_nan=False))
    sys.stdout.flush()


def _accounting(spec, present):
    return {"kind": spec.kind, "factors": list(spec.grid.factors),
            "local_hidden": spec.local_hidden, "global_hidden": spec.global_hidden,
            "depth": spec.depth, "merge": spec.merge_kind,
            "params": model.param_count(spec, present.kept_count),
            "global_params": model.global_param_count(spec),
            "local_params_per_partition": model.local_param_count(spec),
            "partitions": "{}/{}".format(present.kept_count, present.count)}


def _pick(value, *fallbacks):
    for candidate in (value,) + fallbacks:
        if candidate is not None:
            return candidate
    return None


def _train_config(args, preset=None):
    preset_iters = preset.iters if preset else None
    preset_lr = preset.lr if preset else None
    return TrainConfig(iters=_pick(args.iters, preset_iters, TRAIN_DEFAULTS["iters"]),
                       lr=_pick(args.lr, preset_lr, TRAIN_DEFAULTS["lr"]),
                       weight_decay=args.weight_decay, sample_fraction=args.sample_fraction,
                       seed=args.seed, log_every=args.log_every, local_lr=args.local_lr,
                       global_lr=args.global_lr)


def _resolve_spec(args, signal):
    """
    ModelSpec from the preset, explicit flags and the auto planner, flags taking precedence.
    """
    preset = catalogue.lookup(args.preset) if args.preset else None
    kind = _pick(args.arch, preset.kind if preset else None)
    if kind is None:
        raise UsageError("Need --arch or --preset")
    depth = _pick(args.depth, preset.depth if preset else None, TRAIN_DEFAULTS["depth"])
    merge = _pick(args.merge, TRAIN_DEFAULTS["merge"])
    omega = _pick(args.omega, TRAIN_DEFAULTS["omega"])
    if args.auto:
        if kind != "lgs" or args.target_params is None or args.partition_size is None:
            raise UsageError("--auto needs --arch lgs, --target-params and --partition-size")
        spec, _ = engine.plan_spec(signal, args.target_params,
                                   _pick(args.global_ratio, AUTO_DEFAULTS["global_ratio"]),
                                   parse_ints(args.partition_size, "--partition-size"), depth,
                                   merge)
        return spec.replace(omega=omega, merge_omega=omega), preset
    factors = parse_ints(args.factors, "--factors") if args.factors else \
        (preset.factors if preset else None)
    if kind != "siren" and factors is None:
        raise UsageError("Architecture {} needs --factors, --preset or --auto".format(kind))
    local_hidden = _pick(args.local_hidden, args.hidden, preset.local_hidden if preset else None,
                         TRAIN_DEFAULTS["local_hidden"])
    global_hidden = _pick(args.global_hidden, preset.global_hidden if preset else None,
                          TRAIN_DEFAULTS["global_hidden"])
    if kind == "lgs" and global_hidden < 1:
        raise UsageError("Architecture lgs needs --global-hidden")
    return engine.build_spec(signal, kind, factors, local_hidden, global_hidden, depth, omega,
                             merge), preset


def _history_path(args):
    return args.history or args.out + ".history.jsonl"


def _fit_summary(command, network, history, scores):
    summary = {"command": command}
    summary.update(_accounting(network.spec, network.present))
    summary.update({key: value for key, value in scores.items() if key != "params"})
    summary.update(iters=history.records[-1]["iteration"] if history.records else 0,
                   final_loss=history.final_loss, seconds=round(history.seconds, 3))
    return summary


def cmd_train(args):
    """
    Fit a network to a signal, write the model file and its history.
    """
    signal = signalio.load_signal(args.signal)
    spec, preset = _resolve_spec(args, signal)
    config = _train_config(args, preset)
    with HistoryWriter(_history_path(args), command="train") as writer:
        network, history = engine.encode(signal, spec, config)
        writer.extend(history.records)
    store.save(network, args.out)
    emit(_fit_summary("train", network, history, engine.evaluate(network, signal)))
    return EXIT_OK


def cmd_crop(args):
    """
    Remove partitions from a model file.
    """
    spec, present, _ = store.load_header(args.model)
    drop = parse_selection(args.drop, spec.grid)
    store.crop_file(args.model, drop, args.out)
    new_spec, new_present, _ = store.load_header(args.out)
    summary = {"command": "crop", "dropped": drop,
               "old_params": model.param_count(spec, present.kept_count)}
    summary.update(_accounting(new_spec, new_present))
    summary["new_params"] = summary["params"]
    emit(summary)
    return EXIT_OK


def cmd_extend(args):
    """
    Extend the partition grid of a model and fine-tune it on the full signal.
    """
    network = store.load(args.model)
    old_factors = network.spec.grid.factors
    extended = edit.extend(network, parse_ints(args.new_factors, "--new-factors"),
                           mirror=args.mirror, renormalize=args.renormalize)
    signal = signalio.load_signal(args.signal)
    freeze_mask = edit.extension_freeze_mask(extended, old_factors) if args.freeze_old else None
    config = _train_config(args)
    with HistoryWriter(_history_path(args), command="extend") as writer:
        network, history = engine.encode(signal, extended.spec, config, freeze_mask,
                                         initial=extended)
        writer.extend(history.records)
    store.save(network, args.out)
    emit(_fit_summary("extend", network, history, engine.evaluate(network, signal)))
    return EXIT_OK


def cmd_reconstruct(args):
    """
    Decode a model into a signal file.
    """
    network = store.load(args.model)
    if args.like:
        reference = signalio.load_signal(args.like)
        resolution, sample_rate = reference.resolution, reference.sample_rate
    elif args.resolution:
        resolution, sample_rate = parse_ints(args.resolution, "--resolution"), args.sample_rate
    else:
        raise UsageError("Need --resolution or --like")
    partitions = parse_selection(args.partitions, network.spec.grid) if args.partitions else None
    decoded, dropped = engine.decode(network, resolution, partitions)
    decoded.sample_rate = sample_rate
    signalio.save_signal(decoded, args.out)
    emit({"command": "reconstruct", "resolution": list(resolution), "dropped": dropped,
          "fill": RECONSTRUCTION_FILL, "params": network.param_count, "out": args.out})
    return EXIT_OK


def cmd_eval(args):
    """
    Compare the reconstruction of a model with a reference signal.
    """
    network = store.load(args.model)
    reference = signalio.load_signal(args.signal)
    summary = {"command": "eval"}
    summary.update(_accounting(network.spec, network.present))
    summary.update({key: value for key, value in engine.evaluate(network, reference).items()
                    if key != "params"})
    emit(summary)
    return EXIT_OK


def crop_table(spec, present):
    """
    Parameter count as a function of the number of cropped partitions.

    :return: pandas.DataFrame with columns cropped, kept, params
    """
    kept = np.arange(present.kept_count, 0, -1)
    return pd.DataFrame({"cropped": present.count - kept, "kept": kept,
                         "params": [model.param_count(spec, count) for count in kept]})


def cmd_info(args):
    """
    Print header and parameter accounting of a model file.
    """
    spec, present, header_size = store.load_header(args.model)
    summary = {"command": "info", "omega": spec.omega,
               "bounds": [list(spec.grid.bounds.mins), list(spec.grid.bounds.maxs)],
               "header_bytes": header_size, "dropped": present.dropped.tolist()}
    summary.update(_accounting(spec, present))
    summary["accounting"] = "global+merge: {}, per-partition: {}, partitions: {}".format(
        summary["global_params"], summary["local_params_per_partition"], summary["partitions"])
    if args.table:
        table = crop_table(spec, present)
        if args.table == "-":
            LOGGER.info("Parameters by cropped partitions:\n%s", table.to_string(index=False))
        else:
            table.to_csv(args.table, index=False)
    emit(summary)
    return EXIT_OK


def _add_training_flags(parser, defaults_from_preset=True):
    parser.add_argument("--iters", type=int, default=None if defaults_from_preset else 0)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--local-lr", type=float, default=None)
    parser.add_argument("--global-lr", type=float, default=None)
    parser.add_argument("--weight-decay", type=float, default=0.0)
    parser.add_argument("--sample-fraction", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--log-every", type=int, default=100)
    parser.add_argument("--history", help="history file (default: <out>.history.jsonl)")


def build_parser():
    """
    Argument parser with one sub-command per operation.
    :return: argparse.ArgumentParser
    """
    parser = argparse.ArgumentParser(prog="lginr", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug output")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    parser.add_argument("--log-file", help="write the log to this file instead of stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="fit a network to a signal")
    train.add_argument("--signal", required=True, help=".pgm, .ppm or .wav file")
    train.add_argument("--out", required=True, help="model file to write")
    train.add_argument("--preset", choices=catalogue.names())
    train.add_argument("--arch", choices=model.KINDS)
    train.add_argument("--factors", help="partition factors, e.g. 16,16")
    train.add_argument("--hidden", type=int, help="hidden dimension (siren, spp)")
    train.add_argument("--local-hidden", type=int)
    train.add_argument("--global-hidden", type=int)
    train.add_argument("--depth", type=int)
    train.add_argument("--omega", type=float)
    train.add_argument("--merge", choices=model.MERGE_KINDS)
    train.add_argument("--auto", action="store_true", help="plan factors and dimensions")
    train.add_argument("--target-params", type=int)
    train.add_argument("--global-ratio", type=float)
    train.add_argument("--partition-size", help="samples per partition, e.g. 32,32")
    _add_training_flags(train)
    train.set_defaults(handler=cmd_train)

    crop = commands.add_parser("crop", help="remove partitions from a model file")
    crop.add_argument("--model", required=True)
    crop.add_argument("--drop", required=True, help='e.g. "0,1" or "0..3,0..3"')
    crop.add_argument("--out", required=True)
    crop.set_defaults(handler=cmd_crop)

    extend = commands.add_parser("extend", help="enlarge the partition grid and fine-tune")
    extend.add_argument("--model", required=True)
    extend.add_argument("--new-factors", required=True)
    extend.add_argument("--signal", required=True, help="the full, enlarged signal")
    extend.add_argument("--out", required=True)
    extend.add_argument("--mirror", choices=edit.MIRROR_MODES, default="reflect")
    extend.add_argument("--renormalize", action="store_true",
                        help="map the enlarged grid onto the old bounds")
    extend.add_argument("--freeze-old", action="store_true",
                        help="keep the old local sub-networks fixed while fine-tuning")
    _add_training_flags(extend, defaults_from_preset=False)
    extend.set_defaults(handler=cmd_extend)

    reconstruct = commands.add_parser("reconstruct", help="decode a model into a signal file")
    reconstruct.add_argument("--model", required=True)
    reconstruct.add_argument("--out", required=True, help=".pgm, .ppm or .wav file")
    reconstruct.add_argument("--resolution", help="e.g. 512,512")
    reconstruct.add_argument("--like", help="take resolution and sample rate from this signal")
    reconstruct.add_argument("--partitions", help="decode only these partitions")
    reconstruct.add_argument("--sample-rate", type=int, default=signalio.DEFAULT_SAMPLE_RATE)
    reconstruct.set_defaults(handler=cmd_reconstruct)

    evaluate = commands.add_parser("eval", help="compare a model with a reference signal")
    evaluate.add_argument("--model", required=True)
    evaluate.add_argument("--signal", required=True)
    evaluate.set_defaults(handler=cmd_eval)

    info = commands.add_parser("info", help="header and parameter accounting of a model file")
    info.add_argument("--model", required=True)
    info.add_argument("--table", help="write the params-vs-cropped table as CSV ('-' to log)")
    info.set_defaults(handler=cmd_info)
    return parser


def main(argv=None):
    """
    Run one command.

    :param argv: arguments without the program name, default sys.argv[1:]
    :return: exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return EXIT_USAGE if error.code else EXIT_OK
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    handler = engine.setup_logger(level, args.log_file)
    try:
        thread_count()
        return args.handler(args)
    except UsageError as error:
        LOGGER.error("%s", error)
        return EXIT_USAGE
    except DivergenceError as error:
        LOGGER.error("Training diverged: %s", error)
        return EXIT_DIVERGENCE
    except DATA_ERRORS as error:
        LOGGER.error("%s", error)
        return EXIT_DATA
    except ValueError as error:
        # invalid hyperparameters, e.g. a negative learning rate
        LOGGER.error("%s", error)
        return EXIT_USAGE
    finally:
        LOGGER.removeHandler(handler)
        handler.close()


if __name__ == '__main__':
    sys.exit(main())
