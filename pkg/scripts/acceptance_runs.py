"""
Desk scale experiments, too slow for the unit tests: accuracy ordering of SIREN, SIREN per
partition and Local-Global SIREN on an image and on audio, the merge ablation, the extension
comparison and the partition factor sweep. Every run over several seeds ends up as one row of a
pandas table written to CSV; the orderings are logged at the end.

    python scripts/acceptance_runs.py --seeds 5 --out results.csv image audio
"""
import argparse
import logging
import os
import sys
import pandas as pd

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                "source"))
# pylint: disable=wrong-import-position
import partition
import model
import signalio
import edit
import engine
from train import TrainConfig

LOGGER = logging.getLogger("lginr_logger")
IMAGE_SIZE = 128
IMAGE_FACTORS = (8, 8)
IMAGE_LR = 5e-4
AUDIO_SECONDS = 1.0
AUDIO_FACTORS = (32,)
AUDIO_LR = 1e-4
BUDGET = 20000
GLOBAL_RATIO = 0.11
SWEEP_FACTORS = ((2, 2), (4, 4), (8, 8), (16, 16))
EXPERIMENTS = ("image", "audio", "merge", "extension", "sweep")


def partition_size(signal, factors):
    return tuple(-(-size // factor) for size, factor in zip(signal.resolution, factors))


def single_network_spec(signal, kind, factors, target, depth=5):
    """
    SIREN or SIREN per partition with the largest hidden dimension inside the budget.
    """
    def spec_for(hidden):
        return engine.build_spec(signal, kind, factors, hidden, depth=depth)

    hidden = partition.find_dimension(target, lambda hidden: model.param_count(spec_for(hidden)))
    return spec_for(hidden)


def local_global_spec(signal, factors, target, merge_kind="concat_fc"):
    spec, _ = engine.plan_spec(signal, target, GLOBAL_RATIO, partition_size(signal, factors),
                               merge_kind=merge_kind)
    return spec


def run(signal, spec, config, initial=None):
    """
    Fit and score one network.

    :return: (trained network, dict of scores)
    """
    network, history = engine.encode(signal, spec, config, initial=initial)
    scores = engine.evaluate(network, signal)
    return network, {"params": network.param_count, "mse": scores["mse"],
                     "psnr": scores["psnr"], "seconds": history.seconds}


def image_ordering(seed, iters, merge_only=False):
    """
    SIREN, SIREN per partition and Local-Global SIREN on the desk scale test pattern, or only the
    two merge operators.
    """
    image = signalio.test_pattern_image(IMAGE_SIZE)
    config = TrainConfig(iters=iters, lr=IMAGE_LR, seed=seed)
    if merge_only:
        specs = {merge: local_global_spec(image, IMAGE_FACTORS, BUDGET, merge)
                 for merge in model.MERGE_KINDS}
    else:
        specs = {"siren": single_network_spec(image, "siren", None, BUDGET),
                 "spp": single_network_spec(image, "spp", IMAGE_FACTORS, BUDGET),
                 "lgs": local_global_spec(image, IMAGE_FACTORS, BUDGET)}
    return [dict(variant=variant, **run(image, spec, config)[1]) for variant, spec in specs.items()]


def audio_ordering(seed, iters):
    """
    The three architectures on the chirp clip.
    """
    clip = signalio.chirp_clip(AUDIO_SECONDS)
    config = TrainConfig(iters=iters, lr=AUDIO_LR, seed=seed)
    specs = {"siren": single_network_spec(clip, "siren", None, BUDGET),
             "spp": single_network_spec(clip, "spp", AUDIO_FACTORS, BUDGET),
             "lgs": local_global_spec(clip, AUDIO_FACTORS, BUDGET)}
    return [dict(variant=variant, **run(clip, spec, config)[1]) for variant, spec in specs.items()]


def extension_comparison(seed, iters):
    """
    Encode the left half with half the budget, then compare on the full image after the same
    number of fine-tuning steps: extension of the half model, a full size Local-Global SIREN from
    scratch, and a half budget SIREN fine-tuned on the full image.
    """
    image = signalio.test_pattern_image(IMAGE_SIZE)
    half = image.take(1, 0, IMAGE_SIZE // 2)
    half_factors = (IMAGE_FACTORS[0], IMAGE_FACTORS[1] // 2)
    config = TrainConfig(iters=iters, lr=IMAGE_LR, seed=seed)
    fine_tune = config.replace(iters=iters // 2)

    half_lgs, _ = run(half, local_global_spec(half, half_factors, BUDGET // 2), config)
    extended = edit.extend(half_lgs, IMAGE_FACTORS)
    _, scores = run(image, extended.spec, fine_tune, initial=extended)
    rows = [dict(variant="extended_lgs", **scores)]

    _, scores = run(image, extended.spec, fine_tune)
    rows.append(dict(variant="scratch_lgs", **scores))

    siren_spec = single_network_spec(half, "siren", None, half_lgs.param_count)
    half_siren, _ = run(half, siren_spec, config)
    _, scores = run(image, siren_spec, fine_tune, initial=half_siren)
    rows.append(dict(variant="finetuned_siren", **scores))
    return rows


def factor_sweep(seed, iters):
    """
    Accuracy and training time against the partition factors at a fixed budget.
    """
    image = signalio.test_pattern_image(IMAGE_SIZE)
    config = TrainConfig(iters=iters, lr=IMAGE_LR, seed=seed)
    return [dict(variant="x".join(str(factor) for factor in factors),
                 **run(image, local_global_spec(image, factors, BUDGET), config)[1])
            for factors in SWEEP_FACTORS]


def create_dataframe(experiments, seeds, iters):
    """
    Run the experiments and collect one row per seed and variant.

    :return: pandas.DataFrame
    """
    runners = {"image": image_ordering,
               "audio": audio_ordering,
               "merge": lambda seed, iters: image_ordering(seed, iters, merge_only=True),
               "extension": extension_comparison,
               "sweep": factor_sweep}
    rows = []
    for experiment in experiments:
        for seed in range(seeds):
            LOGGER.info("Running %s with seed %d", experiment, seed)
            rows += [dict(experiment=experiment, seed=seed, **row)
                     for row in runners[experiment](seed, iters)]
    return pd.DataFrame.from_records(rows)


def count_wins(frame, experiment, better, worse, column="psnr", margin=0.0):
    """
    Number of seeds on which variant better beats variant worse by at least margin.
    Higher is better for psnr, lower for mse.
    """
    table = frame[frame["experiment"] == experiment].pivot(index="seed", columns="variant",
                                                           values=column)
    if column == "mse":
        return int((table[worse] - table[better] >= margin).sum())
    return int((table[better] - table[worse] >= margin).sum())


def report(frame):
    """
    Log the orderings the experiments are expected to show.
    """
    checks = [("image", "lgs", "spp", "psnr", 0.5), ("audio", "lgs", "spp", "psnr", 0.0),
              ("merge", "concat_fc", "fc_add", "psnr", 0.0),
              ("extension", "extended_lgs", "scratch_lgs", "mse", 0.0),
              ("extension", "extended_lgs", "finetuned_siren", "mse", 0.0)]
    for experiment, better, worse, column, margin in checks:
        if experiment not in set(frame["experiment"]):
            continue
        wins = count_wins(frame, experiment, better, worse, column, margin)
        total = frame[frame["experiment"] == experiment]["seed"].nunique()
        LOGGER.info("%s: %s beats %s on %d of %d seeds", experiment, better, worse, wins, total)
    summary = frame.groupby(["experiment", "variant"])[["params", "psnr", "seconds"]].mean()
    LOGGER.info("Mean over seeds:\n%s", summary.to_string())


def main(argv=None):
    """
    Command line entry point.
    """
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("experiments", nargs="*", help="any of " + ", ".join(EXPERIMENTS))
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--iters", type=int, default=1000)
    parser.add_argument("--out", default="acceptance_runs.csv")
    args = parser.parse_args(argv)
    unknown = sorted(set(args.experiments) - set(EXPERIMENTS))
    if unknown:
        parser.error("unknown experiments {}".format(", ".join(unknown)))
    engine.setup_logger(logging.INFO)
    frame = create_dataframe(args.experiments or EXPERIMENTS, args.seeds, args.iters)
    frame.to_csv(args.out, index=False)
    report(frame)


if __name__ == '__main__':
    main()
