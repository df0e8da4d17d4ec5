"""
Simple interface for use from Python, without the command line.

Provides interface that can be used like:
    >>> from engine import *
    >>> signal = signalio.load_image("data/cameraman.pgm")
    >>> spec = build_spec(signal, "lgs", factors=(16, 16), local_hidden=14, global_hidden=84)
    >>> network, history = encode(signal, spec, TrainConfig(iters=2000, lr=5e-4))
    >>> decoded, _ = decode(network, signal.resolution)
"""
import logging
import tensors
import partition
import model
import metrics
import signalio
from train import TrainConfig, fit

LOGGER = logging.getLogger("lginr_logger")
LOG_FORMAT = '%(asctime)s %(levelname)-8s %(message)s'
LOG_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

__all__ = ["signalio", "TrainConfig", "build_spec", "plan_spec", "encode", "decode", "evaluate",
           "setup_logger"]


def build_spec(signal, kind, factors=None, local_hidden=256, global_hidden=0, depth=5,
               omega=model.DEFAULT_OMEGA, merge_kind="concat_fc"):
    """
    ModelSpec for a signal over the normalized coordinate box (-1, 1)^n.

    :param signal: signalio.Signal, gives input and output dimensions
    :param kind: "siren", "spp" or "lgs"
    :param factors: partition factors (ignored for siren)
    :param local_hidden: hidden dimension of the local sub-networks
    :param global_hidden: hidden dimension of the global sub-network (lgs only)
    :param depth: number of layers
    :param omega: sine frequency
    :param merge_kind: "concat_fc" or "fc_add"
    :return: model.ModelSpec
    """
    # pylint: disable=too-many-arguments
    if kind == "siren" or factors is None:
        factors = (1,) * signal.dim
    grid = partition.PartitionGrid(partition.Bounds.unit(signal.dim), factors)
    return model.ModelSpec(kind, signal.dim, signal.channels, depth, local_hidden, global_hidden,
                           omega, merge_kind, grid)


def plan_spec(signal, target_params, global_ratio, partition_size, depth=5,
              merge_kind="concat_fc"):
    """
    Local-Global SIREN spec chosen by the automatic partitioning planner.

    :param signal: signalio.Signal
    :param target_params: parameter budget
    :param global_ratio: requested share of the global sub-network, e.g. 0.11
    :param partition_size: samples per partition and dimension
    :return: (model.ModelSpec, partition.PartitionPlan)
    """
    # pylint: disable=too-many-arguments
    plan = partition.auto_partition(target_params, global_ratio, partition_size,
                                    signal.resolution, depth, signal.channels, merge_kind)
    spec = build_spec(signal, "lgs", plan.factors, plan.local_hidden, plan.global_hidden, depth,
                      merge_kind=merge_kind)
    return spec, plan


def encode(signal, spec, config, freeze_mask=None, initial=None):
    """
    Fit a freshly initialized network (or a given one) to a signal.

    :param signal: signalio.Signal
    :param spec: model.ModelSpec
    :param config: train.TrainConfig, its seed also seeds the initialization
    :param freeze_mask: optional train.FreezeMask
    :param initial: optional model.Model to start from instead of a fresh initialization
    :return: (model.Model, train.History)
    """
    if spec.kind == "lgs":
        ratio = model.global_ratio(spec)
        low, high = partition.GLOBAL_RATIO_GUIDANCE
        if not low <= ratio <= high:
            LOGGER.warning("Global weights take %.1f%% of the network, outside the suggested "
                           "5-15%% band", 100 * ratio)
    network = model.init_model(spec, tensors.Rng(config.seed)) if initial is None else initial
    return fit(network, signal, config, freeze_mask)


def decode(network, resolution, partitions=None):
    """
    Reconstruct a signal; see model.reconstruct.

    :return: (signalio.Signal, cropped partition ids inside the requested region)
    """
    return model.reconstruct(network, resolution, partitions)


def evaluate(network, reference):
    """
    Compare the reconstruction of a network with a reference signal.

    :param network: model.Model
    :param reference: signalio.Signal
    :return: dict with mse, psnr, ssim (images only), params and the cropped partitions
    """
    decoded, dropped = decode(network, reference.resolution)
    decoded.sample_rate = reference.sample_rate
    scores = metrics.evaluate(reference, decoded)
    scores.update(params=network.param_count, dropped=dropped)
    return scores


def setup_logger(level=logging.DEBUG, filename=None):
    """
    Setup logging. Not necessary for interface.

    :param level: logging level of the handler
    :param filename: optional log file, console output otherwise
    :return:
    """
    lginr_logger = logging.getLogger('lginr_logger')
    lginr_logger.setLevel(logging.DEBUG)
    handler = logging.StreamHandler() if filename is None else logging.FileHandler(filename, "w+")
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT, datefmt=LOG_DATE_FORMAT))
    lginr_logger.addHandler(handler)
    return handler


if __name__ == '__main__':
    setup_logger()
