"""
Fitting a network to a signal: mean squared error objective, AdamW updates, coordinate sampling
with equally many samples per partition.

Runs are reproducible: the same model, signal, config and seed give bitwise identical weights.
"""
import logging
import time
import numpy as np
import tensors
import partition
import signalio
from metrics import psnr_from_mse
from model import PackedBatch, backward
from errors import DivergenceError, ShapeError

LOGGER = logging.getLogger("lginr_logger")
# training runs on [-1, 1] values, reported errors on the [0, 1] scale
UNIT_SCALE_FACTOR = 0.25


class TrainConfig:
    """
    Hyperparameters of a fitting run. local_lr and global_lr default to lr; global_lr applies to
    the global sub-network and the merge operator.
    """
    def __init__(self, iters, lr, betas=(0.9, 0.999), weight_decay=0.0, eps=1e-8,
                 sample_fraction=1.0, seed=0, log_every=100, local_lr=None, global_lr=None):
        # pylint: disable=too-many-arguments
        if iters < 0:
            raise ValueError("Number of iterations cannot be negative, got {}".format(iters))
        for name, rate in (("lr", lr), ("local_lr", local_lr), ("global_lr", global_lr)):
            if rate is not None and not rate > 0:
                raise ValueError("Learning rate {} needs to be positive, got {}".format(name, rate))
        if len(betas) != 2 or not all(0 <= beta < 1 for beta in betas):
            raise ValueError("Need two betas in [0, 1), got {}".format(betas))
        if weight_decay < 0 or not eps > 0:
            raise ValueError("Weight decay needs to be non-negative and eps positive")
        if not 0 < sample_fraction <= 1:
            raise ValueError("Sample fraction needs to be in (0, 1], got {}".format(sample_fraction))
        if log_every < 1:
            raise ValueError("log_every needs to be positive, got {}".format(log_every))
        self.iters = int(iters)
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.weight_decay = float(weight_decay)
        self.eps = float(eps)
        self.sample_fraction = float(sample_fraction)
        self.seed = int(seed)
        self.log_every = int(log_every)
        self.local_lr = self.lr if local_lr is None else float(local_lr)
        self.global_lr = self.lr if global_lr is None else float(global_lr)

    def learning_rate(self, name):
        """
        Learning rate of a parameter group.

        :param name: parameter name as in Model.parameters()
        :return: float
        """
        return self.local_lr if name.startswith("local.") else self.global_lr

    def replace(self, **changes):
        """
        Copy with some fields changed.
        :return: TrainConfig
        """
        fields = dict(iters=self.iters, lr=self.lr, betas=self.betas,
                      weight_decay=self.weight_decay, eps=self.eps,
                      sample_fraction=self.sample_fraction, seed=self.seed,
                      log_every=self.log_every, local_lr=self.local_lr, global_lr=self.global_lr)
        fields.update(changes)
        return TrainConfig(**fields)

    def __repr__(self):
        return "TrainConfig(iters={}, lr={}, fraction={}, seed={})".format(
            self.iters, self.lr, self.sample_fraction, self.seed)


class OptimizerState:
    """
    AdamW moments per parameter name and the number of steps taken.
    """
    def __init__(self, first, second, step=0):
        self.first = first
        self.second = second
        self.step = step

    @classmethod
    def zeros(cls, params):
        """
        Fresh state for the given parameters.

        :param params: dict name -> array
        :return: OptimizerState
        """
        return cls({name: np.zeros_like(array) for name, array in params.items()},
                   {name: np.zeros_like(array) for name, array in params.items()})


class FreezeMask:
    """
    Parameters excluded from updates: local sub-networks by flat partition index, and optionally
    the complete global sub-network and merge operator.
    """
    def __init__(self, local, global_weights=False, merge=False):
        self.local = np.array(local, dtype=bool).reshape(-1)
        self.global_weights = bool(global_weights)
        self.merge = bool(merge)

    def parameter_masks(self, model):
        """
        Boolean masks broadcastable to each parameter array, True where frozen.

        :param model: Model the mask applies to
        :return: dict name -> mask, parameters without frozen entries are missing
        """
        if self.local.size != model.present.count:
            raise ShapeError("Freeze mask covers {} partitions, model has {}"
                             .format(self.local.size, model.present.count))
        slots = self.local[model.present.kept].reshape(-1, 1, 1)
        masks = {}
        for name in model.parameters():
            if name.startswith("local.") and slots.any():
                masks[name] = slots
            elif (name.startswith("global.") and self.global_weights) or \
                    (name.startswith("merge.") and self.merge):
                masks[name] = np.True_
        return masks


class CoordinateSampler:
    """
    Grid coordinates of a signal grouped by partition, for repeated batch drawing.
    Only present partitions take part.
    """
    def __init__(self, signal, grid, present=None):
        coords = signalio.grid_coords(signal.resolution, grid.bounds)
        ids = partition.partition_ids(grid, coords)
        counts = partition.check_coverage(grid, coords)
        members = np.ones(grid.count, dtype=bool) if present is None else present.bitmap
        keep = members[ids]
        self.coords = coords[keep]
        self.ids = ids[keep]
        self.targets = signal.flat_values()[keep]
        order = np.argsort(self.ids, kind="stable")
        groups = counts[members]
        self.__width = int(groups.max())
        self.__smallest = int(groups.min())
        starts = np.concatenate([[0], np.cumsum(groups)[:-1]])
        self.__table = np.zeros((groups.size, self.__width), dtype=np.int64)
        self.__valid = np.arange(self.__width)[None, :] < groups[:, None]
        rows = np.repeat(np.arange(groups.size), groups)
        self.__table[rows, np.arange(order.size) - starts[rows]] = order

    def per_partition(self, fraction):
        """
        Samples drawn from each partition for a sampling fraction.
        :return: int
        """
        return int(np.floor(fraction * self.__smallest))

    def draw(self, fraction, rng):
        """
        See sample_batch.
        """
        if fraction >= 1:
            return self.coords, self.ids, self.targets
        count = self.per_partition(fraction)
        if count < 1:
            raise ShapeError("Sample fraction {} leaves no samples in partitions of {} points"
                             .format(fraction, self.__smallest))
        keys = rng.generator.random(self.__table.shape)
        keys[~self.__valid] = 2.0
        chosen = np.argsort(keys, axis=1, kind="stable")[:, :count]
        picked = np.take_along_axis(self.__table, chosen, axis=1).reshape(-1)
        return self.coords[picked], self.ids[picked], self.targets[picked]


def sample_batch(signal, grid, fraction, rng, present=None):
    """
    Draw a training batch. Fraction 1 returns the full grid. Otherwise every present partition
    contributes floor(fraction * smallest partition size) coordinates, uniformly without
    replacement, so all partitions are equally represented.

    :param signal: signalio.Signal
    :param grid: partition.PartitionGrid the signal is spread over
    :param fraction: float in (0, 1]
    :param rng: tensors.Rng
    :param present: optional model.CropMask, cropped partitions are skipped
    :return: (coords (B, n), partition ids (B,), targets (B, m))
    """
    return CoordinateSampler(signal, grid, present).draw(fraction, rng)


def adamw_step(params, grads, state, config, masks=None):
    """
    One AdamW update with decoupled weight decay:
        m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
        w = w - lr (m_hat / (sqrt(v_hat) + eps) + weight_decay w)
    Entries selected by masks keep their weights and moments unchanged.

    :param params: dict name -> array
    :param grads: dict name -> gradient array of the same shape
    :param state: OptimizerState
    :param config: TrainConfig
    :param masks: optional dict name -> frozen mask (see FreezeMask.parameter_masks)
    :return: (new params dict, new OptimizerState)
    """
    # pylint: disable=too-many-locals
    masks = masks or {}
    for name, grad in grads.items():
        if grad.shape != params[name].shape:
            raise ShapeError("Gradient of {} has shape {}, expected {}".format(
                name, grad.shape, params[name].shape))
        if not np.all(np.isfinite(grad)):
            raise DivergenceError("Non-finite gradient for {}".format(name))
    step = state.step + 1
    beta1, beta2 = config.betas
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    updated, first, second = {}, {}, {}
    for name, weight in params.items():
        grad = grads[name]
        frozen = masks.get(name)
        if frozen is not None and np.all(frozen):
            updated[name], first[name], second[name] = weight, state.first[name], \
                state.second[name]
            continue
        dtype = weight.dtype.type
        moment1 = dtype(beta1) * state.first[name] + dtype(1.0 - beta1) * grad
        moment2 = dtype(beta2) * state.second[name] + dtype(1.0 - beta2) * grad * grad
        direction = (moment1 / dtype(correction1)) / (np.sqrt(moment2 / dtype(correction2))
                                                      + dtype(config.eps))
        new_weight = weight - dtype(config.learning_rate(name)) * (
            direction + dtype(config.weight_decay) * weight)
        if frozen is not None:
            new_weight = np.where(frozen, weight, new_weight)
            moment1 = np.where(frozen, state.first[name], moment1)
            moment2 = np.where(frozen, state.second[name], moment2)
        updated[name], first[name], second[name] = new_weight, moment1, moment2
    return updated, OptimizerState(first, second, step)


class History:
    """
    Progress records of a fitting run, one per log_every steps and one for the last step.
    Each record holds the iteration count, the training loss and mse/psnr on the [0, 1] scale.
    """
    def __init__(self):
        self.records = []
        self.seconds = 0.0

    def record(self, iteration, loss):
        """
        Append a record.

        :param iteration: number of completed steps
        :param loss: batch loss on the [-1, 1] scale
        :return: the record dict
        """
        error = loss * UNIT_SCALE_FACTOR
        entry = {"iteration": int(iteration), "loss": float(loss), "mse": float(error),
                 "psnr": psnr_from_mse(error)}
        self.records.append(entry)
        return entry

    @property
    def final_loss(self):
        """
        Loss of the last record, None if nothing was recorded.
        :return:
        """
        return self.records[-1]["loss"] if self.records else None

    def __len__(self):
        return len(self.records)


def fit(model, signal, config, freeze_mask=None):
    """
    Train a copy of the model on the signal for config.iters steps of
    sample, forward, backward and AdamW update.

    :param model: model.Model, left untouched
    :param signal: signalio.Signal with the model's input and output dimensions
    :param config: TrainConfig
    :param freeze_mask: optional FreezeMask, frozen parameters stay bitwise unchanged
    :return: (trained model, History)
    """
    spec = model.spec
    if signal.dim != spec.in_dim or signal.channels != spec.out_dim:
        raise ShapeError("Signal {} does not fit a model with {} inputs and {} outputs"
                         .format(signal, spec.in_dim, spec.out_dim))
    sampler = CoordinateSampler(signal, spec.grid, model.present)
    rng = tensors.Rng(config.seed).split()
    trained = model.copy()
    state = OptimizerState.zeros(trained.parameters())
    masks = {} if freeze_mask is None else freeze_mask.parameter_masks(trained)
    history = History()
    LOGGER.info("Fitting %s with %d parameters: %s", spec.kind, trained.param_count, config)
    layout = None
    start = time.perf_counter()
    for iteration in range(config.iters):
        coords, ids, targets = sampler.draw(config.sample_fraction, rng)
        # draws list the partitions in the same order every step
        if layout is None or not layout.fits(trained.present, ids):
            layout = PackedBatch(trained.present, ids)
        grads, loss = backward(trained, coords, ids, targets, layout)
        if not np.isfinite(loss):
            raise DivergenceError("Loss became non-finite", iteration=iteration)
        try:
            params, state = adamw_step(trained.parameters(), grads, state, config, masks)
        except DivergenceError as error:
            raise DivergenceError(str(error), iteration=iteration) from error
        trained = trained.with_parameters(params)
        if (iteration + 1) % config.log_every == 0 or iteration + 1 == config.iters:
            entry = history.record(iteration + 1, loss)
            LOGGER.debug("Iteration %d: loss %.6g, psnr %.2f dB", entry["iteration"],
                         entry["loss"], entry["psnr"])
    history.seconds = time.perf_counter() - start
    LOGGER.info("Finished %d iterations in %.1f s", config.iters, history.seconds)
    return trained, history
