"""
Named network configurations for the standard experiments, looked up by name.

    >>> preset = lookup("cameraman_lgs")
    >>> model.param_count(preset.model_spec())
    198930

Image presets assume a 512x512 grayscale image, audio presets a mono clip, half_image presets the
left half (512x256) of an image that is later extended. All networks have five layers.
"""
import partition
import model
from train import TrainConfig

IMAGE_ITERS, IMAGE_LR = 2000, 5e-4
AUDIO_ITERS, AUDIO_LR = 1000, 1e-4


class Preset:
    """
    One catalogued configuration: architecture, partitioning and training defaults.
    """
    def __init__(self, name, kind, factors, local_hidden, global_hidden=0, iters=IMAGE_ITERS,
                 lr=IMAGE_LR, out_dim=1, depth=5):
        # pylint: disable=too-many-arguments
        self.name = name
        self.kind = kind
        self.factors = tuple(factors)
        self.local_hidden = local_hidden
        self.global_hidden = global_hidden
        self.iters = iters
        self.lr = lr
        self.out_dim = out_dim
        self.depth = depth

    @property
    def in_dim(self):
        """
        Coordinate dimension, given by the number of partition factors.
        :return:
        """
        return len(self.factors)

    def model_spec(self, bounds=None, **changes):
        """
        ModelSpec of this preset.

        :param bounds: partition.Bounds, default (-1, 1)^n
        :param changes: overrides of ModelSpec fields, e.g. merge_kind or out_dim
        :return: model.ModelSpec
        """
        bounds = partition.Bounds.unit(self.in_dim) if bounds is None else bounds
        grid = partition.PartitionGrid(bounds, self.factors)
        fields = dict(kind=self.kind, in_dim=self.in_dim, out_dim=self.out_dim,
                      depth=self.depth, local_hidden=self.local_hidden,
                      global_hidden=self.global_hidden, grid=grid)
        fields.update(changes)
        return model.ModelSpec(**fields)

    def train_config(self, **changes):
        """
        TrainConfig with this preset's iteration count and learning rate.

        :param changes: overrides of TrainConfig fields
        :return: train.TrainConfig
        """
        fields = dict(iters=self.iters, lr=self.lr)
        fields.update(changes)
        return TrainConfig(**fields)

    def __repr__(self):
        return "Preset({}: {} {} h_l={} h_g={})".format(self.name, self.kind, self.factors,
                                                        self.local_hidden, self.global_hidden)


PRESETS = {preset.name: preset for preset in [
    Preset("cameraman_siren", "siren", (1, 1), 256),
    Preset("cameraman_spp", "spp", (16, 16), 15),
    Preset("cameraman_lgs", "lgs", (16, 16), 14, 84),
    Preset("audio_siren", "siren", (1,), 256, iters=AUDIO_ITERS, lr=AUDIO_LR),
    Preset("audio_spp", "spp", (32,), 45, iters=AUDIO_ITERS, lr=AUDIO_LR),
    Preset("audio_lgs", "lgs", (32,), 42, 72, iters=AUDIO_ITERS, lr=AUDIO_LR),
    Preset("half_image_siren", "siren", (1, 1), 191),
    Preset("half_image_lgs", "lgs", (16, 8), 14, 84),
    # partition factor sweep at about 200k parameters
    Preset("sweep_2x2_lgs", "lgs", (2, 2), 112, 86),
    Preset("sweep_4x4_lgs", "lgs", (4, 4), 59, 72),
    Preset("sweep_8x8_lgs", "lgs", (8, 8), 29, 82),
    Preset("sweep_32x32_lgs", "lgs", (32, 32), 7, 52),
    # larger global shares on the 16x16 grid
    Preset("global_120_lgs", "lgs", (16, 16), 13, 120),
    Preset("global_146_lgs", "lgs", (16, 16), 12, 146),
]}


def names():
    """
    Names of all presets, sorted.
    :return: list of str
    """
    return sorted(PRESETS)


def lookup(name):
    """
    Find a preset by name.

    :param name: preset name, e.g. "cameraman_lgs"
    :return: Preset
    """
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError("Unknown preset {!r}, choose from {}".format(name, ", ".join(names()))) \
            from None
