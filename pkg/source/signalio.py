"""
Loading and saving of signals (binary PGM/PPM images, 16 bit PCM mono WAV audio) and the regular
coordinate grids they are sampled on.

Values are kept in [-1, 1]: an 8 bit pixel v becomes 2 v / 255 - 1, a 16 bit sample s becomes
s / 32768. Coordinates of dimension i run over linspace(min_i, max_i, resolution_i), both ends
included, enumerated row-major like the values.
"""
import logging
import wave
import numpy as np
import tensors
from errors import FormatError, ShapeError

LOGGER = logging.getLogger("lginr_logger")
IMAGE_FORMATS = {"pgm": (b"P5", 1), "ppm": (b"P6", 3)}
MAX_VALUE = 255
PCM_SCALE = 32768
DEFAULT_SAMPLE_RATE = 16000


class Signal:
    """
    An n dimensional sampled signal with m channels.

    Fields:
        resolution = samples per dimension
        channels = m
        values = float32 array of shape resolution + (channels,), entries in [-1, 1]
        sample_rate = samples per second for audio, None otherwise
    """
    def __init__(self, resolution, channels, values, sample_rate=None):
        resolution = tuple(int(size) for size in resolution)
        values = np.asarray(values, dtype=np.float32)
        if values.size != int(np.prod(resolution)) * channels:
            raise ShapeError("Signal of resolution {} with {} channels cannot hold {} values"
                             .format(resolution, channels, values.size))
        if not np.all(np.isfinite(values)) or np.any(np.abs(values) > 1.0):
            raise ValueError("Signal values need to lie in [-1, 1]")
        self.resolution = resolution
        self.channels = int(channels)
        self.values = values.reshape(resolution + (self.channels,))
        self.sample_rate = sample_rate

    @property
    def dim(self):
        """
        Number of coordinate dimensions n.
        :return:
        """
        return len(self.resolution)

    @property
    def size(self):
        """
        Number of samples (coordinates).
        :return:
        """
        return int(np.prod(self.resolution))

    def flat_values(self):
        """
        Values as rows, one per coordinate in grid_coords order.
        :return: array (N, m)
        """
        return self.values.reshape(-1, self.channels)

    def take(self, axis, start, stop):
        """
        Sub-signal of the samples start..stop-1 along one axis, e.g. the left half of an image.

        :return: Signal
        """
        index = [slice(None)] * self.dim
        index[axis] = slice(start, stop)
        part = self.values[tuple(index)]
        return Signal(part.shape[:-1], self.channels, part, self.sample_rate)

    def __eq__(self, other):
        return isinstance(other, Signal) and self.resolution == other.resolution \
            and self.channels == other.channels and np.array_equal(self.values, other.values)

    def __repr__(self):
        return "Signal(resolution={}, channels={})".format(self.resolution, self.channels)


def grid_coords(resolution, bounds=None):
    """
    Regular coordinate grid, row-major, last dimension fastest.

        >>> grid_coords((3,))[:, 0]
        array([-1.,  0.,  1.], dtype=float32)

    :param resolution: samples per dimension
    :param bounds: partition.Bounds, default (-1, 1)^n; a single sample sits at the center
    :return: float32 array (N, n)
    """
    resolution = tuple(int(size) for size in resolution)
    if any(size < 1 for size in resolution):
        raise ShapeError("Resolution needs positive entries, got {}".format(resolution))
    mins = (-1.0,) * len(resolution) if bounds is None else bounds.mins
    maxs = (1.0,) * len(resolution) if bounds is None else bounds.maxs
    axes = [np.linspace(low, high, size) if size > 1 else np.array([(low + high) / 2])
            for low, high, size in zip(mins, maxs, resolution)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([axis.reshape(-1) for axis in mesh], axis=-1).astype(np.float32)
    # float32 rounding must not push grid points past bounds that float32 cannot represent
    np.clip(coords, _float32_inside(mins, np.inf), _float32_inside(maxs, -np.inf), out=coords)
    return coords


def _float32_inside(limits, towards):
    """
    Closest float32 values that do not lie beyond the given limits, stepping towards +inf for
    lower limits and towards -inf for upper ones.
    """
    limits = np.array(limits, dtype=np.float64)
    rounded = limits.astype(np.float32)
    beyond = rounded > limits if towards < 0 else rounded < limits
    return np.where(beyond, np.nextafter(rounded, np.float32(towards)), rounded)


def _next_token(data, position):
    """
    Read one whitespace separated header token, skipping comments.
    :return: (token, position after the token)
    """
    while True:
        while position < len(data) and data[position:position + 1].isspace():
            position += 1
        if position < len(data) and data[position:position + 1] == b"#":
            while position < len(data) and data[position:position + 1] not in (b"\n", b"\r"):
                position += 1
            continue
        break
    start = position
    while position < len(data) and not data[position:position + 1].isspace():
        position += 1
    if start == position:
        raise FormatError("Header ends prematurely", offset=start)
    return data[start:position], position


def load_image(path, fmt=None):
    """
    Load a binary 8 bit PGM (P5) or PPM (P6) image.

    :param path: file to read
    :param fmt: "pgm" or "ppm" to insist on one, None to accept both
    :return: Signal with resolution (height, width) and 1 or 3 channels
    """
    with open(path, "rb") as image_file:
        data = image_file.read()
    magic, position = _next_token(data, 0)
    formats = {magic_bytes: (name, channels) for name, (magic_bytes, channels)
               in IMAGE_FORMATS.items()}
    if magic not in formats or (fmt is not None and formats[magic][0] != fmt):
        raise FormatError("Unsupported image type {!r}".format(magic), offset=0)
    channels = formats[magic][1]
    header = []
    for _ in range(3):
        token, position = _next_token(data, position)
        if not token.isdigit():
            raise FormatError("Expected a number in the header, got {!r}".format(token),
                              offset=position - len(token))
        header.append(int(token))
    width, height, max_value = header
    if max_value != MAX_VALUE:
        raise FormatError("Only 8 bit images (maxval 255) are supported, got {}"
                          .format(max_value), offset=position - len(str(max_value)))
    if width < 1 or height < 1:
        raise FormatError("Image needs positive dimensions, got {}x{}".format(width, height))
    position += 1  # single whitespace byte before the raster
    expected = width * height * channels
    payload = data[position:position + expected]
    if len(payload) < expected:
        raise FormatError("Truncated payload: expected {} bytes, got {}"
                          .format(expected, len(payload)), offset=position + len(payload))
    if len(data) > position + expected:
        LOGGER.warning("Ignoring %d trailing bytes in %s", len(data) - position - expected, path)
    raw = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    values = (2.0 * (raw / MAX_VALUE) - 1.0).astype(np.float32)
    LOGGER.debug("Loaded %dx%d image with %d channels from %s", height, width, channels, path)
    return Signal((height, width), channels, values)


def save_image(signal, path, fmt=None):
    """
    Save a 2D signal as binary PGM (1 channel) or PPM (3 channels).

    :param signal: Signal with resolution (height, width)
    :param path: file to write
    :param fmt: "pgm" or "ppm", derived from the channel count if None
    :return:
    """
    if signal.dim != 2:
        raise ShapeError("Images need two dimensions, got {}".format(signal.resolution))
    names = {channels: name for name, (_, channels) in IMAGE_FORMATS.items()}
    if signal.channels not in names:
        raise ShapeError("Images need 1 or 3 channels, got {}".format(signal.channels))
    fmt = names[signal.channels] if fmt is None else fmt
    if IMAGE_FORMATS.get(fmt, (None, None))[1] != signal.channels:
        raise ShapeError("Format {} does not fit {} channels".format(fmt, signal.channels))
    height, width = signal.resolution
    scaled = np.clip((signal.values.astype(np.float64) + 1.0) / 2.0, 0.0, 1.0) * MAX_VALUE
    header = b"%s\n%d %d\n%d\n" % (IMAGE_FORMATS[fmt][0], width, height, MAX_VALUE)
    with open(path, "wb") as image_file:
        image_file.write(header)
        image_file.write(np.rint(scaled).astype(np.uint8).tobytes())


def load_wav(path):
    """
    Load a 16 bit PCM mono WAV file.

    :param path: file to read
    :return: Signal with resolution (samples,), one channel and the file's sample rate
    """
    try:
        with wave.open(str(path), "rb") as wav_file:
            channels = wav_file.getnchannels()
            width = wav_file.getsampwidth()
            rate = wav_file.getframerate()
            frames = wav_file.readframes(wav_file.getnframes())
    except (wave.Error, EOFError) as error:
        raise FormatError("Not a PCM WAV file: {}".format(error)) from error
    if channels != 1:
        raise FormatError("Only mono audio is supported, got {} channels".format(channels))
    if width != 2:
        raise FormatError("Only 16 bit samples are supported, got {} bit".format(8 * width))
    samples = np.frombuffer(frames, dtype="<i2")
    if samples.size == 0:
        raise FormatError("Audio file contains no samples")
    values = (samples.astype(np.float64) / PCM_SCALE).astype(np.float32)
    LOGGER.debug("Loaded %d samples at %d Hz from %s", samples.size, rate, path)
    return Signal((samples.size,), 1, values, sample_rate=rate)


def save_wav(signal, path, sample_rate=None):
    """
    Save a 1D single channel signal as 16 bit PCM mono WAV.

    :param signal: Signal with resolution (samples,)
    :param path: file to write
    :param sample_rate: samples per second, default the signal's own or 16 kHz
    :return:
    """
    if signal.dim != 1 or signal.channels != 1:
        raise ShapeError("Audio needs one dimension and one channel, got {} with {} channels"
                         .format(signal.resolution, signal.channels))
    rate = sample_rate or signal.sample_rate or DEFAULT_SAMPLE_RATE
    samples = np.clip(np.rint(signal.values.reshape(-1).astype(np.float64) * PCM_SCALE),
                      -PCM_SCALE, PCM_SCALE - 1).astype("<i2")
    with wave.open(str(path), "wb") as wav_file:
        wav_file.setnchannels(1)
        wav_file.setsampwidth(2)
        wav_file.setframerate(int(rate))
        wav_file.writeframes(samples.tobytes())


def load_signal(path):
    """
    Load an image or audio file based on its extension (.pgm, .ppm, .wav).

    :param path: file to read
    :return: Signal
    """
    suffix = str(path).lower().rsplit(".", 1)[-1]
    if suffix == "wav":
        return load_wav(path)
    if suffix in IMAGE_FORMATS:
        return load_image(path, suffix)
    raise FormatError("Unknown signal file type .{} (use .pgm, .ppm or .wav)".format(suffix))


def save_signal(signal, path):
    """
    Save a signal as image or audio based on the extension of path.

    :param signal: Signal
    :param path: file to write
    :return:
    """
    suffix = str(path).lower().rsplit(".", 1)[-1]
    if suffix == "wav":
        save_wav(signal, path)
    elif suffix in IMAGE_FORMATS:
        save_image(signal, path, suffix)
    else:
        raise FormatError("Unknown signal file type .{} (use .pgm, .ppm or .wav)".format(suffix))


def test_pattern_image(size=128, seed=0):
    """
    Synthetic grayscale test image with smooth shading, hard edges, stripes and a noisy quadrant.
    Stands in for natural photographs in the desk scale experiments.

    :param size: height and width
    :param seed: seed of the texture noise
    :return: Signal (size, size) with one channel
    """
    # pylint: disable=invalid-name
    y, x = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    image = 0.5 * x * y + 0.3 * np.cos(2.5 * x)
    image = np.where((x + 0.3) ** 2 + (y - 0.3) ** 2 < 0.15, 0.8, image)
    image = np.where((x > 0.2) & (y < -0.2), 0.4 * np.sign(np.sin(14.0 * x)), image)
    noise = tensors.uniform(tensors.Rng(seed), -0.3, 0.3, (size, size), np.float64)
    image = np.where((x < -0.2) & (y < -0.2), image + noise, image)
    return Signal((size, size), 1, np.clip(image, -1.0, 1.0))


def chirp_clip(seconds=1.0, rate=DEFAULT_SAMPLE_RATE, segments=4):
    """
    Synthetic audio: rising chirps alternating with silence.

    :param seconds: duration
    :param rate: samples per second
    :param segments: number of chirp/silence pairs
    :return: Signal (samples,) with one channel
    """
    count = int(round(seconds * rate))
    time = np.arange(count) / rate
    segment = seconds / segments
    local_time = np.mod(time, segment)
    frequency = 200.0 + 1800.0 * local_time / segment
    audible = local_time < segment / 2
    values = np.where(audible, 0.8 * np.sin(2 * np.pi * frequency * local_time), 0.0)
    return Signal((count,), 1, values, sample_rate=rate)
