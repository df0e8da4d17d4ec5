"""
Reconstruction quality measures. All of them compare signals on the [0, 1] scale, values v in
[-1, 1] are mapped to (v + 1) / 2 first.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from errors import ShapeError

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DATA_RANGE = 1.0


def _unit_scale(signal):
    values = signal.values if hasattr(signal, "values") else signal
    return (np.asarray(values, dtype=np.float64) + 1.0) / 2.0


def _pair(first, second):
    first = _unit_scale(first)
    second = _unit_scale(second)
    if first.shape != second.shape:
        raise ShapeError("Cannot compare signals of shape {} and {}".format(first.shape,
                                                                           second.shape))
    return first, second


def mse(first, second):
    """
    Mean squared error on the [0, 1] scale.

    :param first: signalio.Signal (or array of values in [-1, 1])
    :param second: signal of the same shape
    :return: float
    """
    first, second = _pair(first, second)
    return float(np.mean(np.square(first - second)))


def psnr_from_mse(error):
    """
    10 log10(1 / mse) with peak value 1; infinity for a perfect reconstruction.
    """
    if error == 0:
        return float("inf")
    return float(10.0 * np.log10(DATA_RANGE ** 2 / error))


def psnr(first, second):
    """
    Peak signal-to-noise ratio in dB on the [0, 1] scale.

    :param first: signalio.Signal
    :param second: signalio.Signal of the same shape
    :return: float, inf if the signals are identical
    """
    return psnr_from_mse(mse(first, second))


def gaussian_window(size=WINDOW_SIZE, sigma=WINDOW_SIGMA):
    """
    Normalized 1D Gaussian weights; the 2D window is their outer product.
    """
    offsets = np.arange(size, dtype=np.float64) - size // 2
    weights = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    return weights / weights.sum()


def _filter(image, weights):
    """
    Separable valid-region filtering of a (height, width) array.
    """
    rows = sliding_window_view(image, weights.size, axis=0) @ weights
    return sliding_window_view(rows, weights.size, axis=1) @ weights


def _ssim_channel(first, second, weights):
    c1 = (K1 * DATA_RANGE) ** 2
    c2 = (K2 * DATA_RANGE) ** 2
    mean_first = _filter(first, weights)
    mean_second = _filter(second, weights)
    mean_product = mean_first * mean_second
    mean_first_sq = mean_first * mean_first
    mean_second_sq = mean_second * mean_second
    var_first = _filter(first * first, weights) - mean_first_sq
    var_second = _filter(second * second, weights) - mean_second_sq
    covariance = _filter(first * second, weights) - mean_product
    numerator = (2.0 * mean_product + c1) * (2.0 * covariance + c2)
    denominator = (mean_first_sq + mean_second_sq + c1) * (var_first + var_second + c2)
    return float(np.mean(numerator / denominator))


def ssim(first, second):
    """
    Single scale structural similarity of two images: 11x11 Gaussian window with sigma 1.5,
    K1 = 0.01, K2 = 0.03, data range 1, averaged over all valid window positions and channels.
    Symmetric in its arguments and exactly 1 for identical images.

    :param first: signalio.Signal with two dimensions
    :param second: signalio.Signal of the same shape
    :return: float in [-1, 1]
    """
    first, second = _pair(first, second)
    if first.ndim == 2:
        first, second = first[..., None], second[..., None]
    if first.ndim != 3:
        raise ShapeError("SSIM needs images, got values of shape {}".format(first.shape))
    if min(first.shape[:2]) < WINDOW_SIZE:
        raise ShapeError("SSIM needs images of at least {0}x{0} pixels, got {1}"
                         .format(WINDOW_SIZE, first.shape[:2]))
    weights = gaussian_window()
    scores = [_ssim_channel(first[..., channel], second[..., channel], weights)
              for channel in range(first.shape[2])]
    return float(np.mean(scores))


def evaluate(reference, reconstruction):
    """
    All applicable measures as a dict: mse and psnr always, ssim for images large enough.

    :param reference: signalio.Signal
    :param reconstruction: signalio.Signal
    :return: dict
    """
    error = mse(reference, reconstruction)
    scores = {"mse": error, "psnr": psnr_from_mse(error)}
    values = reference.values if hasattr(reference, "values") else np.asarray(reference)
    if values.ndim == 3 and min(values.shape[:2]) >= WINDOW_SIZE:
        scores["ssim"] = ssim(reference, reconstruction)
    return scores
