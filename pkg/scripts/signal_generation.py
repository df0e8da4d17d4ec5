"""
Generating the synthetic signals used by the experiments: a grayscale test pattern at desk and
full scale, its left half for the extension experiment, and a chirp clip.
"""
import os
import sys
import pandas as pd

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                "source"))
import signalio  # pylint: disable=wrong-import-position

DATA_DIRECTORY = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")

ARRAY = [
    {"name": "pattern_128", "kind": "image", "size": 128, "file": "pattern_128.pgm"},
    {"name": "pattern_128_left", "kind": "image", "size": 128, "file": "pattern_128_left.pgm"},
    {"name": "pattern_512", "kind": "image", "size": 512, "file": "pattern_512.pgm"},
    {"name": "chirp_1s", "kind": "audio", "seconds": 1.0, "file": "chirp_1s.wav"},
]


def create_signal(entry, seed=0):
    """
    Signal described by one manifest entry.

    :param entry: dict from ARRAY
    :param seed: texture seed of the test pattern
    :return: signalio.Signal
    """
    if entry["kind"] == "audio":
        return signalio.chirp_clip(entry["seconds"], signalio.DEFAULT_SAMPLE_RATE)
    image = signalio.test_pattern_image(entry["size"], seed)
    if entry["name"].endswith("_left"):
        return image.take(1, 0, entry["size"] // 2)
    return image


def create_dataframes(directory=DATA_DIRECTORY, seed=0):
    """
    Write all signals and describe them in a pandas.DataFrame.

    :param directory: target directory
    :param seed: texture seed of the test pattern
    :return: DataFrame indexed by signal name
    """
    rows = []
    for entry in ARRAY:
        signal = create_signal(entry, seed)
        path = os.path.join(directory, entry["file"])
        signalio.save_signal(signal, path)
        rows.append(dict(entry, resolution="x".join(str(size) for size in signal.resolution),
                         channels=signal.channels, path=path))
    data_frame = pd.json_normalize(rows)
    data_frame.set_index("name", inplace=True)
    return data_frame


def save_files(data_frame, name):
    """
    Write the manifest next to the signals.

    :param data_frame: DataFrame
    :param name: filename (without csv, that is added)
    :return: Nothing
    """
    data_frame.to_csv("{}.csv".format(name), sep=";")


if __name__ == '__main__':
    save_files(create_dataframes(), os.path.join(DATA_DIRECTORY, "signals"))
