"""
Line-delimited history files: one JSON object per record (iteration, loss, mse, psnr).
"""
import os
import pandas as pd


class HistoryWriter:
    """
    Collects training records and writes them when the with block ends.

        >>> with HistoryWriter("run.jsonl", run="lgs") as writer:
        ...     writer.extend(history.records)
    """
    def __init__(self, filename, **tags):
        self.__filename = filename
        self.__tags = tags
        self.__records = []

    def add(self, record):
        """
        Add a single record (dict). Tags given to the constructor are added to every record.
        :param record:
        :return:
        """
        if not isinstance(record, dict):
            raise ValueError("Need to provide records as dict, got " + str(record))
        self.__records.append(dict(record, **self.__tags))

    def extend(self, records):
        """
        Add several records.
        :param records: iterable of dicts
        :return:
        """
        for record in records:
            self.add(record)

    def save(self):
        """
        Write all records to the file, one JSON object per line.
        :return:
        """
        frame = pd.DataFrame.from_records(self.__records)
        with open(self.__filename, "w", encoding="utf-8") as history_file:
            if self.__records:
                history_file.write(frame.to_json(orient="records", lines=True).rstrip("\n"))
                history_file.write("\n")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """
        Save the history after with statement termination, also when training failed.
        """
        self.save()


def read_history(filename):
    """
    Load a history file.

    :param filename: file written by HistoryWriter
    :return: pandas.DataFrame with one row per record
    """
    if os.path.getsize(filename) == 0:
        return pd.DataFrame()
    return pd.read_json(filename, orient="records", lines=True)
