import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

DATA = os.path.join(os.path.dirname(__file__), "data")


def data_file(name: str) -> str:
    return os.path.join(DATA, name)
