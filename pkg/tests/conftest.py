from pathlib import Path

import pytest

from contrank.corpus import load_dataset

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def toy_train():
    return load_dataset(DATA_DIR / "toy_train.jsonl", split="train")


@pytest.fixture(scope="session")
def toy_test():
    return load_dataset(DATA_DIR / "toy_test.jsonl", split="test")
