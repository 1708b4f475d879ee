import os
import shutil

import pytest

DATA_DIR = os.environ.get("MNIST_DIR", "/root/data/mnist")


@pytest.fixture(scope="session")
def mnist_dir():
    if not os.path.isdir(DATA_DIR):
        pytest.skip(f"MNIST IDX files not found at {DATA_DIR} (set MNIST_DIR)")
    return DATA_DIR


@pytest.fixture(scope="session")
def engine_cli():
    path = shutil.which("bitnn")
    if path is None:
        pytest.skip("engine CLI (bitnn) not installed")
    return path
