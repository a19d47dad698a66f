import json

import numpy as np
import pytest

from viscolab.services.constitutive import ModelParams
from viscolab.services.fields import Grid


@pytest.fixture
def grid16() -> Grid:
    return Grid(dim=2, n=16)


@pytest.fixture
def grid32() -> Grid:
    return Grid(dim=2, n=32)


@pytest.fixture
def params() -> ModelParams:
    return ModelParams()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def config_file(tmp_path):
    """Пишет JSON-конфиг во временный файл и возвращает путь"""

    def _write(document: dict, name: str = "config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(document), encoding="utf-8")
        return path

    return _write
