import logging

import pytest

import config.settings as settings_module
from core.numerics import make_rng
from tests.synthetic import make_corpus, table_from_rows


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Every test reads settings from its own environment."""
    for name in ("PARASENT_LOG_LEVEL", "PARASENT_SHOW_PROGRESS", "PARASENT_LOWERCASE",
                 "PARASENT_UNK_STRATEGY", "PARASENT_UNK_TOKEN", "PARASENT_SEED"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("PARASENT_SHOW_PROGRESS", "false")
    monkeypatch.setattr(settings_module, "_config", None)
    yield
    logging.getLogger().handlers.clear()


@pytest.fixture
def rng():
    return make_rng(20240917)


@pytest.fixture
def toy_table():
    return table_from_rows({
        "a": [1.0, 0.0],
        "b": [0.0, 1.0],
        "c": [1.0, 1.0],
        "d": [-1.0, 0.5],
    })


@pytest.fixture
def corpus():
    return make_corpus()


@pytest.fixture
def write(tmp_path):
    """Write text to a file under tmp_path and return its path as a string."""

    def _write(name: str, text: str) -> str:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    return _write
