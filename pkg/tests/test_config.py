import os
from pathlib import Path

import pytest

from chain.config import FeePolicy, get_fee_policy
from chain.errors import ConfigError
from tithonus.config import Settings, get_project_root, get_settings


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in list(os.environ):
        if name.startswith("TITHONUS_"):
            monkeypatch.delenv(name)


def test_defaults(tmp_path):
    settings = get_settings(overrides={"workspace": tmp_path / "ws"})
    assert settings.cached_discount == 0.5
    assert settings.fee_policy == FeePolicy(1, 3, 9)
    assert settings.default_deposit == 50_000 and settings.request_limit is None
    assert get_settings().workspace == get_project_root() / "workspace"


def test_precedence(tmp_path, monkeypatch):
    """Defaults < Umgebung < Config-Datei < Overrides."""
    monkeypatch.setenv("TITHONUS_CACHED_DISCOUNT", "0.25")
    monkeypatch.setenv("TITHONUS_REQUEST_LIMIT", "4")
    monkeypatch.setenv("TITHONUS_STANDARD_FEE_RATE", "11")
    assert get_settings().cached_discount == 0.25

    config = tmp_path / "tithonus.env"
    config.write_text("CACHED_DISCOUNT=0.3\nREQUEST_LIMIT=6\n")
    from_file = get_settings(config)
    assert from_file.cached_discount == 0.3
    assert from_file.request_limit == 6
    assert from_file.standard_fee_rate == 11

    overridden = get_settings(config, {"request_limit": "7", "cached_discount": None})
    assert overridden.request_limit == 7
    assert overridden.cached_discount == 0.3


def test_paths_are_converted(tmp_path):
    settings = get_settings(overrides={"workspace": str(tmp_path / "ws"), "corpus_dir": str(tmp_path)})
    assert settings.workspace == tmp_path / "ws"
    assert isinstance(settings.corpus_dir, Path)


@pytest.mark.parametrize(
    "content",
    [
        "REQUEST_LIMIT=viele\n",
        "MIN_FEE_RATE=0.5\n",
        "STANDARD_FEE_RATE=0.5\n",
        "OUTPUT_FORMAT=xml\n",
    ],
)
def test_invalid_config_file(tmp_path, content):
    path = tmp_path / "bad.env"
    path.write_text(content)
    with pytest.raises(ConfigError):
        get_settings(path)


def test_missing_paths(tmp_path):
    with pytest.raises(ConfigError):
        get_settings(tmp_path / "fehlt.env")
    with pytest.raises(ConfigError):
        get_settings(overrides={"corpus_dir": str(tmp_path / "fehlt")})
    with pytest.raises(ConfigError):
        get_settings(overrides={"workspace": tmp_path / "a" / "b" / "ws"})


def test_fee_policy_from_env(monkeypatch):
    assert get_fee_policy() == FeePolicy()
    monkeypatch.setenv("TITHONUS_MIN_FEE_RATE", "2")
    monkeypatch.setenv("TITHONUS_STANDARD_FEE_RATE", "4")
    assert get_fee_policy() == FeePolicy(2, 3, 4)
    monkeypatch.setenv("TITHONUS_DUST_MULTIPLIER", "drei")
    with pytest.raises(ConfigError):
        get_fee_policy()


def test_fee_policy_bounds():
    with pytest.raises(ConfigError):
        FeePolicy(min_fee_rate=0.5)
    with pytest.raises(ConfigError):
        FeePolicy(dust_multiplier=-1)
    with pytest.raises(ConfigError):
        FeePolicy(min_fee_rate=5, standard_fee_rate=4)
    assert Settings(workspace=Path("ws"), min_fee_rate=2, standard_fee_rate=2).fee_policy.standard_fee_rate == 2
