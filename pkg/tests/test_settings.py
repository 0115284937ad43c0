# -*- coding: utf-8 -*-

import pytest

from utils.errors import ConfigError
from utils.settings import Settings


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "app.yaml"
    path.write_text(
        "tracker:\n"
        "  thresh_nms: 0.4\n"
        "evaluation:\n"
        "  min_visibility: 0.25\n"
        "logging:\n"
        "  level: INFO\n",
        encoding="utf-8",
    )
    return path


def test_missing_file_gives_defaults(tmp_path):
    settings = Settings(str(tmp_path / "missing.yaml"))
    assert settings.get_tracker_config() == {}
    assert settings.get_eval_config() == {"iou_thresh": 0.5}
    assert settings.get_synth_config()["flow_depth"] == 1
    assert settings.get_logging_config()["level"] == "INFO"


def test_sections_merge_defaults(config_file):
    settings = Settings(str(config_file))
    assert settings.get_config("tracker.thresh_nms") == 0.4
    assert settings.get_eval_config() == {"iou_thresh": 0.5, "min_visibility": 0.25}
    with pytest.raises(KeyError):
        settings.get_config("tracker.bt_frames")
    assert settings.get_config("tracker.bt_frames", default=30) == 30


def test_env_overrides_log_level(config_file, monkeypatch):
    monkeypatch.setenv("FFT_LOG", "debug")
    assert Settings(str(config_file)).get_logging_config()["level"] == "DEBUG"


def test_load_file(config_file, tmp_path):
    settings = Settings(str(tmp_path / "missing.yaml"))
    settings.load_file(str(config_file))
    assert settings.get_tracker_config() == {"thresh_nms": 0.4}

    with pytest.raises(ConfigError):
        settings.load_file(str(tmp_path / "nope.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        settings.load_file(str(bad))
    broken = tmp_path / "broken.yaml"
    broken.write_text("tracker: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        settings.load_file(str(broken))


def test_section_must_be_mapping(tmp_path):
    path = tmp_path / "app.yaml"
    path.write_text("tracker: 3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        Settings(str(path)).get_tracker_config()
