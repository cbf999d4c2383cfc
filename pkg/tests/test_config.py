import json

import pytest

from radpathlink.config import ConfigError, ServiceConfig, load_config, \
    parse_bind_address
from radpathlink.engine import EngineKind


class TestLoadConfig:
    def test_defaults(self):
        cfg = load_config(env={})
        assert cfg.max_concurrent_jobs == 2
        assert cfg.engine.kind is EngineKind.SYNTHETIC

    def test_file_values(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({
            "archive_endpoint": "http://pacs:8042",
            "master_table_path": "/data/master.json",
            "manifest_store_path": "/var/lib/links.jsonl",
            "bind_address": "0.0.0.0:9000",
            "max_concurrent_jobs": 4,
            "engine": {"kind": "external", "command_template": "seg {input} {output_dir}",
                       "timeout": 120},
        }))
        cfg = load_config(str(path), env={})
        assert cfg.archive_endpoint == "http://pacs:8042"
        assert cfg.master_table_path == "/data/master.json"
        assert cfg.bind_address == ("0.0.0.0", 9000)
        assert cfg.max_concurrent_jobs == 4
        assert cfg.engine.kind is EngineKind.EXTERNAL
        assert cfg.engine.timeout == 120

    def test_env_overrides_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"archive_endpoint": "http://file:1"}))
        cfg = load_config(str(path), env={
            "ARCHIVE_ENDPOINT": "http://env:2",
            "MASTER_TABLE_PATH": "/abs/master.json",
            "BIND_ADDRESS": "127.0.0.1:7000",
        })
        assert cfg.archive_endpoint == "http://env:2"
        assert cfg.master_table_path == "/abs/master.json"
        assert cfg.bind_address == ("127.0.0.1", 7000)

    def test_overrides_beat_env(self, tmp_path):
        cfg = load_config(env={"ARCHIVE_ENDPOINT": "http://env:2"},
                          overrides={"archive_endpoint": "http://flag:3"})
        assert cfg.archive_endpoint == "http://flag:3"

    def test_relative_master_path_rejected(self):
        with pytest.raises(ConfigError):
            load_config(env={"MASTER_TABLE_PATH": "relative/master.json"})

    def test_bad_bind_address(self):
        with pytest.raises(ConfigError):
            parse_bind_address("no-port")

    def test_bad_json_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(str(path), env={})

    def test_jobs_floor(self):
        with pytest.raises(ConfigError):
            ServiceConfig(max_concurrent_jobs=0).validate()
