import json

import pytest

from coe_grpo import config, datasets, env
from coe_grpo.config import ConfigError


def test_dataset_roundtrip(tmp_path, small_set):
    p = tmp_path / "d.jsonl"
    datasets.write_dataset(small_set, p)
    back = datasets.read_dataset(p)
    assert [i.seed for i in back] == [i.seed for i in small_set]
    assert all((a.features == b.features).all() for a, b in zip(back, small_set))
    rec = json.loads(p.read_text().splitlines()[0])
    assert set(rec) == {"schema_version", "seed", "label", "stratum", "artifacts", "scores",
                        "view_summaries", "gold_trace"}
    assert len(rec["scores"]) == 8 and len(rec["view_summaries"]) == 9


def test_dataset_errors_have_line_numbers(tmp_path, small_set):
    p = tmp_path / "d.jsonl"
    datasets.write_dataset(small_set[:3], p)
    lines = p.read_text().splitlines()
    lines[1] = "{broken"
    p.write_text("\n".join(lines))
    with pytest.raises(datasets.DataError, match=":2:"):
        datasets.read_dataset(p)
    rec = json.loads(lines[0])
    rec["scores"][0] = 0.123
    p.write_text(json.dumps(rec) + "\n")
    with pytest.raises(datasets.DataError, match="regenerated"):
        datasets.read_dataset(p)
    rec["schema_version"] = "other"
    p.write_text(json.dumps(rec) + "\n")
    with pytest.raises(datasets.DataError, match="schema"):
        datasets.read_dataset(p)
    p.write_text("")
    with pytest.raises(datasets.DataError, match="empty"):
        datasets.read_dataset(p)
    with pytest.raises(datasets.DataError, match="not found"):
        datasets.read_dataset(tmp_path / "missing.jsonl")


def test_summary_counts():
    s = datasets.summarize(env.gen_dataset(1, 100, 100))
    assert s["labels"] == {"REAL": 100, "FAKE": 100}
    assert s["strata"] == {"high": 50, "medium": 30, "low": 20}


def test_config_parse_and_resolve(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("schema_version=coe-grpo-config/1\n# comment\nalpha = 0.25\nepochs=7\n")
    vals = config.load_config(p)
    cfg = config.resolve("sft", vals, {"epochs": "9", "seed": None})
    assert cfg["alpha"] == 0.25 and cfg["epochs"] == 9 and cfg["eta"] == 0.01
    text = config.format_config(cfg)
    assert text.startswith("schema_version=")
    assert config.resolve("sft", config.parse_config_text(text)) == cfg


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        config.parse_config_text("nonsense=1")
    with pytest.raises(ConfigError):
        config.parse_config_text("epochs=abc")
    with pytest.raises(ConfigError):
        config.parse_config_text("schema_version=9")
    with pytest.raises(ConfigError):
        config.parse_config_text("alpha 0.5")
    with pytest.raises(ConfigError):
        config.load_config(tmp_path / "none.txt")
    with pytest.raises(ConfigError):
        config.float_list("1,x", "blur_sigmas")


def test_every_command_key_has_default():
    for keys in config.COMMAND_KEYS.values():
        assert set(keys) <= set(config.DEFAULTS)
