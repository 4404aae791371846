"""Flat ``key=value`` run configs.

One namespace covers all commands; each command reads the keys it needs and
writes back exactly those (defaults included) next to its outputs.
Types come from the defaults table.
"""

from __future__ import annotations

from pathlib import Path

CONFIG_SCHEMA = "coe-grpo-config/1"


class ConfigError(ValueError):
    """Unknown key, unparsable value or invalid setting."""


DEFAULTS: dict[str, object] = {
    "seed": 0,
    # env
    "n_real": 100,
    "n_fake": 100,
    "strata_high": 0.5,
    "strata_medium": 0.3,
    "strata_low": 0.2,
    "index_offset": 0,
    # inputs
    "data": "",
    "eval_data": "",
    "checkpoint": "",
    # sft
    "alpha": 0.5,
    "eta": 0.01,
    "sft_step_size": 0.05,
    "epochs": 300,
    "sft_batch_size": 0,
    # rgrpo
    "group_size": 8,
    "lambda_kl": 0.01,
    "lambda_s": 1.0,
    "lambda_t": 0.5,
    "lambda_v": 0.5,
    "rl_step_size": 0.02,
    "iterations": 100,
    "rl_batch_size": 32,
    "sigma_floor": 1e-8,
    "max_len": 32,
    "eval_every": 0,
    "judge_mode": "oracle",
    "logic_direction": "stability",
    "judge_endpoint": "",
    "judge_timeout": 30.0,
    "judge_retries": 2,
    "judge_cache": "",
    # robustness
    "blur_sigmas": "1,2,3,4",
    "quant_steps": "0.03125,0.0625,0.125,0.25",
    # ablation
    "seeds": 5,
    "eval_offset": 1000000,
}

_ENV = ["n_real", "n_fake", "strata_high", "strata_medium", "strata_low"]
_SFT = ["alpha", "eta", "sft_step_size", "epochs", "sft_batch_size"]
_RL = ["group_size", "lambda_kl", "lambda_s", "lambda_t", "lambda_v", "rl_step_size",
       "iterations", "rl_batch_size", "sigma_floor", "max_len", "eval_every", "judge_mode",
       "logic_direction", "judge_endpoint", "judge_timeout", "judge_retries", "judge_cache"]

COMMAND_KEYS: dict[str, list[str]] = {
    "gen-data": ["seed", *_ENV, "index_offset"],
    "sft": ["seed", "data", *_SFT],
    "rgrpo": ["seed", "data", "eval_data", "checkpoint", *_RL],
    "eval": ["data", "checkpoint"],
    "robustness": ["data", "checkpoint", "blur_sigmas", "quant_steps"],
    "ablation": ["seed", "seeds", *_ENV, "eval_offset", *_SFT, *_RL],
}


def _coerce(key: str, value):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            return str(value).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        if key == "schema_version":
            if value != CONFIG_SCHEMA:
                raise ConfigError(f"{source}:{lineno}: schema_version {value!r}, expected {CONFIG_SCHEMA!r}")
            continue
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config not found: {path}")
    return parse_config_text(path.read_text(), str(path))


def resolve(command: str, file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults < config file < command-line overrides, restricted to the command's keys."""
    keys = COMMAND_KEYS[command]
    merged = {k: DEFAULTS[k] for k in keys}
    for src in (file_values or {}, overrides or {}):
        for k, v in src.items():
            if v is None:
                continue
            if k not in DEFAULTS:
                raise ConfigError(f"unknown key {k!r}")
            if k in merged:
                merged[k] = _coerce(k, v)
    return merged


def format_config(values: dict) -> str:
    lines = [f"schema_version={CONFIG_SCHEMA}"]
    lines += [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in values.items()]
    return "\n".join(lines) + "\n"


def float_list(text: str, key: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(f"{key}: empty list")
    return vals
