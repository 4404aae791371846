"""Command-line harness: gen-data, sft, rgrpo, eval, robustness, ablation.

Every command writes ``config.txt`` (the resolved config) into ``--out`` and
is a pure function of its config and input files. Exit codes: 0 ok, 2 config,
3 data/checkpoint, 4 numeric, 5 judge transport.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .agent import JudgeError, JudgeTransportError, make_judge
from .config import ConfigError, float_list
from .datasets import DataError, read_dataset, summarize, write_dataset
from .env import StratifiedMix, gen_dataset
from .evaluation import evaluate, robustness
from .optim import NumericError
from .policy import CheckpointError, load_checkpoint, save_checkpoint
from .rewards import RewardWeights
from .rgrpo import RgrpoConfig, greedy_accuracy, train_rgrpo
from .sft import SftConfig, train_sft

log = logging.getLogger("coe_grpo")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_TRANSPORT = 0, 2, 3, 4, 5
ABLATION_ROWS = ("no-CoE SFT", "CoE SFT", "CoE+GRPO", "CoE+R-GRPO")


def _dump(record) -> str:
    return json.dumps(record, sort_keys=True)


def _write_jsonl(path: Path, records) -> None:
    path.write_text("".join(_dump(r) + "\n" for r in records))


def _prepare(out, command: str, cfg: dict) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfgmod.format_config(cfg))
    except OSError as exc:
        raise ConfigError(f"cannot write to {out}: {exc}") from None
    return out


def _strata(cfg) -> StratifiedMix:
    try:
        return StratifiedMix(cfg["strata_high"], cfg["strata_medium"], cfg["strata_low"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def sft_config(cfg: dict, **over) -> SftConfig:
    try:
        return SftConfig(alpha=over.get("alpha", cfg["alpha"]), eta=cfg["eta"],
                         step_size=cfg["sft_step_size"], epochs=cfg["epochs"],
                         seed=cfg["seed"], batch_size=cfg["sft_batch_size"],
                         acc_every=max(cfg["epochs"], 1))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def rgrpo_config(cfg: dict, **over) -> RgrpoConfig:
    try:
        weights = RewardWeights(cfg["lambda_s"], over.get("lambda_t", cfg["lambda_t"]),
                                over.get("lambda_v", cfg["lambda_v"]))
        return RgrpoConfig(group_size=cfg["group_size"], lambda_kl=cfg["lambda_kl"], weights=weights,
                           step_size=cfg["rl_step_size"], iterations=cfg["iterations"],
                           seed=cfg["seed"], sigma_floor=cfg["sigma_floor"],
                           judge_mode=cfg["judge_mode"], logic_direction=cfg["logic_direction"],
                           batch_size=cfg["rl_batch_size"], max_len=cfg["max_len"],
                           eval_every=cfg["eval_every"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _judge(cfg: dict):
    if cfg["judge_mode"] != "oracle" and not cfg["judge_endpoint"]:
        raise ConfigError(f"judge_mode={cfg['judge_mode']} needs judge_endpoint")
    try:
        return make_judge(cfg["judge_mode"], cfg["logic_direction"], cfg["judge_endpoint"] or None,
                          cfg["judge_timeout"], cfg["judge_retries"], cfg["judge_cache"] or None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _need(cfg: dict, key: str) -> str:
    if not cfg[key]:
        raise ConfigError(f"missing required setting {key!r}")
    return cfg[key]


def cmd_gen_data(cfg: dict, out) -> dict:
    strata = _strata(cfg)
    if cfg["n_real"] < 0 or cfg["n_fake"] < 0:
        raise ConfigError("n_real and n_fake must be non-negative")
    out = _prepare(out, "gen-data", cfg)
    data = gen_dataset(cfg["seed"], cfg["n_real"], cfg["n_fake"], strata, offset=cfg["index_offset"])
    write_dataset(data, out / "dataset.jsonl")
    summary = summarize(data) if data else {"n": 0}
    (out / "summary.json").write_text(_dump(summary) + "\n")
    return summary


def cmd_sft(cfg: dict, out) -> dict:
    config = sft_config(cfg)
    data = read_dataset(_need(cfg, "data"))
    out = _prepare(out, "sft", cfg)
    records = []

    def on_step(rec, params):
        records.append(rec)

    params = train_sft(data, config, on_step)
    final = {"final": True, "train_acc": greedy_accuracy(params, data),
             "initial_loss": records[0]["loss_sft"] if records else None,
             "final_loss": records[-1]["loss_sft"] if records else None}
    _write_jsonl(out / "metrics.jsonl", records + [final])
    save_checkpoint(params, out / "checkpoint.txt")
    return final


def cmd_rgrpo(cfg: dict, out) -> dict:
    config = rgrpo_config(cfg)
    data = read_dataset(_need(cfg, "data"))
    eval_set = read_dataset(cfg["eval_data"]) if cfg["eval_data"] else None
    init = load_checkpoint(_need(cfg, "checkpoint"))
    judge = _judge(cfg)
    out = _prepare(out, "rgrpo", cfg)
    records = []
    params = train_rgrpo(init, data, config, judge, eval_set, lambda rec, p: records.append(rec))
    final = {"final": True, "mode": config.mode, "train_acc": greedy_accuracy(params, data),
             "init_train_acc": greedy_accuracy(init, data)}
    if eval_set is not None:
        final["eval_acc"] = greedy_accuracy(params, eval_set)
        final["init_eval_acc"] = greedy_accuracy(init, eval_set)
    _write_jsonl(out / "metrics.jsonl", records + [final])
    save_checkpoint(params, out / "checkpoint.txt")
    return final


def _write_report(out: Path, stem: str, report) -> None:
    (out / f"{stem}.json").write_text(_dump(report.summary()) + "\n")
    _write_jsonl(out / f"{stem}_predictions.jsonl", report.predictions)


def cmd_eval(cfg: dict, out):
    data = read_dataset(_need(cfg, "data"))
    params = load_checkpoint(_need(cfg, "checkpoint"))
    out = _prepare(out, "eval", cfg)
    report = evaluate(params, data)
    _write_report(out, "report", report)
    (out / "summary.txt").write_text(report.line() + "\n")
    return report


def cmd_robustness(cfg: dict, out) -> dict:
    sigmas = float_list(cfg["blur_sigmas"], "blur_sigmas")
    steps = float_list(cfg["quant_steps"], "quant_steps")
    if min(sigmas) < 0 or min(steps) < 0:
        raise ConfigError("perturbation levels must be non-negative")
    data = read_dataset(_need(cfg, "data"))
    params = load_checkpoint(_need(cfg, "checkpoint"))
    out = _prepare(out, "robustness", cfg)
    res = robustness(params, data, sigmas, steps)
    _write_report(out, "control", res["control"])
    rows = [{"perturbation": "control", "level": 0.0, **res["control"].summary()}]
    for kind, level_col in (("blur", "sigma"), ("quantization", "step")):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([level_col, "accuracy"])
        for level, rep in res[kind]:
            w.writerow([repr(level), repr(rep.accuracy)])
            rows.append({"perturbation": kind, "level": level, **rep.summary()})
        (out / f"{kind}.csv").write_text(buf.getvalue())
    _write_jsonl(out / "reports.jsonl", rows)
    return res


def ablation_seeds(cfg: dict) -> list[int]:
    return [cfg["seed"] + k for k in range(cfg["seeds"])]


def run_ablation_seed(cfg: dict, seed: int, judge=None) -> dict:
    """Eval accuracy of the four rows for one seed."""
    cfg = dict(cfg, seed=seed)
    strata = _strata(cfg)
    train = gen_dataset(seed, cfg["n_real"], cfg["n_fake"], strata)
    held = gen_dataset(seed, cfg["n_real"], cfg["n_fake"], strata, offset=cfg["eval_offset"])
    no_coe = train_sft(train, sft_config(cfg, alpha=1.0))
    coe = train_sft(train, sft_config(cfg))
    grpo = train_rgrpo(coe, train, rgrpo_config(cfg, lambda_t=0.0, lambda_v=0.0), judge)
    rgrpo = train_rgrpo(coe, train, rgrpo_config(cfg), judge)
    accs = [greedy_accuracy(p, held) for p in (no_coe, coe, grpo, rgrpo)]
    return {"seed": seed, **dict(zip(ABLATION_ROWS, accs))}


def cmd_ablation(cfg: dict, out) -> list[dict]:
    if cfg["seeds"] < 1:
        raise ConfigError("seeds must be >= 1")
    sft_config(cfg), rgrpo_config(cfg)  # validate before any work
    judge = _judge(cfg)
    out = _prepare(out, "ablation", cfg)
    per_seed = []
    for s in ablation_seeds(cfg):
        per_seed.append(run_ablation_seed(cfg, s, judge))
        log.info("ablation seed %d: %s", s, per_seed[-1])
    table = []
    for row in ABLATION_ROWS:
        vals = np.array([r[row] for r in per_seed])
        table.append({"row": row, "mean": float(vals.mean()), "std": float(vals.std()),
                      "per_seed": vals.tolist()})
    _write_jsonl(out / "per_seed.jsonl", per_seed)
    _write_jsonl(out / "ablation.jsonl", table)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "mean", "std"])
    for r in table:
        w.writerow([r["row"], repr(r["mean"]), repr(r["std"])])
    (out / "ablation.csv").write_text(buf.getvalue())
    return table


COMMANDS = {
    "gen-data": cmd_gen_data,
    "sft": cmd_sft,
    "rgrpo": cmd_rgrpo,
    "eval": cmd_eval,
    "robustness": cmd_robustness,
    "ablation": cmd_ablation,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coe-grpo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", required=True, help="output directory")
        for key in cfgmod.COMMAND_KEYS[name]:
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                           help=f"override {key} (default {cfgmod.DEFAULTS[key]!r})")
    return parser


def _summary_line(command: str, result) -> str:
    if command == "eval":
        return result.line()
    if command == "robustness":
        return result["control"].line()
    if command == "ablation":
        return " ".join(f"{r['row']}={r['mean']:.4f}" for r in result)
    return _dump(result)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    try:
        file_values = cfgmod.load_config(args.config) if args.config else {}
        overrides = {k: getattr(args, k) for k in cfgmod.COMMAND_KEYS[command]}
        cfg = cfgmod.resolve(command, file_values, overrides)
        result = COMMANDS[command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except JudgeTransportError as exc:
        print(f"judge transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except JudgeError as exc:
        print(f"judge error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    print(_summary_line(command, result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
