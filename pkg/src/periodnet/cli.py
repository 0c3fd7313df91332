"""``periodnet`` command line: synth, train, eval, forecast, gradcheck, ablate.

Settings come from a flat ``key = value`` file (``--config``), then
``--set key=value`` pairs, then dedicated flags; later sources win.
Exit codes: 0 success, 1 verification failure, 2 usage/config/data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import logging
import sys
from pathlib import Path

import numpy as np

from . import numcore as nc
from .ablation import Arm, ablation_run, format_table, write_results
from .checkpoint import Checkpoint, CheckpointError
from .data import (
    DataError,
    Dataset,
    SeriesFrame,
    SplitSpec,
    denormalize,
    load_csv,
    normalize,
    save_csv,
    split_chrono,
    synth_series,
)
from .model import ConfigError, ModelConfig, PeriodNet
from .train import TrainConfig, evaluate, train, write_history

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


def _int_or_none(s: str):
    return None if s.lower() in ("none", "") else int(s)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str):
    return None if s.lower() in ("none", "") else tuple(int(p) for p in s.split(","))


def _floats(s: str):
    return tuple(float(p) for p in s.split(","))


def _mode(s: str) -> str:
    m = {"pam": "pam", "spam": "spam", "fam": "full", "full": "full"}.get(s.lower())
    if m is None:
        raise ValueError(f"unknown mixer {s!r}")
    return m


def _names(s: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in s.split(",") if p.strip())


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    # model
    "L": (int, 96), "T": (int, 48), "D": (int, 16), "heads": (int, 2), "P": (int, 8),
    "P_list": (_ints, None), "r": (int, 4), "G": (_int_or_none, None), "h_g": (_int_or_none, None),
    "N_enc": (int, 2), "N_dif": (int, 1), "ffn_width": (int, 32), "mode": (_mode, "pam"),
    "activation": (str, "relu"), "pos_encoding": (_bool, True), "init_std": (float, 0.02),
    "ln_eps": (float, 1e-5),
    # training
    "lr": (float, 1e-3), "batch_size": (int, 16), "max_epochs": (int, 10), "patience": (int, 3),
    "max_steps": (_int_or_none, None), "stride": (int, 1), "seed": (int, 0),
    # io
    "data": (str, None), "checkpoint": (str, None), "out": (str, None), "history": (str, None),
    "split": (_ints, (6, 2, 2)), "eval_split": (str, "test"), "horizon": (_int_or_none, None),
    # synth
    "synth_n": (int, 2000), "synth_periods": (_floats, (8.0, 24.0)), "synth_amplitudes": (_floats, (1.0, 1.0)),
    "synth_noise": (float, 0.0), "synth_trend": (float, 0.0), "synth_vars": (int, 1),
    # gradcheck
    "gradcheck_h": (float, 1e-5), "gradcheck_tol": (float, 1e-4), "gradcheck_corrupt": (str, None),
    # ablate
    "mixers": (_names, ("PAM", "SPAM")), "predictors": (_names, ("PD",)), "groups": (_names, ("none",)),
}

MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {"C"}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"loss"}

# Command-specific defaults layered under the config file.
COMMAND_DEFAULTS = {
    "gradcheck": {"L": "12", "T": "6", "D": "4", "heads": "2", "P_list": "3,3", "G": "2",
                  "N_enc": "2", "N_dif": "1", "ffn_width": "8", "r": "2", "init_std": "0.3"},
}


def parse_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def resolve(command: str, file_values: dict[str, str], overrides: dict[str, str]) -> dict:
    raw = dict(COMMAND_DEFAULTS.get(command, {}))
    raw.update(file_values)
    raw.update(overrides)
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    settings = {k: default for k, (_, default) in SCHEMA.items()}
    for k, v in raw.items():
        try:
            settings[k] = SCHEMA[k][0](v)
        except ValueError as exc:
            raise UsageError(f"bad value for {k}: {v!r} ({exc})") from None
    return settings


def echo_config(command: str, settings: dict, out=None) -> None:
    out = out or sys.stdout
    print(f"# periodnet {command}", file=out)
    for k in sorted(settings):
        if settings[k] is not None:
            v = settings[k]
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            print(f"{k} = {v}", file=out)


def model_config(settings: dict, C: int) -> ModelConfig:
    return ModelConfig(C=C, **{k: settings[k] for k in MODEL_KEYS})


def train_config(settings: dict) -> TrainConfig:
    return TrainConfig(**{k: settings[k] for k in TRAIN_KEYS})


def _require(settings: dict, key: str) -> str:
    if not settings.get(key):
        raise UsageError(f"--{key.replace('_', '-')} is required")
    return settings[key]


def _split_spec(settings) -> SplitSpec:
    ratios = settings["split"]
    if ratios is None or len(ratios) != 3:
        raise UsageError("split must have three ratios, e.g. 6,2,2")
    return SplitSpec(tuple(ratios))


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_synth(s: dict) -> int:
    out = _require(s, "out")
    periods, amps = s["synth_periods"], s["synth_amplitudes"]
    if len(amps) != len(periods):
        raise UsageError("synth_periods and synth_amplitudes need the same length")
    frame = synth_series(s["synth_n"], [(p, a, 0.0) for p, a in zip(periods, amps)],
                         s["synth_trend"], s["synth_noise"], s["seed"], s["synth_vars"])
    save_csv(frame, out)
    print(f"wrote {len(frame)} rows x {frame.C} variables to {out}")
    return EXIT_OK


def _load_dataset(s: dict) -> Dataset:
    return Dataset.from_frame(load_csv(_require(s, "data")), _split_spec(s))


def cmd_train(s: dict) -> int:
    ds = _load_dataset(s)
    ckpt_path = Path(s["checkpoint"] or Path(s["out"] or ".") / "model.ckpt")
    hist_path = Path(s["history"] or ckpt_path.with_suffix(".history.csv"))
    model = PeriodNet(model_config(s, ds.train.C), seed=s["seed"])
    ckpt, history = train(model, ds, train_config(s))
    ckpt.save(ckpt_path)
    write_history(history, hist_path)
    val_mse, val_mae = evaluate(ckpt, ds.val)
    print(f"checkpoint {ckpt_path}")
    print(f"history {hist_path}")
    print(f"summary epochs={len(history)} val_mse={val_mse:.10f} val_mae={val_mae:.10f}")
    return EXIT_OK


def _frame_for_checkpoint(frame: SeriesFrame, ckpt: Checkpoint) -> None:
    if list(frame.names) != list(ckpt.stats.names):
        raise UsageError(f"variables {frame.names} do not match checkpoint variables {ckpt.stats.names}")


def cmd_eval(s: dict) -> int:
    ckpt = Checkpoint.load(_require(s, "checkpoint"))
    frame = load_csv(_require(s, "data"))
    _frame_for_checkpoint(frame, ckpt)
    parts = dict(zip(("train", "val", "test"), split_chrono(frame, _split_spec(s))))
    if s["eval_split"] not in parts:
        raise UsageError(f"eval_split must be train, val or test, got {s['eval_split']!r}")
    m, a = evaluate(ckpt, normalize(parts[s["eval_split"]], ckpt.stats))
    print(f"{s['eval_split']} mse={m:.10f} mae={a:.10f}")
    return EXIT_OK


def _future_stamps(stamps: list[str], T: int) -> list[str]:
    try:
        a, b = dt.datetime.fromisoformat(stamps[-2]), dt.datetime.fromisoformat(stamps[-1])
    except (ValueError, IndexError):
        return [f"t+{k}" for k in range(1, T + 1)]
    return [(b + k * (b - a)).isoformat(sep=" ") for k in range(1, T + 1)]


def cmd_forecast(s: dict) -> int:
    ckpt = Checkpoint.load(_require(s, "checkpoint"))
    cfg = ckpt.config
    horizon = s["horizon"] if s["horizon"] is not None else cfg.T
    if horizon != cfg.T:
        raise UsageError(f"horizon {horizon} differs from the model horizon T={cfg.T}; retrain to change it")
    frame = load_csv(_require(s, "data"))
    _frame_for_checkpoint(frame, ckpt)
    if len(frame) < cfg.L:
        raise UsageError(f"input has {len(frame)} rows; the model needs at least L={cfg.L}")
    x = normalize(frame, ckpt.stats).values[-cfg.L :]
    model = ckpt.build_model()
    with nc.no_grad():
        y = model.forward(nc.Tensor(x)).data
    pred = SeriesFrame(_future_stamps(frame.timestamps, cfg.T), denormalize(y, ckpt.stats),
                       list(frame.names), frame.index_name)
    out = _require(s, "out")
    save_csv(pred, out)
    print(f"wrote {cfg.T}-step forecast for {frame.C} variables to {out}")
    return EXIT_OK


def cmd_gradcheck(s: dict) -> int:
    cfg = model_config(s, C=2)
    model = PeriodNet(cfg, seed=s["seed"])
    rng = np.random.default_rng(s["seed"] + 1)
    x = rng.normal(size=(2, cfg.L, cfg.C))
    y = rng.normal(size=(2, cfg.T, cfg.C))

    def closure():
        d = nc.sub(model.forward(nc.Tensor(x)), nc.Tensor(y))
        return nc.mean(nc.mul(d, d))

    corrupt = s["gradcheck_corrupt"]
    params = model.named_parameters()
    if corrupt is not None and corrupt not in params:
        raise UsageError(f"gradcheck_corrupt names an unknown parameter {corrupt!r}")
    hook = (lambda name, g: g * 2.0 if name == corrupt else g) if corrupt else None
    report = nc.finite_diff_check(closure, params, h=s["gradcheck_h"], tol=s["gradcheck_tol"], grad_hook=hook)
    for line in report.lines():
        print(line)
    name, err = report.worst
    if report.passed:
        print(f"gradcheck PASS: {len(report.errors)} parameters, worst {name} {err:.3e}")
        return EXIT_OK
    print(f"gradcheck FAIL: worst parameter {name} rel_err={err:.3e} (tol {report.tol:g})")
    return EXIT_FAIL


def cmd_ablate(s: dict) -> int:
    out = _require(s, "out")
    if s["data"]:
        ds = _load_dataset(s)
    else:
        periods, amps = s["synth_periods"], s["synth_amplitudes"]
        frame = synth_series(s["synth_n"], [(p, a, 0.0) for p, a in zip(periods, amps)],
                             s["synth_trend"], s["synth_noise"], s["seed"], s["synth_vars"])
        ds = Dataset.from_frame(frame, _split_spec(s))
    groups = [_int_or_none(g) for g in s["groups"]]
    arms = [Arm(m.upper(), p.upper(), g) for m in s["mixers"] for p in s["predictors"] for g in groups]
    base = model_config(s, ds.train.C)
    rows = ablation_run(arms, base, train_config(s), ds, model_seed=s["seed"])
    meta = write_results(rows, out, {"seed": s["seed"], "base_config": base.to_dict()})
    print(format_table(rows))
    print(f"results {out}")
    print(f"metadata {meta}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "forecast": cmd_forecast,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}

# flag -> (key for most commands, key for ablate)
FLAG_KEYS = {
    "seed": ("seed", "seed"), "data": ("data", "data"), "checkpoint": ("checkpoint", "checkpoint"),
    "out": ("out", "out"), "mixer": ("mode", "mixers"), "groups": ("G", "groups"),
    "period": ("P", "P"), "horizon": ("horizon", "T"), "input_len": ("L", "L"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="periodnet", description="Period-attention forecasting toolkit")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting")
    p.add_argument("--seed")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--mixer", help="PAM, SPAM or FAM (ablate: comma list)")
    p.add_argument("--groups", help="group count; none disables grouping (ablate: comma list, e.g. 0,1,2,4,8)")
    p.add_argument("--period", help="base period length P")
    p.add_argument("--horizon", help="forecast horizon T")
    p.add_argument("--input-len", help="input length L")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        slot = 1 if args.command == "ablate" else 0
        for flag, keys in FLAG_KEYS.items():
            val = getattr(args, flag)
            if val is not None:
                overrides[keys[slot]] = val
        if args.command != "forecast" and "horizon" in overrides:
            overrides["T"] = overrides.pop("horizon")
        settings = resolve(args.command, file_values, overrides)
        echo_config(args.command, settings)
        return COMMANDS[args.command](settings)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ConfigError, DataError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
