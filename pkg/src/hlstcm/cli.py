"""Command line surface: gen | train | eval | predict-curve | gradcheck.

Configuration precedence is built-in defaults < ``--config`` key=value
file < explicit flags; the fully resolved configuration is echoed into
every output manifest. Exit codes: 0 success, 2 usage or configuration
error, 3 numerical failure during training, 4 gradient-check failure.
All output files are written atomically (temp file + rename).
"""

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import checkpoint, data, model
from . import training as train_mod
from .numerics import ShapeError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_GRADCHECK = 4

_COMMON = {"seed": (int, 0), "out_dir": (str, ".")}
_MODEL = {
    "variant": (str, "hlstcm"),
    "d_sp": (int, 32),
    "d_proj": (int, 16),
    "d_co": (int, 32),
    "d_top": (int, 0),
    "group_a": (str, ""),
    "share_sp_params": (bool, False),
    "linear_logits": (bool, False),
    "cumulative_loss": (bool, False),
}
_TRAIN = {
    "lr": (float, 5e-4),
    "momentum": (float, 0.9),
    "decay": (float, 0.95),
    "epochs": (int, 100),
    "clip_norm": (float, 5.0),
    "shuffle": (bool, True),
    "batch_size": (int, 1),
}
_SYNTH = {
    "p": (int, 3),
    "T": (int, 10),
    "d_x": (int, 16),
    "noise_sigma": (float, 0.1),
    "n_train": (int, 200),
    "n_test": (int, 100),
    "classes": (int, 4),
}
# gradcheck defaults to a small model whose full parameter set is probed
# entry-by-entry in a few seconds
_GRADCHECK = dict(_MODEL) | {
    "p": (int, 3),
    "d_x": (int, 3),
    "d_sp": (int, 4),
    "d_proj": (int, 3),
    "d_co": (int, 4),
    "classes": (int, 3),
    "T": (int, 4),
    "epsilon": (float, 1e-5),
    "threshold": (float, 1e-4),
}

SCHEMAS = {
    "gen": _COMMON | _SYNTH,
    "train": _COMMON | _MODEL | _TRAIN
    | {"data": (str, None), "test_data": (str, None), "resume": (str, None)},
    "eval": _COMMON | {"checkpoint": (str, None), "data": (str, None)},
    "predict-curve": _COMMON | {"checkpoint": (str, None), "data": (str, None)},
    "gradcheck": _COMMON | _GRADCHECK,
}

_ALL_KEYS = {}
for schema in SCHEMAS.values():
    for key, (typ, _) in schema.items():
        _ALL_KEYS.setdefault(key, typ)


class ConfigError(ValueError):
    pass


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _convert(key, typ, raw):
    if isinstance(raw, str):
        try:
            return _parse_bool(raw) if typ is bool else typ(raw)
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(f"key {key}: cannot parse {raw!r} as {typ.__name__}") from None
    return raw


def _read_config_file(path):
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for ln, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected 'key = value'")
                key, _, raw = line.partition("=")
                key = key.strip()
                if key not in _ALL_KEYS:
                    raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
                values[key] = raw.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    return values


def _resolve(args, command):
    schema = SCHEMAS[command]
    resolved = {key: default for key, (_, default) in schema.items()}
    if args.config:
        for key, raw in _read_config_file(args.config).items():
            if key in schema:
                resolved[key] = _convert(key, schema[key][0], raw)
    for key, (typ, _) in schema.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = _convert(key, typ, flag_val)
    return resolved


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _parse_group_a(text):
    if not text:
        return ()
    try:
        return tuple(int(tok) for tok in text.split(","))
    except ValueError:
        raise ConfigError(f"group_a must be comma-separated slot indices, got {text!r}") from None


def _model_config(resolved, p, d_x, T, k):
    return model.HlstcmConfig(
        p=p, d_x=d_x, T=T, k=k,
        variant=resolved["variant"],
        d_sp=resolved["d_sp"], d_proj=resolved["d_proj"], d_co=resolved["d_co"],
        d_top=resolved["d_top"], group_a=_parse_group_a(resolved["group_a"]),
        share_sp_params=resolved["share_sp_params"],
        linear_logits=resolved["linear_logits"],
        cumulative_loss=resolved["cumulative_loss"])


def _train_config(resolved):
    return train_mod.TrainConfig(
        lr=resolved["lr"], momentum=resolved["momentum"], decay=resolved["decay"],
        epochs=resolved["epochs"], clip_norm=resolved["clip_norm"],
        seed=resolved["seed"], shuffle=resolved["shuffle"],
        batch_size=resolved["batch_size"])


def _save_tracklets_atomic(dataset, path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        data.save_tracklets(dataset, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cmd_gen(resolved):
    if resolved["classes"] != len(data.CLASS_NAMES):
        raise ConfigError(
            f"the generator defines exactly {len(data.CLASS_NAMES)} coupling classes "
            f"({', '.join(data.CLASS_NAMES)}); got classes={resolved['classes']}")
    cfg = data.SynthConfig(
        p=resolved["p"], T=resolved["T"], d_x=resolved["d_x"],
        noise_sigma=resolved["noise_sigma"], seed=resolved["seed"],
        n_train=resolved["n_train"], n_test=resolved["n_test"])
    train_set, test_set = data.generate_synthetic(cfg)
    out = resolved["out_dir"]
    train_path = os.path.join(out, "train.tracklets")
    test_path = os.path.join(out, "test.tracklets")
    _save_tracklets_atomic(train_set, train_path)
    _save_tracklets_atomic(test_set, test_path)
    _write_json(os.path.join(out, "manifest.json"), {
        "schema_version": 1,
        "command": "gen",
        "resolved_config": resolved,
        "class_names": list(data.CLASS_NAMES),
        "files": {"train": train_path, "test": test_path},
    })
    print(f"wrote {train_path} ({len(train_set)} samples), {test_path} ({len(test_set)} samples)")
    return EXIT_OK


def cmd_train(resolved):
    if not resolved["data"]:
        raise ConfigError("train requires --data <tracklet file>")
    train_set = data.load_tracklets(resolved["data"])
    test_set = None
    if resolved["test_data"]:
        test_set = data.load_tracklets(resolved["test_data"])
        if (test_set.p, test_set.T, test_set.d_x) != (train_set.p, train_set.T, train_set.d_x) \
                or test_set.class_names != train_set.class_names:
            raise ConfigError("test data header does not match training data header")
    cfg = _train_config(resolved)
    start_epoch = 0
    velocity = None
    if resolved["resume"]:
        params, config, velocity, start_epoch, _ = checkpoint.load_training_state(resolved["resume"])
        start_epoch = start_epoch or 0
        if (config.p, config.T, config.d_x, config.k) != \
                (train_set.p, train_set.T, train_set.d_x, train_set.k):
            raise ConfigError("checkpoint dimensions do not match the training data")
        if start_epoch >= cfg.epochs:
            raise ConfigError(
                f"checkpoint already trained for {start_epoch} epochs; "
                f"raise --epochs above that to resume")
    else:
        config = _model_config(resolved, train_set.p, train_set.d_x, train_set.T, train_set.k)
        params = model.init_model_params(config, seed=resolved["seed"])
    params, history, velocity = train_mod.train(
        params, config, train_set, cfg, test_set=test_set,
        start_epoch=start_epoch, velocity=velocity)
    out = resolved["out_dir"]
    ckpt_path = os.path.join(out, "checkpoint.ckpt")
    os.makedirs(out, exist_ok=True)
    checkpoint.save_checkpoint(params, config, ckpt_path, velocities=velocity,
                               epoch=cfg.epochs, train_config=cfg.to_dict())
    _atomic_write(os.path.join(out, "metrics.csv"), history.to_csv_text())
    summary = {
        "schema_version": 1,
        "command": "train",
        "resolved_config": resolved,
        "model_config": config.to_dict(),
        "train_config": cfg.to_dict(),
        "param_count": model.param_count(params),
        "epochs_run": len(history.epochs),
        "final_loss": history.final.loss,
        "final_train_acc": history.final.train_acc,
        "final_test_acc": history.final.test_acc,
        "clamped_prob_events": int(sum(m.clamped for m in history.epochs)),
        "wall_seconds": float(sum(m.seconds for m in history.epochs)),
    }
    if test_set is not None:
        summary["test_metrics"] = train_mod.evaluate(params, config, test_set).to_dict()
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"trained {cfg.epochs - start_epoch} epochs; "
          f"final loss {history.final.loss:.6f}, train acc {history.final.train_acc:.4f}"
          + (f", test acc {history.final.test_acc:.4f}" if test_set is not None else ""))
    print(f"wrote {ckpt_path}, metrics.csv, summary.json in {out}")
    return EXIT_OK


def _load_model_and_data(resolved):
    if not resolved["checkpoint"] or not resolved["data"]:
        raise ConfigError("this command requires --checkpoint and --data")
    params, config = checkpoint.load_checkpoint(resolved["checkpoint"])
    dataset = data.load_tracklets(resolved["data"])
    if (config.p, config.T, config.d_x, config.k) != \
            (dataset.p, dataset.T, dataset.d_x, dataset.k):
        raise ConfigError(
            f"checkpoint expects (p={config.p}, T={config.T}, d_x={config.d_x}, "
            f"k={config.k}); data file has (p={dataset.p}, T={dataset.T}, "
            f"d_x={dataset.d_x}, k={dataset.k})")
    return params, config, dataset


def cmd_eval(resolved):
    params, config, dataset = _load_model_and_data(resolved)
    metrics = train_mod.evaluate(params, config, dataset)
    report = {
        "schema_version": 1,
        "command": "eval",
        "resolved_config": resolved,
        "class_names": dataset.class_names,
    } | metrics.to_dict()
    print(json.dumps(report, indent=2, sort_keys=True))
    _write_json(os.path.join(resolved["out_dir"], "eval.json"), report)
    return EXIT_OK


def cmd_predict_curve(resolved):
    params, config, dataset = _load_model_and_data(resolved)
    rows = ["ratio,accuracy"]
    for i in range(1, 11):
        ratio = i / 10.0
        correct = 0
        for sample in dataset.samples:
            probs = model.forward_partial(params, config, sample, ratio)
            correct += model.predict(probs) == sample.label
        acc = correct / len(dataset.samples)
        rows.append(f"{ratio:.1f},{acc!r}")
    text = "\n".join(rows) + "\n"
    path = os.path.join(resolved["out_dir"], "curve.csv")
    _atomic_write(path, text)
    print(text, end="")
    print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def cmd_gradcheck(resolved):
    config = _model_config(resolved, resolved["p"], resolved["d_x"], resolved["T"],
                           resolved["classes"])
    params = model.init_model_params(config, seed=resolved["seed"])
    rng = np.random.default_rng(resolved["seed"])
    sample = model.Sample(
        rng.normal(0.0, 1.0, size=(config.p, config.T, config.d_x)),
        int(rng.integers(config.k)), id="gradcheck")
    report = train_mod.gradient_check(
        params, config, sample, epsilon=resolved["epsilon"],
        threshold=resolved["threshold"], seed=resolved["seed"])
    print(report.to_text())
    _write_json(os.path.join(resolved["out_dir"], "gradcheck.json"),
                {"command": "gradcheck", "resolved_config": resolved} | report.to_dict())
    return EXIT_OK if report.passed else EXIT_GRADCHECK


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict-curve": cmd_predict_curve,
    "gradcheck": cmd_gradcheck,
}

_HELP = {
    "gen": "generate a synthetic coupled multi-agent dataset",
    "train": "train a model on a tracklet file",
    "eval": "evaluate a checkpoint on a tracklet file",
    "predict-curve": "accuracy at observation ratios 0.1 .. 1.0",
    "gradcheck": "verify analytic gradients against finite differences",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hlstcm",
        description="multi-person sequence classification with concurrent memory LSTMs")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, schema in SCHEMAS.items():
        p = sub.add_parser(command, help=_HELP[command])
        p.add_argument("--config", default=None, help="key=value configuration file")
        for key, (typ, default) in schema.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, dest=key, default=None, nargs="?", const="true",
                               metavar="BOOL", help=f"default {default}")
            else:
                p.add_argument(flag, dest=key, default=None, type=str,
                               metavar=typ.__name__.upper(), help=f"default {default}")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        resolved = _resolve(args, args.command)
        return _COMMANDS[args.command](resolved)
    except train_mod.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, data.DataFormatError, checkpoint.CheckpointError,
            ShapeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
