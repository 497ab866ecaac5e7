"""Command surface: train, render, eval, probe, gradcheck, count.

Configuration is INI text with sections mirroring the module configs
([model], [train]); ``--set section.key=value`` overrides apply after the
file and the effective configuration is echoed with every run. All
subcommands are deterministic under ``--seed``. Exit codes: 0 success,
2 invalid input, 3 failed internal check.
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import os
import sys
from dataclasses import fields

import numpy as np

from . import data as data_mod
from . import trainer as trainer_mod
from .audio_io import read_wav, write_wav
from .errors import CheckFailure, ContractViolation, DomainError, IngestionError
from .gradcore import load_checkpoint
from .losses import LossWeights, StftConfig
from .model import NfsConfig, NfsModel
from .validation import tiny_gradcheck

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CHECK = 3

DATA_ROOT_ENV = "NFS_DATA_ROOT"


# ------------------------------------------------------------ configuration

def _coerce(value: str, kind):
    if kind is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ContractViolation(f"cannot parse boolean from '{value}'")
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value


def load_config_file(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise IngestionError(f"{path}: config file not found or unreadable")
    return {section: dict(parser.items(section)) for section in parser.sections()}


def apply_overrides(sections: dict[str, dict[str, str]], overrides: list[str]) -> None:
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ContractViolation(f"override '{item}' is not of the form section.key=value")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        sections.setdefault(section, {})[name] = value


def build_model_config(args, defaults: dict | None = None) -> NfsConfig:
    sections: dict[str, dict[str, str]] = {}
    if getattr(args, "config", None):
        sections = load_config_file(args.config)
    apply_overrides(sections, getattr(args, "set", None))
    base = dict(defaults or {})
    kinds = {f.name: type(getattr(NfsConfig(), f.name)) for f in fields(NfsConfig)}
    for key, value in sections.get("model", {}).items():
        if key not in kinds:
            raise ContractViolation(f"unknown model config key '{key}'")
        base[key] = _coerce(value, kinds[key])
    sr = int(base.get("sample_rate", 48000))
    if getattr(args, "frame_ms", None):
        base["frame_len"] = int(round(sr * args.frame_ms / 1000.0))
    if getattr(args, "hop_ms", None):
        base["hop"] = int(round(sr * args.hop_ms / 1000.0))
    if "frame_len" in base and "hop" not in base:
        base["hop"] = base["frame_len"] // 2
    if "hop" in base and "pad" not in base:
        base["pad"] = base["hop"]
    if getattr(args, "no_ni", False):
        base["ni"] = False
    if getattr(args, "no_lff", False):
        base["lff"] = False
    if getattr(args, "no_shifter", False):
        base["shifter"] = False
    if getattr(args, "no_geowarp", False):
        base["geowarp"] = False
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    return NfsConfig.from_dict(base)


def build_train_config(args, out_dir: str | None) -> trainer_mod.TrainConfig:
    sections: dict[str, dict[str, str]] = {}
    if getattr(args, "config", None):
        sections = load_config_file(args.config)
    apply_overrides(sections, getattr(args, "set", None))
    cfg = trainer_mod.TrainConfig(out_dir=out_dir)
    scalars = {f.name: type(getattr(cfg, f.name)) for f in fields(trainer_mod.TrainConfig)
               if f.name not in ("weights", "stft", "out_dir", "steps_per_epoch")}
    for key, value in sections.get("train", {}).items():
        if key == "steps_per_epoch":
            cfg.steps_per_epoch = int(value)
        elif key.startswith("weight_"):
            term = key[len("weight_"):]
            if term not in ("l2", "phase", "iid", "stft"):
                raise ContractViolation(f"unknown loss weight '{key}'")
            setattr(cfg.weights, term, float(value))
        elif key in scalars:
            setattr(cfg, key, _coerce(value, scalars[key]))
        else:
            raise ContractViolation(f"unknown train config key '{key}'")
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def echo_config(model_cfg: NfsConfig | None, train_cfg: trainer_mod.TrainConfig | None,
                stream=None) -> str:
    parser = configparser.ConfigParser()
    if model_cfg is not None:
        parser["model"] = {k: str(v) for k, v in model_cfg.to_dict().items()}
    if train_cfg is not None:
        w = train_cfg.weights
        parser["train"] = {
            "epochs": str(train_cfg.epochs), "batch": str(train_cfg.batch),
            "lr0": repr(train_cfg.lr0), "lr_decay": repr(train_cfg.lr_decay),
            "crop_ms": repr(train_cfg.crop_ms), "seed": str(train_cfg.seed),
            "grad_clip": repr(train_cfg.grad_clip),
            "checkpoint_every": str(train_cfg.checkpoint_every),
            "val_fraction": repr(train_cfg.val_fraction),
            "weight_l2": repr(w.l2), "weight_phase": repr(w.phase),
            "weight_iid": repr(w.iid), "weight_stft": repr(w.stft),
        }
        if train_cfg.steps_per_epoch:
            parser["train"]["steps_per_epoch"] = str(train_cfg.steps_per_epoch)
    buf = io.StringIO()
    parser.write(buf)
    text = buf.getvalue()
    print(text, file=stream or sys.stdout, end="")
    return text


def _resolve_data(path: str | None) -> str:
    root = os.environ.get(DATA_ROOT_ENV, "")
    if path is None:
        if not root:
            raise ContractViolation(f"no --data given and {DATA_ROOT_ENV} is not set")
        return os.path.join(root, "manifest.json")
    if not os.path.isabs(path) and root and not os.path.exists(path):
        candidate = os.path.join(root, path)
        if os.path.exists(candidate):
            return candidate
    return path


def _load_model(ckpt_path, no_ni: bool = False) -> NfsModel:
    arrays, config, _seed = load_checkpoint(ckpt_path)
    cfg = NfsConfig.from_dict(config)
    if no_ni:
        cfg = NfsConfig.from_dict({**cfg.to_dict(), "ni": False})
    model = NfsModel.init(cfg)
    model.load_state(arrays)
    return model


# -------------------------------------------------------------- subcommands

def cmd_train(args) -> int:
    manifest = data_mod.load_manifest(_resolve_data(args.data))
    records = data_mod.load_records(manifest, split="train") or data_mod.load_records(manifest)
    model_cfg = build_model_config(args)
    train_cfg = build_train_config(args, args.out)
    os.makedirs(args.out, exist_ok=True)
    echo = echo_config(model_cfg, train_cfg)
    with open(os.path.join(args.out, "effective_config.ini"), "w") as fh:
        fh.write(echo)
    model = NfsModel.init(model_cfg)
    result = trainer_mod.train(records, model, train_cfg)
    print(f"trained {result.steps} steps; best validation loss {result.best_loss:.6g}")
    print(f"checkpoints and train_log.csv in {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    model = _load_model(args.ckpt, no_ni=args.no_ni)
    audio = read_wav(args.mono)
    if audio.channels != 1:
        raise IngestionError(f"{args.mono}: render expects a mono source")
    if audio.sample_rate != model.config.sample_rate:
        raise IngestionError(
            f"{args.mono}: {audio.sample_rate} Hz, model expects {model.config.sample_rate}")
    track = data_mod.read_pose_csv(args.poses)
    data_mod.validate_track(track, audio.duration, args.poses)
    plan = model.config.plan()
    fitted = plan.fit_length(audio.n_samples)
    positions, quats = data_mod.poses_for_frames(track, plan, fitted, audio.sample_rate)
    rng = np.random.default_rng(args.seed)
    stereo = model.render(audio.mono(), positions, quats, rng=rng,
                          ni=not args.no_ni)
    write_wav(args.out, stereo, encoding=args.encoding)
    print(f"wrote {args.out}: {stereo.channels} ch, {stereo.n_samples} samples "
          f"at {stereo.sample_rate} Hz")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.ckpt, no_ni=args.no_ni)
    manifest = data_mod.load_manifest(_resolve_data(args.data))
    records = data_mod.load_records(manifest, split=args.split)
    if not records:
        raise IngestionError(f"no records with split '{args.split}' in manifest")
    report = trainer_mod.evaluate(records, model, ni=False, seed=args.seed)
    print(report.table())
    if args.out:
        report.write_csv(args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_probe(args) -> int:
    """Sweep the source along one axis and emit per-ear dominant-channel curves."""
    model = _load_model(args.ckpt)
    lo, hi = args.range
    if args.steps < 1 or hi <= lo:
        raise ContractViolation(f"empty probe range [{lo}, {hi}] / steps {args.steps}")
    axis = 0 if args.axis == "longitudinal" else model.config.lateral_axis
    base = np.array([float(v) for v in args.base.split(",")], dtype=np.float64)
    if base.size != 3:
        raise ContractViolation(f"--base needs 3 comma-separated values, got '{args.base}'")
    values = np.linspace(lo, hi, args.steps)
    positions = np.tile(base, (args.steps, 1))
    positions[:, axis] = values
    quats = np.zeros((args.steps, 4))
    quats[:, 0] = 1.0
    geo = model.geo_delays(positions)
    rows = []
    for idx, (ear_name, ear) in enumerate(model.ears()):
        scales, delays = model.condition(ear, positions, quats, geo[:, idx])
        s = scales.data
        d = np.broadcast_to(delays.data, s.shape)
        dominant = np.argmax(s.mean(axis=-1), axis=-1)
        rows.extend(
            {"value": float(values[i]), "ear": ear_name,
             "channel": int(dominant[i]),
             "sigma_mean": float(s[i, dominant[i]].mean()),
             "phi_mean": float(d[i, dominant[i]].mean()),
             "geo": float(geo[i, idx])}
            for i in range(args.steps)
        )
    with open(args.out, "w") as fh:
        fh.write("value,ear,channel,sigma_mean,phi_mean,geo\n")
        for row in rows:
            fh.write(f"{row['value']!r},{row['ear']},{row['channel']},"
                     f"{row['sigma_mean']!r},{row['phi_mean']!r},{row['geo']!r}\n")
    print(f"wrote {args.out}: {len(rows)} rows ({args.axis} sweep, {args.steps} positions)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst, per_leaf = tiny_gradcheck(seed=args.seed, samples_per_leaf=args.samples)
    for name in sorted(per_leaf, key=per_leaf.get, reverse=True)[: args.show]:
        print(f"{per_leaf[name]:.3e}  {name}")
    print(f"max relative error: {worst:.3e} (tolerance 1e-4)")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"max_relative_error": worst, "per_parameter": per_leaf}, fh, indent=2)
    if worst >= 1e-4:
        raise CheckFailure(f"gradient check failed: {worst:.3e} >= 1e-4")
    print("gradient check passed")
    return EXIT_OK


def cmd_count(args) -> int:
    model_cfg = build_model_config(args)
    echo_config(model_cfg, None)
    model = NfsModel.init(model_cfg)
    report = model.count()
    print("\n".join(report.lines()))
    total = sum(report.params_by_block.values())
    if total != report.params_total:
        raise CheckFailure(f"block breakdown sums to {total}, total is {report.params_total}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({
                "params_total": report.params_total,
                "params_by_block": report.params_by_block,
                "macs_per_second": report.macs_per_second,
                "macs_by_stage": report.macs_by_stage,
            }, fh, indent=2)
    return EXIT_OK


# -------------------------------------------------------------------- main

def _add_common(p, config=True):
    p.add_argument("--seed", type=int, default=0)
    if config:
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="config override, applied after the file")
    p.add_argument("--no-ni", action="store_true", help="disable noise injection")
    p.add_argument("--no-lff", action="store_true", help="plain linear encoders")
    p.add_argument("--no-shifter", action="store_true", help="drop the delay head")
    p.add_argument("--no-geowarp", action="store_true", help="drop the geometric delay bias")
    p.add_argument("--frame-ms", type=float, help="frame length in milliseconds")
    p.add_argument("--hop-ms", type=float, help="hop length in milliseconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nfs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    p.add_argument("--data", help=f"manifest path (default: ${DATA_ROOT_ENV}/manifest.json)")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("render", help="render mono + pose track to stereo")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mono", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--encoding", default="float32", choices=("pcm16", "pcm24", "float32"))
    _add_common(p, config=False)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("eval", help="metric report over a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="CSV report path")
    _add_common(p, config=False)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("probe", help="sweep source position, dump response curves")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--axis", choices=("longitudinal", "lateral"), required=True)
    p.add_argument("--range", nargs=2, type=float, required=True, metavar=("LO", "HI"))
    p.add_argument("--steps", type=int, default=41)
    p.add_argument("--base", default="1.0,0.0,0.0", help="source position off the swept axis")
    p.add_argument("--out", required=True)
    _add_common(p, config=False)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference check on the tiny config")
    p.add_argument("--samples", type=int, default=4, help="entries checked per parameter")
    p.add_argument("--show", type=int, default=8, help="worst parameters to list")
    p.add_argument("--out", help="JSON report path")
    _add_common(p, config=False)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("count", help="parameter and MAC accounting")
    p.add_argument("--out", help="JSON report path")
    _add_common(p)
    p.set_defaults(fn=cmd_count)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (IngestionError, ContractViolation, DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
