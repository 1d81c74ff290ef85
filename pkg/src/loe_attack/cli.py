"""Command-line entry point for the weight-extraction experiments."""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import warnings
from pathlib import Path

from . import containers
from .extract import RankDeficiencyWarning
from .pipeline import (
    DEFAULT_CONFIG_TEXT, StageError, apply_overrides, parse_config, replay, run_attack, run_sweep, verify_run,
)
from .transformer import init_model

# flag -> config key; every flag is optional and overrides the file
FLAG_KEYS = {
    "n_queries": "attack.n_queries",
    "reference_index": "attack.reference_index",
    "solver": "attack.solver",
    "condition_cap": "attack.condition_cap",
    "prompt": "attack.prompt",
    "precision_bits": "fxp.precision_bits",
    "error_mode": "fxp.error_mode",
    "noise_sigma": "oracle.noise_sigma",
    "layernorm_private": "oracle.layernorm_private",
    "d_model": "model.d_model",
    "d_ffn": "model.d_ffn",
    "num_heads": "model.num_heads",
    "num_layers": "model.num_layers",
    "seed_model": "seeds.model",
    "seed_oracle": "seeds.oracle",
    "seed_attack": "seeds.attack",
    "condition_caps": "sweep.condition_caps",
    "precisions": "sweep.precisions",
}


def _config_text(args) -> str:
    text = Path(args.config).read_text() if args.config else ""
    overrides = {}
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "no_fxp", False):
        overrides["fxp.enabled"] = "false"
    if getattr(args, "distinct_prompts", False):
        overrides["attack.distinct_prompts"] = "true"
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects section.key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    return apply_overrides(text, overrides)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file (see `loe-attack default-config`)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key")
    for flag in FLAG_KEYS:
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, default=None)
    p.add_argument("--no-fxp", action="store_true", help="exact float64 oracle")
    p.add_argument("--distinct-prompts", action="store_true", help="fresh random prompt per query")


def cmd_gen_model(args) -> int:
    cfg = parse_config(_config_text(args))
    model = init_model(cfg.model, cfg.seed_model)
    containers.save_model(args.out, model)
    print(f"{args.out} sha256={hashlib.sha256(Path(args.out).read_bytes()).hexdigest()}")
    return 0


def cmd_attack(args) -> int:
    manifest = run_attack(_config_text(args), args.out, args.model)
    out = Path(args.out)
    print((out / "weights.csv").read_text(), end="")
    print(f"run written to {out} (config {manifest['config_hash'][:12]})")
    return 0


def cmd_sweep(args) -> int:
    result = run_sweep(_config_text(args), args.out, args.model)
    for p, entry in result["precisions"].items():
        best = ", ".join(f"{label}:{v['best_cap']:g}" for label, v in entry["sweeps"].items())
        print(f"p={p} best C per layer: {best}")
    return 0


def cmd_verify(args) -> int:
    checks = verify_run(args.run)
    for c in checks:
        print(f"{'PASS' if c.ok else 'FAIL'} {c.name}" + (f"  {c.detail}" if c.detail else ""))
    failed = [c.name for c in checks if not c.ok]
    if failed:
        print(f"verify failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_replay(args) -> int:
    out = args.out or str(Path(args.run) / "replay")
    same = replay(args.run, out)
    for name, ok in same.items():
        print(f"{'same' if ok else 'DIFFERENT'} {name}")
    return 0 if all(same.values()) else 1


def cmd_default_config(args) -> int:
    print(DEFAULT_CONFIG_TEXT, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="loe-attack", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="write seeded model weights")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("attack", help="query campaign, alignment, extraction and reports")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--model", help="use this weight file instead of generating one")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="condition-cap sweep per layer and precision")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--model")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="re-check a finished run")
    p.add_argument("run")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("replay", help="redo alignment onward from a run's query log")
    p.add_argument("run")
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("default-config", help="print the documented default config")
    p.set_defaults(func=cmd_default_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RankDeficiencyWarning)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error in stage {exc.stage}: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
