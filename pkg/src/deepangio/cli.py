"""Command-line entry point: ``deepangio <command> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .data import ManifestError, SampleError, load_manifest, load_sample
from .evaluate import (METHODS, baseline_segment, evaluate, infer_angiogram, segment, summarize,
                       write_metrics_csv, write_summary_csv)
from .imageio import IMAGE_SUFFIXES, read_image, write_image
from .imgproc import clahe
from .phantoms import PhantomParams, write_phantom_dataset
from .train import NumericAbort, TrainConfig, run_training

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CONFIG_ENV = "DEEPANGIO_CONFIG"
# keys a config file may carry besides the TrainConfig fields
PATH_KEYS = {"manifest": "", "out": "", "resume": "", "baseline": "none"}

log = logging.getLogger("deepangio")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# -- config files ------------------------------------------------------------

def _parse_value(key: str, raw: str, typ):
    try:
        if typ is bool or typ == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None
    return raw.strip()


def _field_types() -> dict:
    return {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def parse_config_lines(lines, source: str = "<config>") -> dict:
    types = _field_types()
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in types:
            out[key] = _parse_value(key, value, types[key])
        elif key in PATH_KEYS:
            out[key] = value
        else:
            raise UsageError(f"{source}:{lineno}: unknown config key {key!r}")
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return parse_config_lines(path.read_text(encoding="utf-8").splitlines(), str(path))


def format_config(settings: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in sorted(settings.items()))


def resolve_train_settings(args) -> dict:
    """Defaults < config file < ``--set`` overrides < dedicated flags."""
    settings = {**TrainConfig().to_dict(), **PATH_KEYS}
    cfg_path = args.config or os.environ.get(CONFIG_ENV)
    if cfg_path:
        file_settings = load_config_file(cfg_path)
        # relative paths in a config file are relative to the file
        for key in ("manifest", "resume"):
            if file_settings.get(key) and not Path(file_settings[key]).is_absolute():
                file_settings[key] = str(Path(cfg_path).parent / file_settings[key])
        settings.update(file_settings)
    settings.update(parse_config_lines(args.set or [], "--set"))
    for key in ("manifest", "out", "resume", "baseline", "epochs", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    if settings["baseline"] not in ("none", "green", "pca"):
        raise UsageError(f"baseline must be none, green or pca, got {settings['baseline']!r}")
    return settings


# -- commands ----------------------------------------------------------------

def cmd_synth_data(args) -> int:
    params = PhantomParams(count=args.count, size=args.size, seed=args.seed)
    if args.count < 1 or args.size < 8:
        raise UsageError("count must be >= 1 and size >= 8")
    manifest = write_phantom_dataset(args.out, params, test_fraction=args.test_fraction)
    print(f"wrote {args.count} phantoms and {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    settings = resolve_train_settings(args)
    if not settings["out"]:
        raise UsageError("no output directory (use --out or out= in the config)")
    if not settings["manifest"]:
        raise UsageError("no manifest (use --manifest or manifest= in the config)")
    tc_keys = _field_types()
    try:
        cfg = TrainConfig(**{k: v for k, v in settings.items() if k in tc_keys})
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    try:
        manifest = load_manifest(settings["manifest"])
    except ManifestError as exc:
        raise DataError(str(exc)) from exc
    records = list(manifest.source())
    if not records:
        raise DataError(f"{settings['manifest']}: no source-domain records to train on")
    try:
        samples = [load_sample(r) for r in records]
    except (SampleError, OSError) as exc:
        raise DataError(str(exc)) from exc

    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    resolved = dict(settings)
    resolved["manifest"] = str(Path(settings["manifest"]).resolve())
    resolved["out"] = str(out.resolve())
    (out / "config.resolved").write_text(format_config(resolved), encoding="utf-8")

    kind = "vae" if settings["baseline"] == "none" else settings["baseline"]
    resume = settings["resume"] or None
    result = run_training(samples, cfg, kind, out, resume=resume)
    print(f"trained {kind} for {result.epoch + 1} epochs; final loss {result.log_rows[-1][-1]:.4f}; "
          f"checkpoints in {out}")
    return EXIT_OK


def _input_images(path: Path) -> list:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DataError(f"no images found in {path}")
        return files
    if not path.is_file():
        raise DataError(f"input not found: {path}")
    return [path]


def _load_model(path):
    try:
        ck = load_checkpoint(path)
    except (OSError, CheckpointError) as exc:
        raise DataError(f"cannot load checkpoint: {exc}") from exc
    kind = ck.state.get("kind", "vae")
    net = ck.nets["encoder"] if "encoder" in ck.nets else ck.nets["segmenter"]
    return kind, net


def _read_rgb(p: Path) -> np.ndarray:
    try:
        return read_image(p, "RGB")
    except OSError as exc:
        raise DataError(f"cannot read {p}: {exc}") from exc


def cmd_angiogram(args) -> int:
    kind, net = _load_model(args.ckpt)
    if kind != "vae":
        raise UsageError(f"{args.ckpt} is a {kind} baseline checkpoint; angiograms need an encoder")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in _input_images(Path(args.input)):
        write_image(out / (p.stem + ".png"), infer_angiogram(net, _read_rgb(p)))
    return EXIT_OK


def cmd_segment(args) -> int:
    kind, net = _load_model(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in _input_images(Path(args.input)):
        img = _read_rgb(p)
        mask, _ = segment(net, img) if kind == "vae" else baseline_segment(net, img, kind)
        write_image(out / (p.stem + ".png"), mask)
    return EXIT_OK


def _parse_ckpt_args(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--ckpt expects METHOD=PATH, got {item!r}")
        method, path = item.split("=", 1)
        out[method.strip()] = path.strip()
    return out


EXPECTED_KIND = {"angiogram": "vae", "green-unet": "green", "pca-unet": "pca"}


def cmd_eval(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; expected some of {','.join(METHODS)}")
    ckpts = _parse_ckpt_args(args.ckpt)
    models = {}
    for m in methods:
        if m not in ckpts:
            raise UsageError(f"no checkpoint for method {m!r} (use --ckpt {m}=PATH)")
        kind, net = _load_model(ckpts[m])
        if kind != EXPECTED_KIND[m]:
            raise UsageError(f"checkpoint {ckpts[m]} holds a {kind} model, method {m} needs {EXPECTED_KIND[m]}")
        models[m] = net
    try:
        manifest = load_manifest(args.manifest)
    except ManifestError as exc:
        raise DataError(str(exc)) from exc
    records = manifest.records if args.domain == "all" else list(manifest.by_domain(args.domain))
    if not records:
        raise DataError(f"no {args.domain}-domain records in {args.manifest}")
    try:
        rows = evaluate(records, models)
    except (SampleError, OSError) as exc:
        raise DataError(str(exc)) from exc
    csv_path = Path(args.csv)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(csv_path, rows)
    summary = summarize(rows)
    write_summary_csv(csv_path.with_name(csv_path.stem + "_summary.csv"), summary)
    for ds, method, metric, n, med, q1, q3, *_ in summary:
        print(f"{ds:10s} {method:11s} {metric:12s} n={n:<4d} median={med:.4f} IQR=[{q1:.4f}, {q3:.4f}]")
    return EXIT_OK


def cmd_augment_preview(args) -> int:
    if args.clip < 1:
        raise UsageError("--clip must be >= 1")
    img = _read_rgb(Path(args.input))
    try:
        out = clahe(img, args.clip, (args.tiles, args.tiles))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_image(args.out, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepangio", description="Deep angiogram vessel synthesis and segmentation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="write seeded vessel phantoms and a manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=16)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--test-fraction", type=float, default=0.25)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train the contrastive model or a grayscale baseline")
    s.add_argument("--config", help=f"key=value config file (default: ${CONFIG_ENV})")
    s.add_argument("--baseline", choices=["green", "pca"])
    s.add_argument("--out")
    s.add_argument("--manifest")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("angiogram", help="write 8-bit angiogram PNGs")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True, help="image file or directory")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_angiogram)

    s = sub.add_parser("segment", help="write binary vessel masks")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True, help="image file or directory")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("eval", help="per-image metrics CSV plus boxplot summary")
    s.add_argument("--manifest", required=True)
    s.add_argument("--methods", default=",".join(METHODS))
    s.add_argument("--ckpt", action="append", metavar="METHOD=PATH")
    s.add_argument("--csv", required=True)
    s.add_argument("--domain", choices=["target", "source", "all"], default="target")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("augment-preview", help="CLAHE-enhance one image at a fixed clip limit")
    s.add_argument("--input", required=True)
    s.add_argument("--clip", type=float, required=True)
    s.add_argument("--tiles", type=int, default=8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_augment_preview)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
