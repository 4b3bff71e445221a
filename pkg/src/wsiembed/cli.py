"""Command-line entry point: ``wsiembed <subcommand> ...``.

Exit status is 0 on success, 1 for invalid input or flags, 2 for runtime
failures. Errors go to stderr as one line of JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import ENV_PREFIX, FIELDS, env_for, flag_for, key_for, load_config
from .errors import (
    BadFlag,
    BadImage,
    BadPatchShape,
    ConfigError,
    FractionTooSmall,
    MalformedContainer,
    NonFiniteInput,
    NonPositiveInput,
    PatchOutOfBounds,
    SingleClass,
    TooFewPoints,
    UnknownEncoder,
    UnknownSubcommand,
    UnsupportedFormat,
    UnsupportedOrganization,
    UnsupportedTransferSyntax,
    WsiEmbedError,
)

log = logging.getLogger("wsiembed")

VALIDATION_ERRORS = (
    BadFlag,
    BadImage,
    BadPatchShape,
    ConfigError,
    FractionTooSmall,
    MalformedContainer,
    NonFiniteInput,
    NonPositiveInput,
    PatchOutOfBounds,
    SingleClass,
    TooFewPoints,
    UnknownEncoder,
    UnknownSubcommand,
    UnsupportedFormat,
    UnsupportedOrganization,
    UnsupportedTransferSyntax,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise BadFlag(f"{self.prog}: {message}")


def _config_help() -> str:
    lines = ["configuration keys (file key / environment variable / flag):"]
    for name in FIELDS:
        lines.append(f"  {key_for(name):<26} {env_for(name):<30} {flag_for(name)}")
    lines.append(f"precedence: flags > {ENV_PREFIX}* environment > --config file > defaults")
    return "\n".join(lines)


def _add_config_flags(p: argparse.ArgumentParser, names=None) -> None:
    p.add_argument("--config", help="key=value config file")
    for name in names or FIELDS:
        f = FIELDS[name]
        kind = f.type if isinstance(f.type, type) else {"int": int, "float": float, "str": str}[f.type]
        p.add_argument(flag_for(name), dest=name, type=kind, default=None, help=f"config {key_for(name)} (env {env_for(name)})")


def _resolve(args, names=None):
    overrides = {name: getattr(args, name, None) for name in (names or FIELDS)}
    return load_config(args.config, overrides=overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="wsiembed",
        description="Patch-embedding service and tools for tiled whole-slide images.",
        epilog=_config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("serve", help="run the HTTP embedding service", epilog=_config_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_config_flags(p)

    encoder_fields = ["encoder_name", "encoder_dim", "encoder_seed"]
    p = sub.add_parser("embed", help="embed 224x224 PNG/JPEG images and print the vectors")
    p.add_argument("--image", action="append", required=True, help="image file (repeatable)")
    _add_config_flags(p, encoder_fields)

    p = sub.add_parser("bench", help="load-test a running service and report throughput and cost")
    p.add_argument("--target", help="service base URL; omitted = start a local in-process service")
    p.add_argument("--source", choices=["inline", "object", "dicomweb"], default="inline")
    p.add_argument("--concurrency", type=int, default=10)
    p.add_argument("--per-request", type=int, default=500)
    p.add_argument("--total", type=int, default=5000)
    p.add_argument("--hourly-price", type=float, default=3.12)
    p.add_argument("--layout", choices=["single", "per-patch"], help="patches per source layout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-warmup", action="store_true")
    p.add_argument("--out", help="CSV report path (default: stdout)")

    p = sub.add_parser("probe", help="data-efficiency sweep of a probe over labelled embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--probe", choices=["linear", "mlp2"], default="linear")
    p.add_argument("--fractions", default="0.01,0.1,1.0")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--test-size", type=float, default=0.3)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--task")
    p.add_argument("--out", required=True)

    p = sub.add_parser("cluster", help="k-means over grid patch embeddings of a slide")
    p.add_argument("--wsi", required=True, help="SWSI or DICOM file")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--stride", type=int, default=224)
    p.add_argument("--out", required=True, help="overlay PNG path")
    p.add_argument("--csv", help="x,y,cluster CSV path (default: next to --out)")
    _add_config_flags(p, encoder_fields)

    p = sub.add_parser("make-fixtures", help="write a synthetic SWSI, DICOM, PNG or JPEG image")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--out", required=True, help="extension picks the format: .swsi .dcm .png .jpg")
    p.add_argument("--frame-rows", type=int, default=256)
    p.add_argument("--frame-cols", type=int, default=256)
    p.add_argument("--codec", choices=["raw", "jpeg"], default="raw")
    p.add_argument("--pattern", choices=["gradient", "uniform", "halves", "noise"], default="gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quality", type=int, default=95)

    p = sub.add_parser("parse", help="print the metadata of a SWSI or DICOM file as JSON")
    p.add_argument("path")
    return parser


# --------------------------------------------------------------------------- commands


def cmd_serve(args) -> int:
    from .service import EmbeddingServer

    cfg = _resolve(args)
    server = EmbeddingServer(cfg)
    print(json.dumps({"listening": server.url, "encoder": cfg.encoder_name, "workers": cfg.workers}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def _load_image(path):
    from .ingestion import decode_image

    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from None
    return decode_image(data)


def cmd_embed(args) -> int:
    from .encoder import make_encoder

    names = ["encoder_name", "encoder_dim", "encoder_seed"]
    encoder = make_encoder(_resolve(args, names).encoder_spec)
    pixels = [_load_image(p) for p in args.image]
    vectors = encoder.embed_batch(pixels)
    for vec in vectors:
        print(",".join(repr(float(v)) for v in vec))
    return 0


def cmd_bench(args) -> int:
    import contextlib

    from .bench import BenchmarkConfig, run_benchmark, write_csv
    from .config import ServiceConfig
    from .service import EmbeddingServer

    with contextlib.ExitStack() as stack:
        target = args.target
        if not target:
            target = stack.enter_context(EmbeddingServer(ServiceConfig(port=0))).url
        cfg = BenchmarkConfig(
            target=target,
            source_kind=args.source,
            concurrency=args.concurrency,
            embeddings_per_request=args.per_request,
            total_embeddings=args.total,
            hourly_price=args.hourly_price,
            layout=args.layout,
            warmup=not args.no_warmup,
            seed=args.seed,
        )
        report = run_benchmark(cfg)
    text = write_csv([report], args.out)
    if not args.out:
        sys.stdout.write(text)
    return 0


def cmd_probe(args) -> int:
    from .analytics import data_efficiency_sweep
    from .analytics.csvio import load_labeled_set

    try:
        fractions = sorted(float(f) for f in args.fractions.split(","))
    except ValueError:
        raise BadFlag(f"--fractions must be comma-separated numbers, got {args.fractions!r}") from None
    data = load_labeled_set(args.embeddings, args.labels, args.task)
    result = data_efficiency_sweep(
        data, fractions, args.probe, args.seeds, test_size=args.test_size, split_seed=args.split_seed
    )
    result.to_csv(args.out)
    for f in result.fractions():
        print(f"fraction={f} mean_auc={result.mean_auc(f):.4f}")
    return 0


def cmd_cluster(args) -> int:
    from .analytics import cluster_overlay, save_overlay
    from .encoder import make_encoder
    from .wsi import TiledImage

    encoder = make_encoder(_resolve(args, ["encoder_name", "encoder_dim", "encoder_seed"]).encoder_spec)
    try:
        image = TiledImage.from_file(args.wsi)
    except OSError as exc:
        raise ValueError(f"cannot read {args.wsi}: {exc}") from None
    cmap, overlay = cluster_overlay(image, args.k, args.seed, args.stride, encoder)
    save_overlay(overlay, args.out)
    csv_path = args.csv or os.path.splitext(args.out)[0] + ".csv"
    cmap.to_csv(csv_path)
    print(json.dumps({"overlay": args.out, "csv": csv_path, "patches": len(cmap.labels), "inertia": cmap.inertia_history[-1]}))
    return 0


def cmd_make_fixtures(args) -> int:
    from .fixtures import encode_image, make_dicom, make_swsi, synthetic_bitmap

    if args.rows < 1 or args.cols < 1:
        raise BadFlag("--rows and --cols must be positive")
    bitmap = synthetic_bitmap(args.rows, args.cols, args.pattern, seed=args.seed)
    codec = "UncompressedRGB8" if args.codec == "raw" else "BaselineJpeg"
    ext = os.path.splitext(args.out)[1].lower()
    if ext == ".swsi":
        data = make_swsi(bitmap, args.frame_rows, args.frame_cols, codec, args.quality)
    elif ext in (".dcm", ".dicom"):
        data = make_dicom(bitmap, args.frame_rows, args.frame_cols, codec, args.quality)
    elif ext == ".png":
        data = encode_image(bitmap, "png")
    elif ext in (".jpg", ".jpeg"):
        data = encode_image(bitmap, "jpeg", args.quality)
    else:
        raise BadFlag(f"cannot infer fixture format from extension {ext!r}")
    with open(args.out, "wb") as fh:
        fh.write(data)
    return 0


def cmd_parse(args) -> int:
    from .wsi import TiledImage

    try:
        image = TiledImage.from_file(args.path)
    except OSError as exc:
        raise ValueError(f"cannot read {args.path}: {exc}") from None
    print(json.dumps(image.meta.to_dict()))
    return 0


COMMANDS = {
    "serve": cmd_serve,
    "embed": cmd_embed,
    "bench": cmd_bench,
    "probe": cmd_probe,
    "cluster": cmd_cluster,
    "make-fixtures": cmd_make_fixtures,
    "parse": cmd_parse,
}


def _emit_error(exc: BaseException) -> None:
    if isinstance(exc, WsiEmbedError):
        err = exc.to_dict()
    else:
        err = {"code": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps({"error": err}) + "\n")


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        first = next((a for a in argv if not a.startswith("-")), None)
        if first is not None and first not in COMMANDS:
            raise UnknownSubcommand(f"unknown subcommand {first!r}; choose from {', '.join(COMMANDS)}")
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        if args.command is None:
            raise UnknownSubcommand("no subcommand given; choose from " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        return COMMANDS[args.command](args)
    except VALIDATION_ERRORS as exc:
        _emit_error(exc)
        return 1
    except Exception as exc:
        _emit_error(exc)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
