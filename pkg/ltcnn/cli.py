"""Command-line entry point: `python -m ltcnn <command> ...`.

Exit codes: 0 success, 2 usage/config/data error, 3 numerical divergence.
"""
import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from ltcnn.augment import augment, augment_tree
from ltcnn.checkpoint import load_checkpoint, model_size_bytes, read_checkpoint, write_checkpoint
from ltcnn.config import dump_resolved, get_settings, load_run_config
from ltcnn.data import class_names_of, load_dataset, materialize_split, stratified_split, three_way_split
from ltcnn.errors import LtcnnError, enhance_error_message
from ltcnn.logs import configure_logging, get_logger
from ltcnn.metrics import evaluate, write_confusion, write_report
from ltcnn.network import (
    PUBLISHED_REFERENCE,
    build_network,
    count_parameters,
    format_parameter_table,
    published_discrepancy,
)
from ltcnn.predictor import load_input, predict_tensor
from ltcnn.saliency import normalize_and_export, saliency_map
from ltcnn.tensor import make_rng
from ltcnn.train import emit_curves, format_progress, train

USAGE_ERROR = 2

log = get_logger(__name__)


def _daemon_url(settings) -> str:
    return f"http://{settings.host}:{settings.port}"


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    seed = cfg.train.seed
    dataset = load_dataset(cfg.data.root)
    train_ds, val_ds = dataset, None
    if cfg.data.val_root is not None:
        val_ds = load_dataset(cfg.data.val_root)
    elif cfg.data.split_ratio is not None:
        pair = stratified_split(dataset, cfg.data.split_ratio, seed)
        train_ds, val_ds = pair.train, pair.test
    if cfg.data.augment_ops:
        train_ds = augment(train_ds, cfg.data.augment_ops, make_rng(seed, "augment"), cfg.data.augment)

    spec = cfg.network.to_spec(dataset.class_names)
    net = build_network(spec, make_rng(seed, "init"))

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(dump_resolved(cfg), encoding="utf-8")

    result = train(net, train_ds, val_ds, cfg.train,
                   progress=lambda record, total: print(format_progress(record, total), flush=True),
                   workers=cfg.data.workers)
    write_checkpoint(result.final, out / "checkpoint.ltcnn")
    write_checkpoint(result.best, out / "best.ltcnn")
    emit_curves(result.records, out / "curves.csv")
    print(f"train_time={result.elapsed_seconds:.2f}s")
    return 0


def cmd_eval(args) -> int:
    net = load_checkpoint(args.checkpoint)
    report = evaluate(net, load_dataset(args.data), args.batch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "report.json", out / "report.csv")
    write_confusion(report.confusion, out / "confusion.csv")
    print(f"accuracy={report.accuracy:.4f} samples={report.total}")
    return 0


def cmd_predict(args) -> int:
    if args.daemon:
        from ltcnn.client import DaemonClient

        response = DaemonClient(_daemon_url(get_settings()), checkpoint=args.checkpoint).predict(args.image)
        if not response.get("success"):
            print(response.get("error", "prediction failed"), file=sys.stderr)
            return USAGE_ERROR
        print(f"class={response['class_name']} prob={response['prob']:.4f}")
        return 0

    net = load_checkpoint(args.checkpoint)
    index, probs = predict_tensor(net, load_input(net, args.image))
    print(f"class={net.spec.class_names[index]} prob={probs[index]:.4f}")
    return 0


def cmd_saliency(args) -> int:
    net = load_checkpoint(args.checkpoint)
    target = args.target if args.target is not None else "auto"
    smap = saliency_map(net, load_input(net, args.image), target, source=args.image)
    normalize_and_export(smap, args.out, raw_path=args.raw)
    print(f"class={net.spec.class_names[smap.target]} map={args.out}")
    return 0


def cmd_inspect(args) -> int:
    if args.checkpoint:
        ckpt = read_checkpoint(args.checkpoint)
        spec, size = ckpt.spec, model_size_bytes(ckpt.spec, ckpt.metadata)
    else:
        cfg = load_run_config(args.config)
        names = cfg.network.class_names or class_names_of(cfg.data.root)
        spec = cfg.network.to_spec(names)
        size = model_size_bytes(spec)

    table = count_parameters(spec)
    print(format_parameter_table(table))
    print(f"model size: {size:,} bytes ({size / 1e6:.2f} MB)")
    if args.compare:
        print()
        print(f"{'model':<14}{'params (M)':>12}{'size (MB)':>12}")
        for row in PUBLISHED_REFERENCE:
            print(f"{row['model']:<14}{row['params_m']:>12.1f}{row['size_mb']:>12.1f}")
        print(f"{'Custom CNN':<14}{table.params_millions:>12}{size / 1e6:>12.2f}")
        for note in published_discrepancy(table, size):
            print(f"note: {note}")
    return 0


def cmd_split(args) -> int:
    dataset = load_dataset(args.data)
    if args.val_ratio:
        pair = three_way_split(dataset, args.ratio, args.val_ratio, args.seed)
    else:
        pair = stratified_split(dataset, args.ratio, args.seed)
    materialize_split(pair, args.out)
    counts = f"train={len(pair.train)} test={len(pair.test)}"
    if pair.val is not None:
        counts += f" val={len(pair.val)}"
    print(counts)
    return 0


def cmd_augment(args) -> int:
    augmented = augment_tree(load_dataset(args.data), args.out, args.ops, args.seed)
    print(f"items={len(augmented)}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    settings = get_settings()
    if args.checkpoint:
        os.environ["LTCNN_CHECKPOINT"] = os.path.abspath(args.checkpoint)
    uvicorn.run("ltcnn.server:app", host=args.host or settings.host, port=args.port or settings.port,
                log_level="warning")
    return 0


def cmd_reload(args) -> int:
    from ltcnn.client import DaemonClient

    result = DaemonClient(_daemon_url(get_settings())).reload()
    if not result.get("success"):
        print(result.get("error", "reload failed"), file=sys.stderr)
        return USAGE_ERROR
    print(f"reloaded {result['checkpoint']}")
    return 0


def cmd_stop(args) -> int:
    from ltcnn.client import DaemonClient

    result = DaemonClient(_daemon_url(get_settings())).stop_daemon()
    print(result.get("status", "unknown"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltcnn", description="Lightweight CNN image classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network from a JSON run config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="write report.json, report.csv and confusion.csv")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--checkpoint")
    p.add_argument("--image", required=True)
    p.add_argument("--daemon", action="store_true", help="route through the inference daemon")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("saliency", help="write a gradient saliency map as PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--class", dest="target", help="class name or index (default: predicted class)")
    p.add_argument("--raw", help="also dump the float map as an LTT1 tensor")
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("inspect", help="print the parameter table and model size")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--config")
    group.add_argument("--checkpoint")
    p.add_argument("--compare", action="store_true", help="show published reference figures")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("split", help="materialize a stratified train/test split")
    p.add_argument("--data", required=True)
    p.add_argument("--ratio", type=float, default=0.2)
    p.add_argument("--val-ratio", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("augment", help="write the augmented dataset tree")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ops", default="rotate,flip,shear")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("serve", help="run the inference daemon in the foreground")
    p.add_argument("--checkpoint")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("reload", help="make the running daemon re-read its checkpoint")
    p.set_defaults(func=cmd_reload)

    p = sub.add_parser("stop", help="stop a running inference daemon")
    p.set_defaults(func=cmd_stop)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return USAGE_ERROR if e.code else 0

    try:
        settings = get_settings()
        configure_logging(settings.log_level or "WARNING", settings.log_json)
        if args.command == "predict" and not args.daemon and not args.checkpoint:
            raise LtcnnError("predict needs --checkpoint unless --daemon is given")
        log.debug("command_started", command=args.command)
        return args.func(args)
    except LtcnnError as e:
        print(enhance_error_message(str(e)), file=sys.stderr)
        return e.exit_code
    except (ValueError, ValidationError, OSError) as e:
        print(enhance_error_message(str(e)), file=sys.stderr)
        return USAGE_ERROR
