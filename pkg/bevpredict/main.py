"""
bevpredict - BEV vehicle trajectory prediction
Command-line entry point for the whole pipeline
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from bevpredict.ai.checkpoint import load_checkpoint, save_checkpoint
from bevpredict.ai.network import build_network, describe_network, forward, table_row
from bevpredict.ai.train_model import SampleDataset, Trainer
from bevpredict.models import AppConfig, BaselineMethod, BevGrid, SceneSequence, SynthConfig
from bevpredict.services import figures
from bevpredict.services.evaluation import (
    evaluate,
    evaluate_baseline,
    recursive_predict,
    report_frame,
)
from bevpredict.services.extraction import extract_channels
from bevpredict.services.metrics_collector import MetricsCollector
from bevpredict.services.rasterizer import history_stack, render_frame, render_sequence
from bevpredict.services.scenes import downsample, ingest_tracks, synth_highway
from bevpredict.utils.config import dump_config, load_config, resolve_threads
from bevpredict.utils.errors import BevPredictError, InvalidArgumentError
from bevpredict.utils.formats import read_image, read_scene, read_stack, write_image, write_scene, write_stack
from bevpredict.utils.logging import setup_logging

logger = logging.getLogger(__name__)

STDIO = "-"


# ---------------------------------------------------------------------------
# I/O helpers
# ---------------------------------------------------------------------------

def _read_text(path: str) -> str:
    return sys.stdin.read() if path == STDIO else Path(path).read_text()


def _read_bytes(path: str) -> bytes:
    return sys.stdin.buffer.read() if path == STDIO else Path(path).read_bytes()


def _write_text(path: Optional[str], text: str) -> None:
    if path is None or path == STDIO:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text)


def _write_bytes(path: Optional[str], data: bytes) -> None:
    if path is None or path == STDIO:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        Path(path).write_bytes(data)


def _load_scene(path: str) -> SceneSequence:
    seq = read_scene(_read_text(path))
    logger.debug(f"Loaded scene {path}: {len(seq)} frames at {seq.rate_hz} Hz")
    return seq


def _check_rate(seq: SceneSequence, cfg: AppConfig, name: str) -> None:
    if abs(seq.dt_s - cfg.stack.dt_s) > 1e-9:
        logger.warning(
            f"{name}: frame spacing {seq.dt_s:g} s differs from stack.dt_s={cfg.stack.dt_s:g} s"
        )


def _dump_channels(stack: np.ndarray, cfg: AppConfig, out_dir: str, prefix: str) -> None:
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    for k, channel in enumerate(stack):
        values = np.clip(channel, 0.0, 1.0)
        (directory / f"{prefix}_{k:02d}.pgm").write_bytes(write_image(BevGrid(cfg.grid, values)))
    logger.info(f"Wrote {len(stack)} PGM channel(s) to {directory}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_inspect(args: argparse.Namespace, cfg: AppConfig) -> int:
    k = args.base_features if args.base_features is not None else cfg.net.base_features
    d = args.channels if args.channels is not None else cfg.stack.d
    row = table_row(args.depth, k, d)

    table = pd.DataFrame([{
        "depth": row.depth,
        "receptive_field": f"±{row.receptive_field}",
        "min_input_size": row.min_input_size,
        "parameters": row.parameters,
        "approx": f"~{round(row.parameters / 1000)}k",
    }])
    lines = [table.to_string(index=False)]

    if args.verbose:
        spec = cfg.net.model_copy(update={
            "depth": args.depth, "base_features": k, "in_channels": d, "out_channels": d,
        })
        size = row.min_input_size
        h = cfg.grid.height_px if cfg.grid.height_px % size == 0 else size
        w = cfg.grid.width_px if cfg.grid.width_px % size == 0 else size
        lines.append("")
        lines.append(describe_network(spec, h, w).to_string(index=False))

    _write_text(None, "\n".join(lines) + "\n")
    return 0


def cmd_ingest(args: argparse.Namespace, cfg: AppConfig) -> int:
    keep_every = args.keep_every if args.keep_every is not None else cfg.stack.keep_every
    seq = downsample(ingest_tracks(_read_text(args.tracks), args.rate), keep_every)
    _write_text(args.out, write_scene(seq))
    logger.info(f"Scene of {len(seq)} frames at {seq.rate_hz:g} Hz written")
    return 0


def cmd_synth(args: argparse.Namespace, cfg: AppConfig) -> int:
    flags = {
        "seed": args.seed,
        "n_vehicles": args.vehicles,
        "duration_s": args.duration,
        "n_lanes": args.lanes,
        "lane_change_prob": args.lane_change_prob,
        "rate_hz": args.rate,
    }
    updates = {k: v for k, v in flags.items() if v is not None}
    if args.spawn:
        updates["spawn"] = True
    synth_cfg = SynthConfig(**{**cfg.synth.model_dump(), **updates})

    seq = synth_highway(synth_cfg)
    _write_text(args.out, write_scene(seq))
    return 0


def cmd_rasterize(args: argparse.Namespace, cfg: AppConfig) -> int:
    seq = _load_scene(args.scene)

    if args.frame is not None:
        if not 0 <= args.frame < len(seq):
            raise InvalidArgumentError(f"frame {args.frame} out of range (scene has {len(seq)} frames)")
        _write_bytes(args.out, write_image(render_frame(seq.frames[args.frame], cfg.grid)))
        return 0

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grids = render_sequence(seq, cfg.grid, n_jobs=args.threads)
    for i, grid in enumerate(grids):
        (out_dir / f"frame_{i:05d}.pgm").write_bytes(write_image(grid))
    logger.info(f"Rasterized {len(grids)} frames into {out_dir}")
    return 0


def cmd_train(args: argparse.Namespace, cfg: AppConfig) -> int:
    sequences = [_load_scene(path) for path in args.scene]
    for path, seq in zip(args.scene, sequences):
        _check_rate(seq, cfg, path)

    dataset = SampleDataset(sequences, cfg.stack.d, cfg.grid)
    metrics = MetricsCollector()

    if args.resume:
        ckpt = load_checkpoint(_read_bytes(args.resume))
        if ckpt.spec != cfg.net:
            logger.warning(f"Resuming with the checkpoint's network {ckpt.spec}, not net.* settings")
        trainer = Trainer.resume(ckpt, cfg.train, metrics)
    else:
        trainer = Trainer(build_network(cfg.net, seed=cfg.train.seed), cfg.train, metrics=metrics)

    ckpt = trainer.fit(dataset)
    Path(args.checkpoint).write_bytes(save_checkpoint(ckpt))
    logger.info(f"Checkpoint written to {args.checkpoint}")

    loss_log = trainer.loss_log()
    if args.loss_log:
        loss_log.to_csv(args.loss_log, index=False)
    if args.plot:
        figures.write_figure(figures.loss_figure(loss_log), args.plot)
    if args.metrics_file:
        metrics.write(args.metrics_file)
    return 0


def cmd_predict(args: argparse.Namespace, cfg: AppConfig) -> int:
    ckpt = load_checkpoint(_read_bytes(args.checkpoint))
    seq = _load_scene(args.scene)
    inputs = history_stack(seq, args.t, ckpt.spec.in_channels, cfg.grid)
    out = forward(ckpt.to_network(), inputs)

    _write_bytes(args.out, write_stack(out, seq.dt_s))
    if args.pgm_dir:
        _dump_channels(out, cfg, args.pgm_dir, f"t{args.t:05d}")
    return 0


def cmd_extract(args: argparse.Namespace, cfg: AppConfig) -> int:
    extract_cfg = cfg.extract
    if args.pmin is not None:
        extract_cfg = type(extract_cfg)(**{**extract_cfg.model_dump(), "p_min": args.pmin})

    if args.image:
        grid = read_image(_read_bytes(args.image), cfg.grid)
        channels = extract_channels([grid], grid.spec, extract_cfg)
    else:
        stack, _, _ = read_stack(_read_bytes(args.stack))
        spec = cfg.grid.model_copy(update={"height_px": stack.shape[1], "width_px": stack.shape[2]})
        channels = extract_channels(stack, spec, extract_cfg)

    rows = [
        {"channel": k, "x": e.x, "y": e.y, "peak_p": e.peak_p}
        for k, estimates in enumerate(channels)
        for e in estimates
    ]
    table = pd.DataFrame(rows, columns=["channel", "x", "y", "peak_p"])
    _write_text(args.out, table.to_csv(index=False))
    logger.info(f"Extracted {len(rows)} position(s) from {len(channels)} channel(s)")
    return 0


def cmd_evaluate(args: argparse.Namespace, cfg: AppConfig) -> int:
    seq = _load_scene(args.scene)
    _check_rate(seq, cfg, args.scene)
    metrics = MetricsCollector()

    if args.baseline:
        result = evaluate_baseline(seq, cfg.grid, cfg.stack.d, BaselineMethod(args.baseline),
                                   cfg.eval, metrics)
    else:
        if not args.checkpoint:
            raise InvalidArgumentError("evaluate needs --checkpoint unless --baseline is given")
        ckpt = load_checkpoint(_read_bytes(args.checkpoint))
        result = evaluate(ckpt, seq, cfg.grid, cfg.extract, cfg.eval, args.threads, metrics)

    table = report_frame(result.report)
    table.to_csv(args.out, index=False)
    logger.info(
        f"Evaluated {result.report.samples} samples: eps_x={result.report.eps_x} "
        f"eps_y={result.report.eps_y}"
    )

    if args.pgm_dir and result.first_prediction is not None:
        _dump_channels(result.first_prediction, cfg, args.pgm_dir, f"t{result.first_t:05d}")
    if args.plot:
        figures.write_figure(figures.horizon_figure(table), args.plot)
    if args.metrics_file:
        metrics.write(args.metrics_file)
    return 0


def cmd_recurse(args: argparse.Namespace, cfg: AppConfig) -> int:
    ckpt = load_checkpoint(_read_bytes(args.checkpoint))
    seq = _load_scene(args.scene)
    inputs = history_stack(seq, args.t, ckpt.spec.in_channels, cfg.grid)
    outputs = recursive_predict(ckpt.to_network(), inputs, args.steps)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for s, out in enumerate(outputs, start=1):
        (out_dir / f"step_{s:03d}.bevs").write_bytes(write_stack(out, seq.dt_s))
    logger.info(f"Wrote {len(outputs)} recursive prediction(s) to {out_dir}")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, AppConfig], int]] = {
    "inspect": cmd_inspect,
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "rasterize": cmd_rasterize,
    "train": cmd_train,
    "predict": cmd_predict,
    "extract": cmd_extract,
    "evaluate": cmd_evaluate,
    "recurse": cmd_recurse,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_threads(p: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps a global --threads when the subcommand omits it
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                   help="Worker count, same as the global option")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevpredict",
        description="Bird's-eye-view vehicle trajectory prediction"
    )
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Configuration override, repeatable (wins over --config)")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--threads", type=int, default=None,
                        help="Worker count for rasterize/evaluate (default: $BEVF_THREADS or all cores)")
    parser.add_argument("--dump-config", action="store_true",
                        help="Print the effective configuration and exit")

    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("inspect", help="Architecture row: receptive field, min input, parameters")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--base-features", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--verbose", action="store_true", help="Also list every layer")

    p = sub.add_parser("ingest", help="HighD tracks CSV -> scene file")
    p.add_argument("--tracks", required=True, help="Tracks CSV, or - for stdin")
    p.add_argument("--rate", type=float, required=True, help="Recording rate (Hz)")
    p.add_argument("--keep-every", type=int, help="Downsampling factor (default stack.keep_every)")
    p.add_argument("--out", help="Scene file (default stdout)")

    p = sub.add_parser("synth", help="Synthetic highway scene")
    p.add_argument("--seed", type=int)
    p.add_argument("--vehicles", type=int)
    p.add_argument("--duration", type=float, help="Seconds")
    p.add_argument("--lanes", type=int, help="Lanes per direction")
    p.add_argument("--lane-change-prob", type=float, help="Per-second probability")
    p.add_argument("--rate", type=float, help="Frame rate (Hz)")
    p.add_argument("--spawn", action="store_true", help="Inject vehicles as others leave")
    p.add_argument("--out", help="Scene file (default stdout)")

    p = sub.add_parser("rasterize", help="Scene frames -> PGM images")
    p.add_argument("--scene", required=True, help="Scene file, or - for stdin")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--frame", type=int, help="Single frame position")
    target.add_argument("--out-dir", help="Write every frame here")
    p.add_argument("--out", help="PGM file for --frame (default stdout)")
    _add_threads(p)

    p = sub.add_parser("train", help="Train a network on scene files")
    p.add_argument("--scene", nargs="+", required=True)
    p.add_argument("--checkpoint", required=True, help="Output checkpoint")
    p.add_argument("--loss-log", help="CSV of step, loss, running_loss")
    p.add_argument("--plot", help="Loss curve HTML")
    p.add_argument("--metrics-file", help="Prometheus text file")
    p.add_argument("--resume", help="Continue from this checkpoint")

    p = sub.add_parser("predict", help="One forward pass at time index t")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--out", required=True, help="Output stack file")
    p.add_argument("--pgm-dir", help="Also write each predicted channel as PGM")

    p = sub.add_parser("extract", help="Vehicle positions from a PGM or stack file")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--image")
    source.add_argument("--stack")
    p.add_argument("--pmin", type=float)
    p.add_argument("--out", help="CSV (default stdout)")

    p = sub.add_parser("evaluate", help="Per-horizon errors on a scene")
    p.add_argument("--checkpoint")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True, help="Report CSV")
    p.add_argument("--baseline", choices=[m.value for m in BaselineMethod])
    p.add_argument("--pgm-dir", help="Predicted channels of the first sample")
    p.add_argument("--plot", help="Per-horizon error chart HTML")
    p.add_argument("--metrics-file", help="Prometheus text file")
    _add_threads(p)

    p = sub.add_parser("recurse", help="Recursive multi-step prediction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out-dir", required=True)

    return parser


def _one_line(error: Exception) -> str:
    return "; ".join(line.strip() for line in str(error).splitlines() if line.strip())


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse `argv`, run the subcommand, return the process exit code"""

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level)

    if args.command is None and not args.dump_config:
        parser.print_usage(sys.stderr)
        logger.error("a subcommand is required")
        return 2

    try:
        cfg = load_config(args.config, args.set)
        if args.dump_config:
            _write_text(None, dump_config(cfg))
            return 0
        args.threads = resolve_threads(args.threads)
        return COMMANDS[args.command](args, cfg)
    except (BevPredictError, ValidationError) as e:
        logger.error(f"{args.command or 'config'}: {type(e).__name__}: {_one_line(e)}")
        logger.debug("Traceback", exc_info=True)
        return 1
    except OSError as e:
        logger.error(f"{args.command}: I/O error: {e}")
        logger.debug("Traceback", exc_info=True)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
