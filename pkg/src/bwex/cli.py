"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from functools import partial
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from bwex import __version__, data, dsp, metrics
from bwex.audio_io import AudioBuffer, read_wav, write_wav
from bwex.errors import BwexError, ConfigError, DomainError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
CONFIG_SCHEMA_VERSION = 1
HELP_WIDTH = 96

log = logging.getLogger("bwex")


class UsageExit(Exception):
    def __init__(self, message: str, usage: str):
        super().__init__(message)
        self.usage = usage


class Parser(argparse.ArgumentParser):
    """Raises instead of exiting so usage errors map to exit code 1."""

    def error(self, message):
        raise UsageExit(message, self.format_usage())


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH, max_help_position=32)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--threads", type=int, default=None,
                   help="BLAS threads; falls back to $BWEX_THREADS, then 1")
    g.add_argument("--config", type=Path, default=None,
                   help="JSON file of option values; command-line flags take precedence")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> Parser:
    common = _common()
    parser = Parser(prog="bwex", formatter_class=_formatter,
                    description="Audio super-resolution: data preparation, training and evaluation.")
    parser.add_argument("--version", action="version", version=f"bwex {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                              formatter_class=_formatter)

    p = add("synth", "write a deterministic synthetic WAV corpus")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--kind", choices=data.CORPUS_KINDS, default="speech-like")
    p.add_argument("--n-tracks", type=int, default=20)
    p.add_argument("--duration", type=float, default=2.0, help="seconds per track")
    p.add_argument("--rate", type=int, default=16000, help="sample rate in Hz")
    p.add_argument("--band-limit", type=float, default=None, help="highest component frequency in Hz")

    p = add("prepare", "cut a corpus into (degraded input, target) patch archives")
    p.add_argument("corpus", type=Path, help="directory of WAV files")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--r", type=int, required=True, help="downsampling ratio")
    p.add_argument("--patch-len", type=int, default=6000)
    p.add_argument("--stride", type=int, default=None, help="window step (default patch-len / 2)")
    p.add_argument("--no-lpf", action="store_true", help="decimate without the anti-aliasing filter")
    p.add_argument("--split", choices=("train", "val", "test"), default=None)
    p.add_argument("--fractions", type=float, nargs=3, default=(0.88, 0.06, 0.06), metavar=("TRAIN", "VAL", "TEST"))

    p = add("train", "train the U-Net (or the spectral DNN) on a patch archive")
    p.add_argument("--train", type=Path, required=True, help="training patch archive")
    p.add_argument("--val", type=Path, default=None, help="validation patch archive")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--model", choices=("unet", "dnn"), default="unet")
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--channel-divisor", type=int, default=1, help="divide every filter count")
    p.add_argument("--variant", choices=("full", "no_residual", "no_skip"), default="full")
    p.add_argument("--zero-final", action="store_true", help="start from the identity map")
    p.add_argument("--max-grad-norm", type=float, default=None)
    p.add_argument("--resume", action="store_true", help="continue from OUT/last.bwex")
    p.add_argument("--ablate", action="store_true", help="train every variant into OUT/<variant>")

    p = add("upscale", "super-resolve one WAV file")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--ckpt", type=Path, default=None, help="U-Net or DNN checkpoint (spline only if omitted)")
    p.add_argument("--pcm16", action="store_true", help="write 16-bit PCM instead of float32")

    p = add("eval", "score methods on held-out tracks")
    p.add_argument("corpus", type=Path, help="directory of original (high-resolution) WAV files")
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--methods", default="spline,dnn,model", help="comma list of spline, dnn, model")
    p.add_argument("--model-ckpt", type=Path, default=None)
    p.add_argument("--dnn-ckpt", type=Path, default=None)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--fractions", type=float, nargs=3, default=(0.88, 0.06, 0.06), metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--no-lpf", action="store_true", help="degrade test tracks without the low-pass filter")
    p.add_argument("--task", default="desk", help="task label for report rows")
    p.add_argument("--paper-refs", nargs="?", const="MultiSpeaker", default=None,
                   choices=sorted(metrics.PAPER_TABLE2), help="show published reference values")
    p.add_argument("--lpf-grid", nargs=2, type=Path, default=None, metavar=("LPF_CKPT", "NOLPF_CKPT"),
                   help="add the train/test filter grid for two U-Net checkpoints")
    p.add_argument("--csv", type=Path, default=None, help="also write the aggregate rows as CSV")

    p = add("spectrogram", "dump a log-power spectrogram as PGM plus CSV")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path, help="PGM path; the CSV goes next to it")
    p.add_argument("--frame", type=int, default=2048)
    p.add_argument("--hop", type=int, default=None)

    p = add("gradcheck", "finite-difference audit of every layer and a small model")
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def _apply_config(parser: Parser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        cfg = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if cfg.pop("schema_version", None) != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"{args.config}: schema_version must be {CONFIG_SCHEMA_VERSION}")
    values = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    values.update(cfg.get(args.command, {}))
    known = vars(args)
    unknown = [k for k in values if k.replace("-", "_") not in known]
    if unknown:
        raise ConfigError(f"{args.config}: unknown options {unknown}")
    # defaults from the file, then re-parse so explicit flags win
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in values.items()})
    for action in sub._actions:
        if action.required and action.dest in {k.replace("-", "_") for k in values}:
            action.required = False
    args = parser.parse_args(argv)
    for k in ("out_dir", "corpus", "train", "val", "out", "ckpt", "model_ckpt", "dnn_ckpt", "csv"):
        if isinstance(getattr(args, k, None), str):
            setattr(args, k, Path(getattr(args, k)))
    return args


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("BWEX_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"BWEX_THREADS must be an integer, got {env!r}")
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    return n


# --- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    paths = data.synth_corpus(args.out_dir, args.kind, args.n_tracks, args.duration, args.rate,
                              args.seed, args.band_limit)
    print(f"wrote {len(paths)} tracks to {args.out_dir}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    arch = data.prepare(args.corpus, args.out_dir, args.r, args.patch_len, args.stride,
                        use_lpf=not args.no_lpf, split=args.split, fractions=tuple(args.fractions), seed=args.seed)
    skipped = len(arch.manifest["skipped"])
    print(f"wrote {len(arch)} patches to {args.out_dir} ({skipped} tracks skipped)")
    return EXIT_OK


def _dnn_frames(archive, r: int):
    from bwex.baseline import SpectralDNNConfig, frame_pairs
    cfg = SpectralDNNConfig(r=r)
    feats, targs = [], []
    for i in range(len(archive)):
        x, y = archive[i]
        f, t = frame_pairs(x.astype(np.float64), y.astype(np.float64), cfg)
        feats.append(f)
        targs.append(t)
    return cfg, np.concatenate(feats), np.concatenate(targs)


def cmd_train(args) -> int:
    from bwex.model import AudioUNet, ModelConfig
    from bwex.trainer import TrainConfig, ablation_suite, train

    train_arch = data.PatchArchive(args.train)
    val_arch = data.PatchArchive(args.val) if args.val else None
    args.out.mkdir(parents=True, exist_ok=True)
    if args.model == "dnn":
        from bwex.baseline import SpectralDNN, dnn_train
        r = int(train_arch.manifest.get("r", 2))
        cfg, feats, targs = _dnn_frames(train_arch, r)
        dnn = SpectralDNN(cfg, seed=args.seed)
        steps = args.epochs * -(-feats.shape[0] // args.batch_size)
        losses = dnn_train(dnn, feats, targs, steps=steps, lr=args.lr, batch_size=args.batch_size, seed=args.seed)
        dnn.save(args.out / "dnn.bwex")
        with open(args.out / "dnn_loss.csv", "w") as fh:
            fh.write("step,loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(losses)))
        print(f"trained spectral DNN for {steps} steps; final loss {losses[-1]:.6g}")
        return EXIT_OK

    cfg = ModelConfig(blocks=args.blocks, patch_length=train_arch.patch_length,
                      channel_divisor=args.channel_divisor, zero_final=args.zero_final)
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                       max_grad_norm=args.max_grad_norm)
    if args.ablate:
        results = ablation_suite(cfg, train_arch, val_arch, tcfg, seed=args.seed, out_dir=args.out)
        for v, h in results.items():
            print(f"{v}: final val_mse {h.rows[-1]['val_mse']:.6g}" if h.rows else f"{v}: no epochs")
        return EXIT_OK
    net = AudioUNet(cfg.variant(args.variant), seed=args.seed)
    hist = train(net, train_arch, val_arch, tcfg, args.out, resume=args.resume)
    if hist.rows:
        last = hist.rows[-1]
        print(f"epoch {last['epoch']}: train_mse {last['train_mse']:.6g} val_mse {last['val_mse']:.6g}")
    return EXIT_OK


def _load_method(path: Path, r: int):
    """``(name, fn)`` mapping a spline-upscaled track to the model's estimate."""
    meta = json.loads(path.with_suffix(".json").read_text()) if path.with_suffix(".json").exists() else {}
    if meta.get("model_type") == "spectral_dnn":
        from bwex.baseline import SpectralDNN
        dnn = SpectralDNN.load(path)
        if dnn.cfg.r != r:
            raise ConfigError(f"{path} was trained for r={dnn.cfg.r}, not r={r}")
        return "dnn", dnn.upscale
    from bwex.model import predict_samples
    from bwex.trainer import load_model
    return "model", partial(predict_samples, load_model(path))


def cmd_upscale(args) -> int:
    buf = read_wav(args.input, downmix=True)
    up = dsp.spline_upscale(buf, args.r)
    out = up.samples
    if args.ckpt is not None:
        _, fn = _load_method(args.ckpt, args.r)
        out = fn(up.samples)
    write_wav(AudioBuffer(out, up.sample_rate), args.output, encoding="pcm16" if args.pcm16 else "float32")
    print(f"wrote {args.output} ({len(out)} samples at {up.sample_rate} Hz)")
    return EXIT_OK


def _failing(message: str):
    def fn(_):
        raise DomainError(message)
    return fn


def cmd_eval(args) -> int:
    files = data.list_tracks(args.corpus)
    if args.split != "all":
        files = data.split_corpus(files, tuple(args.fractions), args.seed)[("train", "val", "test").index(args.split)]
    tracks = {p.name: read_wav(p, downmix=True).samples for p in files}
    wanted = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in wanted if m not in metrics.METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; expected a subset of {metrics.METHODS}")
    methods = {}
    for m in wanted:
        if m == "spline":
            methods[m] = lambda u: u
            continue
        ckpt = args.dnn_ckpt if m == "dnn" else args.model_ckpt
        if m == "dnn" and args.r not in (2, 4):
            methods[m] = _failing(f"n/a: spectral DNN is not applicable at r={args.r}")
        elif ckpt is None:
            methods[m] = _failing(f"no checkpoint given for {m}")
        else:
            try:
                methods[m] = _load_method(ckpt, args.r)[1]
            except (BwexError, OSError) as exc:
                methods[m] = _failing(f"cannot load {ckpt}: {exc}")
    report = metrics.evaluate(methods, tracks, args.r, use_lpf_test=not args.no_lpf, task=args.task)
    report.paper_task = args.paper_refs
    if args.lpf_grid:
        from bwex.model import predict_samples
        from bwex.trainer import load_model
        nets = {True: load_model(args.lpf_grid[0]), False: load_model(args.lpf_grid[1])}
        report.grid = metrics.lpf_grid({k: partial(predict_samples, n) for k, n in nets.items()}, tracks, args.r)
    sys.stdout.write(report.to_text())
    if args.csv:
        args.csv.write_text(report.to_csv())
    return EXIT_OK


def cmd_spectrogram(args) -> int:
    buf = read_wav(args.input, downmix=True)
    db = metrics.spectrogram_dump(buf.samples, args.output, args.frame, args.hop)
    print(f"wrote {args.output} ({db.shape[0]} frames x {db.shape[1]} bins)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from bwex.audit import run_audit
    reports = run_audit(cases=args.cases, model_cases=args.cases, tol=args.tol)
    for r in reports:
        print(r.summary())
    ok = all(r.passed for r in reports)
    print("all layers pass" if ok else "gradient audit FAILED")
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {
    "synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train, "upscale": cmd_upscale,
    "eval": cmd_eval, "spectrogram": cmd_spectrogram, "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        threads = _threads(args)
    except UsageExit as exc:
        sys.stderr.write(exc.usage)
        sys.stderr.write(f"bwex: error: {exc}\n")
        return EXIT_USAGE
    except ConfigError as exc:
        sys.stderr.write(f"bwex: error: {exc}\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](args)
    except (BwexError, OSError) as exc:
        sys.stderr.write(f"bwex: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME
