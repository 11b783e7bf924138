"""Command-line entry points: ``channel-mae <subcommand> ...``.

Failures print a single ``error: <message>`` line to stderr and exit 1;
argument errors print usage and exit 2.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import chansynth, downstream, model, runconfig, trainer
from .patchpipe import ConfigError, reassemble, sample_mask, tokens, unpartition

THREADS_ENV = "CHANNEL_MAE_THREADS"


class CommandError(RuntimeError):
    pass


def _thread_limit():
    raw = os.environ.get(THREADS_ENV, "0")
    try:
        n = int(raw)
    except ValueError:
        raise CommandError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    # 0 selects the serial deterministic mode
    return threadpool_limits(limits=max(n, 1))


def _ints(spec: str) -> list[int]:
    out = []
    for part in spec.split(","):
        part = part.strip()
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _floats(spec: str) -> list[float]:
    return [float(p) for p in spec.split(",") if p.strip()]


def _config(args) -> runconfig.RunConfig:
    return runconfig.load(args.config, args.set or (), args.profile)


@contextlib.contextmanager
def _output(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _train_val(args):
    data = chansynth.read_dataset(args.data)
    if args.val:
        return data, chansynth.read_dataset(args.val)
    train, val = data.split((0.8, 0.2))
    return train, val


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> None:
    cfg = _config(args)
    ratios = _floats(args.split) if args.split else [1.0]
    written = chansynth.generate_dataset(args.count, ratios, cfg.system, args.seed, args.out,
                                         _ints(args.scenarios))
    for name, path in written.items():
        print(f"{name}\t{path}")


def cmd_pretrain(args) -> None:
    cfg = _config(args)
    train, val = _train_val(args)
    init = model.load_checkpoint(args.init) if args.init else None
    with _output(args.log) as log:
        trainer.pretrain_wimae(train, val, cfg.model_config(), cfg.train, args.out, log, init)


def cmd_contrain(args) -> None:
    if not args.init:
        raise CommandError("warm-start checkpoint required (--init)")
    cfg = _config(args)
    init = model.load_checkpoint(args.init)
    train, val = _train_val(args)
    with _output(args.log) as log:
        trainer.pretrain_contra(train, val, init, cfg.contra, cfg.loss, cfg.model.d_c,
                                args.out, log)


def cmd_embed(args) -> None:
    ds = chansynth.read_dataset(args.data)
    ckpt = model.load_checkpoint(args.ckpt) if args.ckpt else None
    feats = downstream.extract_features(ckpt, ds, args.task)
    np.save(args.out, feats)


def _probe_inputs(args):
    ds = chansynth.read_dataset(args.data)
    ckpt = model.load_checkpoint(args.ckpt) if args.ckpt else None
    name = args.model or ("raw" if ckpt is None else
                          ("contrawimae" if ckpt.has_head else "wimae"))
    return ds, ckpt, name


def cmd_probe_beam(args) -> None:
    cfg = _config(args)
    ds, ckpt, name = _probe_inputs(args)
    feats = downstream.extract_features(ckpt, ds, "beam" if ckpt else "raw")
    splits = downstream.probe_splits(ds)
    rows = []
    for cs in _ints(args.cs):
        rows += downstream.run_beam_probe(feats, ds, name, cs, _floats(args.budget),
                                          cfg.beam_probe, splits)
    with _output(args.out) as fh:
        fh.write(downstream.format_report(rows))


def cmd_probe_los(args) -> None:
    cfg = _config(args)
    ds, ckpt, name = _probe_inputs(args)
    feats = downstream.extract_features(ckpt, ds, "los" if ckpt else "raw")
    rows = downstream.run_los_probe(feats, ds, name, _floats(args.budget), cfg.los_probe)
    with _output(args.out) as fh:
        fh.write(downstream.format_report(rows))


def recon_dump(ckpt: model.Checkpoint, ds: chansynth.ChannelDataset, n: int,
               out_dir: str | os.PathLike, mask_ratio: float, seed: int) -> list[Path]:
    """Write magnitude/phase CSVs of original, masked, reconstructed and
    masked-region reconstruction for the first ``n`` records. Hidden entries
    are NaN."""
    if n < 1:
        raise CommandError("n must be >= 1")
    cfg = ckpt.config
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    P = model.as_leaves(ckpt.params, trainable=False)
    rng = np.random.default_rng([seed, 0xD0])
    written = []
    pc = cfg.patch
    for i in range(min(n, len(ds))):
        h = ds.h_low[i]
        tok = tokens(h / ckpt.normalization_std, pc)[None].astype(ckpt.params["embed.w"].dtype)
        mask = sample_mask(cfg.K, mask_ratio, rng)
        pred = model.forward(tok, [mask], P, cfg).p_pred.data[0]
        h_hat = reassemble(pred.astype(np.float64), pc) * ckpt.normalization_std
        vis = np.repeat(mask.visible, pc.d_p).reshape(pc.K, pc.patch_rows, pc.patch_cols)
        vis = unpartition(vis, pc)
        views = {
            "original": h,
            "masked": np.where(vis, h, np.nan),
            "reconstructed": h_hat,
            "masked_reconstructed": np.where(vis, np.nan, h_hat),
        }
        for kind, mat in views.items():
            for part, fn in (("magnitude", np.abs), ("phase", np.angle)):
                path = out_dir / f"sample{i:03d}_{kind}_{part}.csv"
                np.savetxt(path, fn(mat), delimiter=",", fmt="%.8e")
                written.append(path)
    return written


def cmd_recon_dump(args) -> None:
    cfg = _config(args)
    ckpt = model.load_checkpoint(args.ckpt)
    ds = chansynth.read_dataset(args.data)
    ratio = args.mask_ratio if args.mask_ratio is not None else cfg.train.mask_ratio
    recon_dump(ckpt, ds, args.n, args.out_dir, ratio, args.seed)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--profile", default="paper", choices=sorted(runconfig.PROFILES))

    p = argparse.ArgumentParser(prog="channel-mae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic channel dataset")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--split", help="comma-separated split ratios, e.g. 0.8,0.2")
    s.add_argument("--scenarios", default="0", help="scenario ids, e.g. 0-7 or 0,3,5")
    s.set_defaults(func=cmd_synth)

    for name, func, help_ in (("pretrain", cmd_pretrain, "masked-reconstruction pretraining"),
                              ("contrain", cmd_contrain, "warm-started contrastive continuation")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--data", required=True)
        s.add_argument("--val")
        s.add_argument("--init")
        s.add_argument("--out", required=True)
        s.add_argument("--log")
        s.set_defaults(func=func)

    s = sub.add_parser("embed", parents=[common], help="export frozen-encoder features (.npy)")
    s.add_argument("--ckpt")
    s.add_argument("--data", required=True)
    s.add_argument("--task", choices=("beam", "los", "raw"), required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    for name, func in (("probe-beam", cmd_probe_beam), ("probe-los", cmd_probe_los)):
        s = sub.add_parser(name, parents=[common], help="linear probe on frozen features")
        s.add_argument("--ckpt", help="encoder checkpoint; omit for the raw-channel baseline")
        s.add_argument("--data", required=True)
        s.add_argument("--budget", default="1.0")
        s.add_argument("--model", help="model label in the report")
        s.add_argument("--out", help="metrics file (default stdout)")
        if name == "probe-beam":
            s.add_argument("--cs", default="32")
        s.set_defaults(func=func)

    s = sub.add_parser("recon-dump", parents=[common], help="CSV grids for reconstruction plots")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--mask-ratio", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_recon_dump)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            args.func(args)
    except (CommandError, ConfigError, runconfig.ConfigValidationError, model.FormatError,
            ValueError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
