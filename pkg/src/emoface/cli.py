"""``emoface`` command line.

Subcommands: train, infer, eval, spirals, smooth, version (plus ``toy`` to
write the bundled synthetic dataset and its run config).

Exit codes: 0 success, 2 usage/config, 3 data/format, 4 numeric.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

from . import __version__
from .autodiff import checkpoint as ckpt_format
from .autodiff import load_tensors
from .data import (MSEQ_VERSION, fix_params, kalman_smooth, read_mseq,
                   read_track_csv, read_wav, write_mseq, write_track_csv)
from .errors import (ConfigError, DataError, EmoFaceError, FormatError, MetricError,
                     NumericError, SequenceError, TopologyError)
from .kernels import BACKEND
from .mesh import build_spiral_table, format_spirals, load_topology, write_obj
from .metrics import read_mask, region_error_over_set
from .model import AudioClip, EmoFaceModel, ModelConfig, StyleCondition, load_model, predict_sequence
from .training import (STAT_COLUMNS, Trainer, TrainConfig, load_samples, make_cross_pairs,
                       prepare_pair, read_manifest)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

PATH_KEYS = ("manifest", "mesh", "out_dir")


class UsageError(EmoFaceError):
    pass


# -- run config ----------------------------------------------------------------

@dataclasses.dataclass
class RunConfig:
    manifest: Path
    mesh: Path
    out_dir: Path
    model: ModelConfig
    train: TrainConfig


def _section(raw: dict, name: str, allowed: set[str], where: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{where}: [{name}] must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys in [{name}]: {sorted(unknown)}")
    return sec


def parse_run_config(raw: dict, base_dir: Path = Path("."), where: str = "config") -> RunConfig:
    """Validate a parsed JSON config. Relative paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: top level must be an object")
    unknown = set(raw) - {"paths", "model", "train"}
    if unknown:
        raise ConfigError(f"{where}: unknown top-level keys: {sorted(unknown)}")
    paths = _section(raw, "paths", set(PATH_KEYS), where)
    missing = [k for k in PATH_KEYS if k not in paths]
    if missing:
        raise ConfigError(f"{where}: missing required keys: " + ", ".join(f"paths.{k}" for k in missing))
    model_kw = _section(raw, "model", {f.name for f in dataclasses.fields(ModelConfig)}, where)
    train_kw = _section(raw, "train", {f.name for f in dataclasses.fields(TrainConfig)}, where)
    try:
        train = TrainConfig(**train_kw)
        fusion = model_kw.get("fusion", "mesh_attention" if train.mesh_attention_enabled else "add")
        if (fusion == "mesh_attention") != train.mesh_attention_enabled:
            raise ConfigError(f"{where}: model.fusion={fusion!r} contradicts "
                              f"train.mesh_attention_enabled={train.mesh_attention_enabled}")
        model = ModelConfig(**{**model_kw, "fusion": fusion})
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    return RunConfig(resolve(paths["manifest"]), resolve(paths["mesh"]), resolve(paths["out_dir"]),
                     model, train)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_run_config(raw, path.parent, str(path))


# -- train -----------------------------------------------------------------------

def _checkpoint_name(epoch: int) -> str:
    return f"ckpt_{epoch:05d}.emfc"


def _read_rows(path: Path, before: int) -> list[list[str]]:
    if not path.exists():
        return []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return [r for r in rows if r and int(r[0]) < before]


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    for p in (cfg.manifest, cfg.mesh):
        if not p.exists():
            raise FileNotFoundError(f"no such file: {p}")
    verts, topo = load_topology(cfg.mesh)
    samples = load_samples(read_manifest(cfg.manifest), cfg.model.sample_rate)
    emotions = sorted({s["emotion"] for s in samples})
    speakers = sorted({s["speaker"] for s in samples})
    if len(emotions) > cfg.model.n_emotions:
        raise ConfigError(f"manifest has {len(emotions)} emotions but model.n_emotions={cfg.model.n_emotions}")
    if len(speakers) > cfg.model.n_styles:
        raise ConfigError(f"manifest has {len(speakers)} speakers but model.n_styles={cfg.model.n_styles}")
    top_level = max(s["level"] for s in samples)
    if top_level >= cfg.model.n_levels:
        raise ConfigError(f"manifest level {top_level} needs model.n_levels > {top_level}")
    for s in samples:
        if s["mesh"].V != topo.V:
            raise DataError(f"mesh sequence has V={s['mesh'].V}, template has V={topo.V}")

    model = EmoFaceModel(cfg.model, topo, verts, seed=cfg.train.seed)
    pairs = [prepare_pair(model, p) for p in make_cross_pairs(samples, emotions, speakers, cfg.model.fps)]
    trainer = Trainer(model, pairs, cfg.train)
    if args.resume:
        trainer.restore(load_tensors(args.resume))

    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    stats_path, timing_path = out / "stats.csv", out / "timing.csv"
    rows = _read_rows(stats_path, trainer.epoch)
    timing = _read_rows(timing_path, trainer.epoch)
    every = cfg.train.checkpoint_every
    log = not args.quiet

    def on_epoch(stats):
        rows.append(stats.row())
        timing.append([str(stats.epoch), f"{time.perf_counter() - t0:.6f}"])
        _write_rows(stats_path, STAT_COLUMNS, rows)
        _write_rows(timing_path, ("epoch", "seconds"), timing)
        done = stats.epoch + 1
        if every and done % every == 0:
            trainer.save(out / _checkpoint_name(done))
        if log:
            print(f"epoch {stats.epoch} ratio {stats.ratio:.3f} self {stats.losses.self:.4e} "
                  f"total {stats.losses.total:.4e}", flush=True)

    t0 = time.perf_counter()
    trainer.run(on_epoch=on_epoch)
    trainer.save(out / _checkpoint_name(trainer.epoch))
    trainer.save(out / "final.emfc")
    if log:
        print(f"wrote {out / 'final.emfc'}")
    return EXIT_OK


# -- infer -----------------------------------------------------------------------

def cmd_infer(args) -> int:
    verts, topo = load_topology(args.template)
    model = load_model(args.checkpoint, topo, verts)
    cfg = model.config
    if not 0 <= args.style < cfg.n_styles:
        raise UsageError(f"--style {args.style} out of range: valid 0..{cfg.n_styles - 1}")
    if not 0 <= args.level < cfg.n_levels:
        raise UsageError(f"--level {args.level} out of range: valid 0..{cfg.n_levels - 1}")
    samples, rate = read_wav(args.wav, cfg.sample_rate)
    if samples.size == 0:
        raise DataError(f"{args.wav}: no audio samples")
    first = None
    if args.first_frame:
        seq = read_mseq(args.first_frame)
        if seq.V != topo.V:
            raise DataError(f"{args.first_frame}: V={seq.V}, template has V={topo.V}")
        first = seq.frames[0]
    cond = StyleCondition.from_indices(args.style, args.level, cfg.n_styles, cfg.n_levels)
    seq = predict_sequence(model, AudioClip(samples, rate), cond, verts, first)
    write_mseq(seq, args.out)
    if args.obj_dir:
        d = Path(args.obj_dir)
        d.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(seq.frames):
            write_obj(d / f"frame_{t:05d}.obj", frame, topo.faces)
    print(f"wrote {args.out}: {seq.T} frames at {seq.fps:g} fps")
    return EXIT_OK


# -- eval / spirals / smooth -----------------------------------------------------------

def cmd_eval(args) -> int:
    if len(args.pred) != len(args.ref):
        raise UsageError(f"{len(args.pred)} --pred files but {len(args.ref)} --ref files")
    pairs = [(read_mseq(p), read_mseq(r)) for p, r in zip(args.pred, args.ref)]
    squared = not args.unsquared
    lip = read_mask(args.lip_mask, "lip")
    emo = read_mask(args.emo_mask, "eye_forehead")
    lve_pooled, lve_seq = region_error_over_set(pairs, lip, squared)
    eve_pooled, eve_seq = region_error_over_set(pairs, emo, squared)
    print(f"LVE {lve_pooled:.6e}")
    print(f"EVE {eve_pooled:.6e}")
    if len(pairs) > 1:
        print(f"LVE_per_sequence {lve_seq:.6e}")
        print(f"EVE_per_sequence {eve_seq:.6e}")
    return EXIT_OK


def cmd_spirals(args) -> int:
    _, topo = load_topology(args.mesh)
    table = build_spiral_table(topo, args.k, args.length, args.dilation)
    sys.stdout.write(format_spirals(table))
    return EXIT_OK


def _index_list(text: str | None):
    if text is None:
        return None
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def cmd_smooth(args) -> int:
    track = read_track_csv(args.input, args.fps)
    track = kalman_smooth(track, q=args.q, r=args.r, rts=args.rts, channels=_index_list(args.channels))
    if args.fix_mode != "none":
        track = fix_params(track, _index_list(args.fix), args.fix_mode)
    write_track_csv(track, args.output)
    return EXIT_OK


def version_text() -> str:
    return (f"emoface {__version__} (kernels: {BACKEND})\n"
            f"MSEQ format version {MSEQ_VERSION}\n"
            f"checkpoint format version {ckpt_format.VERSION}")


def cmd_version(args) -> int:
    print(version_text())
    return EXIT_OK


def cmd_toy(args) -> int:
    from .toy import build_toy_dataset, toy_run_config

    out = Path(args.out_dir)
    paths = build_toy_dataset(out / "data")
    cfg = toy_run_config(Path("data"), Path("run"), total_epochs=args.epochs)
    (out / "toy.json").write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {paths['manifest']} and {out / 'toy.json'}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"{self.prog}: error: {message}") from None


class _VersionAction(argparse.Action):
    def __init__(self, option_strings, dest, **kw):
        super().__init__(option_strings, dest, nargs=0, help="print build and format versions")

    def __call__(self, parser, namespace, values, option_string=None):
        print(version_text())
        parser.exit()


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="emoface", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action=_VersionAction)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="animate a template from a WAV file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--template", required=True, help="template mesh (OBJ)")
    p.add_argument("--style", type=int, required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--first-frame", help="MSEQ whose first frame seeds the decoders")
    p.add_argument("--out", required=True)
    p.add_argument("--obj-dir", help="also write one OBJ per frame here")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="lip and emotion vertex errors")
    p.add_argument("--pred", action="append", required=True)
    p.add_argument("--ref", action="append", required=True)
    p.add_argument("--lip-mask", required=True)
    p.add_argument("--emo-mask", required=True)
    p.add_argument("--unsquared", action="store_true", help="use Euclidean rather than squared distance")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spirals", help="dump the spiral table of a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--length", type=int, default=None, help="default: largest k-disk")
    p.add_argument("--dilation", type=int, default=1)
    p.set_defaults(func=cmd_spirals)

    p = sub.add_parser("smooth", help="Kalman-smooth a parameter track CSV")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--q", type=float, default=1e-4)
    p.add_argument("--r", type=float, default=1e-2)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--rts", action="store_true", help="add the backward smoothing pass")
    p.add_argument("--channels", help="comma-separated channel indices to filter (default all)")
    p.add_argument("--fix", help="comma-separated indices to pin (default: last three)")
    p.add_argument("--fix-mode", choices=("none", "first_frame", "zero"), default="none")
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("version", help="print build and format versions")
    p.set_defaults(func=cmd_version)

    p = sub.add_parser("toy", help="write the synthetic toy dataset and a run config")
    p.add_argument("out_dir")
    p.add_argument("--epochs", type=int, default=40)
    p.set_defaults(func=cmd_toy)
    return ap


def _fail(code: int, msg: str) -> int:
    print(f"emoface: error: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return EXIT_USAGE
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_DATA, f"{exc.strerror or exc}: {exc.filename or ''}".rstrip(": "))
    except (FormatError, DataError, TopologyError, MetricError, SequenceError, EmoFaceError,
            OSError, ValueError) as exc:
        return _fail(EXIT_DATA, str(exc))


if __name__ == "__main__":
    sys.exit(main())
