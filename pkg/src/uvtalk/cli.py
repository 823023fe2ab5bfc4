"""Command-line entry points: synth-data, train-codec, train-ldm, compute-pivot, generate, evaluate, dynamics.

Every command writes only under ``--out``: its artifacts, the effective
config (``config.yaml``) and a JSON-lines log (``log.jsonl``). Failures print a
JSON error record to stderr (and ``error.json`` under ``--out``) and exit with
2 (usage / configuration), 3 (data) or 4 (numerical failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .appearance import load_texture, wrinkle_apply
from .audio import AudioClip
from .codec import Codec, codebook_utilization
from .config import RunConfig, dump_config, load_config
from .diffusion import LatentDiffusion
from .errors import ConfigurationError, DataError, NumericalFailure
from .geometry import raster_plan, read_topology
from .io import file_sha256, load_array, save_array, write_json
from .metrics import evaluate_pairs, pearson, temporal_dynamics
from .pipeline import (
    encode_sequence, frames_for_audio, generate_for_clip, stream_maps, train_corpus_ldm, train_stream_codec,
)
from .style import StylePivot, compute_pivot
from .synthdata import DatasetManifest, generate_corpus

log = logging.getLogger("uvtalk")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(ConfigurationError):
    pass


class ArgParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class RunLog:
    """JSON-lines event log under the output directory (no wall-clock fields, so reruns are byte-identical)."""

    def __init__(self, out: Path, command: str):
        self.path = out / "log.jsonl"
        self.command = command
        self.path.write_text("")

    def __call__(self, event: str, **fields):
        rec = {"command": self.command, "event": event, **fields}
        with self.path.open("a") as fh:
            fh.write(json.dumps(rec, sort_keys=True, default=_json_default) + "\n")
        log.info("%s %s", event, json.dumps(fields, default=_json_default))


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(type(obj).__name__)


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def _prepare_out(args, cfg: RunConfig) -> tuple[Path, RunLog]:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    run = RunLog(out, args.command)
    run("start", version=__version__, config_hash=cfg.hash())
    return out, run


def _config(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides += [f"{sec}.seed={args.seed}" for sec in getattr(args, "seed_sections", ())]
    return load_config(args.config, overrides)


# --------------------------------------------------------------------------- commands


def cmd_synth_data(args) -> int:
    cfg = _config(args)
    out, run = _prepare_out(args, cfg)
    manifest = generate_corpus(cfg.corpus, out)
    run("done", sequences=len(manifest.sequences), identities=sorted(manifest.identities),
        motion_scale=manifest.motion_scale)
    return EXIT_OK


def cmd_train_codec(args) -> int:
    cfg = _config(args)
    manifest = DatasetManifest.load(_require(args.data, "dataset"))
    out, run = _prepare_out(args, cfg)
    run("inputs", manifest_sha256=file_sha256(manifest.root / "manifest.json"), stream=args.stream)
    codec = train_stream_codec(manifest, args.stream, cfg.codec,
                               progress=lambda step, losses: run("progress", step=step, **losses))
    path = codec.save(out / f"{args.stream}_codec.pt")
    write_json(out / "loss_log.json", codec.loss_log)
    val = manifest.split("val") or manifest.split("train")
    maps = np.concatenate([stream_maps(manifest, s, args.stream, cfg.codec.resolution) for s in val])
    run("done", checkpoint=path.name, content_hash=codec.content_hash(),
        codebook_utilization=codebook_utilization(codec, maps))
    return EXIT_OK


def _load_codec(path, stream: str) -> Codec:
    codec = Codec.load(_require(path, f"{stream} codec checkpoint"))
    if codec.stream != stream:
        raise ConfigurationError(f"{path} is a {codec.stream} codec, expected {stream}")
    return codec


def cmd_train_ldm(args) -> int:
    cfg = _config(args)
    manifest = DatasetManifest.load(_require(args.data, "dataset"))
    mc, wc = _load_codec(args.motion_codec, "motion"), _load_codec(args.wrinkle_codec, "wrinkle")
    out, run = _prepare_out(args, cfg)
    run("inputs", manifest_sha256=file_sha256(manifest.root / "manifest.json"),
        motion_codec=mc.content_hash(), wrinkle_codec=wc.content_hash())
    ldm = train_corpus_ldm(manifest, mc, wc, cfg.ldm, progress=lambda step, loss: run("progress", step=step, loss=loss))
    path = ldm.save(out / "ldm.pt")
    write_json(out / "loss_log.json", ldm.loss_log)
    run("done", checkpoint=path.name, style=cfg.ldm.style, identities=ldm.identities)
    return EXIT_OK


def cmd_compute_pivot(args) -> int:
    cfg = _config(args)
    codec = Codec.load(_require(args.codec, "codec checkpoint"))
    out, run = _prepare_out(args, cfg)
    if args.maps:
        arr = load_array(_require(args.maps, "maps file")).astype(np.float64)
        if codec.stream == "motion" and arr.ndim == 3:
            if not args.topology:
                raise UsageError("per-vertex motion input needs --topology to rasterize")
            arr = raster_plan(read_topology(_require(args.topology, "topology")), codec.config.resolution).apply(arr)
        z = codec.encode(arr).reshape(arr.shape[0], -1)
        label = args.identity or Path(args.maps).stem
        sources = [str(args.maps)]
    else:
        if not args.data or not args.identity:
            raise UsageError("give either --maps, or --data together with --identity")
        manifest = DatasetManifest.load(_require(args.data, "dataset"))
        seqs = [s for s in manifest.sequences if s["identity"] == args.identity and s["split"] in args.splits]
        if args.sequences:
            seqs = [s for s in seqs if s["index"] in args.sequences]
        if not seqs:
            raise DataError(f"no sequences of identity {args.identity!r} in splits {args.splits}")
        topo = manifest.topology()
        z = np.concatenate([encode_sequence(manifest, s, codec, topo) for s in seqs])
        label = args.identity
        sources = [f"{s['identity']}/{s['index']}" for s in seqs]
    pivot = compute_pivot(z, codec.stream, label, codec.content_hash())
    path = pivot.save(out / f"pivot_{codec.stream}_{label}.f32")
    run("done", pivot=path.name, frames=pivot.frames, sources=sources, codec_hash=pivot.codec_hash)
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _config(args)
    clip = AudioClip.from_wav(_require(args.audio, "audio"))
    if clip.samples.size == 0:
        raise DataError(f"{args.audio}: empty audio")
    ldm = LatentDiffusion.load(_require(args.ldm, "LDM checkpoint"))
    mc, wc = _load_codec(args.motion_codec, "motion"), _load_codec(args.wrinkle_codec, "wrinkle")
    topo = read_topology(_require(args.topology, "topology"))
    style = args.style or ldm.config.style
    if style != ldm.config.style:
        raise ConfigurationError(f"--style {style} but the LDM was trained with style {ldm.config.style}")
    pm = pw = None
    if style == "pivot":
        if not args.motion_pivot or not args.wrinkle_pivot:
            raise UsageError("pivot-style generation needs --motion-pivot and --wrinkle-pivot "
                             "(or an LDM trained with --style one-hot)")
        pm = StylePivot.load(_require(args.motion_pivot, "motion pivot"), "motion", mc.content_hash())
        pw = StylePivot.load(_require(args.wrinkle_pivot, "wrinkle pivot"), "wrinkle", wc.content_hash())
    elif not args.identity:
        raise UsageError("one-hot generation needs --identity")
    out, run = _prepare_out(args, cfg)
    run("inputs", audio_sha256=file_sha256(args.audio), ldm_sha256=file_sha256(args.ldm),
        motion_codec=mc.content_hash(), wrinkle_codec=wc.content_hash())
    seed = cfg.sampling.seed
    T = frames_for_audio(clip.duration, args.fps)
    gen = generate_for_clip(clip, args.fps, ldm, mc, wc, topo, pm, pw, args.identity, seed,
                            cfg.sampling.mode, cfg.sampling.ddim_steps, frames=T)
    if not (np.all(np.isfinite(gen.motion)) and np.all(np.isfinite(gen.wrinkle))):
        raise NumericalFailure("generation produced non-finite values")
    save_array(out / "motion.f32", gen.motion, "motion", {"fps": args.fps, "units": "mm"})
    save_array(out / "wrinkle.f32", gen.wrinkle, "wrinkle", {"fps": args.fps})
    textured = False
    if args.neutral_texture:
        neutral = load_texture(_require(args.neutral_texture, "neutral texture"))
        if neutral.shape[:2] != gen.wrinkle.shape[1:3]:
            raise DataError(f"neutral texture is {neutral.shape[:2]}, wrinkle maps are {gen.wrinkle.shape[1:3]}")
        frames = np.stack([wrinkle_apply(w, neutral) for w in gen.wrinkle])
        save_array(out / "textured.f32", frames, "textured", {"fps": args.fps})
        textured = True
    run("done", frames=int(gen.motion.shape[0]), seconds=clip.duration, fps=args.fps, windows=len(gen.windows),
        uncovered_vertices=gen.uncovered_vertices, textured=textured, seed=seed, mode=cfg.sampling.mode)
    return EXIT_OK


def _sequence_dirs(root: Path) -> dict[str, Path]:
    return {p.parent.name: p.parent for p in sorted(root.glob("*/motion.f32"))}


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    pred_root, ref_root = _require(args.pred, "prediction directory"), _require(args.ref, "reference directory")
    topo = read_topology(_require(args.topology, "topology"))
    pred, ref = _sequence_dirs(pred_root), _sequence_dirs(ref_root)
    if args.sequences:
        ref = {k: v for k, v in ref.items() if k in set(args.sequences)}
    names = sorted(set(pred) & set(ref))
    if not names:
        raise DataError("no common sequence directories (each needs a motion.f32) between --pred and --ref")
    missing = sorted(set(ref) - set(pred))
    out, run = _prepare_out(args, cfg)
    pairs, hashes = [], {}
    for name in names:
        pair = {"name": name, "pred_motion": load_array(pred[name] / "motion.f32").astype(np.float64),
                "ref_motion": load_array(ref[name] / "motion.f32").astype(np.float64)}
        if pair["pred_motion"].shape[1:] != pair["ref_motion"].shape[1:]:
            raise DataError(f"{name}: vertex layouts differ")
        if (pred[name] / "wrinkle.f32").exists() and (ref[name] / "wrinkle.f32").exists():
            pair["pred_texture"] = load_array(pred[name] / "wrinkle.f32").astype(np.float64)
            pair["ref_texture"] = load_array(ref[name] / "wrinkle.f32").astype(np.float64)
        hashes[name] = {"pred": file_sha256(pred[name] / "motion.f32"), "ref": file_sha256(ref[name] / "motion.f32")}
        pairs.append(pair)
    rep = evaluate_pairs(pairs, topo.lip_mask, topo.upper_face_mask)
    report = {
        "tool_version": __version__,
        "aggregate": {k: getattr(rep, k) for k in ("lve_mm", "mve_mm", "mve_max_mm", "fdd_mm", "fdd_abs_mm",
                                                   "psnr_db", "psnr_capped", "ssim")},
        "per_sequence": rep.per_sequence,
        "variants": rep.variants,
        "masks": {"lip_vertices": int(topo.lip_mask.sum()), "upper_face_vertices": int(topo.upper_face_mask.sum()),
                  "topology_fingerprint": topo.fingerprint()},
        "input_hashes": hashes,
        "missing_predictions": missing,
    }
    write_json(out / "report.json", report)
    run("done", sequences=len(names), missing=len(missing), **report["aggregate"])
    return EXIT_OK


def cmd_dynamics(args) -> int:
    cfg = _config(args)
    src = _require(args.input, "input array")
    x = load_array(src).astype(np.float64)
    out, run = _prepare_out(args, cfg)
    field = temporal_dynamics(x)
    save_array(out / "dynamics.f32", field, "temporal_dynamics", {"source": src.name, "frames": int(x.shape[0])})
    summary = {"mean": float(field.mean()), "max": float(field.max()), "source_sha256": file_sha256(src)}
    if args.ref:
        ref = load_array(_require(args.ref, "reference array")).astype(np.float64)
        ref_field = temporal_dynamics(ref)
        if ref_field.shape != field.shape:
            raise DataError(f"dynamics shapes differ: {field.shape} vs {ref_field.shape}")
        summary["pearson_r"] = pearson(field, ref_field)
        summary["ref_sha256"] = file_sha256(args.ref)
    write_json(out / "summary.json", summary)
    run("done", **summary)
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = ArgParser(prog="uvtalk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=ArgParser)

    def common(sp, seed_sections=()):
        sp.add_argument("--out", required=True, help="output directory (created if missing)")
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. codec.steps=500")
        if seed_sections:
            sp.add_argument("--seed", type=int, help="shortcut for the command's seed key(s)")
        sp.set_defaults(seed_sections=seed_sections)

    sp = sub.add_parser("synth-data", help="generate the synthetic oracle corpus")
    common(sp, ("corpus",))
    sp.set_defaults(func=cmd_synth_data)

    sp = sub.add_parser("train-codec", help="train the motion or wrinkle codec")
    common(sp, ("codec",))
    sp.add_argument("--data", required=True, help="corpus directory (with manifest.json)")
    sp.add_argument("--stream", required=True, choices=("motion", "wrinkle"))
    sp.set_defaults(func=cmd_train_codec)

    sp = sub.add_parser("train-ldm", help="train the latent diffusion model on both codecs' latents")
    common(sp, ("ldm",))
    sp.add_argument("--data", required=True)
    sp.add_argument("--motion-codec", required=True)
    sp.add_argument("--wrinkle-codec", required=True)
    sp.set_defaults(func=cmd_train_ldm)

    sp = sub.add_parser("compute-pivot", help="time-averaged latent of an identity's reference frames")
    common(sp)
    sp.add_argument("--codec", required=True)
    sp.add_argument("--data", help="corpus directory")
    sp.add_argument("--identity", help="identity label (corpus mode) or output label (--maps mode)")
    sp.add_argument("--splits", nargs="+", default=["train"], help="corpus splits to draw sequences from")
    sp.add_argument("--sequences", nargs="+", type=int, help="restrict to these sequence indices")
    sp.add_argument("--maps", help="f32 array of maps (T, R, R, 3) or per-vertex motion (T, n, 3)")
    sp.add_argument("--topology", help="topology file, needed for per-vertex motion input")
    sp.set_defaults(func=cmd_compute_pivot)

    sp = sub.add_parser("generate", help="audio -> motion and wrinkle sequences")
    common(sp, ("sampling",))
    sp.add_argument("--audio", required=True, help="16-bit PCM WAV")
    sp.add_argument("--ldm", required=True)
    sp.add_argument("--motion-codec", required=True)
    sp.add_argument("--wrinkle-codec", required=True)
    sp.add_argument("--topology", required=True)
    sp.add_argument("--motion-pivot")
    sp.add_argument("--wrinkle-pivot")
    sp.add_argument("--style", choices=("pivot", "one-hot"), help="must match the LDM's training mode")
    sp.add_argument("--identity", help="identity label for --style one-hot")
    sp.add_argument("--fps", type=float, default=25.0)
    sp.add_argument("--neutral-texture", help="f32 (R, R, 3) neutral texture; writes textured.f32")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="motion / texture metrics between two sequence directories")
    common(sp)
    sp.add_argument("--pred", required=True, help="directory of <name>/motion.f32 [+ wrinkle.f32]")
    sp.add_argument("--ref", required=True, help="same layout; a corpus directory works")
    sp.add_argument("--topology", required=True)
    sp.add_argument("--sequences", nargs="+", help="restrict to these sequence directory names")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("dynamics", help="per-vertex / per-pixel temporal dynamics field")
    common(sp)
    sp.add_argument("--input", required=True, help="f32 sequence (T, n, 3) or (T, R, R, 3)")
    sp.add_argument("--ref", help="reference sequence; adds the Pearson correlation of the two fields")
    sp.set_defaults(func=cmd_dynamics)
    return p


def _error_record(exc: BaseException, code: int, out: str | None) -> None:
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(rec), file=sys.stderr)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            write_json(Path(out) / "error.json", rec)
        except OSError:
            pass


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    out = None
    try:
        args = parser.parse_args(argv)
        out = args.out
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (ConfigurationError, UsageError) as exc:
        _error_record(exc, EXIT_USAGE, out)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError) as exc:  # remaining ValueErrors come from bad input data
        _error_record(exc, EXIT_DATA, out)
        return EXIT_DATA
    except NumericalFailure as exc:
        _error_record(exc, EXIT_NUMERIC, out)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
