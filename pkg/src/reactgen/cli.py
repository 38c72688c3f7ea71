"""``reactgen`` command line.

Exit codes: 0 ok, 1 IO failure, 2 bad flags or config, 3 artifact mismatch
(checkpoint, extractor, skeleton), 4 validation failure (malformed data or
annotations).

Settings resolve as defaults < ``--config`` JSON < explicit flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

EXIT_OK, EXIT_IO, EXIT_FLAGS, EXIT_ARTIFACT, EXIT_VALIDATION = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --- argument plumbing ----------------------------------------------------------

class FlagSet:
    """Collects flag defaults so config files can sit between defaults and flags."""

    def __init__(self, parser: argparse.ArgumentParser):
        self.parser = parser
        self.defaults: dict = {}
        parser.add_argument("--config", default=None, help="JSON file of settings keyed by flag name with underscores (default: none)")

    def add(self, flag: str, default=None, help: str = "", **kw):
        dest = flag.lstrip("-").replace("-", "_")
        self.defaults[dest] = default
        shown = "none" if default is None else default
        if "(default:" not in help:
            help = f"{help} (default: {shown})"
        self.parser.add_argument(flag, dest=dest, default=None, help=help, **kw)


def resolve(args, flags: FlagSet) -> dict:
    cfg = dict(flags.defaults)
    if args.config:
        try:
            from_file = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise CliError(EXIT_IO, f"--config: {e}") from None
        except json.JSONDecodeError as e:
            raise CliError(EXIT_FLAGS, f"--config: invalid JSON ({e})") from None
        if not isinstance(from_file, dict):
            raise CliError(EXIT_FLAGS, "--config must hold a JSON object")
        unknown = sorted(set(from_file) - set(cfg))
        if unknown:
            raise CliError(EXIT_FLAGS, f"--config: unknown settings {unknown}")
        cfg.update(from_file)
    for k in flags.defaults:
        v = getattr(args, k)
        if v is not None:
            cfg[k] = v
    return cfg


def need(cfg: dict, key: str):
    if cfg.get(key) is None:
        raise CliError(EXIT_FLAGS, f"--{key.replace('_', '-')} is required")
    return cfg[key]


def check(cond: bool, flag: str, message: str):
    if not cond:
        raise CliError(EXIT_FLAGS, f"{flag} {message}")


def build_parser():
    parser = argparse.ArgumentParser(prog="reactgen", description="Reaction generation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    flagsets = {}

    p = sub.add_parser("synth-data", help="write a synthetic action-reaction dataset")
    s = flagsets["synth-data"] = FlagSet(p)
    s.add("--out", None, "output dataset directory")
    s.add("--classes", 4, "number of action classes", type=int)
    s.add("--pairs", 50, "pairs per class", type=int)
    s.add("--frames", 60, "frames per pair", type=int)
    s.add("--delay", 5, "reaction delay in frames", type=int)
    s.add("--noise", 0.0, "gaussian jitter on the reactor", type=float)
    s.add("--skeleton", "desk5", "bundled skeleton name or JSON path")
    s.add("--test-fraction", 0.2, "per-class fraction assigned to the test split", type=float)
    s.add("--seed", 0, "random seed", type=int)

    p = sub.add_parser("train", help="train a denoiser")
    s = flagsets["train"] = FlagSet(p)
    s.add("--data", None, "dataset directory")
    s.add("--out", None, "run directory for checkpoint, log and manifest")
    s.add("--annotations", None, "annotation CSV assigning roles (default: the dataset's annotations.csv)")
    s.add("--setting", "online", "online (causal) or offline", choices=["online", "offline"])
    s.add("--mask", "auto", "directional mask: auto follows --setting", choices=["auto", "on", "off"])
    s.add("--arch", "decoder", "decoder units, or the encoder-only offline variant", choices=["decoder", "encoder"])
    s.add("--constrained", False, "condition on the action label", action="store_true")
    s.add("--layers", 2, "transformer layers", type=int)
    s.add("--dim", 64, "latent width", type=int)
    s.add("--heads", 4, "attention heads", type=int)
    s.add("--ffn", 256, "feed-forward width", type=int)
    s.add("--steps", 5000, "total optimizer steps (a resumed run continues up to this count)", type=int)
    s.add("--batch-size", 16, "batch size", type=int)
    s.add("--lr", 1e-4, "AdamW learning rate", type=float)
    s.add("--weight-decay", 0.0, "AdamW weight decay", type=float)
    s.add("--lambda-inter", 1.0, "interaction loss weight", type=float)
    s.add("--label-dropout", 0.1, "label dropout probability (constrained only)", type=float)
    s.add("--clip-len", 60, "training clip length in frames", type=int)
    s.add("--diffusion-steps", 1000, "diffusion timesteps T", type=int)
    s.add("--log-every", 100, "log interval in steps", type=int)
    s.add("--ckpt-every", 1000, "checkpoint interval in steps (0 disables periodic saves)", type=int)
    s.add("--resume", None, "checkpoint to resume from")
    s.add("--seed", 0, "random seed", type=int)

    p = sub.add_parser("sample", help="generate a reaction for an actor motion")
    s = flagsets["sample"] = FlagSet(p)
    s.add("--checkpoint", None, "trained checkpoint")
    s.add("--actor", None, "actor Motion JSON or Pair JSON (its action is used)")
    s.add("--out", None, "output Pair JSON")
    s.add("--stream", False, "read actor frames as JSON lines on stdin, write reactor frames to stdout",
          action="store_true")
    s.add("--window", None, "online window in frames (default: training clip length)", type=int)
    s.add("--latency", False, "include per-frame latency_ms in streamed frames", action="store_true")
    s.add("--ddim-steps", 5, "DDIM sampling steps", type=int)
    s.add("--label", None, "action label for constrained models", type=int)
    s.add("--guidance", 1.0, "classifier-free guidance scale", type=float)
    s.add("--manifest", None, "manifest path (default: next to --out, or the cache in stream mode)")
    s.add("--seed", 0, "random seed", type=int)

    p = sub.add_parser("evaluate", help="compute FID, accuracy, diversity and multimodality")
    s = flagsets["evaluate"] = FlagSet(p)
    s.add("--checkpoint", None, "trained checkpoint (omit with --real)")
    s.add("--data", None, "dataset directory")
    s.add("--out", None, "report directory")
    s.add("--annotations", None, "annotation CSV (default: the dataset's annotations.csv)")
    s.add("--extractor", None, "feature extractor file (default: cached per dataset under REGEN_CACHE)")
    s.add("--train-extractor", False, "train the extractor if it does not exist", action="store_true")
    s.add("--extractor-epochs", 10, "extractor training epochs", type=int)
    s.add("--extractor-lr", 1e-3, "extractor learning rate", type=float)
    s.add("--condition", "test", "split supplying actor motions", choices=["train", "test"])
    s.add("--real", False, "score real reactions instead of generated ones", action="store_true")
    s.add("--repeats", 20, "evaluation repeats", type=int)
    s.add("--samples", 1000, "samples per repeat", type=int)
    s.add("--s-d", None, "diversity subset size (default: min(200, samples))", type=int)
    s.add("--s-l", 20, "multimodality subset size per class", type=int)
    s.add("--ddim-steps", 5, "DDIM sampling steps", type=int)
    s.add("--guidance", 1.0, "classifier-free guidance scale", type=float)
    s.add("--seed", 0, "base seed; repeat r uses seed + r", type=int)

    p = sub.add_parser("annotate", help="validate and normalize an annotation CSV")
    s = flagsets["annotate"] = FlagSet(p)
    s.add("--annotations", None, "annotation CSV to check")
    s.add("--data", None, "dataset directory the CSV refers to")
    s.add("--out", None, "normalized CSV path (default: <name>.normalized.csv)")
    s.add("--errors", None, "error report path (default: <name>.errors.txt)")
    s.add("--seed", 0, "unused; accepted for uniformity", type=int)

    p = sub.add_parser("render", help="write stick-figure PNGs for a motion or pair file")
    s = flagsets["render"] = FlagSet(p)
    s.add("--input", None, "Motion JSON or Pair JSON")
    s.add("--out", None, "output directory for frame_XXXXX.png")
    s.add("--axis", "xz", "view plane", choices=["xy", "xz", "yz"])
    s.add("--size", 256, "image side in pixels", type=int)
    s.add("--skeleton", "desk5", "bundled skeleton name or JSON path")
    s.add("--seed", 0, "unused; accepted for uniformity", type=int)
    return parser, flagsets


# --- helpers ----------------------------------------------------------------------

def load_motion_or_pair(path):
    from .motion import InteractionPair, MotionSequence, _read_json

    d = _read_json(path)
    if "action" in d:
        return InteractionPair.from_dict(d)
    return MotionSequence.from_dict(d)


def load_training_pairs(data_dir, annotations):
    from .dataset import load_dataset

    ann = annotations
    if ann is None and (Path(data_dir) / "annotations.csv").exists():
        ann = Path(data_dir) / "annotations.csv"
    return load_dataset(data_dir, ann)


def manifest_for(out: Path) -> Path:
    return out / "manifest.json" if out.suffix == "" or out.is_dir() else out.with_suffix(".manifest.json")


# --- commands --------------------------------------------------------------------

def cmd_synth_data(cfg, manifest):
    from .dataset import write_dataset
    from .rotations import load_skeleton
    from .synthetic import SynthConfig, class_name, synth_pair_dataset

    out = Path(need(cfg, "out"))
    for flag in ("classes", "pairs", "frames"):
        check(cfg[flag] >= (2 if flag == "classes" else 1), f"--{flag}",
              f"must be >= {2 if flag == 'classes' else 1}, got {cfg[flag]}")
    check(0 <= cfg["delay"] < cfg["frames"], "--delay", "must lie in [0, frames)")
    check(cfg["noise"] >= 0, "--noise", "must be >= 0")
    check(0 <= cfg["test_fraction"] < 1, "--test-fraction", "must lie in [0, 1)")
    skel = load_skeleton(cfg["skeleton"])
    sc = SynthConfig(classes=cfg["classes"], pairs_per_class=cfg["pairs"], frames=cfg["frames"], skeleton=skel,
                     delay=cfg["delay"], noise=cfg["noise"], seed=cfg["seed"])
    pairs = synth_pair_dataset(sc)
    written = write_dataset(pairs, out, skel, [class_name(c) for c in range(cfg["classes"])], cfg["test_fraction"])
    manifest.add_output(out)
    manifest.write(out / "manifest.json", files=len(written))
    print(f"wrote {len(pairs)} pairs to {out}")


def cmd_train(cfg, manifest):
    from .diffusion import cosine_schedule
    from .model import DenoiserConfig, ReactionDenoiser
    from .training import TrainConfig, make_optimizer, pairs_to_tensors, save_training_checkpoint, train

    data_dir, out = Path(need(cfg, "data")), Path(need(cfg, "out"))
    mode = cfg["setting"]
    if (mode == "offline" and cfg["mask"] == "on") or (mode == "online" and cfg["mask"] == "off"):
        raise CliError(EXIT_FLAGS, f"--mask {cfg['mask']} contradicts --setting {mode}")
    check(cfg["steps"] >= 0, "--steps", "must be >= 0")
    check(cfg["diffusion_steps"] >= 2, "--diffusion-steps", "must be >= 2")
    tc = TrainConfig(lambda_inter=cfg["lambda_inter"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                     weight_decay=cfg["weight_decay"], total_steps=cfg["steps"], label_dropout_p=cfg["label_dropout"],
                     seed=cfg["seed"], clip_len=cfg["clip_len"], log_every=cfg["log_every"],
                     ckpt_every=cfg["ckpt_every"]).validate()
    ds = load_training_pairs(data_dir, cfg["annotations"])
    manifest.add_input(data_dir)
    manifest.add_input(cfg["annotations"])
    skel = ds.skeleton
    train_ds = ds.subset("train")
    if len(train_ds) == 0:
        raise CliError(EXIT_VALIDATION, f"{data_dir} has no training pairs")
    data = pairs_to_tensors(train_ds.pairs, tc.clip_len)
    sched = cosine_schedule(cfg["diffusion_steps"])
    start = 0
    if cfg["resume"]:
        # the architecture comes from the checkpoint; only the data must agree with it
        model, T, ck_skel, extra = _load_model(cfg["resume"])
        if T != sched.T or ck_skel != skel:
            raise CliError(EXIT_ARTIFACT, f"--resume {cfg['resume']} used T={T} or another skeleton")
        if model.cfg.max_len < tc.clip_len:
            raise CliError(EXIT_ARTIFACT, f"--clip-len {tc.clip_len} exceeds the checkpoint max_len {model.cfg.max_len}")
        manifest.add_input(cfg["resume"])
        start = int(extra.get("step", 0))
        opt = make_optimizer(model, tc)
        if "optimizer" in extra:
            opt.load_state_dict(extra["optimizer"])
    else:
        mcfg = DenoiserConfig(feature_dim=skel.feature_dim, d=cfg["dim"], layers=cfg["layers"], heads=cfg["heads"],
                              ffn_width=cfg["ffn"], mode=mode, arch=cfg["arch"],
                              constrained=bool(cfg["constrained"]),
                              num_classes=ds.num_classes if cfg["constrained"] else 0,
                              max_len=tc.clip_len).validate()
        torch.manual_seed(cfg["seed"])
        model = ReactionDenoiser(mcfg)
        opt = make_optimizer(model, tc)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.pt"
    with open(out / "train.log", "a") as log_file:
        def log(line):
            print(line, flush=True)
            log_file.write(line + "\n")
            log_file.flush()

        try:
            history = train(model, data, sched, skel, tc, log=log, ckpt_path=ckpt, start_step=start, opt=opt)
        except KeyboardInterrupt:
            print(f"interrupted; checkpoint flushed to {ckpt}", file=sys.stderr)
            manifest.add_output(ckpt)
            manifest.write(out / "manifest.json", interrupted=True)
            raise
    save_training_checkpoint(ckpt, model, opt, sched, skel, tc, max(start, tc.total_steps))
    manifest.add_output(ckpt)
    manifest.add_output(out / "train.log")
    final = history[-1] if history else {}
    manifest.write(out / "manifest.json", final_losses={k: final.get(k) for k in ("loss_all", "loss_dm", "loss_inter")},
                   start_step=start, parameters=sum(p.numel() for p in model.parameters()))
    print(f"checkpoint -> {ckpt}")


def _load_model(path):
    from .errors import CheckpointError
    from .model import load_checkpoint

    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(EXIT_IO, f"checkpoint not found: {path}") from None
    except CheckpointError as e:
        raise CliError(EXIT_ARTIFACT, str(e)) from None


def frame_record(n: int, vec, latency=None) -> str:
    from .motion import feature_to_frame

    pose, root, transl = feature_to_frame(np.asarray(vec, dtype=np.float64))
    rec = {"frame": n, "pose": pose.tolist(), "root_orient": root.tolist(), "transl": transl.tolist()}
    if latency is not None:
        rec["latency_ms"] = latency
    return json.dumps(rec)


def parse_frame(line: str, lineno: int, k: int):
    from .errors import FormatError
    from .motion import MotionSequence, frame_to_feature

    try:
        d = json.loads(line)
        seq = MotionSequence([d["pose"]], [d["root_orient"]], [d["transl"]])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"stdin line {lineno}: not a frame object ({e})") from None
    if seq.joints != k:
        raise CliError(EXIT_ARTIFACT, f"stdin line {lineno}: frame has {seq.joints} joints, checkpoint expects {k}")
    return frame_to_feature(seq, 0)


def cmd_sample(cfg, manifest):
    from .diffusion import cosine_schedule
    from .generation import OnlineSession, generate_offline
    from .manifest import cache_dir, now
    from .motion import InteractionPair, save_pair

    ckpt = need(cfg, "checkpoint")
    model, T, skel, extra = _load_model(ckpt)
    manifest.add_input(ckpt)
    sched = cosine_schedule(T)
    check(cfg["ddim_steps"] >= 1 and cfg["ddim_steps"] <= T, "--ddim-steps", f"must lie in [1, {T}]")
    label = cfg["label"]
    if label is not None and model.cfg.constrained and not 0 <= label < model.cfg.num_classes:
        raise CliError(EXIT_FLAGS, f"--label must lie in [0, {model.cfg.num_classes})")
    window = cfg["window"] or int(extra.get("train", {}).get("clip_len", model.cfg.max_len))
    check(1 <= window <= model.cfg.max_len, "--window", f"must lie in [1, {model.cfg.max_len}]")
    if cfg["stream"]:
        sess = OnlineSession(model, sched, cfg["ddim_steps"], window, cfg["seed"], label, cfg["guidance"])
        n = 0
        for lineno, line in enumerate(sys.stdin, 1):
            if not line.strip():
                continue
            vec = parse_frame(line, lineno, skel.joint_count)
            out, ms = sess.step(torch.from_numpy(vec))
            sys.stdout.write(frame_record(n, out.double().numpy(), ms if cfg["latency"] else None) + "\n")
            sys.stdout.flush()
            n += 1
        path = Path(cfg["manifest"]) if cfg["manifest"] else cache_dir() / "runs" / f"sample-{now().replace(':', '')}.json"
        manifest.write(path, frames=n, window=window)
        return
    actor_path, out = need(cfg, "actor"), Path(need(cfg, "out"))
    item = load_motion_or_pair(actor_path)
    manifest.add_input(actor_path)
    actor = item.action if isinstance(item, InteractionPair) else item
    if actor.joints != skel.joint_count:
        raise CliError(EXIT_ARTIFACT, f"actor has {actor.joints} joints, checkpoint skeleton has {skel.joint_count}")
    if actor.frames > model.cfg.max_len:
        raise CliError(EXIT_ARTIFACT, f"actor has {actor.frames} frames, model max_len is {model.cfg.max_len}")
    if label is None and isinstance(item, InteractionPair) and model.cfg.constrained:
        label = item.label
    reaction = generate_offline(model, actor, sched, cfg["ddim_steps"], cfg["seed"], label, cfg["guidance"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_pair(InteractionPair(actor, reaction, label), out)
    manifest.add_output(out)
    manifest.write(Path(cfg["manifest"]) if cfg["manifest"] else manifest_for(out))


def _extractor_path(cfg, data_dir, clip_len) -> Path:
    from .manifest import cache_dir, content_hash

    if cfg["extractor"]:
        return Path(cfg["extractor"])
    key = content_hash(data_dir)[:16]
    return cache_dir() / f"extractor-{key}-n{clip_len}-e{cfg['extractor_epochs']}-s{cfg['seed']}.pt"


def cmd_evaluate(cfg, manifest):
    from .diffusion import cosine_schedule
    from .errors import CheckpointError
    from .evaluation import EvalConfig, evaluate_suite, load_extractor, save_extractor, train_feature_extractor
    from .training import pairs_to_tensors

    data_dir, out = Path(need(cfg, "data")), Path(need(cfg, "out"))
    check(cfg["repeats"] >= 1, "--repeats", "must be >= 1")
    check(cfg["samples"] >= 2, "--samples", "must be >= 2")
    s_d = cfg["s_d"] if cfg["s_d"] is not None else min(200, cfg["samples"])
    ecfg = EvalConfig(repeats=cfg["repeats"], samples_per_repeat=cfg["samples"], s_d=s_d, s_l=cfg["s_l"],
                      seed=cfg["seed"], ddim_steps=cfg["ddim_steps"], guidance=cfg["guidance"])
    try:
        ecfg.validate()
    except Exception as e:
        raise CliError(EXIT_FLAGS, str(e)) from None
    model = sched = None
    clip_len = None
    if not cfg["real"]:
        ckpt = need(cfg, "checkpoint")
        model, T, skel_m, extra = _load_model(ckpt)
        manifest.add_input(ckpt)
        sched = cosine_schedule(T)
        clip_len = extra.get("train", {}).get("clip_len")
    ds = load_training_pairs(data_dir, cfg["annotations"])
    manifest.add_input(data_dir)
    if model is not None and ds.skeleton != skel_m:
        raise CliError(EXIT_ARTIFACT, "checkpoint skeleton does not match the dataset skeleton")
    clip_len = clip_len or max(p.frames for p in ds.pairs)
    ext_path = _extractor_path(cfg, data_dir, clip_len)
    if ext_path.exists():
        try:
            extractor, _ = load_extractor(ext_path)
        except CheckpointError as e:
            raise CliError(EXIT_ARTIFACT, str(e)) from None
        if extractor.skel != ds.skeleton or extractor.num_classes != ds.num_classes:
            raise CliError(EXIT_ARTIFACT, f"extractor {ext_path} was trained for a different skeleton or class set")
    elif cfg["train_extractor"]:
        train_split, test_split = ds.subset("train"), ds.subset("test")
        tr = pairs_to_tensors(train_split.pairs, clip_len)
        held = None
        if len(test_split):
            te = pairs_to_tensors(test_split.pairs, clip_len)
            held = (te.x, te.y, te.labels)
        extractor, acc = train_feature_extractor(tr.x, tr.y, tr.labels, ds.skeleton, ds.num_classes,
                                                 epochs=cfg["extractor_epochs"], lr=cfg["extractor_lr"],
                                                 seed=cfg["seed"], held_out=held, class_names=ds.class_names)
        ext_path.parent.mkdir(parents=True, exist_ok=True)
        save_extractor(extractor, ext_path, {"held_out_accuracy": acc})
        print(f"trained extractor -> {ext_path} (held-out accuracy {acc})")
    else:
        raise CliError(EXIT_ARTIFACT, f"no feature extractor at {ext_path}; rerun with --train-extractor "
                                      "or pass --extractor PATH")
    manifest.add_input(ext_path)
    split = ds.subset(cfg["condition"])
    if len(split) < 2:
        raise CliError(EXIT_VALIDATION, f"the {cfg['condition']} split has fewer than 2 clips")
    data = pairs_to_tensors(split.pairs, clip_len)
    report = evaluate_suite(model, data.x, data.y, data.labels.numpy(), extractor, sched, ecfg, log=print)
    report.settings["condition"] = cfg["condition"]
    report.settings["real"] = bool(cfg["real"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    for name in ("report.json", "report.csv"):
        manifest.add_output(out / name)
    manifest.write(out / "manifest.json", extractor=str(ext_path))
    print(report.to_csv(), end="")


def cmd_annotate(cfg, manifest):
    from .dataset import read_index
    from .errors import FormatError, InvalidRole
    from .motion import parse_annotation_row, read_annotation_rows, save_annotations

    ann, data_dir = Path(need(cfg, "annotations")), Path(need(cfg, "data"))
    index = read_index(data_dir)
    known = {e["id"] for e in index["sequences"]}
    n_classes = len(index["class_names"])
    out = Path(cfg["out"]) if cfg["out"] else ann.with_name(ann.stem + ".normalized.csv")
    err_path = Path(cfg["errors"]) if cfg["errors"] else ann.with_name(ann.stem + ".errors.txt")
    manifest.add_input(ann)
    manifest.add_input(data_dir)
    try:
        rows = read_annotation_rows(ann)
    except FormatError as e:
        rows, errors = [], [str(e)]
    else:
        errors = []
    records, seen = [], {}
    for lineno, row in rows:
        try:
            rec = parse_annotation_row(row)
        except (FormatError, InvalidRole) as e:
            errors.append(f"row {lineno}: {e}")
            continue
        if rec.sequence_id not in known:
            errors.append(f"row {lineno}: unknown sequence_id {rec.sequence_id!r}")
            continue
        if not (rec.label == -1 or 0 <= rec.label < n_classes):
            errors.append(f"row {lineno}: label {rec.label} outside [0, {n_classes})")
            continue
        if rec.sequence_id in seen:
            errors.append(f"row {lineno}: duplicate sequence_id {rec.sequence_id!r} (first on row {seen[rec.sequence_id]})")
            continue
        seen[rec.sequence_id] = lineno
        records.append(rec)
    if errors:
        err_path.write_text("\n".join(errors) + "\n")
        for e in errors:
            print(e, file=sys.stderr)
        manifest.add_output(err_path)
        manifest.write(manifest_for(err_path), valid=False, errors=len(errors))
        raise CliError(EXIT_VALIDATION, f"{len(errors)} invalid row(s); see {err_path}")
    save_annotations(records, out)
    manifest.add_output(out)
    manifest.write(manifest_for(out), valid=True, rows=len(records))
    print(f"{len(records)} valid rows -> {out}")


def cmd_render(cfg, manifest):
    from .render import render_motion
    from .rotations import load_skeleton

    src, out = need(cfg, "input"), Path(need(cfg, "out"))
    check(cfg["size"] >= 48, "--size", "must be >= 48")
    item = load_motion_or_pair(src)
    manifest.add_input(src)
    skel = load_skeleton(cfg["skeleton"])
    first = item.action if hasattr(item, "action") else item
    if first.joints != skel.joint_count:
        raise CliError(EXIT_ARTIFACT, f"{src} has {first.joints} joints; skeleton {skel.name} has {skel.joint_count}")
    paths = render_motion(item, skel, out, cfg["axis"], cfg["size"])
    manifest.add_output(out)
    manifest.write(out / "manifest.json", frames=len(paths))
    print(f"wrote {len(paths)} frames to {out}")


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "annotate": cmd_annotate,
    "render": cmd_render,
}


def exit_code_for(exc: BaseException) -> int:
    from . import errors as E

    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, E.ConfigError):
        return EXIT_FLAGS
    if isinstance(exc, (E.CheckpointError, E.LabelMismatch, E.ShapeMismatch)):
        return EXIT_ARTIFACT
    if isinstance(exc, E.ReactGenError):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    raise exc


def main(argv=None) -> int:
    from .manifest import RunManifest

    parser, flagsets = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        cfg = resolve(args, flagsets[args.command])
        manifest = RunManifest(args.command, cfg, cfg.get("seed"), argv)
        COMMANDS[args.command](cfg, manifest)
    except KeyboardInterrupt:
        return 130
    except BrokenPipeError:
        # downstream reader went away (e.g. ``| head``); stop quietly
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        code = exit_code_for(exc)
        print(f"reactgen {args.command}: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
