"""Command-line surface.

Exit codes: 0 success, 1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, GaitkitError
from .evalkit import EvalProtocol, evaluate, load_embedding_set, save_embedding_set
from .gradcheck import REL_TOL, run_suite
from .prep import SequenceEntry, align_silhouette, read_pgm
from .skelmap import RenderConfig, read_pose_jsonl, render_sequence
from .synth import SyntheticSpec, generate
from .tensorio import write_tensor
from .train import RunConfig, Trainer, embed_sequences, read_index, write_index

USAGE_ERROR, DATA_ERROR = 2, 1


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_render_skeleton(args):
    poses_dir = Path(args.poses)
    if not poses_dir.is_dir():
        return _fail(USAGE_ERROR, f"missing pose directory {poses_dir}")
    if args.sigma <= 0:
        return _fail(USAGE_ERROR, "sigma must be positive")
    if args.height <= 0:
        return _fail(USAGE_ERROR, "height must be positive")
    cfg = RenderConfig(height=args.height, sigma=args.sigma)
    out_dir = Path(args.out)
    files = sorted(poses_dir.rglob("*.jsonl"))
    if not files:
        return _fail(USAGE_ERROR, f"no .jsonl pose files under {poses_dir}")
    entries, drops = [], {}
    for f in files:
        rel = f.relative_to(poses_dir)
        try:
            frames = read_pose_jsonl(f)
            result = render_sequence(frames, cfg)
        except DataError as exc:
            return _fail(DATA_ERROR, str(exc))
        if result.maps.shape[0] == 0:
            drops[str(rel)] = len(result.dropped)
            continue
        out_path = out_dir / rel.with_suffix(".gt01")
        write_tensor(out_path, result.maps.astype(np.float32))
        if result.dropped:
            drops[str(rel)] = len(result.dropped)
        parts = rel.with_suffix("").parts
        subject, condition, view = (parts + ("", "", ""))[:3] if len(parts) >= 3 else ("?", "?", rel.stem)
        if len(parts) >= 3:
            subject, condition, view = parts[0], parts[1], parts[2]
        entries.append(SequenceEntry(subject, condition, view,
                                     str(out_path.relative_to(out_dir)), result.maps.shape[0]))
    write_index(entries, out_dir / "index.json")
    with open(out_dir / "render-manifest.json", "w", encoding="utf-8") as fh:
        json.dump({"version": 1, "sigma": args.sigma, "height": args.height,
                   "sequences": len(entries), "dropped_frames": drops}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"rendered {len(entries)} sequences -> {out_dir}")
    return 0


def cmd_preprocess(args):
    sil_dir = Path(args.sils)
    if not sil_dir.is_dir():
        return _fail(USAGE_ERROR, f"missing silhouette directory {sil_dir}")
    out_dir = Path(args.out)
    leaf_dirs = sorted({p.parent for p in sil_dir.rglob("frame-*.pgm")})
    if not leaf_dirs:
        return _fail(USAGE_ERROR, f"no frame-*.pgm files under {sil_dir}")
    entries, skipped = [], []
    for leaf in leaf_dirs:
        rel = leaf.relative_to(sil_dir)
        if len(rel.parts) != 3:
            return _fail(DATA_ERROR, f"{leaf}: expected subject/condition/view layout")
        frames = []
        for f in sorted(leaf.glob("frame-*.pgm")):
            try:
                img = read_pgm(f)
            except DataError as exc:
                return _fail(DATA_ERROR, str(exc))
            try:
                frames.append(align_silhouette(img))
            except DataError:
                continue  # empty frame: drop
        if not frames:
            skipped.append(str(rel))
            continue
        tensor = (np.stack(frames)[:, None, :, :] / 255.0).astype(np.float32)
        out_path = out_dir / rel.parent / f"{rel.name}.gt01"
        write_tensor(out_path, tensor)
        subject, condition, view = rel.parts
        entries.append(SequenceEntry(subject, condition, view,
                                     str(out_path.relative_to(out_dir)), tensor.shape[0]))
    write_index(entries, out_dir / "index.json")
    with open(out_dir / "prep-manifest.json", "w", encoding="utf-8") as fh:
        json.dump({"version": 1, "sequences": len(entries), "skipped": skipped},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"aligned {len(entries)} sequences -> {out_dir}"
          + (f" ({len(skipped)} skipped)" if skipped else ""))
    return 0


def cmd_gen_synth(args):
    spec_path = Path(args.spec)
    if not spec_path.is_file():
        return _fail(USAGE_ERROR, f"missing spec file {spec_path}")
    try:
        with open(spec_path, "r", encoding="utf-8") as fh:
            spec = SyntheticSpec.from_dict(json.load(fh))
    except (json.JSONDecodeError, ConfigError) as exc:
        return _fail(USAGE_ERROR, f"bad synthetic spec: {exc}")
    summary = generate(spec, args.out, seed=args.seed)
    print(f"generated {summary['pose_sequences']} pose and "
          f"{summary['silhouette_sequences']} silhouette sequences -> {args.out}")
    return 0


def cmd_train_toy(args):
    cfg_path = Path(args.config)
    if not cfg_path.is_file():
        return _fail(USAGE_ERROR, f"missing config file {cfg_path}")
    try:
        cfg = RunConfig.from_file(cfg_path)
    except (json.JSONDecodeError, ConfigError) as exc:
        return _fail(USAGE_ERROR, f"bad run config: {exc}")
    try:
        trainer = Trainer(cfg)
        if args.resume:
            trainer.restore(args.resume)
        result = trainer.run()
    except GaitkitError as exc:
        return _fail(DATA_ERROR, str(exc))
    last = result.log[-1] if result.log else {}
    print(f"trained {result.steps} steps; final loss {last.get('loss', float('nan')):.4f}; "
          f"checkpoint {result.checkpoint}")
    return 0


def cmd_embed(args):
    from .models import load_checkpoint

    ckpt = Path(args.checkpoint)
    if not ckpt.is_dir():
        return _fail(USAGE_ERROR, f"missing checkpoint directory {ckpt}")
    try:
        model, manifest = load_checkpoint(ckpt)
        index = read_index(args.index)
        pair_index = read_index(args.pair_index) if args.pair_index else None
        if args.conditions:
            allowed = set(args.conditions)
            from .prep import DatasetIndex
            index = DatasetIndex([e for e in index.entries if e.condition in allowed])
            if pair_index is not None:
                pair_index = DatasetIndex([e for e in pair_index.entries if e.condition in allowed])
        if not index.entries:
            return _fail(DATA_ERROR, "no sequences selected")
        dtype = np.dtype(manifest.get("dtype", "float32"))
        emb = embed_sequences(model, index, pair_index, dtype=dtype)
        save_embedding_set(emb, args.out)
    except GaitkitError as exc:
        return _fail(DATA_ERROR, str(exc))
    print(f"embedded {len(emb)} sequences -> {args.out}")
    return 0


def cmd_eval(args):
    proto_path = Path(args.protocol)
    if not proto_path.is_file():
        return _fail(USAGE_ERROR, f"missing protocol file {proto_path}")
    try:
        with open(proto_path, "r", encoding="utf-8") as fh:
            protocol = EvalProtocol.from_dict(json.load(fh))
    except (json.JSONDecodeError, ConfigError) as exc:
        return _fail(USAGE_ERROR, f"bad protocol: {exc}")
    try:
        gallery = load_embedding_set(args.gallery)
        probe = load_embedding_set(args.probe) if args.probe != args.gallery else gallery
        report = evaluate(protocol, gallery, probe)
    except GaitkitError as exc:
        return _fail(DATA_ERROR, str(exc))
    text = report.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_gradcheck(args):
    results = run_suite(seed=args.seed, cases=args.cases,
                        loss_cases=max(100, args.cases // 2),
                        report=print, perturb=args.perturb)
    worst = max(results.values())
    if worst > REL_TOL:
        print(f"FAIL: worst relative error {worst:.3e} exceeds {REL_TOL:.0e}")
        return 1
    print(f"all gradients match finite differences (worst {worst:.3e})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="gaitkit",
                                     description="Desk-scale gait representation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render-skeleton", help="render pose JSONL sequences to skeleton maps")
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=8.0)
    p.add_argument("--height", type=int, default=64)
    p.set_defaults(func=cmd_render_skeleton)

    p = sub.add_parser("preprocess", help="align silhouette PGM trees to 64x44 tensors")
    p.add_argument("--sils", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("gen-synth", help="generate the synthetic walker dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train-toy", help="train a baseline on prepared data")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("embed", help="compute retrieval embeddings from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--pair-index", default=None,
                   help="skeleton-map index for the two-branch model")
    p.add_argument("--conditions", nargs="*", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="probe/gallery retrieval evaluation")
    p.add_argument("--gallery", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all primitives")
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        return _fail(DATA_ERROR, str(exc))
    except ConfigError as exc:
        return _fail(USAGE_ERROR, str(exc))


if __name__ == "__main__":
    sys.exit(main())
