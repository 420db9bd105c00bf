"""Command-line entry points.

Exit codes: 0 success, 2 usage error (argparse), 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as bio
from .config import ModelConfig, TrainConfig
from .editing import Constraint, EditCommand, apply_edits, autocomplete
from .errors import FormatError
from .metrics import (DiscFeatureExtractor, edit_consistency, frechet_distance,
                      global_diversity, paired_distance, precision_recall)
from .model import SceneModel
from .toydata import ToySceneSpec


def _load_json(path: str, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read {what} from {path}: {e}") from e


def cmd_train(args) -> int:
    overrides = _load_json(args.config, "train config") if args.config else {}
    mcfg = ModelConfig.from_dict({**ModelConfig().to_dict(), **overrides.get("model", {})})
    tdict = {**TrainConfig().to_dict(), **overrides.get("train", {})}
    if args.steps is not None:
        tdict["steps"] = args.steps
    if args.seed is not None:
        tdict["seed"] = args.seed
    tcfg = TrainConfig.from_dict(tdict)
    from .training import train
    model = SceneModel.create(mcfg, tcfg, seed=tcfg.seed)
    print(f"training {tcfg.steps} steps at {mcfg.img_res}x{mcfg.img_res}, "
          f"k={mcfg.k}, seed={tcfg.seed} -> {args.out}", flush=True)
    train(model, tcfg, out_dir=args.out, verbose=True)
    print(f"done; final checkpoint at {Path(args.out) / 'final.ckpt'}")
    return 0


def cmd_sample(args) -> int:
    model = bio.load_checkpoint(args.checkpoint).ema_view()
    if args.truncation < 1.0:
        model.ensure_trunc_mean()
    scene = model.sample_scene(args.seed, args.truncation)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    scene_path = out.with_suffix(".json")
    scene_path.write_text(bio.scene_to_text(scene, model.cfg.sharpness_c))
    png_path = out.with_suffix(".png")
    png_path.write_bytes(bio.image_to_png(model.render_scene(scene)))
    print(f"wrote {scene_path} and {png_path}")
    return 0


def cmd_render(args) -> int:
    model = bio.load_checkpoint(args.checkpoint).ema_view()
    scene, _ = bio.scene_from_text(Path(args.scene).read_text())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_bytes(bio.image_to_png(model.render_scene(scene)))
    print(f"wrote {args.out}")
    return 0


def cmd_edit(args) -> int:
    scene, c = bio.scene_from_text(Path(args.scene).read_text())
    spec = _load_json(args.edits, "edit list")
    if not isinstance(spec, list):
        raise FormatError("edit file must hold a JSON list of commands")
    out = apply_edits(scene, [EditCommand.from_dict(e) for e in spec])
    Path(args.out).write_text(bio.scene_to_text(out, c))
    print(f"wrote {args.out}")
    return 0


def cmd_autocomplete(args) -> int:
    model = bio.load_checkpoint(args.checkpoint).ema_view()
    spec = _load_json(args.constraints, "constraint set")
    if not isinstance(spec, list):
        raise FormatError("constraint file must hold a JSON list")
    cons = [Constraint(int(c["index"]), str(c["field"]),
                       np.asarray(c["value"], dtype=np.float32)) for c in spec]
    res = autocomplete(model.layout, cons, rng=np.random.default_rng(args.seed),
                       iters=args.steps or 300)
    Path(args.out).write_text(bio.scene_to_text(res.scene, model.cfg.sharpness_c))
    print(f"wrote {args.out} (final constraint L2 {res.final_loss:.3e}"
          f"{', did not converge' if res.warning else ''})")
    return 0


def cmd_invert(args) -> int:
    model = bio.load_checkpoint(args.checkpoint)
    if model.encoder is None:
        print("checkpoint has no encoder; run scripts/train_encoder.py first",
              file=sys.stderr)
        return 1
    from .inversion import invert
    img = bio.png_to_image(Path(args.image).read_bytes())
    res = invert(model, model.encoder, img, refine_steps=args.steps or 200)
    Path(args.out).write_text(bio.scene_to_text(res.scene, model.cfg.sharpness_c))
    print(f"wrote {args.out} (rmse {res.rmse:.5f}, encoder rmse {res.encoder_rmse:.5f})")
    return 0


def cmd_eval(args) -> int:
    model = bio.load_checkpoint(args.checkpoint)
    sampler = model.ema_view()
    if model.disc is None:
        print("checkpoint has no discriminator; cannot extract features", file=sys.stderr)
        return 1
    n = args.samples
    rng = np.random.default_rng(args.seed)
    spec = ToySceneSpec(canvas=model.cfg.img_res)
    real, _ = spec.sample_batch(rng, n)
    import blobgen.grad as gr
    with gr.no_grad():
        fake = sampler.generate(sampler.noise(rng, n)).data
    extractor = DiscFeatureExtractor(model.disc)
    feats_real, feats_fake = extractor(real), extractor(fake)
    fd = frechet_distance(feats_real, feats_fake)
    precision, recall = precision_recall(feats_real, feats_fake)

    # canonical move edit for the paired metrics
    edited = []
    cons_frac = []
    for i in range(min(n, 32)):
        scene = sampler.sample_scene(seed=int(rng.integers(2 ** 31)))
        before = sampler.render_scene(scene)
        moved = apply_edits(scene, [EditCommand("move", i % max(scene.k, 1),
                                                dx=[0.2, 0.0])])
        after = sampler.render_scene(moved)
        edited.append((before, after))
        cons_frac.append(edit_consistency(before, after, spec).fraction_unchanged)
    befores = np.stack([b for b, _ in edited])
    afters = np.stack([a for _, a in edited])
    pd_val = paired_distance(befores, afters, extractor)
    gd_val = global_diversity(afters, extractor)

    lines = [f"step = {model.step}",
             f"samples = {n}",
             f"frechet_disc_feat = {fd:.6g}",
             f"precision = {precision:.6g}",
             f"recall = {recall:.6g}",
             f"paired_distance_move = {pd_val:.6g}",
             f"global_diversity_move = {gd_val:.6g}",
             f"consistency_move = {float(np.mean(cons_frac)):.6g}"]
    report = "\n".join(lines) + "\n"
    Path(args.out).write_text(report)
    print(report, end="")
    return 0


def cmd_serve(args) -> int:
    from .service import serve
    serve(checkpoint=args.checkpoint, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blobgen",
                                description="Blob-based generative scene model")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **flags):
        sp = sub.add_parser(name)
        for flag, kw in flags.items():
            sp.add_argument(f"--{flag.replace('_', '-')}", **kw)
        sp.set_defaults(fn=fn)
        return sp

    add("train", cmd_train,
        config=dict(help="JSON with optional 'model' and 'train' sections"),
        out=dict(required=True), steps=dict(type=int), seed=dict(type=int))
    add("sample", cmd_sample,
        checkpoint=dict(required=True), seed=dict(type=int, default=0),
        truncation=dict(type=float, default=1.0),
        out=dict(required=True, help="output prefix for .json and .png"))
    add("render", cmd_render,
        checkpoint=dict(required=True), scene=dict(required=True),
        out=dict(required=True))
    add("edit", cmd_edit,
        scene=dict(required=True), edits=dict(required=True),
        out=dict(required=True))
    add("autocomplete", cmd_autocomplete,
        checkpoint=dict(required=True), constraints=dict(required=True),
        seed=dict(type=int, default=0), steps=dict(type=int),
        out=dict(required=True))
    add("invert", cmd_invert,
        checkpoint=dict(required=True), image=dict(required=True),
        steps=dict(type=int), out=dict(required=True))
    add("eval", cmd_eval,
        checkpoint=dict(required=True), out=dict(required=True),
        seed=dict(type=int, default=0), samples=dict(type=int, default=256))
    add("serve", cmd_serve,
        checkpoint=dict(), port=dict(type=int, default=8642))
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
