"""Single entry point with subcommands for the full pipeline.

Exit codes: 0 success, 2 usage/configuration, 3 data, 4 model state,
5 numeric. Every failure prints a one-line diagnostic to stderr. All
randomness descends from --seed; nothing reads entropy elsewhere.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import compositor as comp
from . import config as cfgmod
from . import datagen, poseprior, posediffusion, render2d, retarget, scoring, textenc
from .errors import ConfigError, DataError, PoseSceneError
from .kinematics import default_skeleton, forward_kinematics, load_skeleton


def _seed_rng(seed: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _STAGE_IDS[stage]]))


_STAGE_IDS = {
    "datagen": 1,
    "prior": 2,
    "posediff": 3,
    "aligner": 4,
    "compositor": 5,
    "sample": 6,
    "compose": 7,
    "eval": 8,
}


def _load_cfg(path: str | None) -> cfgmod.PipelineConfig:
    return cfgmod.load_config(path) if path else cfgmod.PipelineConfig()


def _write_loss_log(path, log) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for step, loss in log:
            fh.write(f"{step}\t{loss:.9g}\n")


def _load_vocab(path: str | None) -> textenc.Vocabulary:
    if path:
        return textenc.Vocabulary.load(path)
    return default_vocabulary()


def default_vocabulary() -> textenc.Vocabulary:
    texts = datagen.all_surface_forms() + list(comp.SCENE_PHRASES)
    return textenc.Vocabulary.build(texts)


def default_style(bones: int) -> render2d.AvatarStyle:
    return render2d.AvatarStyle.random(bones, np.random.default_rng(20240214))


def _load_records(path) -> list[datagen.DatasetRecord]:
    records, report = datagen.ingest(path)
    if report.dropped:
        print(f"ingest: kept {report.kept}, dropped {dict(report.dropped)}",
              file=sys.stderr)
    if not records:
        raise DataError(f"no usable records in {path}")
    return records


# -- subcommand implementations ------------------------------------------------


def cmd_gen_data(args) -> int:
    records = datagen.generate(args.n, args.seed)
    if args.fractions:
        fractions = [float(f) for f in args.fractions.split(",")]
        parts = datagen.split(records, fractions, args.seed)
        for part, suffix in zip(parts, ("train", "val", "test")[: len(parts)]):
            datagen.write_records(f"{args.out}.{suffix}", part)
            print(f"wrote {len(part)} records to {args.out}.{suffix}")
    else:
        datagen.write_records(args.out, records)
        print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_train_prior(args) -> int:
    cfg = _load_cfg(args.config)
    records = _load_records(args.data)
    prior, log = poseprior.train_prior(records, cfg.prior, seed=args.seed)
    poseprior.save(prior, args.out)
    _write_loss_log(args.out + ".log", log)
    cfgmod.write_config(args.out + ".cfg", cfg)
    print(f"trained prior on {len(records)} records -> {args.out}")
    return 0


def cmd_train_posediff(args) -> int:
    cfg = _load_cfg(args.config)
    records = _load_records(args.data)
    vocab = _load_vocab(args.vocab)
    encoder = textenc.TextEncoder(vocab)
    prior = None
    if cfg.posediff.mode == posediffusion.MODE_LATENT or args.prior:
        if not args.prior:
            raise ConfigError("latent mode requires --prior")
        prior = poseprior.load(args.prior, cfg.prior)
    model, log = posediffusion.train(records, cfg.posediff, encoder, prior,
                                     seed=args.seed)
    posediffusion.save(model, args.out)
    _write_loss_log(args.out + ".log", log)
    cfgmod.write_config(args.out + ".cfg", cfg)
    print(f"trained pose diffusion ({cfg.posediff.mode}) -> {args.out}")
    return 0


def cmd_train_aligner(args) -> int:
    cfg = _load_cfg(args.config)
    records = _load_records(args.data)
    encoder = textenc.TextEncoder(_load_vocab(args.vocab))
    model, log = scoring.train_aligner(records, encoder, cfg.aligner, seed=args.seed)
    scoring.save_aligner(model, args.out)
    _write_loss_log(args.out + ".log", log)
    cfgmod.write_config(args.out + ".cfg", cfg)
    print(f"trained aligner -> {args.out}")
    return 0


def cmd_train_compositor(args) -> int:
    cfg = _load_cfg(args.config)
    encoder = textenc.TextEncoder(_load_vocab(args.vocab))
    skel = load_skeleton(args.skel) if args.skel else default_skeleton()
    cam = render2d.Camera.from_config(cfg.render)
    scenes = comp.generate_scenes(cfg.compositor.scenes, args.seed, skel, cam)
    ae, ae_log = comp.train_autoencoder(scenes, cfg.compositor, seed=args.seed)
    model, log = comp.train_denoiser(scenes, ae, encoder, cfg.compositor,
                                     seed=args.seed)
    comp.save_model(model, args.out)
    _write_loss_log(args.out + ".ae.log", ae_log)
    _write_loss_log(args.out + ".log", log)
    cfgmod.write_config(args.out + ".cfg", cfg)
    print(f"trained compositor on {len(scenes)} scenes -> {args.out}")
    return 0


def _sample_poses(model, prior, caption: str, n: int, guidance: float,
                  rng, steps, mode: str):
    gcfg = posediffusion.GuidanceConfig(scale=guidance, p_drop=model.cfg.p_drop)
    states = posediffusion.sample(model, caption, gcfg, rng, n=n, steps=steps)
    regularize = mode == "6d+vposer"
    return [posediffusion.decode_to_pose(s, prior, regularize) for s in states]


def _pose_records(poses, caption: str):
    return [
        datagen.DatasetRecord(i, "-", caption, p.canonical().body, p.canonical().root)
        for i, p in enumerate(poses)
    ]


def cmd_sample_pose(args) -> int:
    cfg = _load_cfg(args.config)
    if args.mode:
        cfg.posediff.mode = "6d" if args.mode.startswith("6d") else args.mode
    encoder = textenc.TextEncoder(_load_vocab(args.vocab))
    model = posediffusion.load(args.ckpt, cfg.posediff, encoder)
    prior = poseprior.load(args.prior, cfg.prior) if args.prior else None
    mode = args.mode or cfg.posediff.mode
    if mode in ("latent", "6d+vposer") and prior is None:
        raise ConfigError(f"mode {mode!r} requires --prior")
    rng = _seed_rng(args.seed, "sample")
    guidance = args.guidance if args.guidance is not None else cfg.posediff.guidance
    poses = _sample_poses(model, prior, args.caption, args.n, guidance, rng,
                          args.steps or None, mode)
    if args.rerank:
        if not args.aligner:
            raise ConfigError("--rerank requires --aligner")
        aligner = scoring.load_aligner(args.aligner, cfg.aligner)
        best, scores = scoring.rerank(aligner, encoder, args.caption, poses)
        datagen.write_records(args.out, _pose_records([poses[best]], args.caption))
        with open(args.out + ".scores", "w", encoding="utf-8") as fh:
            fh.writelines(f"{s:.9g}\n" for s in scores)
        print(f"wrote best-of-{args.n} pose (index {best}) to {args.out}")
    else:
        datagen.write_records(args.out, _pose_records(poses, args.caption))
        print(f"wrote {args.n} poses to {args.out}")
    return 0


def cmd_retarget(args) -> int:
    records = _load_records(args.pose)
    pose = records[0].to_pose()
    src = load_skeleton(args.src_skel)
    tgt = load_skeleton(args.tgt_skel)
    states = forward_kinematics(src, pose)
    problem = retarget.RetargetProblem(states, tgt, source_height=src.height())
    result = retarget.solve(problem, pose)
    datagen.write_records(args.out, _pose_records([result.pose], records[0].caption))
    report = (
        f"iterations\t{result.iterations}\n"
        f"J_initial\t{result.initial_objective:.9g}\n"
        f"J_final\t{result.objective:.9g}\n"
        f"converged\t{result.converged}\n"
    )
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report)
    else:
        print(report, end="")
    return 0


def cmd_render(args) -> int:
    cfg = _load_cfg(args.config)
    records = _load_records(args.pose)
    skel = load_skeleton(args.skel) if args.skel else default_skeleton()
    states = forward_kinematics(skel, records[0].to_pose())
    cam = render2d.Camera.from_config(cfg.render)
    if args.gray:
        raster = render2d.render_gray_body(skel, states, cam,
                                           cfg.render.thickness,
                                           cfg.render.joint_radius)
    else:
        style = (render2d.load_style(args.style) if args.style
                 else default_style(skel.joint_count - 1))
        raster = render2d.render_avatar(skel, states, style, cam)
    render2d.save_rgba(args.out, raster)
    print(f"rendered {args.pose} -> {args.out}")
    return 0


def cmd_compose(args) -> int:
    cfg = _load_cfg(args.config)
    encoder = textenc.TextEncoder(_load_vocab(args.vocab))
    model = comp.load_model(args.ckpt, cfg.compositor, encoder)
    avatar = render2d.load_rgba(args.avatar)
    gray = render2d.load_rgba(args.gray)
    bundle = comp.make_bundle(model.ae, avatar, gray, cfg.compositor.infer_w,
                              encoder.embed(args.caption))
    rng = _seed_rng(args.seed, "compose")
    generated = comp.generate(model, bundle, rng)
    final = comp.paste_back(generated, avatar)
    alpha = np.ones(final.shape[:2] + (1,))
    render2d.save_rgba(args.out, np.concatenate([final, alpha], axis=-1))
    print(f"composed scene -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args.config)
    records = _load_records(args.test_data)
    encoder = textenc.TextEncoder(_load_vocab(args.vocab))
    prior = poseprior.load(args.prior, cfg.prior)
    model = posediffusion.load(args.ckpt, cfg.posediff, encoder)
    aligner = scoring.load_aligner(args.aligner, cfg.aligner) if args.aligner else None
    rng = _seed_rng(args.seed, "eval")
    report = evaluate(records, model, prior, encoder, aligner, rng,
                      per_archetype=args.samples_per_archetype,
                      steps=args.steps or None)
    text = format_eval_report(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def evaluate(records, model, prior, encoder, aligner, rng,
             per_archetype: int = 50, steps=None) -> dict:
    """FPD, retrieval accuracy, and per-archetype conditional consistency."""
    oracle = scoring.ArchetypeOracle(datagen.default_archetypes())
    held_latents, _ = prior.encode_batch(
        np.stack([r.to_pose().body_rot6d() for r in records])
    )
    gcfg = posediffusion.GuidanceConfig(scale=model.cfg.guidance)
    consistency: dict[str, float] = {}
    gen_latents = []
    for arch in datagen.default_archetypes():
        caption = datagen.template_surface_forms(arch)[0]
        states = posediffusion.sample(model, caption, gcfg, rng,
                                      n=per_archetype, steps=steps)
        poses = [posediffusion.decode_to_pose(s, prior) for s in states]
        body = np.stack([p.body for p in poses])
        assigned = oracle.classify_batch(body)
        consistency[arch.name] = float(
            np.mean([a == arch.name for a in assigned])
        )
        gen_latents.append(
            prior.encode_batch(np.stack([p.body_rot6d() for p in poses]))[0]
        )
    gen_latents = np.concatenate(gen_latents)
    k = min(len(held_latents), len(gen_latents))
    fpd_value = scoring.fpd(scoring.fit_stats(held_latents[:k]),
                            scoring.fit_stats(gen_latents[:k]))
    retrieval = None
    if aligner is not None:
        retrieval = retrieval_accuracy(records, aligner, encoder)
    return {
        "fpd": fpd_value,
        "retrieval_accuracy": retrieval,
        "consistency": consistency,
        "mean_consistency": float(np.mean(list(consistency.values()))),
    }


def retrieval_accuracy(records, aligner, encoder) -> float:
    """Fraction of poses whose own archetype's caption scores highest among
    one probe caption per archetype."""
    archetypes = datagen.default_archetypes()
    probes = [datagen.template_surface_forms(a)[0] for a in archetypes]
    ids = np.stack([textenc.tokenize(c, encoder.vocab) for c in probes])
    _, pooled = encoder.embed_batch(ids)
    text_emb = aligner.embed_captions(pooled)
    body = np.stack([r.to_pose().body_rot6d() for r in records])
    pose_emb = aligner.embed_poses(body)
    choice = np.argmax(pose_emb @ text_emb.T, axis=1)
    names = [archetypes[i].name for i in choice]
    return float(np.mean([n == r.archetype for n, r in zip(names, records)]))


def format_eval_report(report: dict) -> str:
    lines = [f"fpd\t{report['fpd']:.6g}"]
    if report["retrieval_accuracy"] is not None:
        lines.append(f"retrieval_accuracy\t{report['retrieval_accuracy']:.4f}")
    lines.append(f"mean_consistency\t{report['mean_consistency']:.4f}")
    for name in sorted(report["consistency"]):
        lines.append(f"consistency[{name}]\t{report['consistency'][name]:.4f}")
    return "\n".join(lines) + "\n"


def cmd_pas(args) -> int:
    """Full pipeline: caption -> pose candidates -> rerank -> retarget ->
    render -> outpaint -> paste back."""
    import os

    art = args.artifacts
    cfg = _load_cfg(os.path.join(art, "config.cfg")
                    if os.path.exists(os.path.join(art, "config.cfg"))
                    else args.config)
    encoder = textenc.TextEncoder(textenc.Vocabulary.load(os.path.join(art, "vocab.txt")))
    prior = poseprior.load(os.path.join(art, "prior.pfck"), cfg.prior)
    model = posediffusion.load(os.path.join(art, "posediff.pfck"), cfg.posediff, encoder)
    aligner = scoring.load_aligner(os.path.join(art, "aligner.pfck"), cfg.aligner)
    compositor_model = comp.load_model(os.path.join(art, "compositor.pfck"),
                                       cfg.compositor, encoder)
    skel_path = os.path.join(art, "skeleton.txt")
    skel = load_skeleton(skel_path) if os.path.exists(skel_path) else default_skeleton()

    rng = _seed_rng(args.seed, "sample")
    poses = _sample_poses(model, prior, args.caption, cfg.scoring.rerank_n,
                          cfg.posediff.guidance, rng, None, cfg.posediff.mode)
    best, _ = scoring.rerank(aligner, encoder, args.caption, poses)
    pose = poses[best]

    states = forward_kinematics(skel, pose)
    problem = retarget.RetargetProblem(states, skel, source_height=skel.height())
    result = retarget.solve(problem, pose)

    cam = render2d.Camera.from_config(cfg.render)
    final_states = forward_kinematics(skel, result.pose)
    style = (render2d.load_style(args.style) if args.style
             else default_style(skel.joint_count - 1))
    avatar = render2d.render_avatar(skel, final_states, style, cam)
    gray = render2d.render_gray_body(skel, final_states, cam,
                                     style.thickness, style.joint_radius)

    bundle = comp.make_bundle(compositor_model.ae, avatar, gray,
                              cfg.compositor.infer_w, encoder.embed(args.caption))
    generated = comp.generate(compositor_model, bundle,
                              _seed_rng(args.seed, "compose"))
    final = comp.paste_back(generated, avatar)
    alpha = np.ones(final.shape[:2] + (1,))
    render2d.save_rgba(args.out, np.concatenate([final, alpha], axis=-1))
    print(f"generated scene for {args.caption!r} -> {args.out}")
    return 0


def cmd_write_config(args) -> int:
    cfgmod.write_config(args.out, cfgmod.PipelineConfig())
    print(f"wrote default configuration to {args.out}")
    return 0


# -- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posescene",
        description="text-conditioned pose generation, rendering, and scene composition",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic caption/pose corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--fractions", default=None,
                   help="comma-separated split fractions, e.g. 0.8,0.1,0.1")
    p.set_defaults(func=cmd_gen_data)

    for name, fn, extra in (
        ("train-prior", cmd_train_prior, ()),
        ("train-posediff", cmd_train_posediff, ("--prior", "--vocab")),
        ("train-aligner", cmd_train_aligner, ("--vocab",)),
        ("train-compositor", cmd_train_compositor, ("--vocab", "--skel")),
    ):
        p = sub.add_parser(name, help=f"{name} on a corpus file")
        p.add_argument("--config", default=None)
        if name != "train-compositor":
            p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        for flag in extra:
            p.add_argument(flag, default=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("sample-pose", help="sample poses for a caption")
    p.add_argument("--caption", required=True)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--guidance", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=0)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mode", choices=["latent", "6d", "6d+vposer"], default=None)
    p.add_argument("--rerank", action="store_true")
    p.add_argument("--prior", default=None)
    p.add_argument("--aligner", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample_pose)

    p = sub.add_parser("retarget", help="transfer a pose between skeletons")
    p.add_argument("--pose", required=True)
    p.add_argument("--src-skel", required=True)
    p.add_argument("--tgt-skel", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("render", help="rasterize a pose file")
    p.add_argument("--pose", required=True)
    p.add_argument("--skel", default=None)
    p.add_argument("--style", default=None)
    p.add_argument("--gray", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("compose", help="outpaint a scene around an avatar")
    p.add_argument("--avatar", required=True)
    p.add_argument("--gray", required=True)
    p.add_argument("--caption", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("eval", help="score a trained pose model")
    p.add_argument("--test-data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--aligner", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=0)
    p.add_argument("--samples-per-archetype", type=int, default=50)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pas", help="full caption-to-scene pipeline")
    p.add_argument("--caption", required=True)
    p.add_argument("--style", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--artifacts", required=True,
                   help="directory with vocab.txt and trained checkpoints")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_pas)

    p = sub.add_parser("write-config", help="write the default configuration")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_write_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PoseSceneError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
