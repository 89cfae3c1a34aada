"""Command-line surface: gen-data, train-*, translate, eval, export, verify.

Exit codes: 0 success, 2 user error, 3 numerical failure. Logs go to
stderr; data only to files. CROSSTOUCH_THREADS caps BLAS parallelism and is
the only honored environment override.
"""

import argparse
import logging
import os
import sys


def _apply_thread_cap():
    cap = os.environ.get("CROSSTOUCH_THREADS")
    if cap:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_apply_thread_cap()

import numpy as np  # noqa: E402  (after the thread cap)

log = logging.getLogger("crosstouch")

EXIT_USER = 2
EXIT_NUMERIC = 3


class UserError(Exception):
    pass


def _load_config(args):
    from .config import RunConfig

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_gen_data(args):
    from . import pipeline

    cfg = _load_config(args)
    if args.indenters is not None:
        cfg.dataset.indenter_count = args.indenters
    if args.samples is not None:
        cfg.dataset.samples_per_indenter = args.samples
    pairs, per = pipeline.generate_container(cfg, args.out, kind=args.kind)
    n_ind = pairs // per if per else 0
    log.info("wrote %d paired samples (%d indenters x %d poses) to %s", pairs, n_ind, per, args.out)
    print(f"{pairs} paired samples ({n_ind} indenters x {per} poses) -> {args.out}")
    return 0


def _train_command(args, kind):
    from . import pipeline
    from .depthnet import DepthNetModel, TrainingDiverged, train_depthnet
    from .generative import DenoiserModel, train_denoiser
    from .vqvae import VqVaeModel, train_vqvae

    cfg = _load_config(args)
    if args.epochs is not None:
        for section in (cfg.depth, cfg.diffusion, cfg.vqvae):
            section.epochs = args.epochs
    src_spec, dst_spec = pipeline.build_sensors(cfg)
    src_tr, dst_tr = pipeline.load_pairs(args.data, cfg)
    log_path = args.log or None
    try:
        if kind == "depth":
            model = DepthNetModel.load(args.resume) if args.resume else None
            model, _ = train_depthnet(
                src_tr, pipeline.depth_config(cfg), seed=cfg.seed, log_path=log_path, model=model
            )
        elif kind in ("t2t", "d2t"):
            model = DenoiserModel.load(args.resume) if args.resume else None
            if kind == "t2t":
                pairs = pipeline.t2t_training_pairs(src_tr, dst_tr)
            else:
                pairs = pipeline.d2t_training_pairs(dst_tr, dst_spec)
            model, _ = train_denoiser(
                pairs,
                pipeline.diffusion_config(cfg),
                cond_kind="touch" if kind == "t2t" else "depth",
                seed=cfg.seed,
                log_path=log_path,
                model=model,
                extra={"src_sensor": src_spec.name, "dst_sensor": dst_spec.name},
            )
        else:
            model = VqVaeModel.load(args.resume) if args.resume else None
            model, _ = train_vqvae(
                pipeline.vq_training_pairs(src_tr, dst_tr, src_spec, dst_spec),
                pipeline.vq_config(cfg),
                seed=cfg.seed,
                log_path=log_path,
                model=model,
            )
    except TrainingDiverged as e:
        if e.model is not None:
            e.model.save(args.out + ".last-finite")
            log.error("%s; last finite state saved to %s", e, args.out + ".last-finite")
        raise
    model.save(args.out)
    log.info("checkpoint written to %s (step %d)", args.out, model.step)
    print(f"checkpoint -> {args.out} (step {model.step})")
    return 0


def cmd_translate(args):
    from . import container, pipeline
    from .depthnet import DepthNetModel
    from .generative import BubbleNormStats, DenoiserModel, postprocess_bubble

    cfg = _load_config(args)
    src_spec, dst_spec = pipeline.build_sensors(cfg)
    src_samples, dst_samples = pipeline.load_pairs(args.input, cfg)
    if args.limit:
        src_samples, dst_samples = src_samples[: args.limit], dst_samples[: args.limit]
    sources = [s.tactile.values for s in src_samples]

    model = DenoiserModel.load(args.checkpoint)
    expect = {"t2t": "touch", "t2d2": "depth"}[args.mode]
    if model.net.cond_kind != expect:
        raise UserError(
            f"checkpoint {args.checkpoint} has conditioning {model.net.cond_kind!r}, "
            f"mode {args.mode} needs {expect!r}"
        )
    ck_src = model.extra.get("src_sensor")
    if ck_src and ck_src != src_spec.name:
        raise UserError(
            f"checkpoint was trained for source sensor {ck_src!r}, input is {src_spec.name!r}"
        )

    adapted = None
    if args.mode == "t2t":
        outputs = pipeline.t2t_translate(model, sources, seed=cfg.seed + 1)
    elif args.depth_input:
        depths = [s.depth for s in src_samples]
        masks = [s.mask for s in src_samples]
        adapted = []
        from .geometry import adapt_depth

        conds = []
        for d, m in zip(depths, masks):
            dt, mt = adapt_depth(d, m, src_spec, dst_spec)
            adapted.append((dt, mt))
        outputs = pipeline.d2t_translate(
            model, [a[0] for a in adapted], [a[1] for a in adapted], dst_spec, seed=cfg.seed + 1
        )
    else:
        if not args.depth_checkpoint:
            raise UserError("t2d2 mode needs --depth-checkpoint (or --depth-input)")
        depth_model = DepthNetModel.load(args.depth_checkpoint)
        if depth_model.sensor_name != src_spec.name:
            raise UserError(
                f"depth checkpoint is for sensor {depth_model.sensor_name!r}, "
                f"input is {src_spec.name!r}"
            )
        outputs, adapted = pipeline.t2d2_translate(
            depth_model, model, sources, src_spec, dst_spec, seed=cfg.seed + 1
        )

    os.makedirs(args.out, exist_ok=True)
    stats = BubbleNormStats.load(args.stats) if args.stats else None
    with open(os.path.join(args.out, "generated.bin"), "wb") as blob:
        import json

        manifest = open(os.path.join(args.out, "manifest.jsonl"), "w")
        for i, out in enumerate(outputs):
            rec = {"id": i, "generated": container.write_array(blob, np.asarray(out)[None])}
            if adapted is not None:
                rec["adapted_depth"] = container.write_array(blob, adapted[i][0].values)
                rec["adapted_mask"] = container.write_array(
                    blob, adapted[i][1].values.astype(np.float32)
                )
            if stats is not None:
                mm = postprocess_bubble(np.repeat(np.asarray(out)[None], 3, axis=0), stats)
                rec["depth_mm"] = container.write_array(blob, mm)
            manifest.write(json.dumps(rec, sort_keys=True) + "\n")
        manifest.close()
    log.info("wrote %d translated samples to %s", len(outputs), args.out)
    print(f"{len(outputs)} translated samples -> {args.out}")
    return 0


def cmd_eval(args):
    from . import pipeline
    from .depthnet import DepthNetModel
    from .generative import DenoiserModel
    from .vqvae import VqVaeModel

    cfg = _load_config(args)
    art = pipeline.BenchmarkArtifacts(args.workdir)
    for path in (art.depth_ckpt, art.t2t_ckpt, art.d2t_ckpt, art.vq_ckpt):
        if not os.path.exists(path):
            raise UserError(f"missing checkpoint {path}; run the train commands first")
    if not os.path.exists(art.grasps_dir):
        raise UserError(f"missing evaluation dataset {art.grasps_dir}")
    depth_model = DepthNetModel.load(art.depth_ckpt)
    t2t_model = DenoiserModel.load(art.t2t_ckpt)
    d2t_model = DenoiserModel.load(art.d2t_ckpt)
    vq_model = VqVaeModel.load(art.vq_ckpt)
    reports = pipeline.evaluate_benchmark(cfg, art, depth_model, t2t_model, d2t_model, vq_model)
    if not any(r.records for r in reports):
        raise UserError("evaluation produced no records (empty test set?)")
    table = pipeline.write_reports(reports, art)
    print(table)
    log.info("report: %s, table: %s, scatter: %s", art.report_json, art.table_txt, art.scatter_svg)
    return 0


def cmd_export(args):
    from . import container, pipeline
    from .imageio import write_pgm, write_ppm

    cfg = _load_config(args)
    reader = container.DatasetReader(args.data)
    matches = [r for r in reader.records if r["id"] == args.sample and (
        args.sensor is None or r["sensor"] == args.sensor)]
    if not matches:
        reader.close()
        raise UserError(f"sample id {args.sample!r} not found in {args.data}")
    rec = matches[0]
    tactile = reader.array(rec, "tactile")
    depth = reader.array(rec, "depth")
    reader.close()
    os.makedirs(args.out, exist_ok=True)
    base = os.path.join(args.out, f"{rec['id']}-{rec['sensor']}")
    if args.format == "pgm":
        out = base + ".pgm"
        write_pgm(out, depth.astype(np.float64))
    else:
        if tactile.shape[0] != 3:
            raise UserError(
                f"PPM export needs a 3-channel tactile image; {rec['sensor']} has "
                f"{tactile.shape[0]} channel(s) (use --format pgm)"
            )
        out = base + ".ppm"
        write_ppm(out, tactile)
    print(f"exported {out}")
    return 0


def cmd_verify(args):
    from . import container

    records, arrays = container.verify(args.data)
    print(f"container OK: {records} records, {arrays} arrays")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="crosstouch",
        description="Cross-sensor tactile translation: synthetic data, T2T/T2D2 diffusion, evaluation.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="RunConfig JSON path (defaults apply otherwise)")
        sp.add_argument("--seed", type=int, help="override config seed")

    sp = sub.add_parser("gen-data", help="render a paired synthetic dataset container")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--kind", choices=("train", "grasps", "tools"), default="train")
    sp.add_argument("--indenters", type=int, help="override indenter count")
    sp.add_argument("--samples", type=int, help="override samples per indenter")
    sp.set_defaults(func=cmd_gen_data)

    for name, kind in (
        ("train-depth", "depth"),
        ("train-t2t", "t2t"),
        ("train-d2t", "d2t"),
        ("train-vqvae", "vq"),
    ):
        sp = sub.add_parser(name, help=f"train the {kind} model")
        common(sp)
        sp.add_argument("--data", required=True, help="training dataset container")
        sp.add_argument("--out", required=True, help="checkpoint path")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--resume", help="checkpoint to continue from")
        sp.add_argument("--log", help="JSON-lines metrics log path")
        sp.set_defaults(func=lambda a, k=kind: _train_command(a, k))

    sp = sub.add_parser("translate", help="run a translation over a dataset container")
    common(sp)
    sp.add_argument("--mode", choices=("t2t", "t2d2"), required=True)
    sp.add_argument("--input", required=True, help="dataset container with source images")
    sp.add_argument("--checkpoint", required=True, help="denoiser checkpoint")
    sp.add_argument("--depth-checkpoint", help="depth estimator checkpoint (t2d2)")
    sp.add_argument("--depth-input", action="store_true",
                    help="t2d2 stage isolation: adapt ground-truth depth, skip the estimator")
    sp.add_argument("--stats", help="BubbleNormStats JSON for mm post-processing")
    sp.add_argument("--out", required=True)
    sp.add_argument("--limit", type=int, help="translate only the first N samples")
    sp.set_defaults(func=cmd_translate)

    sp = sub.add_parser("eval", help="evaluate all translators in a benchmark workdir")
    common(sp)
    sp.add_argument("--workdir", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("export", help="export a sample as PGM/PPM for viewing")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--sample", required=True, help="sample id from the manifest")
    sp.add_argument("--sensor", help="sensor name when the id is paired")
    sp.add_argument("--format", choices=("pgm", "ppm"), required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("verify", help="walk a container's offsets and validate every blob")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    from .depthnet import TrainingDiverged
    from .nn import NumericsError

    try:
        return args.func(args)
    except UserError as e:
        log.error("%s", e)
        return EXIT_USER
    except (FileNotFoundError, ValueError) as e:
        log.error("%s", e)
        return EXIT_USER
    except (TrainingDiverged, NumericsError, AssertionError) as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
