"""Command-line entry point: ``subitize <command> [options]``.

Errors print one JSON line on stderr, ``{"error": <kind>, "exit": <code>, "message": ...}``,
and exit with a code that depends on the kind of failure (see EXIT_CODES).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, data, detect, evaluate, featviz, imaging, retrieval, synth, toybench, toylib
from .config import ConfigError, PipelineConfig, load_config
from .nnet import model as nnmodel
from .nnet import training as nntrain
from .nnet.gradcheck import flip_sign, gradient_check

log = logging.getLogger("subitize")

EXIT_CODES = {
    "ok": 0,
    "check_failed": 1,
    "usage": 2,
    "missing_file": 3,
    "schema": 4,
    "config": 5,
    "runtime": 6,
}


class CliError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _require(path):
    p = Path(path)
    if not p.exists():
        raise CliError("missing_file", f"no such file: {p}")
    return p


def _config(args) -> PipelineConfig:
    cfg = load_config(_require(args.config)) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides({"seed": args.seed})
    return cfg


def _out_dir(args, default=None):
    if args.out is None and default is None:
        raise CliError("usage", "--out is required")
    p = Path(args.out if args.out is not None else default)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _record_config(cfg: PipelineConfig, out, extra=None):
    """Resolved config next to the output: inside a directory, or beside a file."""
    out = Path(out)
    text = cfg.dumps()
    for k, v in (extra or {}).items():
        text += f"# {k} = {v}\n"
    target = out / "config.txt" if out.is_dir() else out.with_name(out.name + ".config.txt")
    target.write_text(text)
    return target


def _load_set(path, spec):
    return nntrain.load_image_set(data.read_manifest(_require(path)), spec)


def _load_model(path):
    return nnmodel.load_checkpoint(_require(path))


# ------------------------------------------------------------------ commands

def cmd_consolidate(args, cfg):
    recs = data.read_annotations(_require(args.annotations))
    kept, excluded = data.consolidate_annotations(recs)
    root = Path(args.image_root) if args.image_root else None
    manifest = data.DatasetManifest(
        data.ManifestEntry(str(root / i) if root else i, label) for i, label in kept)
    out = Path(args.out or "manifest.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    data.write_manifest(manifest, out)
    with open(out.with_name(out.stem + ".excluded.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id"])
        w.writerows([i] for i in excluded)
    _record_config(cfg, out)
    print(f"kept={len(kept)} excluded={len(excluded)}")


def cmd_split(args, cfg):
    manifest = data.read_manifest(_require(args.data), resolve=False)
    spec = data.SplitSpec(args.train_fraction, cfg.seed)
    train, test = data.split_dataset(manifest, spec)
    out = _out_dir(args)
    data.write_split(train, test, spec, out)
    _record_config(cfg, out)
    print(f"train={len(train)} test={len(test)}")


def cmd_toylib(args, cfg):
    lib = toylib.build_library(cfg.seed, args.cutouts, args.backgrounds, args.style,
                               args.bad_cutouts, args.bad_backgrounds)
    out = _out_dir(args)
    toylib.write_library(lib, out)
    _record_config(cfg, out)
    print(f"cutouts={len(lib.cutouts)} backgrounds={len(lib.backgrounds)}")


def cmd_synth(args, cfg):
    lib = synth.load_library(_require(args.lib))
    lib = synth.filter_library(lib, args.min_score)
    for w in lib.warnings:
        log.warning(w)
    out = _out_dir(args)
    res = synth.generate_corpus(lib, cfg.synth, args.per_class, cfg.seed,
                                include_backgrounds=not args.no_backgrounds, out_dir=out)
    _record_config(cfg, out)
    print(f"images={len(res.manifest)} shortfall={json.dumps(res.shortfall, sort_keys=True)}")


def _train_cfg(cfg, base, iters):
    tc = replace(base, seed=cfg.seed)
    return replace(tc, total_iters=iters) if iters is not None else tc


def _curve_path(model_path, suffix):
    p = Path(model_path)
    return p.with_name(p.stem + suffix)


def cmd_train(args, cfg):
    spec = nnmodel.SubitNetSpec()
    init = _load_model(args.init) if args.init else None
    if init is not None:
        spec = init.spec
    tc = _train_cfg(cfg, cfg.train, args.iters)
    if args.freeze_features:
        if init is None:
            raise CliError("usage", "--freeze-features needs --init")
        tc = nntrain.frozen_config(tc)
    if init is not None:
        init = init.copy()
        init.reset_momentum()
        init.iteration = 0
    dataset = _load_set(args.data, spec)
    state, curve = nntrain.train(dataset, spec, tc, init)
    out = Path(args.out or "model.subt")
    out.parent.mkdir(parents=True, exist_ok=True)
    nnmodel.save_checkpoint(state, out)
    nntrain.write_loss_curve(curve, _curve_path(out, ".loss.csv"))
    _record_config(replace(cfg, train=tc), out)
    print(f"iterations={state.iteration} final_loss={curve[-1][1]:.6f}" if curve else "iterations=0")


def cmd_two_stage(args, cfg):
    spec = nnmodel.SubitNetSpec()
    c1 = _train_cfg(cfg, cfg.train, args.iters1)
    c2 = _train_cfg(cfg, cfg.stage2, args.iters2)
    syn = _load_set(args.synth, spec)
    real = _load_set(args.real, spec)
    init = _load_model(args.init) if args.init else None
    state, (curve1, curve2) = nntrain.two_stage_finetune(syn, real, spec, c1, c2, init)
    out = Path(args.out or "model.subt")
    out.parent.mkdir(parents=True, exist_ok=True)
    nnmodel.save_checkpoint(state, out)
    nntrain.write_loss_curve(curve1, _curve_path(out, ".stage1.loss.csv"))
    nntrain.write_loss_curve(curve2, _curve_path(out, ".stage2.loss.csv"))
    _record_config(replace(cfg, train=c1, stage2=c2), out)
    print(f"stage1_iterations={c1.total_iters} stage2_iterations={c2.total_iters}")


def cmd_evaluate(args, cfg):
    state = _load_model(args.model)
    ds = _load_set(args.data, state.spec)
    scores = nntrain.predict_batch(state, ds.images)
    aps, mean_ap = evaluate.map_per_class(scores, ds.labels)
    cm = evaluate.confusion(scores, ds.labels)
    chance, chance_mean = evaluate.chance_baseline(ds.labels, cfg.eval.chance_trials, cfg.seed)
    out = _out_dir(args)
    evaluate.write_report(out, aps, mean_ap, cm, {"accuracy": f"{cm.accuracy:.6f}",
                                                  "chance_mean": f"{chance_mean:.6f}"})
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_path", "label"] + [f"p{c}" for c in ("0", "1", "2", "3", "4+")])
        for p, y, s in zip(ds.paths, ds.labels, scores):
            w.writerow([Path(p).name, int(y)] + [f"{v:.6f}" for v in s])
    _record_config(cfg, out)
    print(f"mAP={mean_ap:.6f} accuracy={cm.accuracy:.6f} chance_mAP={chance_mean:.6f}")


def _feature_maps(state, ds):
    x = nntrain.center_crop(ds.images, state.spec.input_size)
    return np.concatenate([nnmodel.features(state, x[i:i + 256]) for i in range(0, len(x), 256)])


def cmd_featviz(args, cfg):
    model = _load_model(args.model)
    ref = _load_model(args.reference)
    ds = _load_set(args.data, model.spec)
    ids = tuple(Path(p).name for p in ds.paths)
    fm = _feature_maps(model, ds)
    scores = featviz.novelty_scores(featviz.channel_rankings(fm, ids),
                                    featviz.channel_rankings(_feature_maps(ref, ds), ids))
    chosen = featviz.select_novel(scores, cfg.eval.novelty_threshold)
    out = _out_dir(args)
    featviz.write_scores(scores, out / "scores.csv")
    counts, edges = featviz.score_histogram(scores)
    featviz.write_histogram(counts, edges, out / "histogram.csv")
    shown = nntrain.denormalize(nntrain.center_crop(ds.images, model.spec.input_size))
    for c in chosen:
        patches = featviz.top_patches(c, fm, shown, cfg.eval.top_patches, cfg.eval.patch_fraction)
        imaging.save_image(featviz.montage([p for _, p, _ in patches]), out / f"channel_{c:03d}.png")
    _record_config(cfg, out)
    print(f"channels={len(scores)} novel={len(chosen)}")


def cmd_cue(args, cfg):
    images = detect.read_detections(_require(args.detections))
    counts = detect.read_counts(_require(args.counts))
    missing = [im.image_id for im in images if im.image_id not in counts]
    if missing:
        raise CliError("schema", f"no count for image {missing[0]!r} ({len(missing)} missing)")
    selected = detect.cue_all(images, counts)
    out = Path(args.out or "selected.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    detect.write_detections(selected, out)
    p = detect.match_and_score(selected, cfg.eval.iou_threshold)
    _record_config(cfg, out)
    print(f"precision={p.precision:.6f} recall={p.recall:.6f} f_measure={p.f_measure:.6f}")


def cmd_detscore(args, cfg):
    images = detect.read_detections(_require(args.detections))
    curve, best = detect.sweep_threshold(images, detect.candidate_thresholds(images),
                                         cfg.eval.iou_threshold)
    out = Path(args.out or "pr.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    detect.write_pr_curve(curve, best, out)
    _record_config(cfg, out)
    print(f"best_threshold={best.threshold:.6g} precision={best.precision:.6f} "
          f"recall={best.recall:.6f} f_measure={best.f_measure:.6f}")


def _attach_sos(index, model_path, manifest_path):
    """SOS scores for index items from a model, matching item ids to image file stems."""
    state = _load_model(model_path)
    ds = _load_set(manifest_path, state.spec)
    by_id = {Path(p).stem: i for i, p in enumerate(ds.paths)}
    missing = [i for i in index.ids if i not in by_id]
    if missing:
        raise CliError("schema", f"index item {missing[0]!r} has no image in {manifest_path}")
    scores = nntrain.predict_batch(state, ds.images[[by_id[i] for i in index.ids]])
    return retrieval.EmbeddingIndex(index.ids, index.vectors, index.tags, scores)


def cmd_retrieve(args, cfg):
    index = retrieval.read_index(_require(args.index))
    if args.model:
        if not args.data:
            raise CliError("usage", "--model needs --data (manifest of the indexed images)")
        index = _attach_sos(index, args.model, args.data)
    hits = retrieval.retrieve(index, args.query, args.method, cfg.eval.knn_k, args.top)
    for rank, (item, s) in enumerate(hits, 1):
        print(f"{rank},{item},{s:.6f}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "item_id", "score"])
            for rank, (item, s) in enumerate(hits, 1):
                w.writerow([rank, item, f"{s:.6f}"])
        _record_config(cfg, out)


def cmd_retbench(args, cfg):
    index = retrieval.read_index(_require(args.index))
    if args.model:
        if not args.data:
            raise CliError("usage", "--model needs --data (manifest of the indexed images)")
        index = _attach_sos(index, args.model, args.data)
    judgments = retrieval.read_judgments(_require(args.judgments))
    tags = sorted({q.split(None, 1)[1] for q, _ in judgments})
    methods = args.methods.split(",")
    if "sos" in methods and index.sos is None:
        methods.remove("sos")
        log.warning("index has no subitizing scores; skipping the sos method")
    results = [retrieval.run_benchmark(index, tags, m, judgments, cfg.eval.knn_k, cfg.eval.ndcg_h)
               for m in methods]
    out = Path(args.out or "ndcg.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    retrieval.write_benchmark(results, out)
    _record_config(cfg, out)
    print(" ".join(f"{r.method}={r.overall:.6f}" for r in results))


def cmd_toybench(args, cfg):
    corpus = _require(args.corpus)
    lib = synth.load_library(_require(args.lib))
    records = toybench.read_provenance(corpus)
    out = _out_dir(args)
    dets = toybench.make_detection_set(records, cfg.synth.canvas_size, cfg.seed)
    detect.write_detections(dets, out / "detections.jsonl")
    with open(out / "counts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "count"])
        for rec in records:
            w.writerow([toybench.record_id(rec), int(rec["label"])])
    index, judgments, _ = toybench.make_retrieval_index(records, lib.tags, cfg.seed)
    retrieval.write_index(index, out / "index.bin")
    retrieval.write_judgments(judgments, out / "judgments.csv")
    _record_config(cfg, out)
    print(f"images={len(records)} judgments={len(judgments)}")


def cmd_gradcheck(args, cfg):
    tol = args.tolerance if args.tolerance is not None else cfg.eval.gradcheck_tolerance
    rep = gradient_check(tolerance=tol, seed=cfg.seed, eps=cfg.eval.gradcheck_eps,
                         corrupt=flip_sign if args.flip_sign else None)
    print(rep.summary())
    return EXIT_CODES["ok"] if rep.passed else EXIT_CODES["check_failed"]


# ------------------------------------------------------------------ parser

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--config", default=None, help="key = value configuration file")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="subitize", description="Salient object subitizing toolkit.", parents=[common])
    p.add_argument("--version", action="version", version=f"subitize {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("consolidate", cmd_consolidate, "5-vote annotations to a labelled manifest")
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--image-root", default=None)

    sp = add("split", cmd_split, "seeded train/test split of a manifest")
    sp.add_argument("--data", required=True)
    sp.add_argument("--train-fraction", type=float, default=0.8)

    sp = add("toy-library", cmd_toylib, "procedural cutout/background library")
    sp.add_argument("--cutouts", type=int, default=40)
    sp.add_argument("--backgrounds", type=int, default=600)
    sp.add_argument("--style", choices=("A", "B"), default="A")
    sp.add_argument("--bad-cutouts", type=int, default=0)
    sp.add_argument("--bad-backgrounds", type=int, default=0)

    sp = add("synth", cmd_synth, "generate a labelled composite corpus")
    sp.add_argument("--lib", required=True)
    sp.add_argument("--per-class", type=int, required=True)
    sp.add_argument("--no-backgrounds", action="store_true")
    sp.add_argument("--min-score", type=float, default=0.95)

    sp = add("train", cmd_train, "train SubitNet")
    sp.add_argument("--data", required=True)
    sp.add_argument("--iters", type=int, default=None)
    sp.add_argument("--init", default=None)
    sp.add_argument("--freeze-features", action="store_true")

    sp = add("two-stage", cmd_two_stage, "synthetic pre-training then real fine-tuning")
    sp.add_argument("--synth", required=True)
    sp.add_argument("--real", required=True)
    sp.add_argument("--iters1", type=int, default=None)
    sp.add_argument("--iters2", type=int, default=None)
    sp.add_argument("--init", default=None)

    sp = add("evaluate", cmd_evaluate, "AP, mAP, confusion and chance baseline")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)

    sp = add("featviz", cmd_featviz, "novel channels against a reference model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--data", required=True)

    sp = add("cue", cmd_cue, "keep the top-n windows per image")
    sp.add_argument("--detections", required=True)
    sp.add_argument("--counts", required=True)

    sp = add("detscore", cmd_detscore, "fixed-threshold PR sweep")
    sp.add_argument("--detections", required=True)

    sp = add("retrieve", cmd_retrieve, "rank index items for a number-object query")
    sp.add_argument("--index", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--method", choices=retrieval.METHODS, default="sos")
    sp.add_argument("--model", default=None)
    sp.add_argument("--data", default=None, help="manifest of the indexed images (with --model)")
    sp.add_argument("--top", type=int, default=20)

    sp = add("retbench", cmd_retbench, "nDCG@h per query, group and method")
    sp.add_argument("--index", required=True)
    sp.add_argument("--judgments", required=True)
    sp.add_argument("--methods", default="baseline,text,sos")
    sp.add_argument("--model", default=None)
    sp.add_argument("--data", default=None)

    sp = add("toybench", cmd_toybench, "detection set and retrieval index from a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--lib", required=True)

    sp = add("gradcheck", cmd_gradcheck, "finite-difference gradient check")
    sp.add_argument("--tolerance", type=float, default=None)
    sp.add_argument("--flip-sign", action="store_true", help="corrupt the backward pass on purpose")
    return p


def _fail(kind, message):
    code = EXIT_CODES[kind]
    msg = " ".join(str(message).split())
    print(json.dumps({"error": kind, "exit": code, "message": msg}), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        return _fail(exc.kind, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            rc = args.func(args, cfg)
        return EXIT_CODES["ok"] if rc is None else rc
    except CliError as exc:
        return _fail(exc.kind, exc)
    except ConfigError as exc:
        return _fail("config", exc)
    except FileNotFoundError as exc:
        return _fail("missing_file", exc)
    except (data.ManifestError, retrieval.IndexFormatError, nnmodel.CheckpointError,
            imaging.ImageDecodeError, imaging.UnsupportedFormatError, KeyError, json.JSONDecodeError) as exc:
        return _fail("schema", exc)
    except ValueError as exc:
        return _fail("runtime", exc)


if __name__ == "__main__":
    sys.exit(main())
