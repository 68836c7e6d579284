"""Command-line surface: reproducible corpus builds, curve fitting, prior
extraction, two-stage training, restoration, and evaluation, all driven
by one TOML config plus a single global seed.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import degrade, huecorr, lumen, metrics
from .config import RunConfig, config_hash, load_run_config
from .corpus import build_training_corpus, load_lab, load_manifest
from .errors import ConfigError, ManifestError, PrevivorError
from .imagecore import DomainTag, load_png, luminance_8bit, rgb_to_lab, save_png
from .nnet.checkpoint import save_checkpoint
from .prior import (
    PriorMask,
    background_mask,
    compute_prior_mask,
    estimate_silk_color,
    extract_color_prior,
    filter_silk_candidates,
)


def _write_jsonl(path: Path, entries: list[dict], append: bool = False) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "a" if append else "w"
    with open(path, mode) as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _write_run_meta(out_dir: Path, cfg: RunConfig, extra: dict | None = None) -> None:
    meta = {"seed": cfg.seed, "config_hash": config_hash(cfg)}
    meta.update(extra or {})
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


# ---- commands ----------------------------------------------------------------


def cmd_make_corpus(args) -> int:
    cfg = load_run_config(args.config, seed_override=args.seed)
    n = args.n if args.n is not None else cfg.corpus.n_images
    manifest = build_training_corpus(
        cfg.corpus.synth,
        n,
        cfg.lumen.degradation,
        args.out,
        seed=cfg.seed,
        heldout_fraction=cfg.corpus.heldout_fraction,
    )
    _write_run_meta(Path(args.out), cfg, {"n_images": n, "entries": len(manifest.entries)})
    print(f"wrote {len(manifest.entries)} entries under {args.out}")
    return 0


def cmd_fit_curve(args) -> int:
    manifest = load_manifest(args.pairs)
    pairs = manifest.pairs()
    if not pairs:
        raise ManifestError(f"manifest {args.pairs} contains no degraded/clean pairs")
    planes = []
    for degraded_e, clean_e in pairs:
        degraded = luminance_8bit(load_lab(manifest, degraded_e), DomainTag.REAL_DEGRADED)
        clean = luminance_8bit(load_lab(manifest, clean_e), DomainTag.NON_DEGRADED)
        planes.append((degraded, clean))
    curve = degrade.fit_empirical_curve(planes, bins=args.bins)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    curve.save(args.out)
    print(f"fitted {args.bins}-bin curve from {len(planes)} pairs -> {args.out}")
    return 0


def cmd_extract_prior(args) -> int:
    cfg = load_run_config(args.config, seed_override=args.seed)
    img = rgb_to_lab(load_png(args.image))
    external = PriorMask.load(args.bg_mask) if args.bg_mask else None
    bg = background_mask(img, cfg.prior, external)
    candidates = filter_silk_candidates(img, bg, cfg.prior)
    silk = estimate_silk_color(img, candidates, cfg.prior)  # raises on failure
    mask = compute_prior_mask(img, silk.c_silk, cfg.prior.tau)
    mask.save(args.out_mask)
    Path(args.out_silk).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out_silk).write_text(silk.to_json())
    print(
        f"silk=({silk.c_silk[0]:.2f}, {silk.c_silk[1]:.2f}) "
        f"support={silk.support_fraction:.3f} mask_fraction={mask.mask.mean():.3f}"
    )
    return 0


def _load_final(path: Path, module) -> None:
    from .nnet.checkpoint import load_checkpoint

    arrays, _ = load_checkpoint(path)
    module.load_state_arrays(arrays)


def cmd_train_lumen(args) -> int:
    cfg = load_run_config(args.config, seed_override=args.seed)
    manifest = load_manifest(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lcfg = cfg.lumen
    run_hash = config_hash(cfg)

    def component(name, train_fn, build_fn):
        final = out / f"{name}_final.ckpt"
        state = out / f"state_{name}.ckpt"
        log_path = out / f"lumen_{name}.jsonl"
        if args.resume and final.exists():
            module = build_fn()
            _load_final(final, module)
            print(f"{name}: already complete, loaded {final.name}")
            return module
        resume_from = state if (args.resume and state.exists()) else None
        result = train_fn(resume_from)
        module, log = result
        _write_jsonl(log_path, log, append=resume_from is not None)
        save_checkpoint(
            final, module.state_arrays(), header={"kind": f"{name}_final", "config_hash": run_hash}
        )
        print(f"{name}: trained {len(log)} iterations -> {final.name}")
        return module

    shared = component(
        "vae_shared",
        lambda res: _first_and_log(lumen.train_vae_shared(lcfg, manifest, out, resume_from=res)),
        lambda: lumen.Vae(lcfg, lumen.SHARED_DOMAIN, np.random.default_rng(lcfg.seed)),
    )
    nd = component(
        "vae_nd",
        lambda res: _first_and_log(lumen.train_vae_nd(lcfg, manifest, out, resume_from=res)),
        lambda: lumen.Vae(lcfg, lumen.ND_DOMAIN, np.random.default_rng(lcfg.seed)),
    )
    lumen.freeze(shared)
    lumen.freeze(nd)
    mapping = component(
        "mapping",
        lambda res: _first_and_log(
            lumen.train_mapping(lcfg, manifest, shared, nd, out, resume_from=res)
        ),
        lambda: lumen.MappingNetwork(lcfg, np.random.default_rng(lcfg.seed)),
    )
    bundle = lumen.LumenBundle(shared=shared, nd=nd, mapping=mapping, config=lcfg)
    lumen.save_lumen_bundle(out / "lumen.ckpt", bundle, config_hash=run_hash)
    _write_run_meta(out, cfg, {"stage": "lumen"})
    print(f"luminance bundle -> {out / 'lumen.ckpt'}")
    return 0


def _first_and_log(result):
    # trainers return (module, *discriminators, log)
    return result[0], result[-1]


def cmd_train_hue(args) -> int:
    cfg = load_run_config(args.config, seed_override=args.seed)
    manifest = load_manifest(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = out / "state_hue.ckpt"
    resume_from = state if (args.resume and state.exists()) else None
    net, _, log = huecorr.train_hue(cfg.hue, manifest, out, resume_from=resume_from)
    _write_jsonl(out / "hue.jsonl", log, append=resume_from is not None)
    bundle = huecorr.HueBundle(net=net, config=cfg.hue)
    huecorr.save_hue_bundle(out / "hue.ckpt", bundle, config_hash=config_hash(cfg))
    _write_run_meta(out, cfg, {"stage": "hue"})
    print(f"hue bundle -> {out / 'hue.ckpt'} ({len(log)} iterations)")
    return 0


def cmd_restore(args) -> int:
    cfg = load_run_config(args.config, seed_override=args.seed)
    lumen_bundle = lumen.load_lumen_bundle(args.lumen_ckpt)
    hue_bundle = huecorr.load_hue_bundle(args.hue_ckpt)
    img = rgb_to_lab(load_png(args.image))

    t0 = time.perf_counter()
    result = huecorr.restore_painting(img, lumen_bundle, hue_bundle, cfg.prior)
    elapsed = time.perf_counter() - t0

    out = Path(args.out)
    save_png(result.rgb, out)
    side = {
        "input": str(args.image),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "silk": {
            "a": result.silk.c_silk[0],
            "b": result.silk.c_silk[1],
            "support_fraction": result.silk.support_fraction,
            "found": result.silk_found,
        },
        "mask_fraction": result.mask_fraction,
        "timings_seconds": {"total": elapsed},
    }
    out.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    print(f"restored -> {out}")
    return 0


def _collect_images(spec: str) -> list[tuple[str, Path]]:
    """(stem, path) pairs from a directory of PNGs or a manifest.

    Manifest paths may carry filters: manifest.jsonl:role=non_degraded or
    :split=heldout (comma-separated).
    """
    filters = {}
    path_part = spec
    if ":" in spec and not Path(spec).exists():
        path_part, _, filter_part = spec.partition(":")
        for clause in filter_part.split(","):
            key, _, value = clause.partition("=")
            if key not in ("role", "split") or not value:
                raise ConfigError(f"bad manifest filter {clause!r} in {spec!r}")
            filters[key] = value
    path = Path(path_part)
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise ManifestError(f"no PNG files in {path}")
        return [(f.stem, f) for f in files]
    if path.suffix == ".jsonl":
        manifest = load_manifest(path)
        entries = manifest.entries
        if "role" in filters:
            entries = [e for e in entries if e.role == filters["role"]]
        if "split" in filters:
            entries = [e for e in entries if e.split == filters["split"]]
        if not entries:
            raise ManifestError(f"no entries match {spec}")
        return [(Path(e.path).stem, manifest.resolve(e)) for e in entries]
    raise ConfigError(f"--pred/--ref must be a directory or a .jsonl manifest: {spec}")


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config, seed_override=args.seed)
    pred = _collect_images(args.pred)
    ref = _collect_images(args.ref)
    spec = cfg.evaluate.feature_spec()
    mask_policy = args.mask_policy or cfg.evaluate.mask_policy

    if args.mode == "paired":
        pred_names = [n for n, _ in pred]
        ref_names = [n for n, _ in ref]
        if pred_names != ref_names:
            raise ManifestError(
                f"paired evaluation misaligned: {len(pred_names)} pred vs "
                f"{len(ref_names)} ref; first difference at "
                f"{_first_diff(pred_names, ref_names)!r}"
            )
        pred_imgs = [(n, load_png(p)) for n, p in pred]
        ref_imgs = [(n, load_png(p)) for n, p in ref]
        mask_for = None
        if mask_policy == "prior_mask":
            mask_for = {
                n: extract_color_prior(rgb_to_lab(img), cfg.prior).mask for n, img in ref_imgs
            }
        report = metrics.evaluate_paired(pred_imgs, ref_imgs, mask_for=mask_for, feature_spec=spec)
    else:
        pred_imgs = [load_png(p) for _, p in pred]
        ref_imgs = [load_png(p) for _, p in ref]
        masks_pred = masks_ref = None
        if mask_policy == "prior_mask":
            masks_pred = [extract_color_prior(rgb_to_lab(i), cfg.prior).mask for i in pred_imgs]
            masks_ref = [extract_color_prior(rgb_to_lab(i), cfg.prior).mask for i in ref_imgs]
        report = metrics.evaluate_unpaired(
            pred_imgs, ref_imgs, spec, masks_pred=masks_pred, masks_ref=masks_ref
        )
    report.config_hash = config_hash(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out, out.with_suffix(".txt"))
    print(report.to_table())
    return 0


def _first_diff(a: list[str], b: list[str]) -> str:
    for x, y in zip(a, b):
        if x != y:
            return f"{x} vs {y}"
    return "length mismatch"


# ---- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="previvor",
        description="Two-stage color restoration for degraded paintings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")

    p = sub.add_parser("make-corpus", help="generate a synthetic paired corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None, help="number of paintings")
    p.set_defaults(fn=cmd_make_corpus)

    p = sub.add_parser("fit-curve", help="fit an empirical degradation curve from pairs")
    p.add_argument("--pairs", required=True, help="manifest with degraded/clean pairs")
    p.add_argument("--bins", type=int, default=degrade.DEFAULT_BINS)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fit_curve)

    p = sub.add_parser("extract-prior", help="extract the silk color prior of one image")
    common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-silk", required=True)
    p.add_argument("--bg-mask", default=None, help="external background mask PNG")
    p.set_defaults(fn=cmd_extract_prior)

    p = sub.add_parser("train-lumen", help="train the luminance enhancement stage")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true", help="continue from saved state")
    p.set_defaults(fn=cmd_train_lumen)

    p = sub.add_parser("train-hue", help="train the hue correction stage")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true", help="continue from saved state")
    p.set_defaults(fn=cmd_train_hue)

    p = sub.add_parser("restore", help="restore one degraded painting")
    common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--lumen-ckpt", required=True)
    p.add_argument("--hue-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_restore)

    p = sub.add_parser("evaluate", help="compute metrics over prediction/reference sets")
    common(p)
    p.add_argument("--pred", required=True, help="directory or manifest (see README)")
    p.add_argument("--ref", required=True)
    p.add_argument("--mode", choices=("paired", "unpaired"), required=True)
    p.add_argument("--mask-policy", choices=("none", "prior_mask"), default=None)
    p.add_argument("--out", required=True, help="report path (.json; .txt written beside)")
    p.set_defaults(fn=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PrevivorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
