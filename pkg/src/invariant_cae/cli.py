"""Command-line entry point: ``invariant-cae <command> [--key value ...]``.

Every setting is a flat key; flags use dashes (``--learning-rate``), config
files use the key itself (``learning_rate=0.001``).  Flags override the
config file, which overrides the defaults.

Exit codes: 0 success, 1 threshold or numeric failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from invariant_cae import experiments, plotting
from invariant_cae.alignment import GroundTruthMap, evaluate_alignment, fastdtw, tempo_scale
from invariant_cae.basis import ComplexBasis, grid_dft_basis, magnitude_features, phase_difference, polar_encode, project
from invariant_cae.classify import ClassifierSpec, cross_validate, pca_2d
from invariant_cae.config import RunConfig
from invariant_cae.data_io import (
    FeatureMatrix,
    load_feature_matrix,
    load_idx,
    ngram_slice,
    save_feature_matrix,
    standardize,
    synth_cqt_like,
    synth_signals,
)
from invariant_cae.discovery import discover
from invariant_cae.errors import CaeError, NumericError, ValidationError
from invariant_cae.model import TrainConfig, train
from invariant_cae.transforms import PairSampler, TransformSpec, pitch_shift, rotate_images

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

COMMON = {"out": "out", "seed": 0, "threads": 0}

TRAIN = {
    "input": "",
    "labels": "",
    "data": "auto",
    "ngram_size": 8,
    "ngram_hop": 1,
    "standardize": "auto",
    "transform": "auto",
    "transform_low": "auto",
    "transform_high": "auto",
    "pair_scheme": "double",
    "n_basis": 256,
    "p_norm": 1,
    "learning_rate": 1e-3,
    "batch_size": 1000,
    "epochs": 500,
    "transforms_per_epoch": 100_000,
    "dropout_p": 0.5,
    "norm_mode": "none",
    "lambda_mean": 1e-2,
    "lambda_dev": 1e-2,
    "target_norm": 0.4,
    "optimizer": "adam",
}

PROJECT = {"input": "", "model": "", "ngram_size": 0, "ngram_hop": 1}

DISCOVER = {
    "input": "",
    "model": "",
    "ngram_size": 0,
    "ngram_hop": 1,
    "kernel": 10,
    "threshold": 0.01,
    "min_length": 10,
    "max_gap": 2,
    "matrix_format": "ftm",
}

ALIGN = {
    "perf": "",
    "score": "",
    "model": "",
    "ngram_size": 0,
    "radius": 50,
    "tempo_factor": 1.0,
    "transpose": 0,
    "gt": "",
    "distance": "cosine",
    "space": "magnitude",
    "min_rate": -1.0,
}

CLASSIFY = {
    "images": "",
    "labels": "",
    "model": "",
    "space": "magnitude",
    "rotate": True,
    "classifier": "logreg",
    "k": 5,
    "l2": 1e-4,
    "logreg_epochs": 500,
    "logreg_lr": 0.1,
    "train_size": 1000,
    "folds": 5,
    "test_size": 2000,
    "test_images": "",
    "test_labels": "",
    "pca_points": 1000,
    "max_error": -1.0,
}

CHECK_GRAD = {
    "instances": 20,
    "n_input": 12,
    "n_basis": 8,
    "batch": 4,
    "p_norm": 2,
    "step": 1e-5,
    "tol": 1e-4,
    "inject_wrong_sign": False,
}

SYNTH = {
    "kind": "cqt",
    "frames": 320,
    "bins": 120,
    "events": 70,
    "plant": "",
    "samples": 5000,
    "length": 32,
    "format": "ftm",
}

COMMANDS = {
    "train": (TRAIN, "train a complex autoencoder on transform pairs"),
    "project": (PROJECT, "write magnitude and phase features of n-grams"),
    "discover": (DISCOVER, "find repeated sections in a feature sequence"),
    "align": (ALIGN, "align a performance to a score with FastDTW"),
    "classify": (CLASSIFY, "cross-validated classification of rotated digits"),
    "check-grad": (CHECK_GRAD, "finite-difference check of the analytic gradients"),
    "synth": (SYNTH, "write synthetic feature matrices or signals"),
}

# keys whose argparse flag takes no value
_SWITCHES = {"inject_wrong_sign"}
_HIDDEN = {"inject_wrong_sign"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="invariant-cae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (keys, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file")
        for key, default in {**COMMON, **keys}.items():
            flag = "--" + key.replace("_", "-")
            if key in _SWITCHES:
                p.add_argument(flag, dest=key, action="store_const", const="true", default=None, help=argparse.SUPPRESS)
                continue
            shown = argparse.SUPPRESS if key in _HIDDEN else f"default: {default!r}"
            p.add_argument(flag, dest=key, default=None, metavar=key.upper(), help=shown)
    return parser


def _require(cfg, *keys):
    for key in keys:
        if not cfg[key]:
            raise ValidationError(f"missing required setting --{key.replace('_', '-')}")


def _existing(path) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fmt(x) -> str:
    return repr(float(x))


def _load_model(spec: str, n_bins: int, ngram_size: int):
    """Load a ``CAE1`` file, or build the analytic frequency-axis DFT basis for ``dft``.

    Returns the basis and the n-gram size it implies for ``n_bins`` columns.
    """
    if spec == "dft":
        if ngram_size <= 0:
            raise ValidationError("model 'dft' needs --ngram-size")
        return grid_dft_basis(ngram_size, n_bins, "freq", onesided=True), ngram_size
    basis = ComplexBasis.load(_existing(spec))
    n = basis.n_input
    if ngram_size > 0:
        if ngram_size * n_bins != n:
            raise ValidationError(
                f"model input dimension N={n} does not match feature dimension "
                f"{ngram_size} x {n_bins} = {ngram_size * n_bins}"
            )
        return basis, ngram_size
    if n % n_bins:
        raise ValidationError(f"model input dimension N={n} is not a multiple of the feature dimension F={n_bins}")
    return basis, n // n_bins


def _ngram_features(basis, values, ngram_size, hop=1):
    X = basis.standardize_input(ngram_slice(values, ngram_size, hop))
    return X


# ------------------------------------------------------------------ train


def _training_data(cfg):
    """Return ``(dataset, transform spec, mean, std)`` with data standardised."""
    path = _existing(cfg["input"])
    kind = cfg["data"]
    if kind == "auto":
        name = Path(path).name.lower()
        kind = "images" if ("idx" in name or name.endswith(".gz")) else "features"
    if kind == "images":
        labels = cfg["labels"] or None
        if labels is None:
            raise ValidationError("image training needs --labels (IDX label file)")
        data = load_idx(path, _existing(labels)).images
    elif kind in ("features", "signals"):
        fm = load_feature_matrix(path)
        data = fm.values
    else:
        raise ValidationError(f"unknown data kind {kind!r}")

    default_kind = {"images": "rotate_2d", "features": "pitch_shift", "signals": "circular_shift_1d"}[kind]
    tkind = default_kind if cfg["transform"] == "auto" else cfg["transform"]
    mode = cfg["standardize"]
    if mode == "auto":
        mode = "column" if kind == "features" else "scalar"

    if kind == "features":
        n = cfg["ngram_size"]
        frames = data
        if mode == "column":
            frames, stats = standardize(frames)
            mean, std = np.tile(stats.mean, n), np.tile(stats.std, n)
        elif mode == "scalar":
            mu, sd = float(frames.mean()), max(float(frames.std()), 1e-8)
            frames = (frames - mu) / sd
            mean, std = np.full(n * data.shape[1], mu), np.full(n * data.shape[1], sd)
        else:
            mean = std = None
        X = ngram_slice(frames, n, cfg["ngram_hop"])
        grid = (n, data.shape[1])
        dataset = X.reshape((-1,) + grid)
    else:
        grid = data.shape[1:]
        flat = data.reshape(data.shape[0], -1)
        if mode == "scalar":
            mu, sd = float(flat.mean()), max(float(flat.std()), 1e-8)
        elif mode == "none":
            mu, sd = 0.0, 1.0
        else:
            raise ValidationError(f"standardize={mode!r} is only available for feature matrices")
        dataset = (data - mu) / sd
        mean, std = np.full(flat.shape[1], mu), np.full(flat.shape[1], sd)

    defaults = {
        "rotate_2d": (0.0, 2 * math.pi),
        "pitch_shift": (-12, 12),
        "time_shift": (-(grid[0] // 2), grid[0] // 2),
        "circular_shift_1d": (0, int(np.prod(grid)) - 1),
    }
    if tkind not in defaults:
        raise ValidationError(f"transform {tkind!r} cannot be configured from the command line")
    low = defaults[tkind][0] if cfg["transform_low"] == "auto" else float(cfg["transform_low"])
    high = defaults[tkind][1] if cfg["transform_high"] == "auto" else float(cfg["transform_high"])
    if tkind == "circular_shift_1d":
        dataset = dataset.reshape(dataset.shape[0], -1)
        grid = (dataset.shape[1],)
    spec = TransformSpec(tkind, low, high, tuple(grid))
    return dataset, spec, mean, std


def cmd_train(cfg) -> int:
    _require(cfg, "input")
    dataset, spec, mean, std = _training_data(cfg)
    tc = TrainConfig(
        n_basis=cfg["n_basis"],
        p_norm=cfg["p_norm"],
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        transforms_per_epoch=cfg["transforms_per_epoch"],
        dropout_p=cfg["dropout_p"],
        norm_mode=cfg["norm_mode"],
        lambda_mean=cfg["lambda_mean"],
        lambda_dev=cfg["lambda_dev"],
        target_norm=cfg["target_norm"],
        optimizer=cfg["optimizer"],
        rng_seed=cfg["seed"],
    )
    sampler = PairSampler(dataset, spec, cfg["pair_scheme"])
    result = train(tc, sampler, sampler.n_input)
    basis = result.basis
    basis.mean, basis.std = (basis.mean, basis.std) if mean is None else (np.asarray(mean), np.asarray(std))
    out = Path(cfg["out"])
    resolved = cfg.to_dict()
    resolved.update({f"transform.{k.split('.', 1)[1]}": v for k, v in spec.to_flat().items()})
    basis.save(out / "model.cae", config=resolved)
    _write_csv(out / "loss.csv", ["epoch", "loss"], [(i + 1, _fmt(v)) for i, v in enumerate(result.loss_history)])
    plotting.plot_loss(result.loss_history, out / "loss.svg")
    print(f"trained M={basis.n_basis} N={basis.n_input}: loss {result.loss_history[0]:.6g} -> {result.loss_history[-1]:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------- project


def cmd_project(cfg) -> int:
    _require(cfg, "input", "model")
    fm = load_feature_matrix(_existing(cfg["input"]))
    basis, n = _load_model(cfg["model"], fm.n_bins, cfg["ngram_size"])
    X = _ngram_features(basis, fm.values, n, cfg["ngram_hop"])
    code = polar_encode(*project(basis, X))
    hop = fm.frame_hop_seconds * cfg["ngram_hop"]
    out = Path(cfg["out"])
    save_feature_matrix(FeatureMatrix(code.magnitude, hop), out / "magnitude.ftm")
    save_feature_matrix(FeatureMatrix(code.phase, hop), out / "phase.ftm")
    print(f"projected {X.shape[0]} n-grams of {n} frames onto {basis.n_basis} complex bases")
    return EXIT_OK


# --------------------------------------------------------------- discover


def cmd_discover(cfg) -> int:
    _require(cfg, "input", "model")
    fm = load_feature_matrix(_existing(cfg["input"]))
    basis, n = _load_model(cfg["model"], fm.n_bins, cfg["ngram_size"])
    hop = cfg["ngram_hop"]
    feats = magnitude_features(basis, _ngram_features(basis, fm.values, n, hop))
    res = discover(feats, n, cfg["kernel"], cfg["threshold"], cfg["min_length"], cfg["max_gap"], hop)
    out = Path(cfg["out"])
    fmt = cfg["matrix_format"]
    if fmt not in ("ftm", "csv"):
        raise ValidationError(f"matrix_format must be ftm or csv, got {fmt!r}")
    save_feature_matrix(FeatureMatrix(res.processed, fm.frame_hop_seconds * hop), out / f"processed.{fmt}")
    plotting.write_pgm(res.processed, out / "processed.pgm")
    sec = fm.frame_hop_seconds
    rows = [
        (
            s.lag,
            s.occurrence_a[0],
            s.occurrence_b[0],
            s.length,
            _fmt(s.score),
            _fmt(s.occurrence_a[0] * sec),
            _fmt(s.occurrence_b[0] * sec),
            _fmt(s.length * sec),
        )
        for s in res.sections
    ]
    _write_csv(
        out / "sections.csv",
        ["lag", "start_a", "start_b", "length", "score", "start_a_seconds", "start_b_seconds", "length_seconds"],
        rows,
    )
    # boxes are drawn in the processed matrix's own index space
    shift = (cfg["kernel"] - 1) // 2
    boxes = [
        ((s.occurrence_a[0]) // hop - shift, (s.occurrence_a[1] - n) // hop - shift,
         (s.occurrence_b[0]) // hop - shift, (s.occurrence_b[1] - n) // hop - shift)
        for s in res.sections[:20]
    ]
    plotting.plot_matrix(res.processed, out / "processed.svg", "processed self-similarity", boxes)
    print(f"{len(res.sections)} repeated section(s) found")
    return EXIT_OK


# ------------------------------------------------------------------ align


def cmd_align(cfg) -> int:
    _require(cfg, "perf", "score", "model")
    perf = load_feature_matrix(_existing(cfg["perf"]))
    score = load_feature_matrix(_existing(cfg["score"]))
    if perf.n_bins != score.n_bins:
        raise ValidationError(f"performance has {perf.n_bins} bins, score has {score.n_bins}")
    if cfg["transpose"]:
        perf = FeatureMatrix(pitch_shift(perf.values, cfg["transpose"]), perf.frame_hop_seconds, perf.meta)
    if cfg["tempo_factor"] != 1.0:
        perf = tempo_scale(perf, cfg["tempo_factor"])
    basis, n = _load_model(cfg["model"], perf.n_bins, cfg["ngram_size"])
    A = _ngram_features(basis, perf.values, n)
    B = _ngram_features(basis, score.values, n)
    if cfg["space"] == "magnitude":
        A, B = magnitude_features(basis, A), magnitude_features(basis, B)
    elif cfg["space"] != "raw":
        raise ValidationError(f"space must be magnitude or raw, got {cfg['space']!r}")
    path = fastdtw(A, B, cfg["radius"], cfg["distance"])
    out = Path(cfg["out"])
    _write_csv(out / "path.csv", ["perf_frame", "score_frame"], path.pairs.tolist())
    truth = None
    status = EXIT_OK
    if cfg["gt"]:
        gt = GroundTruthMap.load(_existing(cfg["gt"]))
        report = evaluate_alignment(path, perf.frame_hop_seconds, score.frame_hop_seconds, gt)
        _write_json(out / "report.json", {**report.to_dict(), "path_cost": path.cost})
        print(json.dumps(report.to_dict(), sort_keys=True))
        truth = np.column_stack([gt.events[:, 0] / perf.frame_hop_seconds, gt.events[:, 1] / score.frame_hop_seconds])
        if cfg["min_rate"] >= 0 and report.rate_50ms < cfg["min_rate"]:
            print(f"FAIL: rate within 50 ms {report.rate_50ms:.3f} < {cfg['min_rate']}", file=sys.stderr)
            status = EXIT_FAIL
    else:
        _write_json(out / "report.json", {"path_cost": path.cost, "path_length": len(path)})
    plotting.plot_path(path.pairs, out / "path.svg", truth)
    return status


# --------------------------------------------------------------- classify


def cmd_classify(cfg) -> int:
    _require(cfg, "images", "labels")
    data = load_idx(_existing(cfg["images"]), _existing(cfg["labels"]))
    rng = np.random.default_rng(cfg["seed"])
    space = cfg["space"]
    if space not in ("magnitude", "pixels"):
        raise ValidationError(f"space must be magnitude or pixels, got {space!r}")

    def rotated(images, stream):
        if not cfg["rotate"]:
            return images, np.zeros(len(images))
        angles = stream.uniform(0, 2 * math.pi, len(images))
        return rotate_images(images, angles), angles

    imgs, angles = rotated(data.images, rng)
    basis = None
    if space == "magnitude" or cfg["pca_points"] > 0:
        _require(cfg, "model")
        basis = ComplexBasis.load(_existing(cfg["model"]))
        if basis.n_input != imgs[0].size:
            raise ValidationError(f"model input dimension N={basis.n_input} does not match image size {imgs[0].size}")

    def features(images):
        flat = images.reshape(len(images), -1)
        if space == "pixels":
            return flat
        return magnitude_features(basis, basis.standardize_input(flat))

    test_X = test_y = None
    if cfg["test_images"]:
        test = load_idx(_existing(cfg["test_images"]), _existing(cfg["test_labels"]))
        test_X, test_y = features(rotated(test.images, rng)[0]), test.labels
    spec = ClassifierSpec(
        kind=cfg["classifier"],
        k=cfg["k"],
        l2=cfg["l2"],
        epochs=cfg["logreg_epochs"],
        lr=cfg["logreg_lr"],
        standardize=cfg["classifier"] == "logreg",
    )
    report = cross_validate(
        features(imgs), data.labels, cfg["train_size"], cfg["folds"], cfg["test_size"], spec, rng, test_X, test_y
    )
    out = Path(cfg["out"])
    _write_json(out / "cv_report.json", {**report.to_dict(), "space": space})
    _write_csv(out / "cv_report.csv", ["fold", "error"], [(i, _fmt(e)) for i, e in enumerate(report.per_fold_error)])
    print(f"{space} / {spec.kind}: mean error {report.mean_error:.4f} +- {report.std_error:.4f}")

    if cfg["pca_points"] > 0 and basis is not None:
        m = min(cfg["pca_points"], len(imgs))
        pick = rng.choice(len(imgs), size=m, replace=False)
        flat = basis.standardize_input(imgs[pick].reshape(m, -1))
        mag = pca_2d(magnitude_features(basis, flat), cfg["seed"])
        # phase differences between each digit and a copy rotated by a known angle
        delta = rng.uniform(0, 2 * math.pi, m)
        turned = basis.standardize_input(rotate_images(imgs[pick], delta).reshape(m, -1))
        dphi = pca_2d(phase_difference(basis, flat, turned), cfg["seed"])
        angle_bin = np.floor(delta / (2 * math.pi) * 36).astype(int)
        _write_csv(
            out / "pca.csv",
            ["index", "label", "angle", "mag_pc1", "mag_pc2", "dphi_pc1", "dphi_pc2"],
            [
                (int(i), int(data.labels[i]), _fmt(a), _fmt(p[0]), _fmt(p[1]), _fmt(q[0]), _fmt(q[1]))
                for i, a, p, q in zip(pick, delta, mag.scores, dphi.scores)
            ],
        )
        plotting.plot_scatter(mag.scores, data.labels[pick], out / "pca_magnitude.svg", "magnitude space", "digit")
        plotting.plot_scatter(dphi.scores, angle_bin, out / "pca_phase.svg", "phase-difference space", "angle bin (10 degrees)")

    if cfg["max_error"] >= 0 and report.mean_error > cfg["max_error"]:
        print(f"FAIL: mean error {report.mean_error:.4f} > {cfg['max_error']}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ------------------------------------------------------------- check-grad


def cmd_check_grad(cfg) -> int:
    grad_fn = experiments.wrong_sign_backward if cfg["inject_wrong_sign"] else None
    rep = experiments.gradient_check_suite(
        n_instances=cfg["instances"],
        n_input=cfg["n_input"],
        n_basis=cfg["n_basis"],
        batch=cfg["batch"],
        p=cfg["p_norm"],
        seed=cfg["seed"],
        h=cfg["step"],
        grad_fn=grad_fn,
    )
    ok = rep.worst <= cfg["tol"]
    print(f"w_re max relative error {rep.w_re:.3e}")
    print(f"w_im max relative error {rep.w_im:.3e}")
    if rep.n_skipped:
        print(f"{rep.n_skipped} instance(s) skipped near p=1 kinks")
    print(("PASS" if ok else "FAIL") + f" (tolerance {cfg['tol']:g})")
    _write_json(
        Path(cfg["out"]) / "grad_check.json",
        {"w_re": rep.w_re, "w_im": rep.w_im, "checked": rep.n_checked, "skipped": rep.n_skipped, "pass": ok},
    )
    return EXIT_OK if ok else EXIT_FAIL


# ------------------------------------------------------------------ synth


def cmd_synth(cfg) -> int:
    out = Path(cfg["out"])
    fmt = cfg["format"]
    if fmt not in ("ftm", "csv"):
        raise ValidationError(f"format must be ftm or csv, got {fmt!r}")
    if cfg["kind"] == "cqt":
        plant = None
        if cfg["plant"]:
            try:
                plant = tuple(int(v) for v in cfg["plant"].split(","))
            except ValueError:
                raise ValidationError(f"plant must be src,dst,length,shift; got {cfg['plant']!r}") from None
            if len(plant) != 4:
                raise ValidationError(f"plant must be src,dst,length,shift; got {cfg['plant']!r}")
        fm = synth_cqt_like(cfg["seed"], cfg["frames"], cfg["bins"], cfg["events"], plant=plant)
        save_feature_matrix(fm, out / f"features.{fmt}")
        (out / "meta.json").write_text(fm.meta + "\n")
        if plant is not None:
            src, dst, length, shift = plant
            _write_csv(out / "planted.csv", ["start_a", "start_b", "length", "shift"], [(src, dst, length, shift)])
        print(f"wrote {fm.n_frames} x {fm.n_bins} feature matrix")
    elif cfg["kind"] == "signals":
        x = synth_signals(cfg["seed"], cfg["samples"], cfg["length"])
        save_feature_matrix(FeatureMatrix(x, 1.0), out / f"signals.{fmt}")
        print(f"wrote {x.shape[0]} signals of length {x.shape[1]}")
    else:
        raise ValidationError(f"synth kind must be cqt or signals, got {cfg['kind']!r}")
    return EXIT_OK


HANDLERS = {
    "train": cmd_train,
    "project": cmd_project,
    "discover": cmd_discover,
    "align": cmd_align,
    "classify": cmd_classify,
    "check-grad": cmd_check_grad,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    keys = {**COMMON, **COMMANDS[args.command][0]}
    overrides = {k: v for k, v in vars(args).items() if k in keys and v is not None}
    try:
        cfg = RunConfig.resolve(keys, _existing(args.config) if args.config else None, overrides)
        os.makedirs(cfg["out"], exist_ok=True)
        cfg.write(cfg["out"])
        print(cfg.to_text(), end="")
        limits = cfg["threads"] if cfg["threads"] > 0 else None
        with threadpool_limits(limits=limits):
            return HANDLERS[args.command](cfg)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (CaeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
