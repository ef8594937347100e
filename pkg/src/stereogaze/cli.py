"""Command line: ``stereogaze {synth,train,eval,corr,report}``.

Each command writes into its own ``--out`` directory, guarded by a lockfile,
and finishes by writing ``manifest.json`` with the resolved run configuration
and the SHA-256 of every input and output file. Primary parameters are
flags; ``--config file.json`` supplies defaults underneath them.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import warnings
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from .depth import DEPTH_COLUMNS, comparison_csv, gini_importance, pearson_corr
from .errors import ConfigInvalid, ConvergenceWarning, DownstreamError, MissingInput, StereoGazeError
from .geometry import SceneSpec, calibration_grid, scene_by_name
from .pipeline import (
    CALIBRATION_SCENE,
    EvalReport,
    PipelineConfig,
    calibrate_all,
    evaluate,
    load_bundle,
    save_bundle,
    save_profiles,
    train,
)
from .regressors import MODEL_KINDS
from .svg import bar_chart, heatmap
from .synth import Dataset, NoiseSpec, generate_cohort, make_subjects

log = logging.getLogger("stereogaze")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_DOWNSTREAM = 4

DATASET_CSV = "dataset.csv"
DATASET_JSON = "dataset.json"


@dataclass(frozen=True)
class RunConfig:
    scene: str = "scene1"  # scene1, scene2, or a path to a scene JSON file
    subjects: int = 30
    train_subjects: int = 25
    sigma: float = 0.0
    dropout: float = 0.0
    seed: int = 0
    frames_per_point: int = 4
    model: str = "auto"
    cv_folds: int = 5
    gini_seed: int = 0
    svr_max_samples: int = 1500

    def validate(self) -> "RunConfig":
        problems = []
        if self.subjects < 1:
            problems.append("subjects must be >= 1")
        if not 1 <= self.train_subjects:
            problems.append("train_subjects must be >= 1")
        if self.sigma < 0:
            problems.append("sigma must be >= 0")
        if not 0 <= self.dropout <= 1:
            problems.append("dropout must lie in [0, 1]")
        if self.frames_per_point < 1:
            problems.append("frames_per_point must be >= 1")
        if self.model != "auto" and self.model not in MODEL_KINDS:
            problems.append(f"model must be 'auto' or one of {', '.join(MODEL_KINDS)}")
        if self.cv_folds < 2:
            problems.append("cv_folds must be >= 2")
        if self.svr_max_samples < 10:
            problems.append("svr_max_samples must be >= 10")
        if problems:
            raise ConfigInvalid("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


RUN_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Flags override the optional JSON config, which overrides the defaults."""
    values: dict = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise MissingInput(f"config file {args.config} does not exist")
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigInvalid(f"{args.config}: top level must be an object")
        unknown = sorted(set(loaded) - set(RUN_FIELDS))
        if unknown:
            raise ConfigInvalid(f"{args.config}: unknown keys {unknown}")
        values.update(loaded)
    for name in RUN_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from None
    for name, f in RUN_FIELDS.items():
        expected = type(f.default)
        v = getattr(cfg, name)
        if expected is float and isinstance(v, int) and not isinstance(v, bool):
            continue
        if not isinstance(v, expected) or isinstance(v, bool):
            raise ConfigInvalid(f"{name} must be of type {expected.__name__}")
    return cfg.validate()


# --------------------------------------------------------------------------
# Output helpers


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_text(directory: str, name: str, text: str) -> str:
    path = os.path.join(directory, name)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


@contextmanager
def locked_output(directory: str):
    os.makedirs(directory, exist_ok=True)
    lock = os.path.join(directory, ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigInvalid(f"output directory {directory} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield directory
    finally:
        if os.path.exists(lock):
            os.remove(lock)


def write_manifest(directory: str, command: str, cfg: RunConfig, inputs: dict, outputs: list[str],
                   extra: Optional[dict] = None) -> None:
    """Manifest of the run: config, seeds and content hashes (no paths or timestamps)."""
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": {"data": cfg.seed, "gini": cfg.gini_seed},
        "inputs": {name: sha256_file(path) for name, path in sorted(inputs.items())},
        "outputs": {name: sha256_file(os.path.join(directory, name)) for name in sorted(outputs)},
    }
    if extra:
        manifest.update(extra)
    write_text(directory, "manifest.json", _dumps(manifest))


def _require_dir_file(directory: str, name: str, what: str) -> str:
    path = os.path.join(directory, name)
    if not os.path.exists(path):
        raise MissingInput(f"{what} not found: {path}")
    return path


def load_scene(name: str) -> SceneSpec:
    if name in ("scene1", "scene2"):
        return scene_by_name(name)
    if not os.path.exists(name):
        raise MissingInput(f"scene file {name} does not exist")
    try:
        with open(name) as fh:
            return SceneSpec.from_json(fh.read())
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigInvalid(f"{name}: invalid scene description ({exc})") from None


def load_dataset(directory: str) -> Dataset:
    csv_path = _require_dir_file(directory, DATASET_CSV, "dataset")
    json_path = _require_dir_file(directory, DATASET_JSON, "dataset sidecar")
    return Dataset.load(csv_path, json_path)


def _bundle(directory: str):
    _require_dir_file(directory, "manifest.json", "model bundle (run `train` first)")
    return load_bundle(directory)


def _pick_scene(available, requested: Optional[str]) -> str:
    scenes = sorted(s for s in available if s != CALIBRATION_SCENE)
    if requested and requested in scenes:
        return requested
    if len(scenes) == 1:
        return scenes[0]
    raise ConfigInvalid(f"choose a scene with --scene from {scenes}")


# --------------------------------------------------------------------------
# Commands


def cmd_synth(args, cfg: RunConfig) -> None:
    scene = load_scene(cfg.scene)
    with locked_output(args.out) as out:
        subjects = make_subjects(cfg.subjects, cfg.seed)
        noise = NoiseSpec(cfg.sigma, cfg.dropout, cfg.seed)
        ds = generate_cohort([calibration_grid(), scene], subjects, noise, cfg.frames_per_point)
        ds.save(os.path.join(out, DATASET_CSV), os.path.join(out, DATASET_JSON))
        inputs = {} if cfg.scene in ("scene1", "scene2") else {"scene.json": cfg.scene}
        write_manifest(out, "synth", cfg, inputs, [DATASET_CSV, DATASET_JSON],
                       {"frames": len(ds), "scene": scene.name})
        log.info("wrote %d frames for %d subjects to %s", len(ds), cfg.subjects, out)


def _pipeline_config(cfg: RunConfig) -> PipelineConfig:
    return PipelineConfig(seed=cfg.seed, depth_model=cfg.model, cv_folds=cfg.cv_folds,
                          svr_max_samples=cfg.svr_max_samples)


def cmd_train(args, cfg: RunConfig) -> None:
    ds = load_dataset(args.data)
    ids = ds.subject_ids
    if cfg.train_subjects > len(ids):
        raise ConfigInvalid(f"train_subjects={cfg.train_subjects} but the dataset has {len(ids)} subjects")
    train_ids = ids[:cfg.train_subjects]
    with locked_output(args.out) as out:
        log.info("training subjects: %s", train_ids)
        stack = train(ds.select(train_ids), _pipeline_config(cfg))
        save_bundle(stack, out)
        inputs = {DATASET_CSV: os.path.join(args.data, DATASET_CSV),
                  DATASET_JSON: os.path.join(args.data, DATASET_JSON)}
        # the bundle keeps its own manifest.json; the run record sits beside it
        run = {"command": "train", "version": __version__, "config": cfg.to_dict(),
               "seeds": {"data": cfg.seed}, "train_subjects": train_ids,
               "inputs": {k: sha256_file(v) for k, v in sorted(inputs.items())},
               "bundle_manifest": sha256_file(os.path.join(out, "manifest.json"))}
        write_text(out, "run.json", _dumps(run))


def cmd_eval(args, cfg: RunConfig) -> None:
    ds = load_dataset(args.data)
    stack = _bundle(args.bundle)
    test_ids = [i for i in ds.subject_ids if i not in set(stack.train_subjects)]
    if not test_ids:
        raise ConfigInvalid("every subject in the dataset was used for training; nothing to evaluate")
    test = ds.select(test_ids)
    scene = _pick_scene(stack.depth, args.scene)
    with locked_output(args.out) as out:
        profiles = calibrate_all(stack, test.select(scene_id=CALIBRATION_SCENE))
        report = evaluate(stack, profiles, test.select(scene_id=scene), scene)
        entry = stack.depth[scene]
        files = {
            "eval.json": report.to_json(),
            "summary.csv": report.summary_csv(),
            "table_planes.csv": report.plane_table_csv(),
            "table_points.csv": report.point_table_csv(),
            "table_models.csv": comparison_csv(entry.reports, unit=entry.unit),
        }
        for name, text in files.items():
            write_text(out, name, text)
        save_profiles(profiles, os.path.join(out, "profiles.json"))
        inputs = {DATASET_CSV: os.path.join(args.data, DATASET_CSV),
                  "bundle_manifest.json": os.path.join(args.bundle, "manifest.json")}
        write_manifest(out, "eval", cfg, inputs, sorted(files) + ["profiles.json"],
                       {"test_subjects": test_ids, "scene": scene})
        log.info("3D error %.4f %s over %d pairs", report.euclidean_3d, report.unit, report.n_pairs)


def cmd_corr(args, cfg: RunConfig) -> None:
    stack = _bundle(args.bundle)
    scene = _pick_scene(stack.depth_tables, args.scene)
    table = stack.depth_tables[scene]
    with locked_output(args.out) as out:
        corr = pearson_corr(table.X, table.z)
        imp = gini_importance(table.X, table.z, cfg.gini_seed)
        labels = list(DEPTH_COLUMNS) + ["z"]
        files = {
            "correlation.csv": corr.to_csv(),
            "importance.csv": imp.to_csv(),
            "analysis.json": _dumps({"scene": scene, "n_rows": len(table), "pearson": corr.to_dict(),
                                     "gini": imp.to_dict()}),
            "correlation.svg": heatmap(corr.matrix, labels, title=f"Pearson correlation ({scene})"),
            "importance.svg": bar_chart(imp.importance, list(DEPTH_COLUMNS), title=f"Gini importance ({scene})"),
        }
        for name, text in files.items():
            write_text(out, name, text)
        write_manifest(out, "corr", cfg, {"bundle_manifest.json": os.path.join(args.bundle, "manifest.json")},
                       sorted(files), {"scene": scene})


def _md_table(header, rows) -> str:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(out)


def render_report(report: EvalReport, models_csv: Optional[str], analysis: Optional[dict]) -> str:
    u = report.unit
    parts = [
        f"# 3D gaze evaluation: {report.scene}",
        "",
        f"Test subject ids: {', '.join(str(s) for s in report.subjects)} ({report.n_pairs} frame pairs). "
        f"Depth model: {report.depth_model}.",
        "",
        "## 2D gaze error",
        "",
        _md_table(["stage", "cm", "deg"], [
            ["before calibration", f"{report.error_2d_pre_cm:.4f}", f"{report.error_2d_pre_deg:.4f}"],
            ["after calibration", f"{report.error_2d_post_cm:.4f}", f"{report.error_2d_post_deg:.4f}"],
        ]),
        "",
        "## X/Y error per depth plane (cm)",
        "",
        _md_table(["plane", "n", "x", "x std", "y", "y std"], [
            [p["plane"], p["n"], f"{p['x_err']:.4f}", f"{p['x_std']:.4f}", f"{p['y_err']:.4f}", f"{p['y_std']:.4f}"]
            for p in report.per_plane]),
        "",
        "## Depth and 3D error",
        "",
        _md_table(["metric", "value"], [
            [f"depth MAE ({u})", f"{report.depth_mae:.4f}"],
            [f"depth MSE ({u}^2)", f"{report.depth_mse:.4f}"],
            ["depth R2", f"{report.depth_r2:.4f}"],
            [f"averaged-prediction depth error ({u})", f"{report.depth_error:.4f}"],
            [f"3D Euclidean error ({u})", f"{report.euclidean_3d:.4f}"],
            ["PSOM inversions above threshold", report.psom_nonconverged],
        ]),
    ]
    if models_csv:
        lines = [ln.split(",") for ln in models_csv.strip().splitlines()]
        rows = [[r[0]] + [f"{float(v):.4f}" if v else "" for v in r[1:]] for r in lines[1:]]
        parts += ["", "## Depth model comparison (cross-validated)", "", _md_table(lines[0], rows)]
    if analysis:
        r = analysis["pearson"]["r_with_depth"]
        g = analysis["gini"]["importance"]
        rows = [[name, "n/a" if r[name] is None else f"{r[name]:.3f}", f"{g[name]:.3f}"] for name in DEPTH_COLUMNS]
        parts += ["", "## Depth feature analysis", "", _md_table(["feature", "pearson r", "gini"], rows),
                  "", "Importance ranking: " + ", ".join(analysis["gini"]["ranking"]) + "."]
    return "\n".join(parts) + "\n"


def cmd_report(args, cfg: RunConfig) -> None:
    eval_path = _require_dir_file(args.eval, "eval.json", "evaluation output (run `eval` first)")
    with open(eval_path) as fh:
        report = EvalReport.from_dict(json.load(fh))
    inputs = {"eval.json": eval_path}
    models_csv = None
    mpath = os.path.join(args.eval, "table_models.csv")
    if os.path.exists(mpath):
        with open(mpath) as fh:
            models_csv = fh.read()
        inputs["table_models.csv"] = mpath
    analysis = None
    if args.corr:
        apath = _require_dir_file(args.corr, "analysis.json", "correlation output (run `corr` first)")
        with open(apath) as fh:
            analysis = json.load(fh)
        inputs["analysis.json"] = apath
    with locked_output(args.out) as out:
        write_text(out, "report.md", render_report(report, models_csv, analysis))
        write_manifest(out, "report", cfg, inputs, ["report.md"])


# --------------------------------------------------------------------------
# Argument parsing


def _add_run_flags(p: argparse.ArgumentParser, names) -> None:
    for name in names:
        f = RUN_FIELDS[name]
        typ = type(f.default)
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None,
                       help=f"(default {f.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stereogaze", description="Synthetic 3D point-of-gaze experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled binocular dataset")
    _add_run_flags(p, ["scene", "subjects", "sigma", "dropout", "seed", "frames_per_point"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train gaze and depth models")
    p.add_argument("--data", required=True, help="directory written by synth")
    _add_run_flags(p, ["train_subjects", "model", "cv_folds", "seed", "svr_max_samples"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="calibrate held-out subjects and evaluate")
    p.add_argument("--data", required=True)
    p.add_argument("--bundle", required=True, help="directory written by train")
    p.add_argument("--scene", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("corr", help="Pearson and impurity-importance analysis of depth features")
    p.add_argument("--bundle", required=True)
    p.add_argument("--scene", default=None)
    _add_run_flags(p, ["gini_seed"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="markdown summary of eval (and corr) outputs")
    p.add_argument("--eval", required=True)
    p.add_argument("--corr", default=None)
    p.add_argument("--out", required=True)

    for sp in sub.choices.values():
        sp.add_argument("--config", default=None, help="JSON file with defaults for the run flags")
    return parser


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "corr": cmd_corr, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports its own usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            try:
                COMMANDS[args.command](args, cfg)
            except (ConfigInvalid, MissingInput):
                raise
            except (StereoGazeError, ValueError, KeyError, np.linalg.LinAlgError) as exc:
                raise DownstreamError(f"{args.command} failed: {type(exc).__name__}: {exc}") from exc
    except ConfigInvalid as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInput as exc:
        print(f"error [missing input]: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DownstreamError as exc:
        print(f"error [downstream]: {exc}", file=sys.stderr)
        return EXIT_DOWNSTREAM
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
