"""Command-line driver: ``temsig <subcommand> [input] --out DIR [options]``.

Every option can also come from a JSON file passed with ``--config``; flags
given on the command line win.  Each successful run writes the fully
resolved configuration to ``<out>/<subcommand>.config.json``, which can be
fed back through ``--config`` to repeat the run.

Exit codes: 0 success, 1 invalid arguments or configuration, 2 failure while
running.  ``TEMSIG_NUM_THREADS`` (or ``--threads``) sets the worker count;
results do not depend on it.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from ._workers import default_workers
from .errors import StageTypeMismatch, ValidationError
from .io import (
    DiffractionGrid,
    VideoStack,
    ensure_dir,
    export_csv,
    export_heatmap,
    read_csv,
    read_grid,
    read_mask,
    read_stack,
    write_grid,
    write_json,
    write_mask,
    write_stack,
)


class CliError(ValidationError):
    """Bad command line or configuration (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


# ---------------------------------------------------------------------------
# option tables


@dataclass(frozen=True)
class Opt:
    name: str
    kind: Any  # int, float, str, bool, "floats", "json"
    default: Any = None
    help: str = ""
    choices: tuple | None = None
    required: bool = False

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    def coerce(self, value):
        if value is None:
            if self.required:
                raise CliError(f"{self.flag} is required")
            return None
        try:
            if self.kind == "floats":
                if isinstance(value, str):
                    value = [v for v in value.replace(",", " ").split() if v]
                out = [float(v) for v in value]
            elif self.kind == "json":
                out = json.loads(value) if isinstance(value, str) else value
            elif self.kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
                out = value
            elif self.kind is int:
                if isinstance(value, float) and not value.is_integer():
                    raise TypeError
                out = int(value)
            else:
                out = self.kind(value)
        except (TypeError, ValueError, json.JSONDecodeError):
            raise CliError(f"invalid value for {self.name!r}: {value!r}") from None
        if self.choices is not None and out not in self.choices:
            raise CliError(f"{self.name!r} must be one of {list(self.choices)}, got {out!r}")
        return out


SYNTH_KINDS = ("corrosion_video", "ring_pattern", "sparse_stream", "nbed_grid", "disk_pair")

OPTIONS: dict[str, list[Opt]] = {
    "convert": [
        Opt("frame", int, 0, "frame index for PGM export"),
        Opt("frame_interval", float, None, "seconds per frame for .npy input"),
        Opt("pixel_size", float, None, "nm per pixel for .npy input"),
    ],
    "synth": [
        Opt("kind", str, "corrosion_video", "generator", SYNTH_KINDS),
        Opt("params", "json", {}, "generator parameters as a JSON object"),
        Opt("seed", int, 0, "random seed"),
    ],
    "denoise": [
        Opt("mode", str, "to_mean", "brightness correction", ("to_mean", "spline", "none")),
        Opt("spline_correction", str, "to_trend", "how --mode spline uses the trend", ("remove_trend", "to_trend")),
        Opt("lambda_grid", "floats", [float(v) for v in np.logspace(-3, 3, 13)], "spline penalties to cross-validate"),
        Opt("folds", int, 5, "cross-validation folds"),
        Opt("fold_seed", int, None, "random fold assignment instead of interleaved"),
        Opt("filter", str, "none", "spatial filter", ("none", "mean", "bilateral")),
        Opt("radius", int, 1, "filter neighborhood radius (px)"),
        Opt("metric", str, "chebyshev", "neighborhood metric", ("chebyshev", "euclidean")),
        Opt("sigma_s", float, 1.0, "bilateral spatial width (px)"),
        Opt("sigma_v", float, None, "bilateral value width"),
        Opt("order", str, "brightness_first", "stage order", ("brightness_first", "filter_first")),
    ],
    "segment": [
        Opt("quantile", float, 0.99, "difference quantile used as the switch threshold"),
        Opt("per_frame", bool, False, "one threshold per frame instead of per video"),
        Opt("smooth", bool, True, "apply majority smoothing"),
        Opt("smooth_radius", int, 1, "majority neighborhood radius"),
        Opt("smooth_fraction", float, 0.5, "flip when more than this fraction disagrees"),
    ],
    "polar": [
        Opt("r_min", float, None, "smallest Hough radius (px)", required=True),
        Opt("r_max", float, None, "largest Hough radius (px)", required=True),
        Opt("band_r0", float, None, "inner radius of the signal band (px)", required=True),
        Opt("band_width", float, 4.0, "width of the signal band (px)"),
        Opt("dr", float, 1.0, "radial bin (px)"),
        Opt("dtheta", float, 1.0, "angular bin (degrees)"),
        Opt("mask", str, None, "beam-stop mask TVS file"),
        Opt("mask_threshold", float, None, "derive a beam-stop mask below this intensity"),
        Opt("align", bool, True, "find the center of every frame with the Hough transform"),
        Opt("center", "floats", None, "fixed center x,y when --no-align"),
        Opt("canny_sigma", float, 2.0, "Canny smoothing width"),
        Opt("canny_low", float, 0.05, "Canny low threshold (fraction of range)"),
        Opt("canny_high", float, 0.15, "Canny high threshold (fraction of range)"),
        Opt("hough_bin", float, 1.0, "Hough radius bin (px)"),
    ],
    "detect": [
        Opt("procedure", str, "acm", "stopping rule", ("acm", "asr", "cusum", "glr")),
        Opt("window", int, 50, "window w"),
        Opt("threshold", float, None, "threshold b"),
        Opt("calibrate_arl", float, None, "calibrate b to this null ARL instead"),
        Opt("calibration_runs", int, 1000, "Monte Carlo runs for calibration"),
        Opt("max_len", int, None, "censoring length for calibration runs"),
        Opt("l1_radius", float, None, "l1 radius s (inf for no constraint)"),
        Opt("eta_mode", str, "decay", "step size schedule", ("decay", "const")),
        Opt("eta", float, 1.0, "constant step size"),
        Opt("cusum_mean", float, None, "CUSUM post-change mean (constant vector)"),
        Opt("cusum_mean_file", str, None, "CUSUM post-change mean, one-row CSV"),
        Opt("standardize", int, 0, "z-score columns against the first N rows"),
        Opt("seed", int, 0, "calibration seed"),
    ],
    "nbed": [
        Opt("reference", str, "point:0,0", "reference g-vectors: point:p,q or a JSON file"),
        Opt("gamma", float, 0.5, "hybrid correlation exponent"),
        Opt("prefilter", str, "sobel", "pre-filter", ("none", "sobel")),
        Opt("expected_disks", int, 5, "disks per pattern including the center"),
        Opt("kappa", int, 16, "upsampling factor"),
        Opt("refine", str, "local", "subpixel refinement per disk window or on the whole surface", ("local", "global")),
        Opt("disk_radius", float, 5.0, "template disk radius (px)"),
        Opt("disk_kind", str, "flat", "template disk", ("flat", "bullseye")),
        Opt("ring_count", int, 3, "bullseye rings"),
        Opt("min_ratio", float, 0.2, "weakest accepted peak relative to the strongest"),
    ],
}

HELP = {
    "convert": "convert between .npy, .tvs and .pgm",
    "synth": "generate synthetic data with ground truth",
    "denoise": "brightness correction and spatial filtering of a video",
    "segment": "label corrosion onset in a video",
    "polar": "diffraction patterns to angular band signals",
    "detect": "online change-point detection on a signal matrix",
    "nbed": "strain and rotation maps from a diffraction grid",
}

# data types flowing between pipeline stages
STAGE_IO = {
    "denoise": ("stack", "stack"),
    "segment": ("stack", "labels"),
    "polar": ("stack", "signals"),
    "detect": ("signals", "result"),
    "nbed": ("grid", "field"),
}
SYNTH_OUT = {
    "corrosion_video": "stack",
    "ring_pattern": "stack",
    "sparse_stream": "signals",
    "nbed_grid": "grid",
    "disk_pair": "stack",
}


def resolve(cmd: str, given: dict, config: dict | None = None) -> dict:
    """Defaults <- config file <- command-line flags, with type checks.

    Unknown configuration keys are rejected by name.
    """
    opts = {o.name: o for o in OPTIONS[cmd]}
    values: dict[str, Any] = {"input": None, "out": None}
    values.update({k: o.default for k, o in opts.items()})
    for src in (config or {}, given):
        for key, v in src.items():
            k = key.replace("-", "_")
            if k == "subcommand":
                if v != cmd:
                    raise CliError(f"config is for subcommand {v!r}, not {cmd!r}")
                continue
            if k not in values:
                raise CliError(f"unknown {cmd} option {key!r}")
            values[k] = v
    for k, o in opts.items():
        values[k] = o.coerce(values[k])
    return values


# ---------------------------------------------------------------------------
# loading


def _load(kind: str, path):
    p = Path(path)
    if kind == "stack":
        return read_stack(p)
    if kind == "grid":
        return read_grid(p)
    if kind == "signals":
        if p.suffix == ".csv":
            return read_csv(p)[1]
        st = read_stack(p)
        return np.asarray(st.frames, dtype=np.float64).reshape(st.shape[0], -1)
    raise CliError(f"cannot load {kind} input")


def _truth_json(truth) -> dict:
    out = {}
    for k, v in vars(truth).items():
        if k in ("corroded", "onset_frame", "onset_time", "base", "mask", "positions"):
            continue
        if isinstance(v, np.ndarray):
            v = v.tolist()
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# stages; each returns (output type, output object)


def stage_synth(v, data, out: Path, workers):
    from .synth import SynthSpec, generate

    spec = SynthSpec(v["kind"], dict(v["params"]), v["seed"])
    res = generate(spec)
    meta = {"spec": spec.to_json()}
    if v["kind"] == "corrosion_video":
        stack, truth = res
        write_stack(stack, out / "synth.tvs")
        onset = np.where(np.isfinite(truth.onset_frame), truth.onset_frame, -1.0)
        write_stack(VideoStack(onset), out / "truth_onset.tvs")
        result = stack
    elif v["kind"] == "ring_pattern":
        img, truth = res
        stack = img if isinstance(img, VideoStack) else VideoStack(img)
        write_stack(stack, out / "synth.tvs")
        if truth.mask.any():
            from .io import MaskImage

            write_mask(MaskImage(truth.mask), out / "mask.tvs")
        result = stack
    elif v["kind"] == "sparse_stream":
        X, truth = res
        export_csv([(f"x{i}", X[:, i]) for i in range(X.shape[1])], out / "signals.csv")
        result = X
    elif v["kind"] == "nbed_grid":
        grid, truth = res
        write_grid(grid, out / "synth.tvs")
        result = grid
    else:
        ref, pat, truth = res
        result = VideoStack(np.stack([ref, pat]))
        write_stack(result, out / "synth.tvs")
    meta["truth"] = _truth_json(truth)
    write_json(meta, out / "truth.json")
    return SYNTH_OUT[v["kind"]], result


def stage_denoise(v, stack: VideoStack, out: Path, workers):
    from .denoise import FilterConfig, correct_brightness, filter_stack, fit_spline, frame_brightness

    cfg = FilterConfig(v["radius"], v["metric"], v["sigma_s"], v["sigma_v"])
    if v["filter"] == "bilateral" and v["sigma_v"] is None:
        raise CliError("--filter bilateral needs --sigma-v")

    def brightness(st):
        B = frame_brightness(st).values
        if v["mode"] == "none":
            return st, B, B.copy()
        if v["mode"] == "to_mean":
            return correct_brightness(st, None, "to_mean"), B, np.full_like(B, B.mean())
        fit = fit_spline(B, v["lambda_grid"], v["folds"], v["fold_seed"])
        return correct_brightness(st, fit.fitted, v["spline_correction"]), B, fit.fitted

    if v["order"] == "brightness_first":
        st, B, trend = brightness(stack)
        st = filter_stack(st, v["filter"], cfg)
    else:
        st, B, trend = brightness(filter_stack(stack, v["filter"], cfg))
    write_stack(st, out / "denoised.tvs")
    export_csv([("t", np.arange(len(B))), ("brightness", B), ("trend", trend)], out / "brightness.csv")
    return "stack", st


def stage_segment(v, stack: VideoStack, out: Path, workers):
    from .segment import SegmentConfig, segment_stack

    cfg = SegmentConfig(v["quantile"], v["per_frame"], v["smooth_radius"], v["smooth_fraction"], v["smooth"])
    raw, labels, stats, state = segment_stack(stack, cfg)
    write_stack(labels.to_stack(stack.frame_interval, stack.pixel_size), out / "labels.tvs")
    export_csv([("t", np.arange(len(stats.area_fraction))), ("area_fraction", stats.area_fraction)], out / "stats.csv")
    T = labels.shape[0]
    onset = np.where(np.isfinite(stats.onset_time), stats.onset_time, T * stack.dt)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        export_heatmap(onset, out / "onset.pgm")
        export_heatmap(stats.velocity, out / "velocity.pgm")
    thr = state.threshold
    write_json(
        {"threshold": thr.tolist() if isinstance(thr, np.ndarray) else float(thr), "final_area": float(stats.area_fraction[-1])},
        out / "segment.json",
    )
    return "labels", labels


def stage_polar(v, stack: VideoStack, out: Path, workers):
    from .polar import PolarConfig, frame_signal, pattern_sequence_to_signals

    cfg = PolarConfig(
        r_min=v["r_min"], r_max=v["r_max"], band_r0=v["band_r0"], band_width=v["band_width"], dr=v["dr"],
        dtheta=v["dtheta"], canny_sigma=v["canny_sigma"], canny_low=v["canny_low"], canny_high=v["canny_high"],
        hough_bin=v["hough_bin"], align=v["align"], center=tuple(v["center"]) if v["center"] else None,
        mask_threshold=v["mask_threshold"],
    )
    mask = None
    if v["mask"]:
        mask = read_mask(v["mask"])
        mask.check_matches(stack.frames)
    res = pattern_sequence_to_signals(stack, cfg, mask, workers)
    polar_frames = []
    for t in range(stack.shape[0]):
        c = tuple(res.centers[t])
        fixed = PolarConfig(**{**vars(cfg), "align": False, "center": c})
        _, _, pol = frame_signal(stack.frames[t], fixed, mask)
        polar_frames.append(np.nan_to_num(pol.values, nan=0.0))
    write_stack(VideoStack(np.array(polar_frames)), out / "polar.tvs")
    n = res.signals.shape[1]
    export_csv([(f"theta{int(round(i * cfg.dtheta))}", res.signals[:, i]) for i in range(n)], out / "signals.csv")
    export_csv([("t", np.arange(len(res.centers))), ("x", res.centers[:, 0]), ("y", res.centers[:, 1])], out / "centers.csv")
    return "signals", res.signals


def _procedure_config(v, d: int):
    from .detect import ProcedureConfig, SparseConstraint

    if v["l1_radius"] is None:
        raise CliError("--l1-radius is required")
    mean = None
    if v["procedure"] == "cusum":
        if v["cusum_mean_file"]:
            mean = read_csv(v["cusum_mean_file"])[1].ravel()
        elif v["cusum_mean"] is not None:
            mean = np.full(d, v["cusum_mean"])
        else:
            raise CliError("--procedure cusum needs --cusum-mean or --cusum-mean-file")
        if mean.shape != (d,):
            raise CliError(f"cusum mean has {mean.size} entries, signals have {d} columns")
    return ProcedureConfig(
        v["procedure"].upper(), v["window"], math.inf, v["eta_mode"], v["eta"], SparseConstraint(v["l1_radius"]), mean
    )


def stage_detect(v, X, out: Path, workers):
    from .detect import calibrate_threshold, run
    from .polar import standardize

    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if v["standardize"]:
        X = standardize(X, v["standardize"])
    cfg = _procedure_config(v, X.shape[1])
    info: dict[str, Any] = {}
    if v["calibrate_arl"] is not None:
        cal = calibrate_threshold(
            cfg, v["calibrate_arl"], X.shape[1], v["calibration_runs"], v["max_len"], v["seed"], workers=workers
        )
        b = cal.b
        info["calibration"] = {"b": cal.b, "arl": cal.arl, "censored": cal.censored, "iterations": cal.iterations}
    elif v["threshold"] is not None:
        b = v["threshold"]
    else:
        raise CliError("give --threshold or --calibrate-arl")
    res = run(X, cfg.with_threshold(b))
    export_csv([("t", np.arange(1, len(res.statistics) + 1)), ("statistic", res.statistics)], out / "statistic.csv")
    write_json({**res.to_json(), "threshold": b, **info}, out / "stop.json")
    return "result", res


def _reference_gvectors(v, grid, cfg, reference):
    from .nbed import reference_gvectors

    ref = v["reference"]
    if ref.startswith("point:"):
        try:
            p, q = (int(s) for s in ref[len("point:") :].split(","))
        except ValueError:
            raise CliError(f"bad reference point {ref!r}; expected point:p,q") from None
        P, Q = grid.shape[:2]
        if not (0 <= p < P and 0 <= q < Q):
            raise CliError(f"reference point {ref!r} outside the {P} x {Q} grid")
        return reference_gvectors(grid.patterns[p, q], reference, cfg)
    g = np.asarray(json.loads(Path(ref).read_text()), dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != 2:
        raise CliError("reference file must hold a JSON list of [gx, gy] vectors")
    return g


def stage_nbed(v, grid: DiffractionGrid, out: Path, workers):
    from .nbed import StrainConfig, make_reference_disk, strain_map

    K, L = grid.shape[2:]
    cfg = StrainConfig(
        expected=v["expected_disks"], gamma=v["gamma"], prefilter=v["prefilter"], kappa=v["kappa"],
        disk_radius=v["disk_radius"], disk_kind=v["disk_kind"], ring_count=v["ring_count"], min_ratio=v["min_ratio"], refine=v["refine"],
    )
    reference = make_reference_disk(cfg.disk_radius, cfg.disk_kind, K, L, cfg.ring_count)
    cfg.g_ref = _reference_gvectors(v, grid, cfg, reference).tolist()
    field = strain_map(grid, cfg, reference, workers)
    P, Q = field.rotation.shape
    pp, qq = np.mgrid[0:P, 0:Q]
    cols = [
        ("p", pp.ravel()), ("q", qq.ravel()),
        ("exx", field.exx.ravel()), ("eyy", field.eyy.ravel()), ("exy", field.exy.ravel()),
        ("rotation_deg", field.rotation.ravel()), ("ok", field.ok.ravel().astype(int)),
    ]
    export_csv(cols, out / "strain.csv")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name, img in (("exx", field.exx), ("eyy", field.eyy), ("exy", field.exy), ("rotation", field.rotation)):
            export_heatmap(np.nan_to_num(img, nan=0.0), out / f"{name}.pgm")
    write_json({"g_ref": cfg.g_ref, "failures": field.failures}, out / "failures.json")
    return "field", field


STAGES: dict[str, Callable] = {
    "synth": stage_synth,
    "denoise": stage_denoise,
    "segment": stage_segment,
    "polar": stage_polar,
    "detect": stage_detect,
    "nbed": stage_nbed,
}


def _convert(v, out_path: Path):
    src = Path(v["input"])
    dst = out_path
    if src.suffix == ".npy":
        arr = np.load(src)
        if dst.suffix != ".tvs":
            raise CliError("a .npy input converts to .tvs")
        if arr.ndim == 4:
            write_grid(DiffractionGrid(arr, v["pixel_size"]), dst)
        else:
            write_stack(VideoStack(arr, v["frame_interval"], v["pixel_size"]), dst)
        return
    if src.suffix != ".tvs":
        raise CliError("input must be .npy or .tvs")
    stack = read_stack(src)
    if dst.suffix == ".npy":
        np.save(dst, np.asarray(stack.frames))
    elif dst.suffix == ".pgm":
        if not 0 <= v["frame"] < stack.shape[0]:
            raise CliError(f"--frame {v['frame']} outside 0..{stack.shape[0] - 1}")
        export_heatmap(stack.frames[v["frame"]], dst)
    else:
        raise CliError("output must be .npy or .pgm")


# ---------------------------------------------------------------------------
# pipeline


def _stage_seed(seed: int, index: int) -> int:
    """Seed of stage ``index`` derived from the top-level seed."""
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1, np.uint64)[0])


def validate_pipeline(cfg: dict) -> list[tuple[str, dict]]:
    """Resolve every stage and check that each one accepts its predecessor's output.

    Stages with a ``seed`` option that do not set it get one derived from the
    top-level seed and the stage index.
    """
    unknown = set(cfg) - {"stages", "seed", "out", "subcommand"}
    if unknown:
        raise CliError(f"unknown pipeline key(s) {sorted(unknown)}")
    stages = cfg.get("stages") or []
    if not stages:
        raise CliError("pipeline needs a non-empty 'stages' list")
    seed = int(cfg.get("seed", 0))
    resolved = []
    prev = None
    for i, raw in enumerate(stages):
        raw = dict(raw)
        name = raw.pop("stage", None)
        if name not in STAGES:
            raise CliError(f"stage {i}: unknown stage {name!r}")
        if "out" in raw:
            raise CliError(f"stage {i}: 'out' is set by the pipeline")
        if "seed" in {o.name for o in OPTIONS[name]} and "seed" not in raw:
            raw["seed"] = _stage_seed(seed, i)
        v = resolve(name, raw)
        if name == "synth":
            produced, needed = SYNTH_OUT[v["kind"]], None
        else:
            needed, produced = STAGE_IO[name]
        if needed is not None:
            if prev is None and v["input"] is None:
                raise StageTypeMismatch(f"stage {i} ({name}) has no input")
            if prev is not None and prev != needed:
                raise StageTypeMismatch(f"stage {i} ({name}) needs {needed} input but the previous stage yields {prev}")
        prev = produced
        resolved.append((name, v))
    return resolved


def run_pipeline(cfg: dict, out: Path, workers: int) -> None:
    stages = validate_pipeline(cfg)
    ensure_dir(out)
    write_json(
        {"subcommand": "pipeline", "seed": int(cfg.get("seed", 0)),
         "stages": [{"stage": n, **{k: val for k, val in v.items() if k != "out"}} for n, v in stages]},
        out / "pipeline.config.json",
    )
    data = None
    for i, (name, v) in enumerate(stages):
        sdir = ensure_dir(out / f"{i:02d}_{name}")
        if data is None and name != "synth":
            data = _load(STAGE_IO[name][0], v["input"])
        _, data = STAGES[name](v, data, sdir, workers)
        # relative to the pipeline root so that runs into different directories compare equal
        write_json({"subcommand": name, **{**v, "out": sdir.name}}, sdir / f"{name}.config.json")


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="temsig", description="In-situ TEM signal processing toolkit.")
    parser.add_argument("--version", action="version", version=f"temsig {__version__}")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)
    for cmd, opts in OPTIONS.items():
        p = sub.add_parser(cmd, help=HELP[cmd], argument_default=argparse.SUPPRESS)
        p.add_argument("input", nargs="?", help="input file")
        p.add_argument("-o", "--out", help="output directory (output file for convert)")
        p.add_argument("--config", help="JSON file of options; flags override it")
        p.add_argument("--threads", type=int, help="worker threads (default: TEMSIG_NUM_THREADS or 1)")
        for o in opts:
            kw: dict[str, Any] = {"help": o.help + (f" (default: {o.default})" if o.default not in (None, [], {}) else "")}
            if o.kind is bool:
                kw["action"] = argparse.BooleanOptionalAction
            elif o.kind in (int, float, str):
                kw["type"] = o.kind
                if o.choices:
                    kw["choices"] = o.choices
            p.add_argument(o.flag, dest=o.name, **kw)
    p = sub.add_parser("pipeline", help="run a chain of stages from a JSON config", argument_default=argparse.SUPPRESS)
    p.add_argument("--config", required=True, help="pipeline JSON: {seed, out, stages: [{stage: ..., ...}]}")
    p.add_argument("-o", "--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads")
    return parser


def _read_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError("config must be a JSON object")
    return cfg


def _dispatch(ns: argparse.Namespace) -> None:
    given = {k: v for k, v in vars(ns).items() if k not in ("subcommand", "config", "threads")}
    workers = getattr(ns, "threads", None) or default_workers()
    if workers < 1:
        raise CliError("--threads must be >= 1")
    config = _read_config(ns.config) if getattr(ns, "config", None) else None
    cmd = ns.subcommand
    if cmd == "pipeline":
        cfg = dict(config)
        cfg.update({k: given[k] for k in ("seed", "out") if k in given})
        if not cfg.get("out"):
            raise CliError("pipeline needs an output directory (--out or 'out')")
        run_pipeline(cfg, Path(cfg["out"]), workers)
        return
    v = resolve(cmd, given, config)
    if v["out"] is None:
        raise CliError("--out is required")
    if cmd == "convert":
        if v["input"] is None:
            raise CliError("convert needs an input file")
        _convert(v, Path(v["out"]))
        return
    if cmd == "synth":
        data = None
    else:
        if v["input"] is None:
            raise CliError(f"{cmd} needs an input file")
        data = _load(STAGE_IO[cmd][0], v["input"])
    out = ensure_dir(v["out"])
    STAGES[cmd](v, data, out, workers)
    write_json({"subcommand": cmd, **v}, out / f"{cmd}.config.json")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.subcommand is None:
            parser.print_help()
            return 1
        _dispatch(ns)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"temsig: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"temsig: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
