"""Reading and writing of stacks, diffraction grids, masks and result artifacts.

All binary data lives in the TVS container: a single-line UTF-8 JSON header
terminated by ``\\n`` followed by raw little-endian float32 values in
(t, row, column) order::

    {"tvs":1,"T":2,"M":64,"N":64,"frame_interval":0.5,"pixel_size":null}\\n<payload>

Diffraction grids reuse the container with ``T = P*Q`` patterns in row-major
scan order and two extra keys, ``scan_p`` and ``scan_q``.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field
from numbers import Integral
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateRangeWarning,
    DimensionMismatch,
    IoFailure,
    MalformedHeader,
    NonFiniteData,
    RaggedColumns,
    ValidationError,
)

_DTYPE = np.dtype("<f4")
_REQUIRED_KEYS = ("tvs", "T", "M", "N", "frame_interval", "pixel_size")
_OPTIONAL_KEYS = ("scan_p", "scan_q")


@dataclass(frozen=True, eq=False)
class VideoStack:
    """T frames of M x N float32 intensities.

    ``frame_interval`` is seconds per frame and ``pixel_size`` nm per pixel;
    either may be ``None`` when unknown.
    """

    frames: np.ndarray
    frame_interval: float | None = None
    pixel_size: float | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.ndim != 3:
            raise DimensionMismatch(f"frames must be T x M x N, got shape {frames.shape}")
        if min(frames.shape) < 1:
            raise DimensionMismatch(f"all stack dimensions must be >= 1, got {frames.shape}")
        frames = np.ascontiguousarray(frames, dtype=np.float32)
        if not np.isfinite(frames).all():
            raise NonFiniteData("stack contains NaN or Inf")
        if self.frame_interval is not None and not self.frame_interval > 0:
            raise ValidationError("frame_interval must be > 0")
        frames.flags.writeable = False
        object.__setattr__(self, "frames", frames)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape

    @property
    def dt(self) -> float:
        """Frame interval, falling back to 1 when unset."""
        return 1.0 if self.frame_interval is None else float(self.frame_interval)

    def __eq__(self, other):
        if not isinstance(other, VideoStack):
            return NotImplemented
        return (
            self.frame_interval == other.frame_interval
            and self.pixel_size == other.pixel_size
            and self.frames.shape == other.frames.shape
            and self.frames.tobytes() == other.frames.tobytes()
        )


@dataclass(frozen=True, eq=False)
class DiffractionGrid:
    """P x Q scan grid of K x L diffraction patterns (non-negative)."""

    patterns: np.ndarray
    scan_step: float | None = None

    def __post_init__(self):
        patterns = np.asarray(self.patterns)
        if patterns.ndim != 4 or min(patterns.shape) < 1:
            raise DimensionMismatch(f"patterns must be P x Q x K x L, got shape {patterns.shape}")
        patterns = np.ascontiguousarray(patterns, dtype=np.float32)
        if not np.isfinite(patterns).all():
            raise NonFiniteData("grid contains NaN or Inf")
        if (patterns < 0).any():
            raise ValidationError("diffraction intensities must be >= 0")
        patterns.flags.writeable = False
        object.__setattr__(self, "patterns", patterns)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.patterns.shape


@dataclass(frozen=True)
class MaskImage:
    """Boolean exclusion mask; ``True`` marks pixels to drop (e.g. beam stop)."""

    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise DimensionMismatch("mask must be 2-D")
        object.__setattr__(self, "bits", bits)

    def check_matches(self, image: np.ndarray) -> None:
        if self.bits.shape != np.shape(image)[-2:]:
            raise DimensionMismatch(
                f"mask shape {self.bits.shape} does not match image {np.shape(image)[-2:]}"
            )


# ---------------------------------------------------------------------------
# TVS container


def _parse_header(line: bytes) -> dict:
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise MalformedHeader("header must be a JSON object")
    unknown = set(header) - set(_REQUIRED_KEYS) - set(_OPTIONAL_KEYS)
    if unknown:
        raise MalformedHeader(f"unknown header keys: {sorted(unknown)}")
    missing = [k for k in _REQUIRED_KEYS if k not in header]
    if missing:
        raise MalformedHeader(f"missing header keys: {missing}")
    if header["tvs"] != 1:
        raise MalformedHeader(f"unsupported tvs version {header['tvs']!r}")
    for key in ("T", "M", "N") + tuple(k for k in _OPTIONAL_KEYS if k in header):
        val = header[key]
        if isinstance(val, bool) or not isinstance(val, int) or val < 1:
            raise MalformedHeader(f"{key} must be a positive integer, got {val!r}")
    for key in ("frame_interval", "pixel_size"):
        val = header[key]
        if val is not None and (isinstance(val, bool) or not isinstance(val, (int, float))):
            raise MalformedHeader(f"{key} must be a number or null")
    if ("scan_p" in header) != ("scan_q" in header):
        raise MalformedHeader("scan_p and scan_q must appear together")
    if "scan_p" in header and header["scan_p"] * header["scan_q"] != header["T"]:
        raise MalformedHeader("scan_p * scan_q must equal T")
    return header


def _read_tvs(path) -> tuple[dict, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            line = fh.readline()
            payload = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if not line.endswith(b"\n"):
        raise MalformedHeader("header must be terminated by a newline")
    header = _parse_header(line[:-1])
    T, M, N = header["T"], header["M"], header["N"]
    expected = 4 * T * M * N
    if len(payload) != expected:
        raise DimensionMismatch(f"payload has {len(payload)} bytes, header requires {expected}")
    data = np.frombuffer(payload, dtype=_DTYPE).reshape(T, M, N)
    if not np.isfinite(data).all():
        raise NonFiniteData(f"{path}: payload contains NaN or Inf")
    return header, data


def _write_tvs(path, data: np.ndarray, header: dict) -> None:
    line = json.dumps(header, separators=(",", ":"), allow_nan=False).encode("utf-8") + b"\n"
    payload = np.ascontiguousarray(data, dtype=_DTYPE).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(line)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def _num(x):
    if x is None:
        return None
    return int(x) if isinstance(x, Integral) else float(x)


def read_stack(path) -> VideoStack:
    """Load a TVS file as a :class:`VideoStack`."""
    header, data = _read_tvs(path)
    return VideoStack(data.copy(), header["frame_interval"], header["pixel_size"])


def write_stack(stack: VideoStack, path) -> None:
    """Write ``stack`` so that :func:`read_stack` returns it bit-for-bit."""
    if not isinstance(stack, VideoStack):
        stack = VideoStack(stack)
    T, M, N = stack.shape
    header = {
        "tvs": 1,
        "T": T,
        "M": M,
        "N": N,
        "frame_interval": _num(stack.frame_interval),
        "pixel_size": _num(stack.pixel_size),
    }
    _write_tvs(path, stack.frames, header)


def read_grid(path) -> DiffractionGrid:
    """Load a TVS file carrying ``scan_p``/``scan_q`` as a :class:`DiffractionGrid`.

    The header ``pixel_size`` field carries the real-space scan step.
    """
    header, data = _read_tvs(path)
    if "scan_p" not in header:
        raise MalformedHeader("grid files need scan_p and scan_q header keys")
    P, Q = header["scan_p"], header["scan_q"]
    patterns = data.reshape(P, Q, header["M"], header["N"]).copy()
    return DiffractionGrid(patterns, header["pixel_size"])


def write_grid(grid: DiffractionGrid, path) -> None:
    P, Q, K, L = grid.shape
    header = {
        "tvs": 1,
        "T": P * Q,
        "M": K,
        "N": L,
        "frame_interval": None,
        "pixel_size": _num(grid.scan_step),
        "scan_p": P,
        "scan_q": Q,
    }
    _write_tvs(path, grid.patterns.reshape(P * Q, K, L), header)


def read_mask(path) -> MaskImage:
    """Masks are single-frame TVS files; any non-zero value marks an excluded pixel."""
    _, data = _read_tvs(path)
    if data.shape[0] != 1:
        raise DimensionMismatch("mask file must contain exactly one frame")
    return MaskImage(data[0] != 0)


def write_mask(mask: MaskImage, path) -> None:
    M, N = mask.bits.shape
    header = {"tvs": 1, "T": 1, "M": M, "N": N, "frame_interval": None, "pixel_size": None}
    _write_tvs(path, mask.bits.astype(np.float32)[None], header)


# ---------------------------------------------------------------------------
# Result artifacts


def heatmap_bytes(image, scale: tuple[float, float] | None = None) -> np.ndarray:
    """Map ``image`` linearly onto 0..255 with round-half-up.

    ``scale=None`` uses the image min/max.  Scaled values are snapped to 1e-6
    before rounding so that shifting the image by a constant cannot move a
    value across a rounding boundary through float cancellation.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionMismatch("heatmap image must be 2-D")
    if not np.isfinite(img).all():
        raise NonFiniteData("heatmap image must be finite")
    lo, hi = (float(img.min()), float(img.max())) if scale is None else map(float, scale)
    if not hi > lo:
        warnings.warn("degenerate intensity range; writing an all-zero image", DegenerateRangeWarning)
        return np.zeros(img.shape, dtype=np.uint8)
    scaled = (img - lo) / (hi - lo) * 255.0
    scaled = np.round(scaled, 6)
    out = np.floor(scaled + 0.5)
    return np.clip(out, 0, 255).astype(np.uint8)


def export_heatmap(image, path, scale: tuple[float, float] | None = None) -> None:
    """Write ``image`` as an 8-bit binary PGM (P5)."""
    pix = heatmap_bytes(image, scale)
    H, W = pix.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
            fh.write(pix.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise MalformedHeader("not a binary PGM")
    W, H = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(H, W)


def format_value(x) -> str:
    """Render one CSV cell: integers verbatim, reals with 9 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (Integral, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    ax = abs(x)
    if ax != 0.0 and (ax >= 1e15 or ax < 1e-6):
        return f"{x:.8e}"
    return np.format_float_positional(x, precision=9, unique=False, fractional=False, trim="k")


def export_csv(series: Mapping[str, Sequence] | Iterable[tuple[str, Sequence]], path) -> None:
    """Write labeled, equal-length columns as CSV with a mandatory header row."""
    items = list(series.items()) if isinstance(series, Mapping) else list(series)
    lengths = {len(col) for _, col in items}
    if len(lengths) > 1:
        raise RaggedColumns(f"column lengths differ: {sorted(lengths)}")
    n = lengths.pop() if lengths else 0
    lines = [",".join(name for name, _ in items)]
    cols = [list(col) for _, col in items]
    for i in range(n):
        lines.append(",".join(format_value(col[i]) for col in cols))
    text = "\n".join(lines) + "\n"
    try:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a CSV written by :func:`export_csv` into (header, float matrix)."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    header = lines[0].split(",") if lines else []
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return header, data


def write_json(obj, path) -> None:
    """Deterministic JSON (sorted keys, fixed separators, trailing newline)."""
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"
    try:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        os.makedirs(p, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return p
