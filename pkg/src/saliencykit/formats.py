"""Readers and writers for the on-disk formats used by the command line.

* maps: binary or ASCII PGM (P5/P2, maxval up to 65535) and plain CSV grids
* fixations: CSV with one ``x,y`` integer pair per line (x = column, 0-indexed)
* mixtures: the GMM JSON document of :mod:`saliencykit.gmm`
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import FixationSet, MapState, SaliencyMap
from .errors import ParseError, SaliencyError, SchemaError
from .gmm import Gmm2D, gmm_from_dict, gmm_to_dict

MAP_SUFFIXES = (".pgm", ".pnm", ".csv")
FIXATION_SUFFIXES = (".csv",)


def atomic_write(path, data) -> Path:
    """Write bytes or text so that ``path`` is either complete or untouched."""
    path = Path(path)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# --- PGM ----------------------------------------------------------------------------


def _pgm_tokens(data: bytes, count: int):
    """First ``count`` header tokens and the offset just past the separator after them."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Return ``(integer pixel grid, maxval)``."""
    data = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), offset = _pgm_tokens(data, 4)
        width, height, maxval = int(w), int(h), int(maxval)
    except (ValueError, ParseError) as exc:
        raise ParseError(f"{path}: bad PGM header ({exc})") from None
    if magic not in (b"P2", b"P5"):
        raise ParseError(f"{path}: not a grayscale PGM (magic {magic!r})")
    if width < 1 or height < 1 or not 0 < maxval <= 65535:
        raise ParseError(f"{path}: invalid PGM dimensions or maxval")
    n = width * height
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        body = data[offset : offset + n * dtype.itemsize]
        if len(body) != n * dtype.itemsize:
            raise ParseError(f"{path}: PGM pixel data truncated")
        pixels = np.frombuffer(body, dtype=dtype).astype(np.int64)
    else:
        try:
            pixels = np.array(data[offset:].split(), dtype=np.int64)
        except ValueError:
            raise ParseError(f"{path}: non-integer ASCII PGM sample") from None
        if pixels.size != n:
            raise ParseError(f"{path}: expected {n} samples, found {pixels.size}")
    if np.any(pixels > maxval):
        raise ParseError(f"{path}: sample exceeds maxval {maxval}")
    return pixels.reshape(height, width), maxval


def write_pgm(path, pixels: np.ndarray, maxval: int = 65535, binary: bool = True) -> Path:
    pixels = np.asarray(pixels, dtype=np.int64)
    if pixels.ndim != 2 or np.any(pixels < 0) or np.any(pixels > maxval):
        raise SaliencyError("PGM pixels must be a 2-D grid within [0, maxval]")
    h, w = pixels.shape
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        payload = f"P5\n{w} {h}\n{maxval}\n".encode() + pixels.astype(dtype).tobytes()
        return atomic_write(path, payload)
    lines = [f"P2\n{w} {h}\n{maxval}"] + [" ".join(map(str, row)) for row in pixels]
    return atomic_write(path, "\n".join(lines) + "\n")


def map_to_pixels(smap: SaliencyMap, maxval: int = 65535) -> np.ndarray:
    """Linearly rescale a non-negative map so that its peak becomes ``maxval``."""
    vals = smap.values
    peak = vals.max()
    if peak <= 0:
        return np.zeros(vals.shape, dtype=np.int64)
    return np.rint(vals / peak * maxval).astype(np.int64)


# --- maps ---------------------------------------------------------------------------


def read_map(path) -> SaliencyMap:
    """Load a PGM or CSV grid as a raw map (PGM samples are divided by maxval)."""
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        if suffix in (".pgm", ".pnm"):
            pixels, maxval = read_pgm(path)
            return SaliencyMap(pixels / maxval, MapState.RAW)
        if suffix == ".csv":
            try:
                grid = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}") from None
            return SaliencyMap(grid, MapState.RAW)
    except ParseError:
        raise
    except SaliencyError as exc:
        raise ParseError(f"{path}: {exc}") from None
    raise ParseError(f"{path}: unsupported map format {suffix!r}")


def write_map_csv(path, smap: SaliencyMap) -> Path:
    rows = [",".join(repr(float(v)) for v in row) for row in smap.values]
    return atomic_write(path, "\n".join(rows) + "\n")


# --- fixations ----------------------------------------------------------------------


def read_fixations(path, shape: tuple[int, int]) -> FixationSet:
    points = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#") or (lineno == 1 and line.replace(" ", "").lower() == "x,y"):
            continue
        parts = line.split(",")
        try:
            if len(parts) != 2:
                raise ValueError
            points.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ParseError(f"{path}:{lineno}: expected an 'x,y' integer pair, got {line!r}") from None
    try:
        return FixationSet.from_points(points, shape)
    except SaliencyError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_fixations(path, fix: FixationSet) -> Path:
    return atomic_write(path, "".join(f"{x},{y}\n" for x, y in fix.points))


# --- mixtures -----------------------------------------------------------------------


def dumps_gmm(g: Gmm2D) -> str:
    return json.dumps(gmm_to_dict(g), indent=2) + "\n"


def write_gmm(path, g: Gmm2D) -> Path:
    return atomic_write(path, dumps_gmm(g))


def read_gmm(path) -> Gmm2D:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    try:
        return gmm_from_dict(doc)
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from None
