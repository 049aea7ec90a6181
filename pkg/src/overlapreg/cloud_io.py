"""Point-cloud file I/O: whitespace .xyz and ASCII .ply.

Coordinates are written with 9 significant digits, so a write/read round
trip is exact at float32 print precision and well under 1e-6 absolute for
desk-scale clouds.
"""

from __future__ import annotations

import numpy as np

from .geometry import Points, as_points


class CloudFormatError(ValueError):
    """Malformed cloud file; message carries the offending line number."""


def read_cloud(path: str) -> Points:
    if path.endswith(".xyz"):
        return _read_xyz(path)
    if path.endswith(".ply"):
        return _read_ply(path)
    raise CloudFormatError(f"unsupported cloud extension: {path!r} (use .xyz or .ply)")


def write_cloud(points: Points, path: str) -> None:
    pts = as_points(points)
    if path.endswith(".xyz"):
        _write_xyz(pts, path)
    elif path.endswith(".ply"):
        _write_ply(pts, path)
    else:
        raise CloudFormatError(f"unsupported cloud extension: {path!r} (use .xyz or .ply)")


def _fmt_row(row: np.ndarray) -> str:
    return " ".join(format(float(c), ".9g") for c in row)


def _read_xyz(path: str) -> Points:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 3:
                raise CloudFormatError(
                    f"{path}: line {lineno}: expected 3 coordinates, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise CloudFormatError(f"{path}: line {lineno}: non-numeric coordinate") from None
    return as_points(np.array(rows, dtype=np.float64).reshape(-1, 3))


def _write_xyz(pts: Points, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in pts:
            fh.write(_fmt_row(row) + "\n")


def _read_ply(path: str) -> Points:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError(f"{path}: line 1: missing 'ply' magic")

    # header: collect elements in order with their property lists
    elements: list[tuple[str, int, list[str]]] = []
    header_end = None
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1:2] != ["ascii"]:
                raise CloudFormatError(f"{path}: line {lineno}: only ascii format supported")
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise CloudFormatError(f"{path}: line {lineno}: malformed element declaration")
            try:
                count = int(tokens[2])
            except ValueError:
                raise CloudFormatError(
                    f"{path}: line {lineno}: non-integer element count"
                ) from None
            elements.append((tokens[1], count, []))
        elif tokens[0] == "property":
            if not elements:
                raise CloudFormatError(f"{path}: line {lineno}: property before any element")
            # list properties occupy one name slot; scalar ones two tokens
            elements[-1][2].append(tokens[-1])
        elif tokens[0] == "end_header":
            header_end = lineno
            break
        else:
            raise CloudFormatError(f"{path}: line {lineno}: unknown header keyword {tokens[0]!r}")
    if header_end is None:
        raise CloudFormatError(f"{path}: missing end_header")

    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise CloudFormatError(f"{path}: no vertex element declared")
    props = vertex[2]
    try:
        cols = [props.index(axis) for axis in ("x", "y", "z")]
    except ValueError:
        raise CloudFormatError(f"{path}: vertex element lacks x/y/z properties") from None

    rows = []
    lineno = header_end
    for name, count, properties in elements:
        for _ in range(count):
            lineno += 1
            if lineno > len(lines):
                raise CloudFormatError(f"{path}: line {lineno}: unexpected end of file")
            if name != "vertex":
                continue
            parts = lines[lineno - 1].split()
            if len(parts) < len(properties):
                raise CloudFormatError(
                    f"{path}: line {lineno}: expected {len(properties)} values, got {len(parts)}"
                )
            try:
                rows.append([float(parts[c]) for c in cols])
            except ValueError:
                raise CloudFormatError(f"{path}: line {lineno}: non-numeric coordinate") from None
    return as_points(np.array(rows, dtype=np.float64).reshape(-1, 3))


def _write_ply(pts: Points, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ply\n")
        fh.write("format ascii 1.0\n")
        fh.write(f"element vertex {len(pts)}\n")
        fh.write("property float x\n")
        fh.write("property float y\n")
        fh.write("property float z\n")
        fh.write("end_header\n")
        for row in pts:
            fh.write(_fmt_row(row) + "\n")
