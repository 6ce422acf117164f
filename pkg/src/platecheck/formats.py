"""Text interchange formats: meshes/maps, pixel sets, configs, reports.

Everything is line-oriented key-value text. Numbers are printed with 9
significant digits, so emission is deterministic byte-for-byte for
identical inputs; a 9-digit decimal re-parses to a double that prints
back to the same 9 digits, making parse/emit idempotent.
"""

from __future__ import annotations

import io

import numpy as np

from . import __version__
from .errors import InvalidArgumentError
from .geometry import (
    PiecewiseAffineMap,
    PixelSet,
    PrismMesh,
    TriangulatedDomain,
)

__all__ = [
    "write_map",
    "read_map",
    "write_pixelset",
    "read_pixelset",
    "parse_config",
    "emit_report",
    "parse_report",
]

_MESH_MAGIC = "platecheck-mesh v1"
_PIXEL_MAGIC = "platecheck-pixelset v1"
_REPORT_MAGIC = "platecheck-report v1"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.9g" % float(x)
    return str(x)


def _fmt_row(row) -> str:
    return " ".join(_fmt(v) for v in row)


# -- mesh / map format -----------------------------------------------------


def write_map(path, obj) -> None:
    """Write a mesh or piecewise-affine map as structured text.

    ``obj`` is a TriangulatedDomain, PrismMesh, or PiecewiseAffineMap;
    the ``values`` block is present exactly when a map is given. Prism
    meshes serialize as plain 3D tetrahedral meshes.
    """
    values = None
    if isinstance(obj, PiecewiseAffineMap):
        values = obj.values
        dom = obj.domain
    elif isinstance(obj, (TriangulatedDomain, PrismMesh)):
        dom = obj
    else:
        raise InvalidArgumentError(f"cannot serialize {type(obj).__name__}")
    buf = io.StringIO()
    buf.write(_MESH_MAGIC + "\n")
    buf.write(f"dimension {dom.dimension}\n")
    buf.write(f"vertices {len(dom.vertices)}\n")
    for v in dom.vertices:
        buf.write(_fmt_row(v) + "\n")
    buf.write(f"simplices {len(dom.simplices)}\n")
    for s in dom.simplices:
        buf.write(_fmt_row(s) + "\n")
    if values is not None:
        buf.write(f"values {values.shape[0]} {values.shape[1]}\n")
        for v in values:
            buf.write(_fmt_row(v) + "\n")
    buf.write(f"boundary {len(dom.boundary_facets)}\n")
    for f in dom.boundary_facets:
        buf.write(_fmt_row(f) + "\n")
    buf.write("end\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def _read_block(lines, i, count, parser):
    rows = [parser(lines[i + j]) for j in range(count)]
    return rows, i + count


def read_map(path):
    """Read a mesh/map file; returns a PiecewiseAffineMap when a
    ``values`` block is present, a TriangulatedDomain otherwise."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != _MESH_MAGIC:
        raise InvalidArgumentError(f"{path}: not a {_MESH_MAGIC} file")
    i = 1
    dim = vertices = simplices = values = n_boundary = None
    while i < len(lines):
        parts = lines[i].split()
        key = parts[0]
        i += 1
        if key == "end":
            break
        if key == "dimension":
            dim = int(parts[1])
        elif key == "vertices":
            vertices, i = _read_block(
                lines, i, int(parts[1]),
                lambda ln: [float(t) for t in ln.split()])
        elif key == "simplices":
            simplices, i = _read_block(
                lines, i, int(parts[1]),
                lambda ln: [int(t) for t in ln.split()])
        elif key == "values":
            values, i = _read_block(
                lines, i, int(parts[1]),
                lambda ln: [float(t) for t in ln.split()])
        elif key == "boundary":
            n_boundary = int(parts[1])
            _, i = _read_block(lines, i, n_boundary, str)
        else:
            raise InvalidArgumentError(f"{path}: unknown block '{key}'")
    if dim is None or vertices is None or simplices is None:
        raise InvalidArgumentError(f"{path}: incomplete mesh file")
    dom = TriangulatedDomain(np.array(vertices), np.array(simplices))
    if dom.dimension != dim:
        raise InvalidArgumentError(
            f"{path}: declared dimension {dim} != vertex dimension "
            f"{dom.dimension}")
    if n_boundary is not None and n_boundary != len(dom.boundary_facets):
        raise InvalidArgumentError(
            f"{path}: boundary block lists {n_boundary} facets, mesh has "
            f"{len(dom.boundary_facets)}")
    if values is None:
        return dom
    return PiecewiseAffineMap(dom, np.array(values))


# -- pixel set format ------------------------------------------------------


def write_pixelset(path, pixels: PixelSet) -> None:
    """Run-length-encoded pixel set: alternating run lengths of the
    C-order flattened mask, starting with a (possibly zero) run of
    unset cells."""
    flat = pixels.mask.ravel()
    runs = []
    current, count = False, 0
    for bit in flat:
        if bool(bit) == current:
            count += 1
        else:
            runs.append(count)
            current, count = bool(bit), 1
    runs.append(count)
    with open(path, "w") as fh:
        fh.write(_PIXEL_MAGIC + "\n")
        fh.write(f"dimension {pixels.dimension}\n")
        fh.write("origin " + _fmt_row(pixels.origin) + "\n")
        fh.write("cell %s\n" % _fmt(pixels.cell))
        fh.write("shape " + " ".join(str(s) for s in pixels.mask.shape)
                 + "\n")
        fh.write("rle " + " ".join(str(r) for r in runs) + "\n")
        fh.write("end\n")


def read_pixelset(path) -> PixelSet:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != _PIXEL_MAGIC:
        raise InvalidArgumentError(f"{path}: not a {_PIXEL_MAGIC} file")
    fields = {}
    for ln in lines[1:]:
        if ln == "end":
            break
        key, _, rest = ln.partition(" ")
        fields[key] = rest
    try:
        origin = [float(t) for t in fields["origin"].split()]
        cell = float(fields["cell"])
        shape = tuple(int(t) for t in fields["shape"].split())
        runs = [int(t) for t in fields["rle"].split()]
    except KeyError as exc:
        raise InvalidArgumentError(f"{path}: missing field {exc}") from exc
    total = int(np.prod(shape))
    if sum(runs) != total:
        raise InvalidArgumentError(
            f"{path}: run lengths sum to {sum(runs)}, shape needs {total}")
    flat = np.zeros(total, dtype=bool)
    pos, bit = 0, False
    for r in runs:
        flat[pos:pos + r] = bit
        pos += r
        bit = not bit
    return PixelSet(origin, cell, flat.reshape(shape))


# -- flat config files -----------------------------------------------------


def parse_config(path) -> dict:
    """Flat ``key = value`` text with ``#`` comments, no nesting."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidArgumentError(
                    f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


# -- report_v1 -------------------------------------------------------------


def emit_report(report: dict, path, format: str = "structured-text",
                ) -> None:
    """Write a ``report_v1`` document.

    ``report`` maps section names to flat key-value dicts; the optional
    key ``rows`` holds a list of flat dicts (one per ladder element). In
    ``comma-separated table`` format the rows become a CSV body and all
    scalar sections become ``#`` comment lines.
    """
    rows = report.get("rows", [])
    sections = {k: v for k, v in report.items() if k != "rows"}
    if format in ("structured-text", "text"):
        buf = io.StringIO()
        buf.write(_REPORT_MAGIC + "\n")
        buf.write(f"tool platecheck {__version__}\n")
        for name, body in sections.items():
            buf.write(f"[{name}]\n")
            for key, value in body.items():
                buf.write(f"{key} = {_fmt(value)}\n")
        for i, row in enumerate(rows):
            buf.write(f"[row {i}]\n")
            for key, value in row.items():
                buf.write(f"{key} = {_fmt(value)}\n")
        buf.write("end\n")
    elif format in ("comma-separated table", "csv"):
        buf = io.StringIO()
        buf.write(f"# {_REPORT_MAGIC}\n")
        buf.write(f"# tool platecheck {__version__}\n")
        for name, body in sections.items():
            for key, value in body.items():
                buf.write(f"# {name}.{key} = {_fmt(value)}\n")
        if rows:
            cols = list(rows[0].keys())
            buf.write(",".join(cols) + "\n")
            for row in rows:
                buf.write(",".join(_fmt(row.get(c, "")) for c in cols)
                          + "\n")
    else:
        raise InvalidArgumentError(f"unknown report format '{format}'")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def _parse_scalar(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_report(path) -> dict:
    """Parse a structured-text ``report_v1`` document back into the
    sections/rows structure accepted by :func:`emit_report`."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _REPORT_MAGIC:
        raise InvalidArgumentError(f"{path}: not a {_REPORT_MAGIC} file")
    report: dict = {}
    rows: list = []
    current = None
    for ln in lines[1:]:
        ln = ln.strip()
        if not ln or ln == "end" or ln.startswith("tool "):
            continue
        if ln.startswith("[") and ln.endswith("]"):
            name = ln[1:-1]
            if name.startswith("row "):
                current = {}
                rows.append(current)
            else:
                current = {}
                report[name] = current
            continue
        if current is None or "=" not in ln:
            raise InvalidArgumentError(f"{path}: malformed line '{ln}'")
        key, _, value = ln.partition("=")
        current[key.strip()] = _parse_scalar(value.strip())
    if rows:
        report["rows"] = rows
    return report
