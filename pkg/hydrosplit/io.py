"""
Text formats: mesh dumps, field CSVs, ledgers, rate tables and operators.

Floats are written with 17 significant digits so every file reads back to
the exact same binary values.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from .exceptions import FieldMismatch, MeshError, ValidationError
from .fe_spaces import DiscreteField, FESpace, space_signature
from .mesh import ColumnMesh, SurfaceMesh, _extrude
from .models import BoundaryTag, RateTable
from .utils import format_float

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

LEDGER_COLUMNS = ("m", "t", "u_l2", "u_h1", "p_l2", "div_norm", "energy_residual")


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


# -- mesh -------------------------------------------------------------------


def dump_mesh(mesh: ColumnMesh, path: PathLike) -> None:
    """Write NODES, TETS, FACES plus the SURFACE and SIGMA sections."""
    ns = mesh.surface
    lines: List[str] = ["# hydrosplit column mesh"]
    lines.append("SIGMA " + " ".join(format_float(s) for s in mesh.sigma_levels))
    lines.append(f"SURFACE {ns.node_count} {ns.triangle_count}")
    for i, (xy, d) in enumerate(zip(ns.nodes, mesh.depth_nodal)):
        lines.append(f"{i} {format_float(xy[0])} {format_float(xy[1])} {format_float(d)}")
    for i, tri in enumerate(ns.triangles):
        lines.append(f"{i} {tri[0]} {tri[1]} {tri[2]}")
    lines.append(f"NODES {mesh.node_count}")
    for i, p in enumerate(mesh.nodes):
        lines.append(f"{i} " + " ".join(format_float(c) for c in p))
    lines.append(f"TETS {mesh.tet_count}")
    for i, (tet, col, lay) in enumerate(zip(mesh.tets, mesh.column_of_tet, mesh.layer_of_tet)):
        lines.append(f"{i} {tet[0]} {tet[1]} {tet[2]} {tet[3]} {col} {lay}")
    boundary = np.flatnonzero(mesh.face_tags != BoundaryTag.INTERIOR.value)
    lines.append(f"FACES {len(boundary)}")
    for i, f in enumerate(boundary):
        face = mesh.faces[f]
        tag = BoundaryTag(int(mesh.face_tags[f])).name.lower()
        lines.append(f"{i} {face[0]} {face[1]} {face[2]} {tag}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    logger.debug("mesh written to %s", path)


def _section(lines: List[str], pos: int, name: str) -> Tuple[List[str], int]:
    head = lines[pos].split()
    if not head or head[0] != name:
        raise MeshError(f"Expected section {name} at line {pos + 1}")
    return head, pos + 1


def load_mesh(path: PathLike) -> ColumnMesh:
    """Rebuild a ColumnMesh from :func:`dump_mesh` output.

    The column structure is regenerated from SURFACE and SIGMA and checked
    against the stored NODES and TETS.

    Raises:
        MeshError: If the file is malformed or inconsistent.
    """
    lines = [ln for ln in Path(path).read_text(encoding="ascii").splitlines() if ln and not ln.startswith("#")]
    try:
        head, pos = _section(lines, 0, "SIGMA")
        sigma = np.array([float(v) for v in head[1:]])
        head, pos = _section(lines, pos, "SURFACE")
        n_nodes, n_tris = int(head[1]), int(head[2])
        surf = np.array([[float(v) for v in ln.split()[1:]] for ln in lines[pos : pos + n_nodes]])
        pos += n_nodes
        tris = np.array([[int(v) for v in ln.split()[1:]] for ln in lines[pos : pos + n_tris]], dtype=np.int64)
        pos += n_tris
        head, pos = _section(lines, pos, "NODES")
        nodes = np.array([[float(v) for v in ln.split()[1:]] for ln in lines[pos : pos + int(head[1])]])
        pos += int(head[1])
        head, pos = _section(lines, pos, "TETS")
        tets = np.array([[int(v) for v in ln.split()[1:5]] for ln in lines[pos : pos + int(head[1])]], dtype=np.int64)
    except (IndexError, ValueError) as exc:
        raise MeshError(f"Malformed mesh file {path}: {exc}")

    surface = SurfaceMesh.from_arrays(surf[:, :2], tris)
    mesh = _extrude(surface, surf[:, 2], len(sigma) - 1, sigma)
    if mesh.nodes.shape != nodes.shape or not np.array_equal(mesh.nodes, nodes):
        raise MeshError("Stored NODES do not match the column structure")
    if mesh.tets.shape != tets.shape or not np.array_equal(mesh.tets, tets):
        raise MeshError("Stored TETS do not match the column structure")
    return mesh


# -- fields -----------------------------------------------------------------


def write_field(field: DiscreteField, path: PathLike) -> None:
    """CSV ``dof_id,value`` preceded by a signature row."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["# space_signature", space_signature(field.space), "time", format_float(field.time_label)])
        writer.writerow(["dof_id", "value"])
        for i, v in enumerate(field.coefficients):
            writer.writerow([i, format_float(v)])


def read_field(space: FESpace, path: PathLike) -> DiscreteField:
    """Read a field CSV written for ``space``.

    Raises:
        FieldMismatch: If the stored signature belongs to another space.
    """
    with open(path, newline="", encoding="ascii") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0][0] != "# space_signature":
        raise ValidationError(f"{path} is not a field file")
    expected, found = space_signature(space), rows[0][1]
    if expected != found:
        raise FieldMismatch(expected, found)
    values = np.zeros(space.dof_count)
    for row in rows[2:]:
        values[int(row[0])] = float(row[1])
    return DiscreteField(space, values, float(rows[0][3]))


def write_checkpoint(directory: PathLike, m: int, u: DiscreteField, p: DiscreteField) -> Path:
    """Fields of step m under ``directory/step_<m>``."""
    target = Path(directory) / f"step_{m:06d}"
    target.mkdir(parents=True, exist_ok=True)
    write_field(u, target / "u.csv")
    write_field(p, target / "p.csv")
    return target


def read_checkpoint(directory: PathLike, Xh: FESpace, Qh: FESpace) -> Tuple[DiscreteField, DiscreteField]:
    target = Path(directory)
    return read_field(Xh, target / "u.csv"), read_field(Qh, target / "p.csv")


# -- tables -----------------------------------------------------------------


class CsvTable:
    """Incremental CSV writer with a fixed header."""

    def __init__(self, path: PathLike, columns: Sequence[str]):
        self.path = Path(path)
        self.columns = list(columns)
        self._fh: Optional[TextIO] = open(self.path, "w", newline="", encoding="ascii")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(self.columns)

    def write(self, row: Dict[str, Any]) -> None:
        self._writer.writerow([_cell(row.get(c, "")) for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "CsvTable":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_rows(path: PathLike, rows: Iterable[Sequence[Any]]) -> None:
    """Plain CSV of already tabulated rows (first row is the header)."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def write_rate_table(table: RateTable, path: PathLike) -> None:
    write_rows(path, table.to_rows())


def write_json(data: Dict[str, Any], path: PathLike) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_operator(matrix: sp.spmatrix, path: PathLike, comment: str = "") -> None:
    """MatrixMarket coordinate dump."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment, precision=17)
