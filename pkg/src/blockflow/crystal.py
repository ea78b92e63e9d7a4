"""Periodic point-set geometry and the average-minimum-distance descriptor.

The descriptor's k-th entry is the mean, over motif points, of the distance
to the k-th nearest neighbor in the infinite periodic structure. Neighbor
search expands concentric shells of lattice images and stops only when every
unexplored image is provably farther than the current k-th candidate, so the
reported distances are exact, no cutoff heuristics.

CIF support is deliberately a P1-only subset: cell parameters plus one
atom-site loop with fractional coordinates. Files carrying a non-trivial
symmetry group fail loudly instead of being silently misread.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (BlockflowError, CoincidentPointsError,
                     DegenerateInputError, ValidationError)

_NUMBER_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eEdD][+-]?\d+)?)(?:\(\d+\))?$")
_IDENTITY_OP_RE = re.compile(r"^(?:1\s+)?\+?x\s*,\s*\+?y\s*,\s*\+?z$", re.IGNORECASE)

_SPACE_GROUP_TAGS = (
    "_symmetry_space_group_name_h-m",
    "_space_group_name_h-m_alt",
    "_symmetry_space_group_name_hall",
)
_SPACE_GROUP_NUMBER_TAGS = ("_symmetry_int_tables_number", "_space_group_it_number")
_SYMOP_TAGS = ("_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz")

_CELL_TAGS = ("_cell_length_a", "_cell_length_b", "_cell_length_c",
              "_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma")


def _split_fields(line: str) -> list[str]:
    # quoted values ('P 1') count as one field
    out = []
    for piece in re.findall(r"'[^']*'|\"[^\"]*\"|\S+", line):
        if piece[0] in "'\"" and piece[-1] == piece[0] and len(piece) >= 2:
            piece = piece[1:-1]
        out.append(piece)
    return out


def _parse_number(text: str, where: str) -> float:
    m = _NUMBER_RE.match(text.strip())
    if m is None:
        raise ValidationError(f"{where}: cannot parse number {text!r}")
    return float(m.group(1).replace("d", "e").replace("D", "e"))


@dataclass
class CifStructure:
    cell: tuple[float, float, float, float, float, float]  # a b c alpha beta gamma
    positions: np.ndarray  # (m, 3) fractional, reduced mod 1
    labels: list[str]


def parse_cif(text: str, name: str = "<cif>") -> CifStructure:
    """Parse the P1 subset of a CIF file; errors carry name:line positions."""
    lines = text.splitlines()
    tags: dict[str, tuple[str, int]] = {}
    loops: list[tuple[list[str], list[tuple[int, list[str]]]]] = []
    i = 0
    while i < len(lines):
        stripped = lines[i].strip()
        if not stripped or stripped.startswith("#") or stripped.startswith("data_"):
            i += 1
            continue
        if stripped.lower() == "loop_":
            i += 1
            header: list[str] = []
            while i < len(lines):
                s = lines[i].strip()
                if s.startswith("_"):
                    header.append(_split_fields(s)[0].lower())
                    i += 1
                else:
                    break
            rows: list[tuple[int, list[str]]] = []
            while i < len(lines):
                s = lines[i].strip()
                if (not s or s.startswith("#") or s.startswith("_")
                        or s.lower() == "loop_" or s.startswith("data_")):
                    break
                rows.append((i + 1, _split_fields(s)))
                i += 1
            loops.append((header, rows))
            continue
        if stripped.startswith("_"):
            fields = _split_fields(stripped)
            if len(fields) >= 2:
                tags[fields[0].lower()] = (" ".join(fields[1:]), i + 1)
            i += 1
            continue
        i += 1

    for tag in _SPACE_GROUP_TAGS:
        if tag in tags:
            value, lineno = tags[tag]
            if value.replace(" ", "").upper() != "P1":
                raise ValidationError(
                    f"{name}:{lineno}: only P1 structures are supported, got space group {value!r}")
    for tag in _SPACE_GROUP_NUMBER_TAGS:
        if tag in tags:
            value, lineno = tags[tag]
            if _parse_number(value, f"{name}:{lineno}") != 1:
                raise ValidationError(f"{name}:{lineno}: only space group number 1 is supported")

    cell = []
    for tag in _CELL_TAGS:
        if tag not in tags:
            raise ValidationError(f"{name}: missing cell parameter {tag}")
        value, lineno = tags[tag]
        cell.append(_parse_number(value, f"{name}:{lineno}"))

    positions = None
    labels: list[str] = []
    for header, rows in loops:
        if any(tag in _SYMOP_TAGS for tag in header):
            col = next(i for i, tag in enumerate(header) if tag in _SYMOP_TAGS)
            ops = [(lineno, row[col] if col < len(row) else "") for lineno, row in rows]
            non_identity = [(ln, op) for ln, op in ops if not _IDENTITY_OP_RE.match(op.strip())]
            if non_identity:
                ln, op = non_identity[0]
                raise ValidationError(
                    f"{name}:{ln}: symmetry operation {op!r} beyond identity; only P1 is supported")
            continue
        wanted = ("_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z")
        if all(tag in header for tag in wanted):
            cols = [header.index(tag) for tag in wanted]
            label_col = None
            for candidate in ("_atom_site_label", "_atom_site_type_symbol"):
                if candidate in header:
                    label_col = header.index(candidate)
                    break
            pts = []
            for lineno, row in rows:
                if len(row) != len(header):
                    raise ValidationError(
                        f"{name}:{lineno}: atom row has {len(row)} fields, loop declares {len(header)}")
                pts.append([_parse_number(row[c], f"{name}:{lineno}") for c in cols])
                labels.append(row[label_col] if label_col is not None else f"X{len(labels) + 1}")
            positions = np.asarray(pts, dtype=np.float64)

    if positions is None or positions.shape[0] == 0:
        raise ValidationError(f"{name}: no atom-site loop with fractional coordinates")
    positions = np.mod(positions, 1.0)
    return CifStructure(cell=tuple(cell), positions=positions, labels=labels)


def cell_basis(a: float, b: float, c: float,
               alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Cell vectors as rows, a along x and b in the xy-plane. Angles in degrees."""
    for name, value in (("a", a), ("b", b), ("c", c)):
        if not (value > 0):
            raise DegenerateInputError(f"cell length {name} must be positive, got {value}")
    for name, value in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
        if not (0.0 < value < 180.0):
            raise DegenerateInputError(f"cell angle {name} must be in (0, 180), got {value}")
    ca, cb, cg = (np.cos(np.radians(v)) for v in (alpha, beta, gamma))
    sg = np.sin(np.radians(gamma))
    cy = (ca - cb * cg) / sg
    arg = 1.0 - cb * cb - cy * cy
    if arg <= 0.0:
        raise DegenerateInputError(f"cell angles ({alpha}, {beta}, {gamma}) do not close a 3D cell")
    basis = np.array([
        [a, 0.0, 0.0],
        [b * cg, b * sg, 0.0],
        [c * cb, c * cy, c * np.sqrt(arg)],
    ])
    return basis


@dataclass
class PeriodicPointSet:
    basis: np.ndarray  # (3,3), rows are the cell vectors in Angstrom
    motif: np.ndarray  # (m,3) fractional, reduced mod 1
    labels: list[str] | None = None

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=np.float64)
        self.motif = np.mod(np.asarray(self.motif, dtype=np.float64), 1.0)
        if self.basis.shape != (3, 3):
            raise DegenerateInputError(f"basis must be 3x3, got {self.basis.shape}")
        if abs(np.linalg.det(self.basis)) <= 1e-6:
            raise DegenerateInputError("basis is singular (|det| <= 1e-6)")
        if self.motif.ndim != 2 or self.motif.shape[1] != 3 or self.motif.shape[0] == 0:
            raise DegenerateInputError("motif must be a non-empty (m, 3) array")

    @classmethod
    def from_cif(cls, structure: CifStructure) -> "PeriodicPointSet":
        return cls(cell_basis(*structure.cell), structure.positions, structure.labels)


def _shell_vectors(radius: int) -> np.ndarray:
    """Integer lattice offsets with Chebyshev norm exactly `radius`."""
    if radius == 0:
        return np.zeros((1, 3), dtype=np.int64)
    rng = np.arange(-radius, radius + 1)
    grid = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid[np.abs(grid).max(axis=1) == radius]


def kth_nearest_distances(ps: PeriodicPointSet, k: int) -> np.ndarray:
    """(m, k) sorted distances from each motif point into the infinite set.

    Correctness of the stopping rule: a difference vector reaching a cell at
    Chebyshev radius >= r+1 has some integer coordinate of magnitude > r
    (fractional offsets lie in (-1, 1)), and any Cartesian vector p satisfies
    |p| >= |coord_i(p)| * h_min where h_min = min_i 1 / ||column_i(B^-1)||.
    So once every current k-th distance is strictly below r * h_min, no
    unexplored image can matter.
    """
    if k < 1:
        raise DegenerateInputError("k must be >= 1")
    inv = np.linalg.inv(ps.basis)
    h_min = 1.0 / np.linalg.norm(inv, axis=0).max()
    cart = ps.motif @ ps.basis
    m = cart.shape[0]
    tol = 1e-9 * h_min
    best = np.empty((m, 0))
    radius = 0
    while True:
        offsets = _shell_vectors(radius).astype(np.float64)
        images = (offsets[:, None, :] + ps.motif[None, :, :]).reshape(-1, 3) @ ps.basis
        dists = np.linalg.norm(images[None, :, :] - cart[:, None, :], axis=2)
        cand = np.concatenate([best, dists], axis=1)
        if cand.shape[1] > k + 1:
            cand = np.partition(cand, k, axis=1)[:, :k + 1]
        best = np.sort(cand, axis=1)
        if best.shape[1] >= k + 1 and best[:, k].max() < radius * h_min:
            break
        radius += 1
        if radius > 4096:
            raise BlockflowError("lattice-image search did not converge")
    if best[:, 0].max() > tol:
        raise BlockflowError("self-image distance is not zero; numerical inconsistency")
    if best[:, 1].min() < tol:
        raise CoincidentPointsError("motif contains coincident points")
    return best[:, 1:k + 1]


@dataclass
class AmdDescriptor:
    values: np.ndarray  # (k,) Angstrom

    @property
    def k(self) -> int:
        return self.values.shape[0]


def amd(ps: PeriodicPointSet, k: int = 100) -> AmdDescriptor:
    """Column means of the per-point nearest-distance matrix."""
    return AmdDescriptor(kth_nearest_distances(ps, k).mean(axis=0))


def _as_matrix(descriptors) -> np.ndarray:
    rows = [d.values if isinstance(d, AmdDescriptor) else np.asarray(d, dtype=np.float64)
            for d in descriptors]
    lengths = {r.shape[0] for r in rows}
    if len(lengths) > 1:
        raise ValidationError(f"descriptors have mixed lengths {sorted(lengths)}")
    return np.asarray(rows, dtype=np.float64)


def descriptor_distance_matrix(descriptors) -> np.ndarray:
    """Pairwise Euclidean distances between descriptor vectors."""
    mat = _as_matrix(descriptors)
    diff = mat[:, None, :] - mat[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def novelty_score(candidates, references) -> np.ndarray:
    """Per-candidate Euclidean distance to the nearest reference descriptor."""
    refs = _as_matrix(references)
    if refs.shape[0] == 0:
        raise ValidationError("reference descriptor set is empty")
    cands = _as_matrix(candidates)
    if cands.shape[1] != refs.shape[1]:
        raise ValidationError(
            f"candidate length {cands.shape[1]} != reference length {refs.shape[1]}")
    diff = cands[:, None, :] - refs[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2)).min(axis=1)


def load_cif_file(path: str | Path) -> PeriodicPointSet:
    path = Path(path)
    return PeriodicPointSet.from_cif(parse_cif(path.read_text(), name=str(path)))
