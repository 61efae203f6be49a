"""Datasets: OFF meshes, surface sampling, synthetic shapes, manifests.

The OFF reader is deliberately tolerant of the quirks found in the wild:
``#`` comments anywhere, counts split across lines, and the fused-header
variant where the counts are glued to the magic word (``OFF3 1 0``).  Faces
with more than three vertices are fanned into triangles.

A dataset on disk is a manifest: one ``<path>\t<label>`` line per sample,
paths resolved relative to the manifest file.  OFF files with faces are
point-sampled on their surface; vertex-only OFF files (as written by the
synthetic generator) are used as point clouds directly.
"""

from __future__ import annotations

import io
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .voxel import PointCloud

__all__ = [
    "OFFParseError",
    "DegenerateMeshError",
    "Mesh",
    "LabeledCloud",
    "parse_off",
    "serialize_off",
    "sample_surface",
    "SYNTH_CLASSES",
    "synth_points",
    "synth_dataset",
    "train_test_split",
    "read_manifest",
    "write_manifest",
    "load_manifest_dataset",
]

SYNTH_CLASSES = ("sphere", "cube", "torus", "pyramid", "cylinder")

DEFAULT_NUM_POINTS = 2048

UNIT_BOUNDS = (1.0, 1.0, 1.0)


class OFFParseError(ValueError):
    """Malformed OFF input; the message carries the offending line number."""


class DegenerateMeshError(ValueError):
    """A mesh whose total surface area is zero cannot be point-sampled."""


@dataclass(frozen=True)
class Mesh:
    """Triangle soup: (N, 3) float vertices, (F, 3) int faces (F may be 0)."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=np.float64, copy=True)
        faces = np.array(self.faces, dtype=np.int64, copy=True)
        if verts.ndim != 2 or verts.shape[1] != 3 or verts.shape[0] == 0:
            raise ValueError(f"vertices must have shape (N>=1, 3), got {verts.shape}")
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces must have shape (F, 3), got {faces.shape}")
        if faces.size and (faces.min() < 0 or faces.max() >= verts.shape[0]):
            raise ValueError("face indices out of vertex range")
        verts.flags.writeable = False
        faces.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)


@dataclass(frozen=True)
class LabeledCloud:
    """A point cloud with its class label (and readable class name)."""

    cloud: PointCloud
    label: int
    class_name: str = ""


# ---------------------------------------------------------------------------
# OFF format


def _tokens_with_lines(text: str) -> Iterator[Tuple[str, int]]:
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        for tok in body.split():
            yield tok, lineno


def parse_off(source: Union[str, io.TextIOBase]) -> Mesh:
    """Parse OFF text (or a text stream) into a :class:`Mesh`."""
    text = source.read() if hasattr(source, "read") else source
    toks = _tokens_with_lines(text)

    def next_tok(what: str) -> Tuple[str, int]:
        try:
            return next(toks)
        except StopIteration:
            raise OFFParseError(f"unexpected end of input while reading {what}") from None

    first, lineno = next_tok("header")
    if not first.upper().startswith("OFF"):
        raise OFFParseError(f"line {lineno}: expected OFF header, got {first!r}")
    pending: List[Tuple[str, int]] = []
    rest = first[3:]
    if rest:
        # fused-header variant: counts glued to the magic word, e.g. "OFF3 1 0"
        pending.append((rest, lineno))

    def take(what: str) -> Tuple[str, int]:
        if pending:
            return pending.pop(0)
        return next_tok(what)

    def take_int(what: str) -> int:
        tok, ln = take(what)
        try:
            return int(tok)
        except ValueError:
            raise OFFParseError(f"line {ln}: expected integer {what}, got {tok!r}") from None

    def take_float(what: str) -> float:
        tok, ln = take(what)
        try:
            return float(tok)
        except ValueError:
            raise OFFParseError(f"line {ln}: expected number {what}, got {tok!r}") from None

    n_verts = take_int("vertex count")
    n_faces = take_int("face count")
    take_int("edge count")  # present in the format, never used
    if n_verts < 1:
        raise OFFParseError(f"line {lineno}: need at least one vertex, got {n_verts}")

    verts = np.empty((n_verts, 3), dtype=np.float64)
    for i in range(n_verts):
        for axis in range(3):
            verts[i, axis] = take_float(f"vertex {i} coordinate")

    triangles: List[Tuple[int, int, int]] = []
    for f in range(n_faces):
        tok, ln = take(f"face {f} size")
        try:
            size = int(tok)
        except ValueError:
            raise OFFParseError(f"line {ln}: expected face size, got {tok!r}") from None
        if size < 3:
            raise OFFParseError(f"line {ln}: face {f} has {size} vertices")
        idx = []
        for k in range(size):
            tok, ln = take(f"face {f} index")
            try:
                v = int(tok)
            except ValueError:
                raise OFFParseError(
                    f"line {ln}: expected vertex index, got {tok!r}"
                ) from None
            if not 0 <= v < n_verts:
                raise OFFParseError(
                    f"line {ln}: vertex index {v} out of range 0..{n_verts - 1}"
                )
            idx.append(v)
        for k in range(1, size - 1):  # fan triangulation
            triangles.append((idx[0], idx[k], idx[k + 1]))

    faces = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    return Mesh(verts, faces)


def serialize_off(mesh: Mesh) -> str:
    """Render a mesh back to OFF text (triangles only)."""
    lines = ["OFF", f"{mesh.vertices.shape[0]} {mesh.faces.shape[0]} 0"]
    for v in mesh.vertices:
        # repr of a Python float is the shortest exact round-trip form
        lines.append(" ".join(repr(float(c)) for c in v))
    for f in mesh.faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# surface sampling


def sample_surface(mesh: Mesh, num_points: int,
                   rng: Union[int, np.random.Generator]) -> np.ndarray:
    """Uniform area-weighted points on the mesh surface, shape (n, 3).

    Triangles are chosen proportionally to their area; points inside each
    triangle use the square-root barycentric trick so density is uniform.
    """
    if num_points < 1:
        raise ValueError(f"num_points must be >= 1, got {num_points}")
    if mesh.faces.shape[0] == 0:
        raise DegenerateMeshError("mesh has no faces to sample")
    rng = np.random.default_rng(rng) if isinstance(rng, int) else rng
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = areas.sum()
    if total <= 0:
        raise DegenerateMeshError("mesh has zero total surface area")
    chosen = rng.choice(areas.size, size=num_points, p=areas / total)
    r1 = np.sqrt(rng.random(num_points))[:, None]
    r2 = rng.random(num_points)[:, None]
    return (
        (1 - r1) * a[chosen]
        + r1 * (1 - r2) * b[chosen]
        + r1 * r2 * c[chosen]
    )


# ---------------------------------------------------------------------------
# synthetic shapes
#
# Each generator returns points on the surface of a shape of characteristic
# size ~1 centered at the origin; rotation/jitter/translation happen later.


def _sphere_points(n: int, rng: np.random.Generator) -> np.ndarray:
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return 0.5 * dirs


def _cube_points(n: int, rng: np.random.Generator) -> np.ndarray:
    face = rng.integers(6, size=n)
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 0.5, -0.5)
    for ax in range(3):
        mask = axis == ax
        others = [a for a in range(3) if a != ax]
        pts[mask, ax] = sign[mask]
        pts[mask, others[0]] = uv[mask, 0]
        pts[mask, others[1]] = uv[mask, 1]
    return pts


def _torus_points(n: int, rng: np.random.Generator) -> np.ndarray:
    major, minor = 0.35, 0.15
    out = np.empty((n, 3))
    filled = 0
    while filled < n:
        m = max(n - filled, 32)
        theta = rng.uniform(0, 2 * math.pi, size=m)
        phi = rng.uniform(0, 2 * math.pi, size=m)
        # rejection keeps density uniform over the actual surface area
        keep = rng.random(m) <= (major + minor * np.cos(phi)) / (major + minor)
        theta, phi = theta[keep], phi[keep]
        take = min(theta.size, n - filled)
        ring = major + minor * np.cos(phi[:take])
        out[filled:filled + take, 0] = ring * np.cos(theta[:take])
        out[filled:filled + take, 1] = ring * np.sin(theta[:take])
        out[filled:filled + take, 2] = minor * np.sin(phi[:take])
        filled += take
    return out


def _pyramid_mesh() -> Mesh:
    verts = np.array([
        [-0.5, -0.5, 0.0],
        [0.5, -0.5, 0.0],
        [0.5, 0.5, 0.0],
        [-0.5, 0.5, 0.0],
        [0.0, 0.0, 0.9],
    ])
    verts = verts - np.array([0.0, 0.0, 0.45])
    faces = np.array([
        [0, 1, 2], [0, 2, 3],          # base
        [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4],
    ])
    return Mesh(verts, faces)


def _pyramid_points(n: int, rng: np.random.Generator) -> np.ndarray:
    return sample_surface(_pyramid_mesh(), n, rng)


def _cylinder_points(n: int, rng: np.random.Generator) -> np.ndarray:
    radius, height = 0.3, 1.0
    lateral = 2 * math.pi * radius * height
    cap = math.pi * radius**2
    probs = np.array([lateral, cap, cap])
    probs = probs / probs.sum()
    part = rng.choice(3, size=n, p=probs)
    pts = np.empty((n, 3))
    theta = rng.uniform(0, 2 * math.pi, size=n)
    side = part == 0
    pts[side, 0] = radius * np.cos(theta[side])
    pts[side, 1] = radius * np.sin(theta[side])
    pts[side, 2] = rng.uniform(-height / 2, height / 2, size=int(side.sum()))
    for which, z in ((1, height / 2), (2, -height / 2)):
        mask = part == which
        r = radius * np.sqrt(rng.random(int(mask.sum())))
        pts[mask, 0] = r * np.cos(theta[mask])
        pts[mask, 1] = r * np.sin(theta[mask])
        pts[mask, 2] = z
    return pts


_GENERATORS = {
    "sphere": _sphere_points,
    "cube": _cube_points,
    "torus": _torus_points,
    "pyramid": _pyramid_points,
    "cylinder": _cylinder_points,
}


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix via a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def synth_points(class_name: str, num_points: int,
                 rng: np.random.Generator) -> np.ndarray:
    """One randomly rotated, size-jittered sample of a synthetic class."""
    try:
        gen = _GENERATORS[class_name]
    except KeyError:
        raise ValueError(
            f"unknown class {class_name!r}; choose from {SYNTH_CLASSES}"
        ) from None
    pts = gen(num_points, rng)
    scale = 1.0 + rng.uniform(-0.1, 0.1)
    return (scale * pts) @ _random_rotation(rng).T


def synth_dataset(classes: Sequence[str], per_class: int, seed: int,
                  num_points: int = DEFAULT_NUM_POINTS) -> List[LabeledCloud]:
    """A balanced labeled dataset of synthetic clouds.

    Deterministic in ``seed``; samples are ordered class by class, so two
    seeds always produce the same label sequence (but different geometry).
    """
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    out: List[LabeledCloud] = []
    for label, name in enumerate(classes):
        if name not in _GENERATORS:
            raise ValueError(f"unknown class {name!r}; choose from {SYNTH_CLASSES}")
        for _ in range(per_class):
            pts = synth_points(name, num_points, rng)
            out.append(LabeledCloud(PointCloud(pts, UNIT_BOUNDS), label, name))
    return out


def train_test_split(samples: Sequence[LabeledCloud], test_fraction: float,
                     seed: int) -> Tuple[List[LabeledCloud], List[LabeledCloud]]:
    """Seeded shuffle split; returns (train, test)."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_test = max(1, int(round(len(samples) * test_fraction)))
    test_idx = set(order[:n_test].tolist())
    train = [samples[i] for i in range(len(samples)) if i not in test_idx]
    test = [samples[i] for i in range(len(samples)) if i in test_idx]
    return train, test


# ---------------------------------------------------------------------------
# manifests


def write_manifest(path: Union[str, Path], entries: Sequence[Tuple[str, int]]) -> None:
    """Write ``<path>\t<label>`` lines."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rel, label in entries:
            fh.write(f"{rel}\t{label}\n")


def read_manifest(path: Union[str, Path]) -> List[Tuple[Path, int]]:
    """Read a manifest; paths come back resolved relative to the manifest."""
    path = Path(path)
    base = path.parent
    out: List[Tuple[Path, int]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(
                f"{path}:{lineno}: expected '<path>\\t<label>', got {line!r}"
            )
        try:
            label = int(parts[1])
        except ValueError:
            raise ValueError(
                f"{path}:{lineno}: label must be an integer, got {parts[1]!r}"
            ) from None
        out.append((base / parts[0], label))
    return out


def load_manifest_dataset(path: Union[str, Path], num_points: int = DEFAULT_NUM_POINTS,
                          seed: int = 0) -> List[LabeledCloud]:
    """Load every manifest entry as a labeled cloud.

    Meshes with faces are surface-sampled to ``num_points``; vertex-only
    files become clouds as-is.  Entries keep manifest order, so loading is
    deterministic for a fixed seed.
    """
    entries = read_manifest(path)
    rng = np.random.default_rng(seed)
    out: List[LabeledCloud] = []
    for file_path, label in entries:
        try:
            mesh = parse_off(file_path.read_text(encoding="utf-8"))
        except OFFParseError as exc:
            raise OFFParseError(f"{file_path}: {exc}") from None
        if mesh.faces.shape[0] > 0:
            pts = sample_surface(mesh, num_points, rng)
        else:
            pts = mesh.vertices
        # chair_0001.off -> "chair", matching the usual mesh-archive naming
        name = re.sub(r"_\d+$", "", file_path.stem)
        out.append(LabeledCloud(PointCloud(pts, UNIT_BOUNDS), label,
                                class_name=name))
    return out
