"""OFF parsing, surface sampling, synthetic shapes, manifests."""

import math

import numpy as np
import pytest
from scipy import stats

from quanv3d.data import (
    DegenerateMeshError,
    LabeledCloud,
    Mesh,
    OFFParseError,
    SYNTH_CLASSES,
    load_manifest_dataset,
    parse_off,
    read_manifest,
    sample_surface,
    serialize_off,
    synth_dataset,
    synth_points,
    train_test_split,
    write_manifest,
)

SIMPLE_OFF = """OFF
4 2 0
0.0 0.0 0.0
1.0 0.0 0.0
1.0 1.0 0.0
0.0 1.0 0.0
3 0 1 2
3 0 2 3
"""


class TestParseOff:
    def test_simple_mesh(self):
        mesh = parse_off(SIMPLE_OFF)
        assert mesh.vertices.shape == (4, 3)
        assert mesh.faces.shape == (2, 3)
        assert np.allclose(mesh.vertices[2], [1.0, 1.0, 0.0])

    def test_fused_header_variant(self):
        """Counts glued to the magic word ('OFF3 1 0') still parse."""
        text = "OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
        mesh = parse_off(text)
        assert mesh.vertices.shape == (3, 3)
        assert mesh.faces.shape == (1, 3)

    def test_comments_and_blank_lines_ignored(self):
        text = "# a comment\nOFF\n# another\n3 1 0\n\n0 0 0\n1 0 0 # inline\n0 1 0\n3 0 1 2\n"
        mesh = parse_off(text)
        assert mesh.faces.shape == (1, 3)

    def test_quad_faces_fan_triangulated(self):
        text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
        mesh = parse_off(text)
        assert mesh.faces.shape == (2, 3)
        assert np.array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])

    def test_vertex_only_file(self):
        text = "OFF\n2 0 0\n0 0 0\n1 1 1\n"
        mesh = parse_off(text)
        assert mesh.vertices.shape == (2, 3)
        assert mesh.faces.shape == (0, 3)

    def test_missing_header_reports_line(self):
        with pytest.raises(OFFParseError, match="line 1"):
            parse_off("3 1 0\n0 0 0\n")

    def test_bad_number_reports_line(self):
        text = "OFF\n3 1 0\n0 0 0\n1 zzz 0\n0 1 0\n3 0 1 2\n"
        with pytest.raises(OFFParseError, match="line 4"):
            parse_off(text)

    def test_face_index_out_of_range(self):
        text = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n"
        with pytest.raises(OFFParseError, match="out of range"):
            parse_off(text)

    def test_truncated_input(self):
        with pytest.raises(OFFParseError, match="end of input"):
            parse_off("OFF\n3 1 0\n0 0 0\n")

    def test_roundtrip_is_exact(self):
        """serialize_off -> parse_off reproduces coordinates bit-exactly."""
        rng = np.random.default_rng(0)
        mesh = Mesh(rng.normal(size=(5, 3)), np.array([[0, 1, 2], [2, 3, 4]]))
        back = parse_off(serialize_off(mesh))
        assert np.array_equal(back.vertices, mesh.vertices)
        assert np.array_equal(back.faces, mesh.faces)


class TestSampleSurface:
    def test_points_lie_on_the_surface(self):
        """Samples from a single z=0 triangle stay in that plane and inside it."""
        mesh = Mesh(
            np.array([[0, 0, 0], [2, 0, 0], [0, 2, 0]], dtype=float),
            np.array([[0, 1, 2]]),
        )
        pts = sample_surface(mesh, 500, 1)
        assert np.allclose(pts[:, 2], 0.0, atol=1e-12)
        assert np.all(pts[:, 0] >= -1e-12)
        assert np.all(pts[:, 1] >= -1e-12)
        assert np.all(pts[:, 0] + pts[:, 1] <= 2 + 1e-9)

    def test_area_weighted_uniformity(self):
        """Chi-squared on per-face counts vs area for 10 random meshes (p > 0.001).

        Faces sit in distinct z-planes so each sample's face is recoverable.
        """
        rng = np.random.default_rng(42)
        for trial in range(10):
            n_faces = int(rng.integers(3, 8))
            verts = []
            faces = []
            for f in range(n_faces):
                base = rng.uniform(0.5, 3.0, size=2)
                verts += [
                    [0.0, 0.0, float(f)],
                    [base[0], 0.0, float(f)],
                    [0.0, base[1], float(f)],
                ]
                faces.append([3 * f, 3 * f + 1, 3 * f + 2])
            mesh = Mesh(np.array(verts), np.array(faces))
            a = mesh.vertices[mesh.faces[:, 0]]
            b = mesh.vertices[mesh.faces[:, 1]]
            c = mesh.vertices[mesh.faces[:, 2]]
            areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

            n = 4000
            pts = sample_surface(mesh, n, int(rng.integers(1 << 30)))
            which = np.rint(pts[:, 2]).astype(int)
            counts = np.bincount(which, minlength=n_faces)
            expected = n * areas / areas.sum()
            chi2 = float(np.sum((counts - expected) ** 2 / expected))
            p = stats.chi2.sf(chi2, df=n_faces - 1)
            assert p > 0.001, f"trial {trial}: p={p:.2e}"

    def test_no_faces_rejected(self):
        mesh = Mesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=int))
        with pytest.raises(DegenerateMeshError):
            sample_surface(mesh, 10, 0)

    def test_zero_area_rejected(self):
        mesh = Mesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
        with pytest.raises(DegenerateMeshError):
            sample_surface(mesh, 10, 0)

    def test_seeded_determinism(self):
        mesh = parse_off(SIMPLE_OFF)
        a = sample_surface(mesh, 64, 7)
        b = sample_surface(mesh, 64, 7)
        assert np.array_equal(a, b)


class TestSynthShapes:
    def test_sphere_points_have_constant_radius(self):
        rng = np.random.default_rng(1)
        pts = _unrotated("sphere", rng)
        assert np.allclose(np.linalg.norm(pts, axis=1), 0.5, atol=1e-9)

    def test_cube_points_sit_on_faces(self):
        rng = np.random.default_rng(2)
        pts = _unrotated("cube", rng)
        on_face = np.isclose(np.abs(pts), 0.5, atol=1e-9).any(axis=1)
        assert np.all(on_face)
        assert np.all(np.abs(pts) <= 0.5 + 1e-9)

    def test_torus_points_on_tube(self):
        rng = np.random.default_rng(3)
        pts = _unrotated("torus", rng)
        ring = np.hypot(pts[:, 0], pts[:, 1])
        dist = np.hypot(ring - 0.35, pts[:, 2])
        assert np.allclose(dist, 0.15, atol=1e-9)

    def test_cylinder_points_on_shell_or_caps(self):
        rng = np.random.default_rng(4)
        pts = _unrotated("cylinder", rng)
        r = np.hypot(pts[:, 0], pts[:, 1])
        on_side = np.isclose(r, 0.3, atol=1e-9)
        on_cap = np.isclose(np.abs(pts[:, 2]), 0.5, atol=1e-9) & (r <= 0.3 + 1e-9)
        assert np.all(on_side | on_cap)

    def test_unknown_class_rejected(self):
        with pytest.raises(ValueError, match="unknown class"):
            synth_points("klein-bottle", 10, np.random.default_rng(0))


def _unrotated(name, rng):
    """Sample via the public generator table without rotation/jitter."""
    from quanv3d.data import _GENERATORS

    return _GENERATORS[name](600, rng)


class TestSynthDataset:
    def test_same_seed_reproduces_exactly(self):
        a = synth_dataset(("sphere", "cube"), 3, seed=5, num_points=128)
        b = synth_dataset(("sphere", "cube"), 3, seed=5, num_points=128)
        for s, t in zip(a, b):
            assert np.array_equal(s.cloud.vertices, t.cloud.vertices)
            assert s.label == t.label

    def test_different_seeds_same_labels_different_geometry(self):
        """Labels are seed-independent; the geometry is not."""
        a = synth_dataset(("sphere", "torus"), 4, seed=1, num_points=128)
        b = synth_dataset(("sphere", "torus"), 4, seed=2, num_points=128)
        assert [s.label for s in a] == [s.label for s in b]
        assert not np.allclose(a[0].cloud.vertices, b[0].cloud.vertices)

    def test_balanced_and_ordered(self):
        ds = synth_dataset(SYNTH_CLASSES[:4], 5, seed=0, num_points=64)
        labels = [s.label for s in ds]
        assert labels == sorted(labels)
        assert np.bincount(labels).tolist() == [5, 5, 5, 5]


class TestSplitAndManifest:
    def test_split_partitions_the_dataset(self):
        ds = synth_dataset(("sphere", "cube"), 10, seed=3, num_points=32)
        train, test = train_test_split(ds, 0.2, seed=11)
        assert len(train) + len(test) == len(ds)
        assert len(test) == 4
        train2, test2 = train_test_split(ds, 0.2, seed=11)
        assert [id(s) for s in train] == [id(s) for s in train2]

    def test_manifest_roundtrip(self, tmp_path):
        entries = [("a/mesh0.off", 0), ("b/mesh1.off", 2)]
        path = tmp_path / "manifest.tsv"
        write_manifest(path, entries)
        back = read_manifest(path)
        assert back == [(tmp_path / "a/mesh0.off", 0), (tmp_path / "b/mesh1.off", 2)]

    def test_bad_manifest_line_reports_position(self, tmp_path):
        path = tmp_path / "manifest.tsv"
        path.write_text("only-one-field\n")
        with pytest.raises(ValueError, match="manifest.tsv:1"):
            read_manifest(path)

    def test_load_dataset_mixes_meshes_and_clouds(self, tmp_path):
        """Meshes get surface-sampled; vertex-only files load as-is."""
        (tmp_path / "tri.off").write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
        (tmp_path / "pts.off").write_text("OFF\n2 0 0\n0.25 0.5 0.75\n0.5 0.5 0.5\n")
        write_manifest(tmp_path / "m.tsv", [("tri.off", 1), ("pts.off", 0)])
        ds = load_manifest_dataset(tmp_path / "m.tsv", num_points=50, seed=0)
        assert ds[0].label == 1 and ds[0].cloud.num_points == 50
        assert ds[1].label == 0 and ds[1].cloud.num_points == 2
        assert np.allclose(ds[1].cloud.vertices[0], [0.25, 0.5, 0.75])
