import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifc_grl import geometry
from ifc_grl.geometry import (EmptyMesh, IndexOutOfRange, TriangleMesh, ZeroAreaMesh, box_mesh, deduplicate,
                              load_obj, sample_point_cloud, sample_surface, shape_signature,
                              signature_distance)

TAU = geometry.SIGNATURE_TOLERANCE


def rotation(axis, angle):
    """Rodrigues' formula, written out so the tests do not lean on the package."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


def random_rotation(rng):
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def l_bracket():
    """An asymmetric closed solid, so PCA axes are well separated."""
    return TriangleMesh(*_merge(box_mesh((3.0, 1.0, 0.5)), box_mesh((1.0, 2.0, 0.5), origin=(0.0, 1.0, 0.0))))


def _merge(a, b):
    return np.vstack([a.vertices, b.vertices]), np.vstack([a.faces, b.faces + len(a.vertices)])


def test_load_triangle():
    mesh = load_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    assert mesh.vertices.shape == (3, 3)
    assert mesh.faces.tolist() == [[0, 1, 2]]


def test_quad_fan():
    mesh = load_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_index_out_of_range():
    with pytest.raises(IndexOutOfRange):
        load_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")


def test_obj_details():
    text = "# comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2//1 -1\nf 1 1 2\n"
    mesh = load_obj(text)
    assert mesh.faces.tolist() == [[0, 1, 2]]
    with pytest.raises(EmptyMesh):
        load_obj("v 0 0 0\n")


def test_triangle_containment():
    mesh = load_obj("v 0 0 0\nv 2 0 1\nv 0 3 1\nf 1 2 3\n")
    points, _ = sample_surface(mesh, 4, np.random.default_rng(3))
    a, b, c = mesh.vertices
    normal = np.cross(b - a, c - a)
    normal /= np.linalg.norm(normal)
    assert points.shape == (4, 3)
    assert np.all(np.abs((points - a) @ normal) < 1e-9)
    # barycentric coordinates from a least-squares solve must be non-negative
    m = np.column_stack([b - a, c - a])
    uv = np.linalg.lstsq(m, (points - a).T, rcond=None)[0]
    assert np.all(uv >= -1e-12) and np.all(uv.sum(axis=0) <= 1 + 1e-12)


def test_area_weighting():
    # triangle areas 3 and 1, far apart along x
    text = "v 0 0 0\nv 3 0 0\nv 0 2 0\nv 10 0 0\nv 11 0 0\nv 10 2 0\nf 1 2 3\nf 4 5 6\n"
    points, _ = sample_surface(load_obj(text), 100_000, np.random.default_rng(0))
    fraction = float(np.mean(points[:, 0] < 5))
    assert abs(fraction - 0.75) <= 0.01


def test_zero_area():
    with pytest.raises(ZeroAreaMesh):
        sample_surface(load_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n"), 5, np.random.default_rng(0))


@pytest.mark.parametrize("mesh", [box_mesh((4, 0.2, 2.7)), geometry.cylinder_mesh(0.1, 3.0), l_bracket()])
def test_normalization(mesh):
    pts = sample_point_cloud(mesh, 512, seed=1).points
    assert np.abs(pts.mean(axis=0)).max() < 1e-5
    assert abs(np.linalg.norm(pts, axis=1).max() - 1.0) < 1e-5


def test_sampling_bit_identical():
    mesh = l_bracket()
    a = sample_point_cloud(mesh, 256, seed=42).points
    b = sample_point_cloud(mesh, 256, seed=42).points
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != sample_point_cloud(mesh, 256, seed=43).points.tobytes()


def test_signature_examples():
    mesh = l_bracket()
    sig = shape_signature(mesh)
    moved = mesh.transformed(translation=(5, 7, 9))
    turned = mesh.transformed(rotation=rotation((0, 0, 1), np.pi / 2))
    assert signature_distance(sig, shape_signature(moved)) < TAU
    assert signature_distance(sig, shape_signature(turned)) < TAU
    cube = box_mesh()
    assert signature_distance(shape_signature(cube), shape_signature(cube.transformed(scale=2.0))) > TAU


def test_scaled_cube_oracle():
    # extents double and the histogram (scaled by d_max) doubles, so the signature
    # doubles exactly and the relative distance is |2s - s| / |2s| = 0.5
    cube = box_mesh()
    d = signature_distance(shape_signature(cube), shape_signature(cube.transformed(scale=2.0)))
    assert d == pytest.approx(0.5, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_signature_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    mesh = l_bracket()
    moved = mesh.transformed(rotation=random_rotation(rng), translation=rng.uniform(-50, 50, 3))
    assert signature_distance(shape_signature(mesh), shape_signature(moved)) < TAU


def test_deduplicate_examples():
    a = l_bracket()
    b = box_mesh((1, 2, 3))
    assert deduplicate([("A", a), ("A2", a.transformed(translation=(1, 2, 3))), ("B", b)]) == ["A", "B"]
    assert deduplicate([("A", a), ("B", b)]) == ["A", "B"]
    objs = [(1, a), (2, a.transformed(rotation=rotation((1, 1, 0), 0.7))), (3, a.transformed(scale=2.0))]
    assert deduplicate(objs) == [1, 3]


def test_deduplicate_idempotent():
    rng = np.random.default_rng(0)
    base = [l_bracket(), box_mesh((1, 2, 3)), geometry.cylinder_mesh(0.2, 2.0)]
    objs = []
    for i in range(12):
        mesh = base[i % 3].transformed(rotation=random_rotation(rng), translation=rng.uniform(-5, 5, 3))
        objs.append((i, mesh))
    first = deduplicate(objs)
    assert first == [0, 1, 2]
    kept = dict(objs)
    assert deduplicate([(i, kept[i]) for i in first]) == first


def test_mirror_image_treated_as_duplicate():
    mesh = l_bracket()
    # same face list, reflected vertices: every pairwise distance and extent is unchanged
    mirrored = TriangleMesh(mesh.vertices * np.array([-1.0, 1.0, 1.0]), mesh.faces)
    assert deduplicate([(0, mesh), (1, mirrored)]) == [0]
