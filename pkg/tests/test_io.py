import numpy as np
import pytest

from m2r import io
from m2r.core import (AffineMap, BinaryMask, Contour, DisplacementField, GridSpec, ScalarField,
                      ValidationError)
from m2r.synth import sphere_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(3)


def test_pgm_mask_round_trip(tmp_path, rng):
    g = GridSpec((7, 5))
    m = BinaryMask(g, rng.random(g.dims) > 0.5)
    io.write_mask(tmp_path / "m.pgm", m)
    back = io.read_mask(tmp_path / "m.pgm")
    assert back.grid.dims == g.dims and np.array_equal(back.bits, m.bits)


def test_pgm_layout_rows_are_y(tmp_path):
    g = GridSpec((3, 2))
    bits = np.zeros(g.dims, bool)
    bits[2, 0] = True  # x = 1, y = 0
    io.write_pgm(tmp_path / "a.pgm", BinaryMask(g, bits))
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n3 2\n255\n")
    assert list(raw[-6:]) == [0, 0, 255, 0, 0, 0]


def test_pgm_image_quantised_round_trip(tmp_path, rng):
    g = GridSpec((6, 4))
    img = ScalarField(g, np.round(rng.random(g.dims) * 255) / 255)
    io.write_pgm(tmp_path / "i.pgm", img)
    back = io.read_image(tmp_path / "i.pgm")
    assert np.allclose(back.values, img.values, atol=1e-12)


def test_pgm_rejects_other_formats(tmp_path):
    (tmp_path / "x.pgm").write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
    with pytest.raises(ValidationError):
        io.read_pgm_mask(tmp_path / "x.pgm")


def test_field_round_trip(tmp_path, rng):
    g = GridSpec((4, 3, 5))
    # float32-representable values survive exactly
    vec = rng.standard_normal(3 * g.num_nodes).astype(np.float32).astype(float)
    u = DisplacementField.from_vector(g, vec)
    io.write_field(tmp_path / "u.raw", u)
    back = io.read_field(tmp_path / "u.raw")
    assert np.array_equal(back.as_vector(), vec)
    meta = io.read_json(tmp_path / "u.raw.json")
    assert meta["dims"] == [4, 3, 5] and meta["components"] == 3
    raw = np.fromfile(tmp_path / "u.raw", dtype="<f4")
    assert np.array_equal(raw[:4], vec[:4].astype(np.float32))  # x-fastest, component-major


def test_scalar_field_round_trip(tmp_path, rng):
    g = GridSpec((5, 6))
    f = ScalarField(g, rng.random(g.dims).astype(np.float32).astype(float))
    io.write_field(tmp_path / "f.raw", f)
    assert np.array_equal(io.read_field(tmp_path / "f.raw").values, f.values)


def test_raw_mask_round_trip(tmp_path, rng):
    g = GridSpec((4, 5, 6))
    m = BinaryMask(g, rng.random(g.dims) > 0.3)
    io.write_mask(tmp_path / "m.raw", m)
    assert np.array_equal(io.read_mask(tmp_path / "m.raw").bits, m.bits)


def test_raw_size_mismatch(tmp_path):
    g = GridSpec((4, 4))
    io.write_field(tmp_path / "f.raw", ScalarField(g, np.zeros(g.dims)))
    (tmp_path / "f.raw").write_bytes(b"\0" * 12)
    with pytest.raises(ValidationError, match="expected 16"):
        io.read_field(tmp_path / "f.raw")
    with pytest.raises(ValidationError, match="sidecar"):
        io.read_field(tmp_path / "nothing.raw")


def test_obj_round_trip(tmp_path):
    mesh = sphere_mesh((0.5, 0.5, 0.5), 0.25, level=1)
    io.write_obj(tmp_path / "s.obj", mesh)
    back = io.read_obj(tmp_path / "s.obj")
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert "f 1 " in (tmp_path / "s.obj").read_text()


def test_obj_polygon_and_errors(tmp_path):
    (tmp_path / "q.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n")
    assert io.read_obj(tmp_path / "q.obj").triangles.tolist() == [[0, 1, 2], [0, 2, 3]]
    (tmp_path / "b.obj").write_text("v 0 0 zero\n")
    with pytest.raises(ValidationError, match="malformed"):
        io.read_obj(tmp_path / "b.obj")


def test_contour_and_affine_round_trip(tmp_path, rng):
    c = Contour(rng.random((9, 2)), closed=False)
    io.write_contour(tmp_path / "c.json", c)
    back = io.read_contour(tmp_path / "c.json")
    assert np.array_equal(back.points, c.points) and back.closed is False
    a = AffineMap(rng.random((3, 3)), rng.random(3))
    io.write_affine(tmp_path / "a.json", a)
    b = io.read_affine(tmp_path / "a.json")
    assert np.array_equal(b.A, a.A) and np.array_equal(b.t, a.t)


def test_writes_are_byte_deterministic(tmp_path, rng):
    c = Contour(rng.random((5, 2)))
    io.write_contour(tmp_path / "a.json", c)
    io.write_contour(tmp_path / "b.json", c)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    io.write_csv(tmp_path / "x.csv", [("a", "b"), (1, 0.1)])
    assert (tmp_path / "x.csv").read_text() == "a,b\n1,0.1\n"


def test_invalid_json(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ValidationError):
        io.read_contour(tmp_path / "bad.json")


def test_sidecar_does_not_clobber_same_stem(tmp_path):
    from m2r.segmentation import make_circle_contour
    g = GridSpec((3, 3))
    c = make_circle_contour((0.5, 0.5), 0.2, 8)
    io.write_contour(tmp_path / "seg.json", c)
    io.write_field(tmp_path / "seg.raw", DisplacementField.zeros(g))
    assert np.array_equal(io.read_contour(tmp_path / "seg.json").points, c.points)
