"""Unit tests for the filtration service."""
import numpy as np
import pytest

from gkpd.filtration_service import (
    FilteredComplex,
    MonotonicityError,
    alpha_value,
    assert_monotone,
    build_filtration,
    facets,
    read_complex,
    simplex_distortion,
    sublevel,
    write_complex,
)
from gkpd.kernel_service import KernelConfig, WeightedPointCloud
from gkpd.meb_service import meb_gram
from gkpd.rff_service import WeightedImageCloud
from gkpd.services import InputError, IntegrityError
from tests.fixtures.point_cloud_data import EQUILATERAL, SMALL_CLOUD, TWO_FAR_POINTS

UNIT = KernelConfig(sigma=1.0)


def _unweighted(points):
    return WeightedImageCloud(points, np.zeros(len(points)))


class TestEuclideanMode:
    """Test filtrations of explicit weighted points."""

    def test_equilateral_values(self):
        """Vertices at 0, edges at 1/4, triangle at 1/3."""
        complex_ = build_filtration(_unweighted(EQUILATERAL), d_max=2, mode="euclidean")
        assert len(complex_) == 7
        for vertex in range(3):
            assert complex_.value((vertex,)) == 0.0
        for edge in [(0, 1), (0, 2), (1, 2)]:
            assert complex_.value(edge) == pytest.approx(0.25, abs=1e-14)
        assert complex_.value((0, 1, 2)) == pytest.approx(1.0 / 3.0, abs=1e-14)

    def test_filtration_order(self):
        """Values are nondecreasing and faces precede cofaces."""
        complex_ = build_filtration(_unweighted(SMALL_CLOUD), d_max=2)
        values = complex_.values()
        assert np.all(np.diff(values) >= 0.0)
        for position, simplex in enumerate(complex_):
            for facet in facets(simplex.vertices):
                assert complex_.position(facet) < position

    def test_value_cap(self):
        """Simplices above the cap are dropped."""
        complex_ = build_filtration(_unweighted(TWO_FAR_POINTS), d_max=1, value_cap=1.0)
        assert [s.vertices for s in complex_] == [(0,), (1,)]

    def test_d_max_zero(self):
        """Only vertices at d_max = 0."""
        complex_ = build_filtration(_unweighted(EQUILATERAL), d_max=0)
        assert complex_.dimension == 0
        assert complex_.d_max == 0

    def test_negative_d_max(self):
        """d_max must be a nonnegative integer."""
        with pytest.raises(InputError):
            build_filtration(_unweighted(EQUILATERAL), d_max=-1)

    def test_mode_requires_matching_cloud(self):
        """gkpd mode needs a kernel cloud."""
        with pytest.raises(InputError, match="gkpd mode"):
            build_filtration(_unweighted(EQUILATERAL), mode="gkpd")


class TestKernelMode:
    """Test filtrations under the Gaussian kernel power distance."""

    def test_vertex_values_are_minus_weights(self):
        """A vertex enters at -w(p)."""
        cloud = WeightedPointCloud.from_points(SMALL_CLOUD, UNIT)
        complex_ = build_filtration(cloud, d_max=1)
        for i in range(cloud.n):
            assert complex_.value((i,)) == pytest.approx(-cloud.weights[i], abs=1e-15)

    def test_triangle_values_match_gram_solver(self):
        """Each triangle gets the Gram-mode radius, or a larger facet value."""
        cloud = WeightedPointCloud.from_points(SMALL_CLOUD, UNIT)
        complex_ = build_filtration(cloud, d_max=2)
        for simplex in complex_:
            if simplex.dim != 2:
                continue
            index = list(simplex.vertices)
            radius = meb_gram(cloud.gram.submatrix(index), cloud.weights[index]).radius_sq
            bound = max(complex_.value(f) for f in facets(simplex.vertices))
            assert simplex.value == pytest.approx(max(radius, bound), abs=1e-13)

    def test_threads_do_not_change_values(self):
        """Parallel radius computation gives the same complex."""
        rng = np.random.default_rng(5)
        cloud = WeightedPointCloud.from_points(rng.normal(size=(32, 3)), UNIT)
        serial = build_filtration(cloud, d_max=2, threads=1)
        parallel = build_filtration(cloud, d_max=2, threads=2)
        assert len(serial) == len(parallel) == 32 + 496 + 4960
        for simplex in serial:
            assert parallel.value(simplex.vertices) == pytest.approx(simplex.value, abs=1e-14)


class TestFilteredComplex:
    """Test complex validation and helpers."""

    def test_non_monotone_rejected(self):
        """A face entering after its coface is an integrity error."""
        complex_ = FilteredComplex([((0,), 0.0), ((1,), 0.5), ((0, 1), 0.2)], d_max=1)
        with pytest.raises(MonotonicityError) as excinfo:
            assert_monotone(complex_)
        assert excinfo.value.face.vertices == (1,)

    def test_missing_face_rejected(self):
        """Complexes must be face-closed."""
        complex_ = FilteredComplex([((0,), 0.0), ((0, 1), 0.2)], d_max=1)
        with pytest.raises(IntegrityError, match="missing"):
            assert_monotone(complex_)

    def test_duplicate_rejected(self):
        """A simplex appears once."""
        with pytest.raises(IntegrityError, match="duplicate"):
            FilteredComplex([((0,), 0.0), ((0,), 1.0)], d_max=0)

    def test_vertices_normalized(self):
        """Vertex tuples are stored sorted."""
        complex_ = FilteredComplex([((0,), 0.0), ((1,), 0.0), ((1, 0), 0.5)], d_max=1)
        assert (0, 1) in complex_

    def test_tie_order(self):
        """Equal values order by dimension, then vertices."""
        complex_ = FilteredComplex(
            [((0, 1), 1.0), ((1,), 1.0), ((0,), 1.0)], d_max=1
        )
        assert [s.vertices for s in complex_] == [(0,), (1,), (0, 1)]

    def test_sublevel(self):
        """Sublevel complexes keep simplices at or below the value."""
        complex_ = build_filtration(_unweighted(EQUILATERAL), d_max=2)
        assert len(sublevel(complex_, 0.3)) == 6
        assert len(sublevel(complex_, -1.0)) == 0

    def test_alpha_value(self):
        """Alpha scale is the square root, clamped at zero."""
        assert alpha_value(0.25) == 0.5
        assert alpha_value(-1.0) == 0.0


class TestSimplexDistortion:
    """Test per-simplex ratios between complexes."""

    def test_identical_complexes(self):
        """Ratios are one for a complex against itself."""
        complex_ = build_filtration(WeightedPointCloud.from_points(SMALL_CLOUD, UNIT), d_max=2)
        frame = simplex_distortion(complex_, complex_)
        assert list(frame.columns) == ["vertices", "dim", "reference_value", "other_value", "ratio"]
        assert len(frame) == len(complex_)
        assert (frame["ratio"] == 1.0).all()

    def test_zero_reference_values_skipped(self):
        """Simplices with value zero have no ratio."""
        complex_ = build_filtration(_unweighted(EQUILATERAL), d_max=2)
        assert len(simplex_distortion(complex_, complex_)) == 4


class TestComplexFile:
    """Test the text format for complexes."""

    def test_write_and_read(self, tmp_path):
        """The file reproduces the complex exactly."""
        complex_ = build_filtration(WeightedPointCloud.from_points(SMALL_CLOUD, UNIT), d_max=2)
        path = tmp_path / "complex.txt"
        write_complex(path, complex_)
        assert read_complex(path) == complex_

    def test_line_format(self, tmp_path):
        """Lines are 'dim  v0 ... vk  value' after a d_max header."""
        complex_ = FilteredComplex([((0,), 0.0), ((1,), 0.0), ((0, 1), 0.25)], d_max=1)
        path = tmp_path / "complex.txt"
        write_complex(path, complex_)
        assert path.read_text().splitlines() == ["# d_max=1", "0  0  0.0", "0  1  0.0", "1  0 1  0.25"]

    def test_malformed_line(self, tmp_path):
        """Vertex count must match the dimension."""
        path = tmp_path / "complex.txt"
        path.write_text("1  0  0.5\n")
        with pytest.raises(InputError, match="dimension 1"):
            read_complex(path)
