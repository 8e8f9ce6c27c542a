import numpy as np
import pytest
from pydantic import ValidationError

from numerics.domain_grid import CellTag, build_grid, classify_boundary, interior_window
from numerics.errors import GridError
from numerics.schemas.domain import Domain, DomainKind


def test_square_classification_counts():
    bc = classify_boundary(build_grid(Domain.of("Square"), 4))
    assert bc.count(CellTag.CORNER) == 4
    assert bc.count(CellTag.FACE) == 8
    assert bc.count(CellTag.INTERIOR) == 4


def test_face_normals_point_outward():
    grid = build_grid(Domain.of("Square"), 6)
    bc = classify_boundary(grid)
    assert np.allclose(bc.normals[0, 2], [-1.0, 0.0])
    assert np.allclose(bc.normals[5, 3], [1.0, 0.0])
    assert np.allclose(bc.normals[2, 5], [0.0, 1.0])
    assert np.allclose(bc.normals[0, 0], [0.0, 0.0])


def test_interval_end_cells_are_corners():
    bc = classify_boundary(build_grid(Domain.of("Interval"), 8))
    assert bc.tags[0] == CellTag.CORNER and bc.tags[-1] == CellTag.CORNER
    assert bc.count(CellTag.INTERIOR) == 6


@pytest.mark.parametrize("kind", ["Torus1", "Torus2"])
def test_torus_has_no_boundary(kind):
    bc = classify_boundary(build_grid(Domain.of(kind), 8))
    assert bc.count(CellTag.INTERIOR) == bc.tags.size


def test_grid_geometry():
    grid = build_grid(Domain.of("Interval", bounds=[(0.0, 2.0)]), 8)
    assert grid.h == (0.25,)
    assert grid.axis_centers(0)[0] == pytest.approx(0.125)
    assert grid.axis_edges(0)[-1] == pytest.approx(2.0)
    assert grid.integrate(np.ones(8)) == pytest.approx(2.0)


def test_wrap_indices_on_torus():
    grid = build_grid(Domain.of("Torus1"), 8)
    assert grid.wrap(-1, 0) == 7
    assert grid.wrap(8, 0) == 0


def test_too_few_cells_rejected():
    with pytest.raises(GridError):
        build_grid(Domain.of("Interval"), 3)


def test_cell_count_dimension_mismatch():
    with pytest.raises(GridError):
        build_grid(Domain.of("Square"), [8])


def test_domain_validation():
    with pytest.raises(ValidationError):
        Domain(kind=DomainKind.INTERVAL, bounds=((1.0, 0.0),))
    with pytest.raises(ValidationError):
        Domain(kind=DomainKind.SQUARE, bounds=((0.0, 1.0), (0.0, 2.0)))
    with pytest.raises(ValidationError):
        Domain(kind=DomainKind.TRUNCATED_HALF_LINE, bounds=((-1.0, 1.0),))
    with pytest.raises(ValueError):
        Domain.of("Box2")


def test_truncated_defaults():
    dom = Domain.of("TruncatedLine", radius=4.0)
    assert dom.bounds == ((-4.0, 4.0),)
    assert dom.is_truncated and not dom.is_periodic
    assert Domain.of("TruncatedQuarterPlane").bounds == ((0.0, 8.0), (0.0, 8.0))


def test_interior_window_ignores_periodic_axes():
    box = build_grid(Domain.of("Box2", bounds=[(0.0, 2.0), (0.0, 1.0)]), [8, 4])
    assert interior_window(box, halo=1).sum() == 6 * 2
    torus = build_grid(Domain.of("Torus2"), 8)
    assert interior_window(torus, halo=2).all()
