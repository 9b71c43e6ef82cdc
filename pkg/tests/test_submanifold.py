import numpy as np
import pytest

from app.models import catalog
from app.models.submanifold import GridField


def _torus_field(resolution: int = 8) -> GridField:
    base = catalog.perturbed_torus(resolution=resolution)
    values = np.array([[np.sin(s[0]), np.cos(2.0 * s[1])] for s in base.grid_parameters])
    return GridField(base, values)


def test_grid_field_hits_the_nodes():
    field = _torus_field()
    for s, value in zip(field.base.grid_parameters, field.values):
        assert np.allclose(field(s), value, atol=1e-12)


@pytest.mark.parametrize("s0", [0.0, 3.0 * np.pi / 4.0, 1.2])
def test_grid_field_slopes_agree_across_grid_lines_and_the_seam(s0):
    field = _torus_field()
    delta = 1e-4
    at = field(np.array([s0, 0.5]))
    left = (at - field(np.array([s0 - delta, 0.5]))) / delta
    right = (field(np.array([s0 + delta, 0.5])) - at) / delta
    # node spacing is pi / 4, so a piecewise linear field would jump by order one here
    assert np.allclose(left, right, atol=1e-3)
    assert left[0] == pytest.approx(np.cos(s0), abs=5e-2)


def test_grid_field_keeps_data_that_ignores_an_axis():
    field = _torus_field()
    first = field(np.array([0.37, 0.2]))[0]
    assert field(np.array([0.37, 2.9]))[0] == pytest.approx(first, abs=1e-12)
    assert field(np.array([0.37 + 2.0 * np.pi, 0.2]))[0] == pytest.approx(first, abs=1e-12)


def test_grid_field_reproduces_cubics_on_open_axes():
    base = catalog.affine_lagrangian(0.0, resolution=5)

    def cubic(s):
        return np.array([s[0] ** 3 - 2.0 * s[0] * s[1], s[1] ** 2])

    field = GridField(base, np.array([cubic(s) for s in base.grid_parameters]))
    for s in ([0.13, -0.71], [0.9, 0.45], [1.05, -1.02]):
        assert np.allclose(field(np.array(s)), cubic(np.array(s)), atol=1e-10)
