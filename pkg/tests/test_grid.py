import numpy as np
import pytest

from nonlocal_rd.grid import Field, build_grid, integrate_field, snapshot_csv, write_snapshot_csv


def test_three_node_line():
    g = build_grid(1, 2.0, 3)
    np.testing.assert_array_equal(g.nodes[:, 0], [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(g.cell_weight, [0.5, 1.0, 0.5])


def test_two_by_one_rectangle_measure():
    g = build_grid(2, (2.0, 1.0), (101, 51))
    assert g.n_nodes == 5151
    assert abs(g.cell_weight.sum() - 2.0) <= 1e-12


@pytest.mark.parametrize("dim,ext,cnt", [(2, (1, 1), (2, 2)), (3, (1, 1, 1), (3, 3, 3)), (1, -1.0, 5), (1, 1.0, 2.5)])
def test_rejects_bad_input(dim, ext, cnt):
    with pytest.raises(ValueError):
        build_grid(dim, ext, cnt)


def test_row_major_x_fastest():
    g = build_grid(2, (2.0, 1.0), (5, 3))
    assert g.index(1, 0) == 1 and g.index(0, 1) == 5
    for p in range(g.n_nodes):
        assert g.index(*g.unravel(p)) == p
    i, j = g.unravel(7)
    np.testing.assert_allclose(g.nodes[7], [i * g.spacing[0], j * g.spacing[1]])


def test_cell_weight_read_only():
    g = build_grid(1, 1.0, 5)
    with pytest.raises(ValueError):
        g.cell_weight[0] = 3.0


def test_integrate_constant_affine_and_zero():
    g = build_grid(2, (2.0, 1.0), (21, 11))
    f = Field(g, np.stack([np.ones(g.n_nodes), np.zeros(g.n_nodes), g.nodes[:, 0] + 3 * g.nodes[:, 1]]))
    assert abs(integrate_field(f, 0) - 2.0) <= 1e-12
    assert integrate_field(f, 1) == 0.0
    # int x + 3y over (0,2)x(0,1) = 2 + 3
    assert abs(integrate_field(f, 2) - 5.0) <= 1e-10 * 5.0


def test_integrate_line_x():
    g = build_grid(1, 2.0, 201)
    assert abs(integrate_field(Field(g, g.nodes[:, 0][None]), 0) - 2.0) <= 1e-6


def test_trapezoid_second_order():
    errs = []
    for n in (11, 21, 41, 81):
        g = build_grid(1, 1.0, n)
        val = integrate_field(Field(g, np.sin(np.pi * g.nodes[:, 0])[None]), 0)
        errs.append(abs(val - 2.0 / np.pi))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(ratios >= 3.5)


def test_field_checks_shape():
    g = build_grid(1, 1.0, 5)
    with pytest.raises(ValueError):
        Field(g, np.zeros((2, 4)))


def test_snapshot_csv(tmp_path):
    g = build_grid(2, (1.0, 1.0), (3, 3))
    f = Field(g, np.stack([np.arange(9.0), np.ones(9)]))
    text = snapshot_csv(f)
    lines = text.strip().splitlines()
    assert lines[0] == "x,y,u_1,u_2"
    assert len(lines) == 10
    assert lines[2].split(",")[:3] == ["0.5", "0.0", "1.0"]
    path = tmp_path / "snap.csv"
    write_snapshot_csv(f, path)
    assert path.read_text(encoding="utf-8") == text
