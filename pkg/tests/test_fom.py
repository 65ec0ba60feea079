import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from dodrom import fom
from dodrom.fom import GeomParams, Grid, PhysParams


def test_grid_basics():
    g = Grid(6, 6)
    assert g.n_cells == 36 and g.h == pytest.approx(1 / 6)
    assert np.all(g.mass > 0) and g.mass.sum() == pytest.approx(1.0)
    # cell = j*nx + i
    assert g.x1[7] == pytest.approx(1.5 / 6) and g.x2[7] == pytest.approx(1.5 / 6)


def test_boundary_tags_partition_boundary():
    g = Grid(10, 10)
    tags = g.boundary_tags()
    faces = [f for v in tags.values() for f in v]
    assert len(faces) == len(set(faces)) == 4 * 10
    assert tags["inlet"] == [("left", j) for j in (8, 9)]
    assert tags["outlet"] == [("right", j) for j in (0, 1)]


@pytest.mark.parametrize("x2,k", [(0.5, 0.5), (0.75, 0.02), (0.95, 1.0), (0.25, 0.02), (0.05, 1.0)])
def test_permeability_examples(x2, k):
    assert fom.permeability_at(np.array([x2]), 0.2)[0] == k


def test_permeability_range_checked():
    with pytest.raises(fom.ParameterError):
        fom.permeability_field(Grid(4, 4), 0.5)
    with pytest.raises(fom.ParameterError):
        fom.solve_darcy(Grid(4, 4), GeomParams(0.2, 1.0))


def test_inflow_examples():
    assert np.allclose(fom.inflow_flux(0.9, 0.0), [0.125, 0.0])
    assert np.allclose(fom.inflow_flux(0.8, 0.0), [0.0, 0.0], atol=1e-15)
    assert np.allclose(fom.inflow_flux(0.9, math.pi / 4), [0.125 / math.sqrt(2)] * 2)


def test_total_inflow_quadrature():
    # independent numerical quadrature of the normal component
    total, _ = quad(lambda y: fom.inflow_flux(y, 0.0)[0], 0.8, 1.0)
    assert total == pytest.approx(1 / 60, rel=1e-12)
    exact = sum(fom._inflow_face_integral(0.8 + k * 0.02, 0.82 + k * 0.02, 0.0) for k in range(10))
    assert exact == pytest.approx(1 / 60, rel=1e-12)


def test_inlet_profile():
    assert fom.inlet_profile(0.9) == 1.0
    assert fom.inlet_profile(0.8) == 0.0 and fom.inlet_profile(0.5) == 0.0
    assert fom.inlet_profile(0.95) == pytest.approx(0.5)


def test_non_square_grid_rejected():
    with pytest.raises(fom.ParameterError):
        fom.solve_darcy(Grid(8, 6), GeomParams(0.2, 0.0))


@settings(max_examples=10)
@given(st.floats(0.1, 0.3), st.floats(-math.pi / 4, math.pi / 4))
def test_darcy_conservation(mu1, mu2):
    flow = fom.solve_darcy(Grid(20, 20), GeomParams(mu1, mu2))
    assert np.abs(flow.divergence()).max() <= 1e-10
    assert abs(flow.inflow_total() - flow.outflow_total()) <= 1e-10
    # walls carry no flux
    assert np.all(flow.flux_y[0] == 0) and np.all(flow.flux_y[-1] == 0)
    walls = np.setdiff1d(np.arange(20), Grid(20, 20).outlet_rows())
    assert np.all(flow.flux_x[walls, -1] == 0)


def test_inlet_flux_at_nx60():
    flow = fom.solve_darcy(Grid(60, 60), GeomParams(0.2, 0.0))
    assert flow.inflow_total() == pytest.approx(1 / 60, abs=(1 / 60) ** 2)


def test_uniform_permeability_pressure_minimum_on_outlet():
    g = Grid(16, 16)
    flow = fom.solve_darcy(g, GeomParams(0.2, 0.0), permeability=np.ones(g.n_cells))
    p = flow.pressure.reshape(16, 16)
    assert p.min() == pytest.approx(p[g.outlet_rows(), -1].min())
    assert p.argmin() in set((g.outlet_rows() * 16 + 15).tolist())


def test_transport_null_and_bounds():
    g = Grid(20, 20)
    geom, phys = GeomParams(0.2, 0.3), PhysParams(0.2, 0.5)
    flow = fom.solve_darcy(g, geom)
    U = fom.solve_transport(g, flow, geom, phys, 1.2, 6)
    assert U.shape == (400, 6)
    assert U.min() >= -1e-12 and U.max() <= 1 + 1e-12
    zero = fom.solve_transport(g, flow, geom, phys, 1.2, 6, inlet=np.zeros(len(g.inlet_rows())))
    assert np.all(zero == 0)


def test_no_flow_no_reaction_is_static():
    g = Grid(10, 10)
    flow = fom.solve_darcy(g, GeomParams(0.2, 0.0))
    still = fom.FlowField(g, flow.pressure, np.zeros_like(flow.flux_x), np.zeros_like(flow.flux_y),
                          flow.permeability)
    U = fom.solve_transport(g, still, GeomParams(0.2, 0.0), PhysParams(0.0, 0.0), 1.0, 4)
    assert np.all(U == U[:, :1])


def test_transport_needs_two_steps():
    g = Grid(6, 6)
    flow = fom.solve_darcy(g, GeomParams(0.2, 0.0))
    with pytest.raises(fom.ParameterError):
        fom.solve_transport(g, flow, GeomParams(0.2, 0.0), PhysParams(0.2, 0.5), 1.0, 1)


def test_cfl_overflow_raises(monkeypatch):
    monkeypatch.setattr(fom, "MAX_SUBSTEPS", 0)
    g = Grid(20, 20)
    flow = fom.solve_darcy(g, GeomParams(0.2, 0.0))
    with pytest.raises(fom.SolverError):
        fom.solve_transport(g, flow, GeomParams(0.2, 0.0), PhysParams(0.2, 0.5), 1.2, 2)


@pytest.mark.slow
def test_refinement_outlet_concentration():
    def outlet_mean(n):
        g = Grid(n, n)
        U = fom.solve_fom(g, GeomParams(0.2, 0.0), PhysParams(0.2, 0.65), 1.2, 4)
        rows = g.outlet_rows()
        return U[rows * n + n - 1, -1].mean()

    a, b = outlet_mean(30), outlet_mean(60)
    assert abs(a - b) <= 0.2 * abs(b)
