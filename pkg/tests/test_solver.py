"""Gradient flow, the layer profile, and first-variation consistency."""

import numpy as np
import pytest

from fracac import (
    BallRegion,
    ConstantExterior,
    Grid,
    KernelSpec,
    ScalarField,
    SolveConfig,
    euler_lagrange_consistency,
    gradient_flow,
    make_grid,
    residual_field,
    solve_layer_1d,
)
from fracac.energies import potential_energy, sobolev_energy
from fracac.errors import ConfigurationError
from fracac._lattice import get_operator


def test_constant_well_is_fixed_point(quartic):
    g = make_grid(1, 4.0, 0.125)
    seed = ScalarField(g, np.ones(g.shape))
    cfg = SolveConfig(scheme="semi_implicit_spectral", step=0.4,
                      max_iterations=50, residual_tol=1e-12, seed_field=seed)
    out = gradient_flow(cfg, KernelSpec.fractional_unit(0.5, 1), quartic)
    assert out.converged and out.iterations <= 1
    assert np.allclose(out.field.values, 1.0, atol=1e-12)


def test_middle_well_flows_away(quartic):
    g = make_grid(1, 8.0, 0.125)
    rng = np.random.default_rng(0)
    seed = ScalarField(g, 1e-3 * rng.normal(size=g.shape))
    cfg = SolveConfig(scheme="semi_implicit_spectral", step=0.4,
                      max_iterations=400, residual_tol=1e-12, seed_field=seed)
    out = gradient_flow(cfg, KernelSpec.fractional_unit(0.5, 1), quartic)
    tr = np.array(out.energy_trace)
    assert np.all(np.diff(tr) <= 1e-10)
    assert np.max(np.abs(out.field.values)) > 0.5  # left the unstable well


def test_periodic_flow_reaches_layer_pair(quartic):
    g = make_grid(1, 8.0, 1.0 / 16.0)
    x = g.axis_coords()
    seed = ScalarField(g, np.clip(np.sin(np.pi * x / 8.0), -1.0, 1.0))
    cfg = SolveConfig(scheme="semi_implicit_spectral", step=0.4,
                      max_iterations=5000, residual_tol=1e-9, seed_field=seed)
    spec = KernelSpec.fractional_unit(0.5, 1)
    out = gradient_flow(cfg, spec, quartic)
    assert out.converged
    res = residual_field(out.field, spec, quartic)
    assert np.max(np.abs(res)) <= 1e-9
    assert np.max(np.abs(out.field.values)) <= 1.0 + 1e-9


def test_explicit_flow_stiffness_guard(quartic):
    g = make_grid(1, 4.0, 0.0625)
    seed = ScalarField(g, np.zeros(g.shape))
    cfg = SolveConfig(scheme="explicit_flow", step=10.0,
                      max_iterations=10, residual_tol=1e-6, seed_field=seed)
    with pytest.raises(ConfigurationError):
        gradient_flow(cfg, KernelSpec.fractional_unit(0.5, 1), quartic)


def test_flow_with_newton_refinement_on_exterior_grid(quartic):
    g = Grid(1, 0.125, 8.0, ConstantExterior([(-1.0, 1.0)]))
    x = g.axis_coords()
    seed = ScalarField(g, np.clip(x / 4.0, -1.0, 1.0))
    spec = KernelSpec.fractional_unit(0.5, 1)
    op = get_operator(g, spec)
    lb = 2.0 * float(np.max(op.colsum + op.moments["t0"]))
    cfg = SolveConfig(scheme="newton", step=0.8 / (lb + 2.0),
                      max_iterations=2000, residual_tol=1e-9, seed_field=seed)
    out = gradient_flow(cfg, spec, quartic)
    assert out.converged and out.residual_sup <= 1e-9
    # the flow phase is genuinely monotone before the refinement kicks in
    tr = np.array(out.energy_trace[:50])
    assert np.all(np.diff(tr) <= 1e-10)


def test_flow_determinism(quartic):
    g = make_grid(1, 8.0, 0.125)
    rng = np.random.default_rng(42)
    vals = np.clip(0.5 * rng.normal(size=g.shape), -1, 1)
    spec = KernelSpec.fractional_unit(0.5, 1)
    outs = []
    for _ in range(2):
        seed = ScalarField(g, vals.copy())
        cfg = SolveConfig(scheme="semi_implicit_spectral", step=0.4,
                          max_iterations=500, residual_tol=1e-10, seed_field=seed)
        outs.append(gradient_flow(cfg, spec, quartic))
    assert np.array_equal(outs[0].field.values, outs[1].field.values)
    assert outs[0].energy_trace == outs[1].energy_trace


def test_layer_basic_contract(layer_s05, quartic):
    x = layer_s05.grid.axis_coords()
    m = layer_s05.grid.half_count
    assert layer_s05.values[m] == 0.0
    assert np.all(np.diff(layer_s05.values) > 0)
    assert np.all(np.abs(layer_s05.values) < 1.0)
    res = residual_field(layer_s05, KernelSpec.fractional_unit(0.5, 1), quartic)
    assert np.max(np.abs(res[np.abs(x) <= 20.0])) <= 1e-10


def test_layer_unpinned_resolve_keeps_odd_symmetry(quartic):
    phi = solve_layer_1d(0.5, 20.0, 0.1, tol=1e-9)
    phi2 = solve_layer_1d(0.5, 20.0, 0.1, tol=1e-9, seed=phi, pin_odd=False)
    m = phi2.grid.half_count
    assert abs(phi2.values[m]) <= 1e-8
    assert np.max(np.abs(phi2.values + phi2.values[::-1])) <= 1e-8


def test_layer_rejects_small_box():
    with pytest.raises(ConfigurationError):
        solve_layer_1d(0.5, 10.0, 0.1)


def test_layer_tail_exponents(layer_s05, layer_s03):
    for phi, s in ((layer_s05, 0.5), (layer_s03, 0.3)):
        x = phi.grid.axis_coords()
        sel = (x >= 10.0) & (x <= 20.0)
        slope = np.polyfit(np.log(x[sel]), np.log(1.0 - phi.values[sel]), 1)[0]
        assert abs(slope + s) <= 0.1


def test_layer_translation_mode_mean_value_identity(layer_s05, quartic):
    """Difference quotients of the profile satisfy the differenced equation
    exactly up to the boundary-shift budget; the curvature-coefficient form
    holds at the honest O(h) tolerance only."""
    g = layer_s05.grid
    spec = KernelSpec.fractional_unit(0.5, 1)
    op = get_operator(g, spec)
    A = op.dense_matrix()
    t1 = op.moments["t1"]
    vals = layer_s05.values
    x = g.axis_coords()
    dq = (vals[2:] - vals[:-2]) / (2.0 * g.h)       # centered difference quotient
    # exact identity: L dq + [W'(u(.+h)) - W'(u(.-h))]/(2h) = 0 away from the box edge
    lhs = (A @ vals - t1 + quartic.wp(vals))
    shifted = (lhs[2:] - lhs[:-2]) / (2.0 * g.h)    # difference of residuals = 0
    assert np.max(np.abs(shifted)) <= 1e-9

    # curvature form: L dq + W''(u) dq, honest tolerance O(h)
    interior = slice(1, -1)
    Ldq = (A[interior, interior] @ dq) if False else None
    full_dq = np.zeros_like(vals)
    full_dq[1:-1] = dq
    r = A @ full_dq - 0.0 + quartic.wpp(vals) * full_dq
    inner = np.abs(x) <= 15.0
    assert np.max(np.abs(r[inner])) <= 10.0 * g.h


def test_el_consistency_random_and_zero(quartic):
    rng = np.random.default_rng(8)
    g = Grid(1, 0.1, 8.0, ConstantExterior([(-1.0, 1.0)]))
    x = g.axis_coords()
    region = BallRegion((0.0,), 4.0)
    mask = region.mask(g).ravel()
    spec = KernelSpec.fractional(0.5)
    worst = 0.0
    for _ in range(5):
        u = ScalarField(g, np.clip(np.tanh(x) + 0.3 * rng.normal(size=x.size), -1, 1))
        xi_vals = np.zeros_like(x)
        xi_vals[mask] = rng.normal(size=mask.sum())
        res = euler_lagrange_consistency(u, ScalarField(g, xi_vals), spec, quartic,
                                         region=region)
        worst = max(worst, res)
    assert worst <= 1e-6

    zero_xi = ScalarField(g, np.zeros(g.shape))
    u = ScalarField(g, np.tanh(x))
    # both sides vanish identically for a zero perturbation
    res = euler_lagrange_consistency(u, zero_xi, spec, quartic, region=region)
    assert res == 0.0


def test_el_consistency_at_critical_point(layer_s05, quartic):
    """At a converged solution both derivative routes vanish; assert the
    absolute gap against the energy scale (the relative form is 0/0)."""
    rng = np.random.default_rng(3)
    g = layer_s05.grid
    region = BallRegion((0.0,), 10.0)
    mask = region.mask(g).ravel()
    xi_vals = np.zeros(g.node_count)
    xi_vals[mask] = rng.normal(size=mask.sum())
    xi = ScalarField(g, xi_vals)
    spec = KernelSpec.fractional_unit(0.5, 1)
    tau = 1e-5

    def energy(v):
        f = layer_s05.copy_with(v)
        return (sobolev_energy(f, region, spec)
                + potential_energy(f, region, quartic))

    d_fd = (energy(layer_s05.values + tau * xi.values)
            - energy(layer_s05.values - tau * xi.values)) / (2 * tau)
    op = get_operator(g, spec)
    grad = op.apply(layer_s05.values) + quartic.wp(layer_s05.values)
    d_pair = g.cell_volume() * float((grad * xi.values).sum())
    scale = energy(layer_s05.values)
    assert abs(d_fd - d_pair) <= 1e-6 * scale
    assert abs(d_pair) <= 1e-6 * scale


def test_el_consistency_rejects_unsupported_perturbation(quartic):
    g = Grid(1, 0.25, 4.0, ConstantExterior([(1.0, 1.0)]))
    u = ScalarField(g, np.zeros(g.shape))
    xi = ScalarField(g, np.ones(g.shape))
    with pytest.raises(ConfigurationError):
        euler_lagrange_consistency(u, xi, KernelSpec.fractional(0.5), quartic,
                                   region=BallRegion((0.0,), 2.0))


def test_epsilon_family_by_newton(quartic, layer_s05):
    """Rescaled seeds converge in a couple of Newton steps; the family
    members certify small residuals of their own-scale equations."""
    eps = 0.5
    phi = solve_layer_1d(0.5, 40.0, 0.05, tol=1e-9, epsilon=eps, seed=layer_s05)
    spec = KernelSpec.fractional_unit(0.5, 1)
    r = residual_field(phi, spec, quartic, epsilon=eps)
    x = phi.grid.axis_coords()
    assert np.max(np.abs(r[np.abs(x) <= 20.0])) <= 1e-9
    # the eps-layer matches the rescaled unit layer where the rescale is defined
    inside = np.abs(x) <= eps * 40.0 - 1.0
    ref = np.interp(x[inside] / eps, x, layer_s05.values)
    assert np.max(np.abs(phi.values[inside] - ref)) <= 0.02
