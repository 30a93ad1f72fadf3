import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cage_homog import fem, unfolding
from cage_homog.problems import solve_limit

from conftest import c0_mesh, c0_params


def _smooth(mesh, k):
    x = mesh.grid.nodes
    return fem.NodalField(np.exp(1j * k * x[:, 0]) * np.cos(3 * x[:, -1]) + x[:, -1] ** 2, mesh)


@pytest.mark.parametrize("mode,delta", [("2d", 0.25), ("2d", 0.0625), ("3d", 0.25)])
def test_unfold_matches_point_evaluation(mode, delta):
    mesh = c0_mesh(delta, cpp=4 if mode == "3d" else 8, raster=4 if mode == "3d" else 8, mode=mode)
    def f(X):
        return np.sin(2 * X[:, 0]) + X[:, -1] * np.cos(X[:, :-1].sum(axis=1))

    u = fem.NodalField(f(mesh.grid.nodes).astype(complex), mesh)
    T = unfolding.unfold(u, mesh)
    dp = len(mesh.n_periods)
    z = T.micro.nodes  # (nm, d) micro coordinates
    for cell in [(0,) * dp, tuple(n - 1 for n in mesh.n_periods)]:
        X = np.concatenate([delta * (np.array(cell)[None, :] + z[:, :dp]), delta * z[:, dp:]], axis=1)
        assert np.allclose(T.values[cell], f(X), atol=1e-13)


@pytest.mark.parametrize("delta", [0.25, 0.125, 0.0625])
def test_integral_identity_and_norm_bound(delta, rng):
    mesh = c0_mesh(delta)
    for v in fem.random_smooth_fields(mesh, 4, rng):
        assert unfolding.check_integral_identity(v, mesh)["rel_err"] <= 1e-12
        assert unfolding.check_norm_bound(v, mesh) <= 1 + 1e-12
        assert unfolding.check_gradient_scaling(v, mesh) <= 1e-12


def test_norm_bound_is_equality_inside_strip(mesh_eighth, rng):
    v = fem.random_smooth_fields(mesh_eighth, 1, rng)[0]
    inside = fem.NodalField(unfolding.refold(unfolding.unfold(v), mesh_eighth), mesh_eighth)
    # elements straddling the strip edge see a partial field; only fully supported fields give equality
    T = unfolding.unfold(inside)
    lhs = np.sqrt(mesh_eighth.delta) * T.l2_norm()
    assert lhs <= fem.norms(inside)["l2"] * (1 + 1e-12)


def test_fault_injection_detected(mesh_quarter, rng):
    v = fem.random_smooth_fields(mesh_quarter, 1, rng)[0]
    assert unfolding.check_integral_identity(v, fault_injection=True)["rel_err"] > 1e-6


def test_refold_inverts_unfold(mesh_quarter, rng):
    v = fem.random_smooth_fields(mesh_quarter, 1, rng)[0]
    T = unfolding.unfold(v)
    assert np.array_equal(unfolding.refold(T, mesh_quarter, base=v.values), v.values)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 5.0), st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
def test_unfold_is_linear(k, s):
    mesh = c0_mesh(0.25)
    a, b = _smooth(mesh, k), _smooth(mesh, 2 * k)
    lhs = unfolding.unfold(fem.NodalField(a.values + s * b.values, mesh))
    rhs = unfolding.unfold(a) + unfolding.unfold(b) * s
    assert np.allclose(lhs.values, rhs.values, atol=1e-12)


def test_default_zeta_is_node_aligned(mesh_eighth):
    z = unfolding.default_zeta(mesh_eighth)
    assert 2 <= z <= 8
    mesh_eighth.plane_index(z * mesh_eighth.delta)
    mesh_eighth.plane_index(-z * mesh_eighth.delta)


def test_zeta_bounds(mesh_quarter):
    with pytest.raises(ValueError):
        unfolding.unfold(np.zeros(mesh_quarter.node_count), mesh_quarter, zeta=5.0)


def test_normal_derivative_exact_for_quadratics(mesh_eighth):
    x = mesh_eighth.grid.nodes
    u = fem.NodalField((1 + x[:, 0]) * (2 * x[:, -1] + 3 * x[:, -1] ** 2).astype(complex), mesh_eighth)
    g = unfolding.normal_derivative_at_gamma(u)
    assert np.allclose(g, 2 * (1 + mesh_eighth.grid.axes[0]), atol=1e-10)


def test_corrector_limit_check_decreases():
    meshes = [c0_mesh(d) for d in (0.25, 0.125, 0.0625)]
    u = solve_limit(c0_mesh(0.0625, refine=4), c0_params(), check_resonance=False).field
    errs = [r["error"] for r in unfolding.corrector_limit_check(u, meshes)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-4


def test_corrector_limit_check_trivial_cases():
    meshes = [c0_mesh(d) for d in (0.25, 0.125)]
    fine = c0_mesh(0.0625)
    x3 = fine.node_x3()
    lin = fem.NodalField(np.where(x3 > 0, 2.5 * x3, 0.0).astype(complex), fine)
    assert all(r["error"] < 1e-12 for r in unfolding.corrector_limit_check(lin, meshes))
    zero = fem.NodalField(np.zeros(fine.node_count, dtype=complex), fine)
    assert all(r["error"] == 0 for r in unfolding.corrector_limit_check(zero, meshes))
