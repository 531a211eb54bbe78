import json

import numpy as np
import pytest

from logitmd.network import load_network
from logitmd.reference import (
    analytic_equilibrium,
    grid_equilibrium,
    md_refine,
    reference_equilibrium,
    wardrop_residual,
)


def parallel(costs, demand=1.0):
    return load_network({
        "nodes": ["s", "t"],
        "edges": [{"id": f"e{i}", "tail": "s", "head": "t", "cost": c} for i, c in enumerate(costs)],
        "od_pairs": [{"origin": "s", "destination": "t", "demand": demand}],
    })


AFFINE = {"kind": "affine", "a": 0.0, "b": 1.0}


def test_grid_pigou(pigou):
    cert = grid_equilibrium(pigou, 0.01)
    assert cert.method == "grid"
    assert cert.x_star == [0.0, 1.0]
    assert cert.psi_star == pytest.approx(0.5, abs=1e-15)
    assert cert.resolution_or_iters == 0.01


def test_grid_symmetric_network():
    cert = grid_equilibrium(parallel([AFFINE, AFFINE]), 0.01)
    np.testing.assert_allclose(cert.x_star, [0.5, 0.5], atol=1e-15)
    assert cert.residual == pytest.approx(0.0, abs=1e-15)


def test_grid_braess(braess):
    cert = grid_equilibrium(braess, 0.01)
    np.testing.assert_allclose(cert.x_star, [0.25, 0.5, 0.25], atol=1e-12)
    assert cert.psi_star == pytest.approx(1.375, abs=1e-12)


def test_grid_is_minimal_over_grid(braess, rng):
    cert = grid_equilibrium(braess, 0.05)
    for _ in range(200):
        k = rng.multinomial(20, np.ones(3) / 3)
        assert cert.psi_star <= braess.potential(k / 20) + 1e-15


def test_grid_agrees_with_md_refine_on_psi(pigou, braess):
    h = 0.01
    for net in (pigou, braess):
        g = grid_equilibrium(net, h)
        m = md_refine(net, 100_000, seed=0)
        assert abs(g.psi_star - m.psi_star) <= max(2 * h * net.bounds.path_cost_bound, 1e-3)


def test_grid_agrees_with_md_refine_braess_point(braess):
    h = 0.01
    g = grid_equilibrium(braess, h)
    m = md_refine(braess, 100_000, seed=0)
    assert np.abs(np.array(g.x_star) - np.array(m.x_star)).sum() <= 2 * h


def test_md_refine_pigou_long_run(pigou):
    cert = md_refine(pigou, 1_000_000, seed=0)
    assert cert.method == "md-refine"
    assert abs(cert.psi_star - 0.5) <= 1e-3


def test_md_refine_braess_wardrop(braess):
    cert = md_refine(braess, 100_000, seed=0)
    assert cert.residual <= 1e-2
    # every used route is no dearer than any route plus the residual
    x = np.array(cert.x_star)
    G = braess.path_costs(x)
    assert np.all(G[x > 1e-3] <= G.min() + cert.residual + 1e-15)


def test_md_refine_constant_costs():
    net = parallel([{"kind": "constant", "c": 2.0}] * 3)
    cert = md_refine(net, 100_000)
    assert cert.residual == 0.0
    assert net.is_feasible(np.array(cert.x_star))


def test_md_refine_small_budget_rejected(pigou):
    with pytest.raises(ValueError):
        md_refine(pigou, 1000)


def test_too_many_paths_for_grid():
    with pytest.raises(ValueError, match="too many paths|at most"):
        grid_equilibrium(parallel([AFFINE] * 7), 0.1)


def test_bad_resolution(pigou):
    for h in (0.0, 0.3):
        with pytest.raises(ValueError):
            grid_equilibrium(pigou, h)


def test_analytic_matches_grid():
    net = parallel([{"kind": "affine", "a": 1.0, "b": 2.0}, {"kind": "affine", "a": 0.5, "b": 1.0}], demand=2.0)
    a = analytic_equilibrium(net)
    # 1 + 2 x1 = 0.5 + (2 - x1)  ->  x1 = 0.5
    np.testing.assert_allclose(a.x_star, [0.5, 1.5])
    assert a.residual == pytest.approx(0.0, abs=1e-15)
    g = grid_equilibrium(net, 0.01)
    assert a.psi_star <= g.psi_star + 1e-15


def test_reference_dispatch(pigou, braess):
    assert reference_equilibrium(pigou).method == "analytic"
    assert reference_equilibrium(braess).method == "grid"
    assert reference_equilibrium(parallel([AFFINE] * 7)).method == "md-refine"


def test_wardrop_residual_values(pigou):
    assert wardrop_residual(pigou, [0.0, 1.0]) == 0.0
    assert wardrop_residual(pigou, [0.5, 0.5]) == pytest.approx(0.5)
    # a route at or below the share threshold does not count as used
    assert wardrop_residual(pigou, [1e-3, 1 - 1e-3]) == pytest.approx(0.0, abs=1e-15)


def test_certificate_json(pigou):
    d = grid_equilibrium(pigou, 0.1).to_dict()
    assert set(d) == {"method", "x_star", "psi_star", "residual", "resolution_or_iters"}
    json.dumps(d)
