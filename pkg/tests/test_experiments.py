import math

import numpy as np
import pytest

from nonlocal_rd import reactions as R
from nonlocal_rd.diagnostics import h1_seminorm
from nonlocal_rd.experiments import (
    ConvergenceTable, cosine_mode, fit_convergence_order, gaussian_bump, kernel_independence_probe,
    random_uniform, run_difflimit_study, run_side_by_side,
)
from nonlocal_rd.grid import build_grid
from nonlocal_rd.integrate import SolverConfig, SystemSpec, run
from nonlocal_rd.kernels import KernelSpec, assemble_operator, effective_diffusivity, second_moment
from nonlocal_rd.operators import Local, Nonlocal

BUMP = KernelSpec("bump", normalization="unit_mass")


def test_fit_exact_power_law():
    j = np.array([1.0, 2.0, 4.0, 8.0])
    fit = fit_convergence_order((j, 3.0 * j**-2.0))
    assert abs(fit.order - 2.0) <= 1e-9 and fit.residual <= 1e-9
    assert abs(fit_convergence_order((j, np.full(4, 0.3))).order) <= 1e-12
    assert fit_convergence_order((j, np.array([1.0, 0.5, 0.0, 0.1]))).order == math.inf
    with pytest.raises(ValueError):
        fit_convergence_order((j[:2], j[:2]))


def test_table_layout():
    t = ConvergenceTable(2)
    t.add(1, 1.0, [0.1, 0.2], [0.3, 0.4], np.zeros((2, 5)))
    with pytest.raises(ValueError):
        t.add(1, 1.0, [0.1, 0.2], [0.3, 0.4], np.zeros((2, 5)))
    head = t.to_csv().splitlines()[0].split(",")
    assert head[:6] == ["j", "eps", "l2_diff_u1", "l2_diff_u2", "linf_diff_u1", "linf_diff_u2"]
    assert head[6] == "node0_diff_u1" and head[-1] == "node4_diff_u2"
    assert "| 1 |" in t.to_markdown()


def test_constant_data_gives_zero_differences():
    g = build_grid(2, (1.0, 1.0), (11, 11))
    spec = SystemSpec(g, R.zero_reaction(2), (Local(0.1), Local(0.02)), np.full((2, g.n_nodes), 0.7), 0.5)
    res = run_difflimit_study(spec, BUMP, [1, 2, 4])
    for r in res.table.rows:
        assert r["l2"].max() <= 1e-12 and r["linf"].max() <= 1e-12 and r["nodes"].max() <= 1e-12


def test_limit_consistency_zero_reaction():
    g = build_grid(1, 1.0, 81)
    u0 = np.sin(np.pi * g.nodes[:, 0]) + 0.1
    spec = SystemSpec(g, R.zero_reaction(1), (Local(0.1),), u0[None], 0.5)
    res = run_difflimit_study(spec, BUMP, [2, 4, 8, 16])
    l2 = res.table.column("l2")
    assert l2[-1] < l2[0]
    assert fit_convergence_order(res.table).order > 0


def test_eps_schedules():
    g = build_grid(1, 1.0, 41)
    spec = SystemSpec(g, R.zero_reaction(1), (Local(0.1),), (cosine_mode(g))[None], 0.2)
    psi = KernelSpec("truncated_gaussian", eps=0.5, cutoff=1.5, normalization="unit_mass")
    res = run_difflimit_study(spec, psi, [1, 2], eps_schedule="inverse")
    assert [r["eps"] for r in res.table.rows] == [0.5, 0.25]
    assert len(res.local_trajectories) == 2
    res = run_difflimit_study(spec, psi, [1, 2], eps_schedule=[0.4, 0.4])
    assert len(res.local_trajectories) == 1


def test_study_rejects_unsorted():
    g = build_grid(1, 1.0, 11)
    spec = SystemSpec(g, R.zero_reaction(1), (Local(0.1),), np.ones((1, 11)), 0.1)
    with pytest.raises(ValueError):
        run_difflimit_study(spec, BUMP, [2, 1])


def test_effective_diffusivity_modal_decay():
    M = second_moment(BUMP, 1)
    D = effective_diffusivity(M, 0.1, 1)
    g = build_grid(1, 2.0, 201)
    u0 = cosine_mode(g, 1, mean=1.0, amplitude=0.5)
    t_end = 5.0
    tr = run(SystemSpec(g, R.zero_reaction(1), (Local(D),), u0[None], t_end), SolverConfig(diagnostics_stride=0))
    mode = np.cos(np.pi * g.nodes[:, 0] / 2.0)
    c = g.cell_weight
    amp = lambda u: (c @ ((u - 1.0) * mode)) / (c @ (mode * mode))
    observed = amp(tr.final[0]) / amp(u0)
    expected = math.exp(-D * math.pi**2 * t_end / 4.0)
    rate_obs, rate_exp = -math.log(observed) / t_end, -math.log(expected) / t_end
    assert abs(rate_obs / rate_exp - 1.0) <= 0.05


def test_side_by_side_identical_is_bitwise():
    g = build_grid(1, 2.0, 50)
    op = assemble_operator(g, KernelSpec("gaussian"))
    u0 = gaussian_bump(g, [1.0], 0.1, 0.5)
    spec = SystemSpec(g, R.mol_demo(), (Nonlocal(0.1, op), Local(0.01)), np.stack([u0, u0]), 0.5)
    cfg = SolverConfig(scheme="implicit_bdf2", dt=0.05, snapshot_stride=1)
    res = run_side_by_side(spec, spec, cfg)
    assert np.array_equal(res.trajectories[0].final, res.trajectories[1].final)
    assert res.smoothness_csv(0) == res.smoothness_csv(1)
    assert res.smoother is None


def test_side_by_side_zero_reaction_smooths():
    g = build_grid(1, 2.0, 60)
    op = assemble_operator(g, KernelSpec("gaussian", eps=0.3))
    u0 = random_uniform(g, seed=4)
    a = SystemSpec(g, R.zero_reaction(1), (Nonlocal(0.1, op),), u0[None], 1.0)
    b = SystemSpec(g, R.zero_reaction(1), (Local(0.01),), u0[None], 1.0)
    res = run_side_by_side(a, b, SolverConfig(snapshot_stride=1))
    for k in range(2):
        h1 = np.array([row[1] for row in res.smoothness[k]])
        assert np.all(np.diff(h1) <= 1e-12 * h1[0])


def test_side_by_side_requires_matching_data():
    g = build_grid(1, 1.0, 11)
    a = SystemSpec(g, R.zero_reaction(1), (Local(0.1),), np.ones((1, 11)), 0.1)
    b = SystemSpec(g, R.zero_reaction(1), (Local(0.1),), 2 * np.ones((1, 11)), 0.1)
    with pytest.raises(ValueError):
        run_side_by_side(a, b)


def test_kernel_independence_probe():
    g = build_grid(2, (2.0, 1.0), (41, 21))
    U0 = np.stack([gaussian_bump(g), gaussian_bump(g, amplitude=0.5)])
    spec = SystemSpec(g, R.gray_scott(), (Local(0.1), Local(0.01)), U0, 2.0)
    kernels = [KernelSpec("gaussian", eps=1.0), KernelSpec("bump", scale_index=1), KernelSpec("bump", scale_index=4)]
    out = kernel_independence_probe(spec, kernels, config=SolverConfig(dt=0.01, diagnostics_stride=0))
    # invariant region of the reaction: u1 <= max(1, sup u1_0); mass of u2 stays bounded
    bound = 2.0 * (out["initial_norm"] + math.sqrt(g.volume))
    assert np.all(np.isfinite(out["peaks"])) and np.all(out["peaks"] <= bound)
    assert out["spread"] < 10.0


def test_mixed_system_smoother_v():
    g = build_grid(1, 2.0, 100)
    op = assemble_operator(g, KernelSpec("gaussian", eps=1.0))
    u0 = gaussian_bump(g, [1.0], 0.1, 0.5)
    U0 = np.stack([u0, u0])
    nl = SystemSpec(g, R.mol_demo(), (Nonlocal(0.1, op), Nonlocal(0.01, op)), U0, 2.0)
    mx = SystemSpec(g, R.mol_demo(), (Nonlocal(0.1, op), Local(0.01)), U0, 2.0)
    res = run_side_by_side(nl, mx, SolverConfig(scheme="implicit_bdf2", dt=1e-2, snapshot_stride=20),
                           labels=("nonlocal", "mixed"))
    assert all(t.termination.ok for t in res.trajectories)
    assert res.h1_final[1, 1] < res.h1_final[0, 1] and res.smoother == 1
    assert h1_seminorm(g, res.trajectories[1].final[1]) == res.h1_final[1, 1]
