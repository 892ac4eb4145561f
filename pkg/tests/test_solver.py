import numpy as np
import pytest

from eggmix.assembly import MixedSystem, boundary_values_from_faces, \
    single_patch_system
from eggmix.errors import StagnationError
from eggmix.io_cli import parse_geometry
from eggmix.geometries import build_lbend, build_quarter_annulus, \
    exact_annulus_map
from eggmix.mapping import unit_square_map
from eggmix.solver import NewtonState, SolverConfig, _line_search, \
    build_system_hierarchy, coarse_to_fine_solve, initial_d_from_c, \
    newton_solve, schur_matvec, schur_rhs, transfinite_global
from eggmix.splines import TensorBasis, uniform_knots, gauss_legendre

from oracles import explicit_schur


def square_system(p=2, ne=3, mode="full"):
    tb = TensorBasis(uniform_knots(p, ne), uniform_knots(p, ne))
    m = unit_square_map(tb)
    return single_patch_system(m, mode=mode), m


def annulus_system(p=2, ne=4):
    geo = parse_geometry(build_quarter_annulus(p, ne))
    bv = boundary_values_from_faces(geo.topology, geo.boundary_data)
    return MixedSystem(geo.topology, bv, mode="full"), geo


def test_initial_d_constant_fields():
    sys_, m = square_system(2, 3)
    c = sys_.net_as_c(m.control[m.inner_indices])
    d = initial_d_from_c(sys_, c).reshape(4, -1)
    nbar = sys_.topology.n_sigbar
    np.testing.assert_allclose(d[0], np.ones(nbar), atol=1e-12)   # u_x = 1
    np.testing.assert_allclose(d[1], np.zeros(nbar), atol=1e-12)  # u_y = 0
    np.testing.assert_allclose(d[2], np.zeros(nbar), atol=1e-12)  # v_x = 0
    np.testing.assert_allclose(d[3], np.ones(nbar), atol=1e-12)   # v_y = 1


def test_initial_d_anisotropic_scaling():
    sys_, m = square_system(2, 3)
    m2 = m.copy()
    m2.control[:, 0] *= 2.0
    m2.control[:, 1] *= 3.0
    sys2 = single_patch_system(m2)
    c = sys2.net_as_c(m2.control[m2.inner_indices])
    d = initial_d_from_c(sys2, c).reshape(4, -1)
    np.testing.assert_allclose(d[0], 2.0, atol=1e-12)
    np.testing.assert_allclose(d[3], 3.0, atol=1e-12)


def test_initial_d_solves_normal_equations(rng):
    sys_, _ = square_system(2, 3)
    c = rng.standard_normal(sys_.c_size)
    d = initial_d_from_c(sys_, c)
    A, B, B_bnd = sys_.assemble_constant_blocks()
    res = A @ d - (B @ c + B_bnd @ sys_.boundary_c)
    assert np.abs(res).max() < 1e-11


def test_schur_matvec_and_rhs_match_explicit_oracle(rng):
    for mode in ("full", "xi", "eta"):
        sys_, m = square_system(2, 3, mode=mode)
        c = sys_.net_as_c(m.control[m.inner_indices]) \
            + 0.15 * rng.standard_normal(sys_.c_size)
        d = initial_d_from_c(sys_, c) + 0.1 * rng.standard_normal(sys_.d_size)
        Dt, rhs_ref = explicit_schur(sys_, d, c)
        state = NewtonState(sys_, d, c)
        cfg = SolverConfig()
        for _ in range(5):
            s = rng.standard_normal(sys_.c_size)
            got = schur_matvec(sys_, state, s, cfg)
            ref = Dt @ s
            assert np.linalg.norm(got - ref) < 1e-5 * np.linalg.norm(ref)
        rhs = schur_rhs(sys_, state, cfg)
        assert np.linalg.norm(rhs - rhs_ref) < 1e-5 * np.linalg.norm(rhs_ref)


def test_schur_matvec_matches_oracle_under_coupling(rng):
    # coupled topology: the mass inverses run through the preconditioned CG
    from eggmix.geometries import build_two_patch_square
    geo = parse_geometry(build_two_patch_square(2, 2))
    bv = boundary_values_from_faces(geo.topology, geo.boundary_data)
    sys_ = MixedSystem(geo.topology, bv)
    c0 = sys_.net_as_c(transfinite_global(sys_)[geo.topology.inner_indices])
    c = c0 + 0.1 * rng.standard_normal(sys_.c_size)
    d = initial_d_from_c(sys_, c) + 0.05 * rng.standard_normal(sys_.d_size)
    Dt, rhs_ref = explicit_schur(sys_, d, c)
    state = NewtonState(sys_, d, c)
    cfg = SolverConfig()
    for _ in range(5):
        s = rng.standard_normal(sys_.c_size)
        got = schur_matvec(sys_, state, s, cfg)
        ref = Dt @ s
        assert np.linalg.norm(got - ref) < 1e-5 * np.linalg.norm(ref)
    rhs = schur_rhs(sys_, state, cfg)
    assert np.linalg.norm(rhs - rhs_ref) < 1e-5 * np.linalg.norm(rhs_ref)


def test_forward_quotient_matches_central_in_linear_configuration(rng):
    # with c fixed the metric factors are frozen, so R_N is exactly linear
    # along pure-d directions: forward and central quotients must coincide
    # far below the general finite-difference tolerance
    sys_, m = square_system(2, 3)
    c = sys_.net_as_c(m.control[m.inner_indices])
    d = initial_d_from_c(sys_, c)
    state = NewtonState(sys_, d, c)
    cfg = SolverConfig()
    for _ in range(5):
        q = rng.standard_normal(sys_.d_size)
        eps = cfg.fd_epsilon(state.state_norm, float(np.linalg.norm(q)))
        forward = (sys_.eval_RN(d + eps * q, c) - state.r_n) / eps
        central = (sys_.eval_RN(d + eps * q, c)
                   - sys_.eval_RN(d - eps * q, c)) / (2 * eps)
        assert np.linalg.norm(forward - central) <= 1e-7 * max(
            1.0, np.linalg.norm(central))


def test_schur_matvec_guards_tiny_direction(rng):
    sys_, m = square_system(2, 3)
    c = sys_.net_as_c(m.control[m.inner_indices])
    d = initial_d_from_c(sys_, c)
    state = NewtonState(sys_, d, c)
    out = schur_matvec(sys_, state, np.zeros(sys_.c_size), SolverConfig())
    assert np.isfinite(out).all()


def test_schur_rhs_short_circuits_on_consistent_d():
    sys_, m = square_system(2, 3)
    rng = np.random.default_rng(0)
    c = sys_.net_as_c(m.control[m.inner_indices]) \
        + 0.1 * rng.standard_normal(sys_.c_size)
    d = initial_d_from_c(sys_, c)
    state = NewtonState(sys_, d, c)
    rhs = schur_rhs(sys_, state, SolverConfig())
    np.testing.assert_array_equal(rhs, -state.r_n)


def test_newton_identity_converges_immediately():
    sys_, m = square_system(3, 3)
    before = m.control[m.boundary_indices].tobytes()
    c, rep = newton_solve(sys_, m, SolverConfig())
    assert rep.converged and rep.newton_iterations <= 2
    assert rep.final_residual < 1e-10
    assert m.control[m.boundary_indices].tobytes() == before  # bitwise fixed
    np.testing.assert_allclose(
        sys_.c_as_net(c), m.basis.greville_grid()[m.inner_indices], atol=1e-9)


def test_line_search_accepts_full_step():
    cfg = SolverConfig()
    nu, r_new, probes = _line_search(lambda nu: 0.5, 1.0, cfg)
    assert nu == 1.0 and probes == 1


def test_line_search_backtracks_then_accepts():
    cfg = SolverConfig()
    calls = []

    def trial(nu):
        calls.append(nu)
        return 2.0 if nu > 0.3 else 0.9

    nu, r_new, probes = _line_search(trial, 1.0, cfg)
    assert nu == 0.25 and probes == 3


def test_line_search_stagnates():
    cfg = SolverConfig()
    with pytest.raises(StagnationError):
        _line_search(lambda nu: 1.0, 1.0, cfg)


def test_accepted_steps_decrease_residual():
    sys_, geo = annulus_system(2, 4)
    c0 = sys_.net_as_c(transfinite_global(sys_)[geo.topology.inner_indices])
    c, rep = newton_solve(sys_, c0, SolverConfig(newton_tol=1e-10))
    assert rep.converged
    for k, nu in enumerate(rep.nu_values):
        r_old = rep.residual_norms[k]
        r_new = rep.residual_norms[k + 1]
        assert r_new <= (1 - 1e-4 * nu) * r_old


def test_superlinear_tail_on_annulus():
    sys_, geo = annulus_system(2, 8)
    c0 = sys_.net_as_c(transfinite_global(sys_)[geo.topology.inner_indices])
    c, rep = newton_solve(sys_, c0, SolverConfig(newton_tol=1e-10))
    assert rep.converged and rep.newton_iterations >= 3
    # window above the finite-difference noise floor, inside the Newton basin
    tail = [n for n in rep.step_norms if 1e-8 < n < 1e-2]
    pairs = [(a, b) for a, b in zip(rep.step_norms, rep.step_norms[1:])
             if a in tail]
    assert pairs
    for a, b in pairs:
        assert b <= 10.0 * a ** 1.5


def test_determinism_bitwise():
    results = []
    for _ in range(2):
        sys_, geo = annulus_system(2, 4)
        c0 = sys_.net_as_c(transfinite_global(sys_)[geo.topology.inner_indices])
        c, rep = newton_solve(sys_, c0, SolverConfig())
        results.append((c.tobytes(), tuple(rep.residual_norms),
                        tuple(rep.step_norms), tuple(rep.gmres_iterations)))
    assert results[0] == results[1]


def test_rn_eval_accounting():
    sys_, geo = annulus_system(2, 4)
    c0 = sys_.net_as_c(transfinite_global(sys_)[geo.topology.inner_indices])
    n0 = sys_.rn_eval_count
    c, rep = newton_solve(sys_, c0, SolverConfig())
    assert rep.rn_evals == sys_.rn_eval_count - n0
    # one base eval per iteration + gmres matvecs + line-search probes
    # + at most one rhs finite-difference eval per iteration
    base = rep.newton_iterations + sum(rep.gmres_matvecs) + rep.line_search_evals
    assert base <= rep.rn_evals <= base + rep.newton_iterations


def test_solver_report_serializable():
    sys_, m = square_system(1, 2)
    c, rep = newton_solve(sys_, m, SolverConfig())
    import json
    json.dumps(rep.to_dict())


def test_keep_d_flag():
    sys_, m = square_system(1, 2)
    c, rep = newton_solve(sys_, m, SolverConfig())
    assert rep.d_final is None
    sys2, m2 = square_system(1, 2)
    c2, rep2 = newton_solve(sys2, m2, SolverConfig(keep_d=True))
    assert rep2.d_final is not None and rep2.d_final.shape == (sys2.d_size,)


def test_verbose_emits_json_lines(capsys):
    sys_, m = square_system(1, 2)
    newton_solve(sys_, m, SolverConfig(verbose=True))
    out = capsys.readouterr().out.strip().splitlines()
    import json
    assert len(out) >= 1
    rec = json.loads(out[0])
    assert {"newton_iteration", "residual_norm", "step_norm"} <= set(rec)


def test_coarse_to_fine_square_matches_direct():
    tb = TensorBasis(uniform_knots(2, 2), uniform_knots(2, 2))
    m = unit_square_map(tb)
    topo = single_patch_system(m).topology
    bv = m.control[topo.boundary_indices]
    hier = build_system_hierarchy(topo, bv, 1)
    c0 = hier[0].system.net_as_c(
        transfinite_global(hier[0].system)[topo.inner_indices])
    c_h, rep_h = coarse_to_fine_solve(hier, c0, SolverConfig())
    fine = hier[1].system
    cf0 = fine.net_as_c(
        transfinite_global(fine)[fine.topology.inner_indices])
    c_d, rep_d = newton_solve(fine, cf0, SolverConfig())
    assert rep_h.converged and rep_d.converged
    assert np.abs(c_h - c_d).max() < 1e-10
    assert len(rep_h.levels) == 2


def test_coarse_to_fine_prolongation_reproduces_coarse_map():
    geo = parse_geometry(build_lbend(nelems_xi=4, nelems_eta=4))
    bv = boundary_values_from_faces(geo.topology, geo.boundary_data)
    hier = build_system_hierarchy(geo.topology, bv, 1, mode="xi")
    sys_c = hier[0].system
    c0 = sys_c.net_as_c(transfinite_global(sys_c)[geo.topology.inner_indices])
    c_c, rep_c = newton_solve(sys_c, c0, SolverConfig())
    net_c = sys_c.full_control_net(c_c)
    net_f = hier[1].prolong(net_c)
    mc = geo.topology.patch_map(0, net_c)
    mf = hier[1].system.topology.patch_map(0, net_f)
    rng = np.random.default_rng(8)
    for x, y in rng.uniform(0, 1, size=(50, 2)):
        np.testing.assert_allclose(mc.eval_jet(x, y, 0)["x"],
                                   mf.eval_jet(x, y, 0)["x"], atol=1e-12)


def test_coarse_to_fine_lbend_iterations_not_worse():
    geo = parse_geometry(build_lbend(nelems_xi=4, nelems_eta=4))
    bv = boundary_values_from_faces(geo.topology, geo.boundary_data)
    hier = build_system_hierarchy(geo.topology, bv, 1, mode="xi")
    c0 = hier[0].system.net_as_c(
        transfinite_global(hier[0].system)[geo.topology.inner_indices])
    c_h, rep_h = coarse_to_fine_solve(hier, c0, SolverConfig())
    fine = hier[1].system
    cf0 = fine.net_as_c(transfinite_global(fine)[fine.topology.inner_indices])
    c_d, rep_d = newton_solve(fine, cf0, SolverConfig())
    assert rep_h.converged and rep_d.converged
    assert rep_h.levels[1].newton_iterations <= rep_d.newton_iterations


def test_eta_mode_on_transposed_lbend_matches_winslow(lbend_solved):
    # swapping parameters and physical coordinates turns the xi-only problem
    # into the eta-only one with the same Winslow energy
    doc = build_lbend()
    patch = doc["patches"][0]
    swapped = {
        "degree_xi": patch["degree_eta"], "degree_eta": patch["degree_xi"],
        "knots_xi": patch["knots_eta"], "knots_eta": patch["knots_xi"],
        "boundary": {
            "south": [[y, x] for x, y in patch["boundary"]["west"]],
            "north": [[y, x] for x, y in patch["boundary"]["east"]],
            "west": [[y, x] for x, y in patch["boundary"]["south"]],
            "east": [[y, x] for x, y in patch["boundary"]["north"]],
        },
    }
    geo = parse_geometry({"version": 1, "patches": [swapped], "interfaces": []})
    bv = boundary_values_from_faces(geo.topology, geo.boundary_data)
    sys_ = MixedSystem(geo.topology, bv, mode="eta")
    c0 = sys_.net_as_c(transfinite_global(sys_)[geo.topology.inner_indices])
    c, rep = newton_solve(sys_, c0, SolverConfig(newton_tol=1e-10))
    assert rep.converged and rep.newton_iterations <= 10
    from eggmix.mapping import sampled_bijectivity, winslow
    m = geo.topology.patch_map(0, sys_.full_control_net(c))
    assert sampled_bijectivity(m, 5).fold_count == 0
    w_ref = winslow(lbend_solved.patch_map(0))
    assert abs(winslow(m) - w_ref) < 1e-8 * w_ref


def test_driver_terminates_when_pushed_past_achievable_accuracy():
    # demanding steps below the finite-difference noise floor must end in a
    # clean stagnation error or a non-convergence report, never a hang
    sys_, geo = annulus_system(2, 4)
    c0 = sys_.net_as_c(transfinite_global(sys_)[geo.topology.inner_indices])
    cfg = SolverConfig(newton_tol=1e-16, newton_abs_floor=1e-30, max_newton=25)
    try:
        c, rep = newton_solve(sys_, c0, cfg)
        assert not rep.converged and rep.newton_iterations == 25
    except StagnationError as exc:
        assert exc.report is not None and exc.report.stagnated
        assert exc.report.residual_norms[-1] < 1e-6  # stalled deep in the tail


def test_exact_annulus_interpolant_l2_error_decreases():
    # the solved map approaches the closed-form solution under refinement
    errs = []
    for ne in (4, 8):
        sys_, geo = annulus_system(2, ne)
        c0 = sys_.net_as_c(
            transfinite_global(sys_)[geo.topology.inner_indices])
        c, rep = newton_solve(sys_, c0, SolverConfig(newton_tol=1e-10))
        assert rep.converged
        m = geo.topology.patch_map(0, sys_.full_control_net(c))
        q, w = gauss_legendre(5)
        kx = m.basis.kv_xi
        pts = (kx.breakpoints[:-1, None]
               + np.diff(kx.breakpoints)[:, None] * q).ravel()
        wts = (np.diff(kx.breakpoints)[:, None] * w).ravel()
        X = m.grid_jet(pts, pts, 0)["x"]
        exact = exact_annulus_map(pts[:, None] * np.ones_like(pts)[None, :],
                                  np.ones_like(pts)[:, None] * pts[None, :])
        err2 = ((X - exact) ** 2).sum(-1)
        errs.append(np.sqrt(np.sum(wts[:, None] * wts[None, :] * err2)))
        from eggmix.mapping import sampled_bijectivity
        assert sampled_bijectivity(m, 5).min_detj > 0.0
    assert errs[1] < 0.3 * errs[0]
