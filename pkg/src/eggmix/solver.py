"""Schur-complement Jacobian-free Newton-Krylov driver.

The constant auxiliary block is eliminated exactly (single patch) or through
the patchwise-separable restriction approximation (multipatch); the Schur
operator is applied by finite differencing the nonlinear residual only. A
backtracking line search on the residual norm globalizes the iteration, and
convergence is declared on the Newton-step norm relative to the first
accepted step.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, StagnationError
from .linalg import gmres
from .mapping import SplineMap
from .multipatch import build_topology
from .assembly import MixedSystem

SQRT_EPS = float(np.sqrt(np.finfo(float).eps))


@dataclass
class SolverConfig:
    """Tolerances and knobs for the Newton-Krylov solve.

    ``newton_tol`` is relative to the first accepted step norm;
    ``newton_abs_floor`` is the absolute fallback below which any step counts
    as converged.
    """
    newton_tol: float = 1e-8
    newton_abs_floor: float = 1e-12
    max_newton: int = 50
    ls_backtrack: float = 0.5
    ls_decrease: float = 1e-4
    ls_min_nu: float = 1e-4
    gmres_tol: float = 1e-3
    gmres_restart: int = 50
    gmres_max_iter: int = 200
    coarse_levels: int = 0
    fd_floor: float = 1e-14
    verbose: bool = False
    keep_d: bool = False

    def __post_init__(self):
        for name in ("newton_tol", "newton_abs_floor", "gmres_tol",
                     "ls_min_nu", "fd_floor"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive")
        if not 0.0 < self.ls_backtrack < 1.0:
            raise InputError("ls_backtrack must lie in (0, 1)")
        if not 0.0 < self.ls_min_nu <= 1.0:
            raise InputError("ls_min_nu must lie in (0, 1]")

    def fd_epsilon(self, state_norm: float, dir_norm: float) -> float:
        """Finite-difference step: sqrt(machine eps) * (1 + |state|) / |s|,
        with the direction norm floored."""
        return SQRT_EPS * (1.0 + state_norm) / max(dir_norm, self.fd_floor)


@dataclass
class SolverReport:
    converged: bool = False
    stagnated: bool = False
    newton_iterations: int = 0
    residual_norms: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    nu_values: list = field(default_factory=list)
    gmres_iterations: list = field(default_factory=list)
    gmres_matvecs: list = field(default_factory=list)
    rn_evals: int = 0
    line_search_evals: int = 0
    wall_time: float = 0.0
    final_residual: float = np.nan
    d_final: np.ndarray | None = None
    levels: list = field(default_factory=list)

    def to_dict(self):
        # wall_time is deliberately left out: solution files must be
        # byte-identical across runs with identical inputs
        out = {
            "converged": bool(self.converged),
            "stagnated": bool(self.stagnated),
            "newton_iterations": self.newton_iterations,
            "residual_norms": [float(v) for v in self.residual_norms],
            "step_norms": [float(v) for v in self.step_norms],
            "nu_values": [float(v) for v in self.nu_values],
            "gmres_iterations": list(self.gmres_iterations),
            "gmres_matvecs": list(self.gmres_matvecs),
            "rn_evals": self.rn_evals,
            "line_search_evals": self.line_search_evals,
            "final_residual": float(self.final_residual),
        }
        if self.levels:
            out["levels"] = [lv.to_dict() for lv in self.levels]
        return out


class NewtonState:
    """One (d, c) iterate with lazily cached residual pieces."""

    def __init__(self, system: MixedSystem, d, c):
        self.system = system
        self.d = np.asarray(d, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.rl_tilde = system.eval_RL_tilde(d, c)
        self.r_l = system.reduce_tilde(self.rl_tilde).ravel()
        self.r_n = system.eval_RN(d, c)
        self.r_norm = float(np.sqrt(self.r_l @ self.r_l + self.r_n @ self.r_n))
        self.state_norm = float(np.sqrt(self.d @ self.d + self.c @ self.c))


def initial_d_from_c(system: MixedSystem, c):
    """Auxiliary start values: separable L2 projection of x_xi, x_eta."""
    return system.project_d(c)


def schur_matvec(system: MixedSystem, state: NewtonState, s,
                 config: SolverConfig | None = None):
    """Finite-difference product of the Schur complement with ``s``."""
    config = config or SolverConfig()
    s = np.asarray(s, dtype=float)
    q = system.apply_ainv_b(s)
    eps = config.fd_epsilon(state.state_norm, float(np.linalg.norm(s)))
    rn = system.eval_RN(state.d + eps * q, state.c + eps * s)
    return (rn - state.r_n) / eps


def schur_rhs(system: MixedSystem, state: NewtonState,
              config: SolverConfig | None = None):
    """Right-hand side b - C A^-1 a of the Schur equation.

    A consistent linear part (a ~ 0, i.e. pure solver noise) short-circuits
    the finite-difference term and returns b exactly.
    """
    config = config or SolverConfig()
    a = -state.r_l
    b = -state.r_n
    anorm = float(np.linalg.norm(a))
    if anorm <= 1e-12 * max(1.0, float(np.linalg.norm(b))):
        return b
    q = system.ainv_exact(-state.rl_tilde).ravel()
    eps = config.fd_epsilon(state.state_norm, float(np.linalg.norm(q)))
    rn = system.eval_RN(state.d + eps * q, state.c)
    return b - (rn - state.r_n) / eps


def _line_search(residual_norm_of, r_old: float, config: SolverConfig):
    """Backtracking on the residual norm; returns (nu, new_norm, probes).

    Accepts the first nu with ||R_new|| <= (1 - ls_decrease * nu) ||R_old||;
    raises StagnationError below the nu floor.
    """
    nu = 1.0
    probes = 0
    while nu >= config.ls_min_nu:
        r_new = residual_norm_of(nu)
        probes += 1
        if r_new <= (1.0 - config.ls_decrease * nu) * r_old:
            return nu, r_new, probes
        nu *= config.ls_backtrack
    raise StagnationError(
        f"line search hit nu floor {config.ls_min_nu:g} without decrease "
        f"from ||R|| = {r_old:.3e}")


def newton_solve(system: MixedSystem, initial, config: SolverConfig | None = None):
    """Run the Newton-Krylov iteration.

    ``initial`` is a SplineMap (single patch; its inner control points seed
    the iteration and receive the solution on success) or an inner
    coefficient array. Returns ``(c_final, report)`` with c in the flat
    (x..., y...) layout. Bijectivity of the start is not required.
    """
    config = config or SolverConfig()
    target_map = initial if isinstance(initial, SplineMap) else None
    if target_map is not None:
        c = system.net_as_c(target_map.control[target_map.inner_indices])
    else:
        c = np.asarray(initial, dtype=float)
        if c.shape == (system.n_inner, 2):
            c = system.net_as_c(c)
    c = c.copy()
    d = system.project_d(c)

    report = SolverReport()
    rn0 = system.rn_eval_count
    t0 = time.perf_counter()
    n_ref = None
    converged = False
    state = None

    for it in range(1, config.max_newton + 1):
        state = NewtonState(system, d, c)
        report.residual_norms.append(state.r_norm)
        rhs = schur_rhs(system, state, config)
        gm = gmres(lambda s: schur_matvec(system, state, s, config), rhs,
                   tol=config.gmres_tol, restart=config.gmres_restart,
                   max_iter=config.gmres_max_iter)
        delta_c = gm.solution
        delta_d = system.solve_delta_d(-state.rl_tilde, delta_c)
        n_norm = float(np.sqrt(delta_d @ delta_d + delta_c @ delta_c))
        report.newton_iterations = it
        report.step_norms.append(n_norm)
        report.gmres_iterations.append(gm.iterations)
        report.gmres_matvecs.append(gm.matvec_count)

        threshold = config.newton_abs_floor
        if n_ref is not None:
            threshold = max(threshold, config.newton_tol * n_ref)
        if config.verbose:
            print(json.dumps({
                "newton_iteration": it, "residual_norm": state.r_norm,
                "step_norm": n_norm, "gmres_iterations": gm.iterations,
                "rn_evals": system.rn_eval_count - rn0}, sort_keys=True))
        if n_norm <= threshold:
            converged = True
            break

        def trial_norm(nu):
            rl = system.eval_RL(d + nu * delta_d,
                                c + nu * delta_c)
            rn = system.eval_RN(d + nu * delta_d, c + nu * delta_c)
            return float(np.sqrt(rl @ rl + rn @ rn))

        try:
            nu, _, probes = _line_search(trial_norm, state.r_norm, config)
        except StagnationError as exc:
            report.rn_evals = system.rn_eval_count - rn0
            report.wall_time = time.perf_counter() - t0
            report.final_residual = state.r_norm
            report.stagnated = True
            exc.report = report
            exc.state = (d, c)
            exc.system = system
            raise
        report.line_search_evals += probes
        report.nu_values.append(nu)
        d = d + nu * delta_d
        c = c + nu * delta_c
        if n_ref is None:
            n_ref = n_norm

    report.converged = converged
    report.rn_evals = system.rn_eval_count - rn0
    report.wall_time = time.perf_counter() - t0
    report.final_residual = state.r_norm if state is not None else np.nan
    if config.keep_d:
        report.d_final = d
    if converged and target_map is not None:
        target_map.control[target_map.inner_indices] = system.c_as_net(c)
    return c, report


# -- initial guesses -----------------------------------------------------------

def transfinite_global(system: MixedSystem):
    """Control-net transfinite (Coons) interior on every patch.

    Interface curves, which are unknowns, get straight-segment placeholders
    between their endpoint values (domain centroid when an endpoint is itself
    interior, e.g. an extraordinary vertex). Returns the full control net.
    """
    topo = system.topology
    net = system._template.copy()
    known = np.zeros(topo.n_sigma, dtype=bool)
    known[topo.boundary_indices] = True
    centroid = net[topo.boundary_indices].mean(axis=0)

    for itf in topo.interfaces:
        tb = topo.bases[itf.patch_a]
        gl = topo.sig_l2g[itf.patch_a][tb.face_indices(itf.face_a)]
        for g in (gl[0], gl[-1]):
            if not known[g]:
                net[g] = centroid
                known[g] = True
    for itf in topo.interfaces:
        tb = topo.bases[itf.patch_a]
        gl = topo.sig_l2g[itf.patch_a][tb.face_indices(itf.face_a)]
        ratios = tb.face_knotvector(itf.face_a).greville
        v0, v1 = net[gl[0]], net[gl[-1]]
        for g, r in zip(gl[1:-1], ratios[1:-1]):
            if not known[g]:
                net[g] = (1.0 - r) * v0 + r * v1
                known[g] = True

    for p in range(topo.n_patches):
        tb = topo.bases[p]
        local = net[topo.sig_l2g[p]].reshape(tb.n_xi, tb.n_eta, 2)
        s = tb.kv_xi.greville[:, None, None]
        t = tb.kv_eta.greville[None, :, None]
        F = ((1 - s) * local[0][None, :, :] + s * local[-1][None, :, :]
             + (1 - t) * local[:, 0][:, None, :] + t * local[:, -1][:, None, :]
             - ((1 - s) * (1 - t) * local[0, 0] + s * (1 - t) * local[-1, 0]
                + (1 - s) * t * local[0, -1] + s * t * local[-1, -1]))
        flat = F.reshape(tb.dim, 2)
        for loc in range(tb.dim):
            g = topo.sig_l2g[p][loc]
            if not known[g]:
                net[g] = flat[loc]
                known[g] = True
    return net


def folded_initial_guess(system: MixedSystem, c_full=None):
    """Deliberately folded start: mirror the interior x-coordinates across
    the vertical line through the boundary centroid, reversing the interior
    orientation relative to the fixed boundary."""
    topo = system.topology
    net = (transfinite_global(system) if c_full is None
           else np.array(c_full, dtype=float))
    cx = net[topo.boundary_indices, 0].mean()
    net[topo.inner_indices, 0] = 2.0 * cx - net[topo.inner_indices, 0]
    return net


# -- coarse-to-fine continuation -------------------------------------------------

@dataclass
class HierarchyLevel:
    system: MixedSystem
    prolong: object = None  # callable net_coarse -> net_fine, None at level 0


def _refined_topology(topo):
    patches = [(tb.refine()[0], topo.maps[i]) for i, tb in enumerate(topo.bases)]
    return build_topology(patches, topo.interfaces)


def _prolong_net(topo_c, topo_f, prolongations, net):
    out = np.zeros((topo_f.n_sigma, 2))
    done = np.zeros(topo_f.n_sigma, dtype=bool)
    for p in range(topo_c.n_patches):
        local = net[topo_c.sig_l2g[p]]
        fine_local = prolongations[p] @ local
        for loc, g in enumerate(topo_f.sig_l2g[p]):
            if not done[g]:
                out[g] = fine_local[loc]
                done[g] = True
    return out


def build_system_hierarchy(topology, boundary_values, levels: int, *,
                           mode="full", chi=0.5, mu=1e-4):
    """Nested systems from ``levels`` global refinements of a root topology.

    The root is the coarsest level; boundary data refines exactly through the
    prolongation (clamped edge rows only mix edge coefficients).
    """
    out = [HierarchyLevel(MixedSystem(topology, boundary_values,
                                      mode=mode, chi=chi, mu=mu))]
    topo = topology
    for _ in range(levels):
        prol = [tb.refine()[1] for tb in topo.bases]
        topo_f = _refined_topology(topo)
        net_f = _prolong_net(topo, topo_f, prol, out[-1].system._template)
        sysf = MixedSystem(topo_f, net_f[topo_f.boundary_indices],
                           mode=mode, chi=chi, mu=mu)

        def make_prolong(tc, tf, pr):
            return lambda net: _prolong_net(tc, tf, pr, net)

        out.append(HierarchyLevel(sysf, make_prolong(topo, topo_f, prol)))
        topo = topo_f
    return out


def coarse_to_fine_solve(hierarchy, initial, config: SolverConfig | None = None):
    """Solve coarse-to-fine, prolonging only the c-component and recomputing
    the auxiliary part by L2 projection at each level.

    Returns ``(c_final, report)`` on the finest level; per-level reports are
    collected in ``report.levels``.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    c = initial
    reports = []
    for k, level in enumerate(hierarchy):
        if k > 0:
            net = hierarchy[k - 1].system.full_control_net(c)
            net_f = level.prolong(net)
            c = level.system.net_as_c(net_f[level.system.topology.inner_indices])
        c, rep = newton_solve(level.system, c, config)
        reports.append(rep)
    final = reports[-1]
    out = SolverReport(
        converged=all(r.converged for r in reports),
        newton_iterations=sum(r.newton_iterations for r in reports),
        residual_norms=final.residual_norms,
        step_norms=final.step_norms,
        nu_values=final.nu_values,
        gmres_iterations=final.gmres_iterations,
        gmres_matvecs=final.gmres_matvecs,
        rn_evals=sum(r.rn_evals for r in reports),
        line_search_evals=sum(r.line_search_evals for r in reports),
        wall_time=time.perf_counter() - t0,
        final_residual=final.final_residual,
        levels=reports)
    return c, out
