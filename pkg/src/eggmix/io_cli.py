"""Geometry ingestion, solve orchestration, quality reporting and mesh export.

Geometry and solution files are JSON (schema in docs/geometry_schema.json);
mesh export writes legacy-VTK structured grids, SVG isoline plots or CSV
point tables. Exit codes: 0 converged, 1 input error, 2 non-converged.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np

from .assembly import MixedSystem, boundary_values_from_faces
from .errors import CornerMismatchError, EggmixError, InputError, \
    KnotMismatchError, StagnationError
from .mapping import sampled_bijectivity, winslow
from .multipatch import AffinePatchMap, Interface, PatchTopology, build_topology
from .solver import SolverConfig, build_system_hierarchy, coarse_to_fine_solve, \
    folded_initial_guess, newton_solve, transfinite_global
from .splines import KnotVector, TensorBasis

FACE_NAMES = ("south", "north", "west", "east")
SOLVER_KEYS = ("mode", "mu", "chi", "newton_tol", "max_newton", "gmres_tol",
               "gmres_restart", "gmres_max_iter", "coarse_levels")


@dataclass
class Finding:
    severity: str   # "error" | "warning"
    pointer: str    # JSON pointer into the document
    message: str

    def __str__(self):
        return f"{self.severity}: {self.pointer}: {self.message}"


@dataclass
class GeometryFile:
    doc: dict
    topology: PatchTopology
    boundary_data: dict
    solver: dict


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate_geometry(doc) -> list:
    """Structural schema validation; returns findings with JSON-pointer paths."""
    out = []
    err = lambda ptr, msg: out.append(Finding("error", ptr, msg))
    if not isinstance(doc, dict):
        err("", "document must be a JSON object")
        return out
    if doc.get("version") != 1:
        err("/version", "expected format version 1")
    patches = doc.get("patches")
    if not isinstance(patches, list) or not patches:
        err("/patches", "expected a nonempty array of patches")
        patches = []
    for i, p in enumerate(patches):
        ptr = f"/patches/{i}"
        if not isinstance(p, dict):
            err(ptr, "patch must be an object")
            continue
        for key in ("degree_xi", "degree_eta"):
            if not isinstance(p.get(key), int) or p.get(key, 0) < 1:
                err(f"{ptr}/{key}", "expected an integer >= 1")
        for key in ("knots_xi", "knots_eta"):
            kn = p.get(key)
            if not isinstance(kn, list) or not all(_is_number(v) for v in kn):
                err(f"{ptr}/{key}", "expected an array of numbers")
                continue
            deg = p.get("degree_xi" if key == "knots_xi" else "degree_eta")
            if isinstance(deg, int) and deg >= 1:
                try:
                    KnotVector(deg, kn)
                except InputError as exc:
                    err(f"{ptr}/{key}", str(exc))
        aff = p.get("affine")
        if aff is not None:
            A = aff.get("A") if isinstance(aff, dict) else None
            b = aff.get("b") if isinstance(aff, dict) else None
            ok = (isinstance(A, list) and len(A) == 2
                  and all(isinstance(r, list) and len(r) == 2
                          and all(_is_number(v) for v in r) for r in A))
            if not ok:
                err(f"{ptr}/affine/A", "expected a 2x2 number matrix")
            if not (isinstance(b, list) and len(b) == 2
                    and all(_is_number(v) for v in b)):
                err(f"{ptr}/affine/b", "expected a 2-vector")
            if ok and A[0][0] * A[1][1] - A[0][1] * A[1][0] == 0:
                err(f"{ptr}/affine/A", "matrix must be invertible")
        bnd = p.get("boundary", {})
        if not isinstance(bnd, dict):
            err(f"{ptr}/boundary", "expected an object keyed by face name")
        else:
            for face, arr in bnd.items():
                if face not in FACE_NAMES:
                    err(f"{ptr}/boundary/{face}", "unknown face name")
                elif not (isinstance(arr, list)
                          and all(isinstance(q, list) and len(q) == 2
                                  and all(_is_number(v) for v in q) for q in arr)):
                    err(f"{ptr}/boundary/{face}", "expected an array of [x, y] pairs")
    itfs = doc.get("interfaces", [])
    if not isinstance(itfs, list):
        err("/interfaces", "expected an array")
        itfs = []
    for k, itf in enumerate(itfs):
        ptr = f"/interfaces/{k}"
        if not isinstance(itf, dict):
            err(ptr, "interface must be an object")
            continue
        for key in ("patch_a", "patch_b"):
            v = itf.get(key)
            if not isinstance(v, int) or not 0 <= v < len(patches):
                err(f"{ptr}/{key}", "expected a valid patch index")
        for key in ("face_a", "face_b"):
            if itf.get(key) not in FACE_NAMES:
                err(f"{ptr}/{key}", f"expected one of {FACE_NAMES}")
        if "reversed" in itf and not isinstance(itf["reversed"], bool):
            err(f"{ptr}/reversed", "expected a boolean")
    solver = doc.get("solver", {})
    if not isinstance(solver, dict):
        err("/solver", "expected an object")
    else:
        for key in solver:
            if key not in SOLVER_KEYS:
                out.append(Finding("warning", f"/solver/{key}",
                                   "unknown solver setting (ignored)"))
        if "mode" in solver and solver["mode"] not in ("full", "xi", "eta"):
            err("/solver/mode", "expected full, xi or eta")
    return out


def parse_geometry(doc) -> GeometryFile:
    """Build the topology and boundary data from a validated document."""
    findings = [f for f in validate_geometry(doc) if f.severity == "error"]
    if findings:
        raise InputError("; ".join(str(f) for f in findings))
    patches = []
    for p in doc["patches"]:
        tb = TensorBasis(KnotVector(p["degree_xi"], p["knots_xi"]),
                         KnotVector(p["degree_eta"], p["knots_eta"]))
        aff = p.get("affine")
        am = (AffinePatchMap(np.array(aff["A"]), np.array(aff["b"]))
              if aff else AffinePatchMap.identity())
        patches.append((tb, am))
    interfaces = [Interface(i["patch_a"], i["face_a"], i["patch_b"], i["face_b"],
                            bool(i.get("reversed", False)))
                  for i in doc.get("interfaces", [])]
    topology = build_topology(patches, interfaces)
    boundary_data = {}
    for pi, p in enumerate(doc["patches"]):
        for face, arr in p.get("boundary", {}).items():
            boundary_data[(pi, face)] = np.asarray(arr, dtype=float)
    for pi in range(topology.n_patches):
        for face in topology.unglued_faces[pi]:
            if (pi, face) not in boundary_data:
                raise InputError(
                    f"/patches/{pi}/boundary/{face}: missing curve for unglued face")
    for (pi, face) in boundary_data:
        if face not in topology.unglued_faces[pi]:
            raise InputError(
                f"/patches/{pi}/boundary/{face}: face is glued; no curve allowed")
    return GeometryFile(doc=doc, topology=topology,
                        boundary_data=boundary_data,
                        solver=dict(doc.get("solver", {})))


def load_geometry(path) -> GeometryFile:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return parse_geometry(doc)


def _atomic_write(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _quality_block(topology, control):
    per_patch = []
    min_detj = np.inf
    folds = 0
    for i in range(topology.n_patches):
        rep = sampled_bijectivity(topology.patch_map(i, control), 5)
        min_detj = min(min_detj, rep.min_detj)
        folds += rep.fold_count
        per_patch.append(rep)
    block = {"min_detj": float(min_detj), "fold_count": int(folds),
             "nonbijective": folds > 0}
    if folds == 0:
        ws = [winslow(topology.patch_map(i, control))
              for i in range(topology.n_patches)]
        block["winslow_per_patch"] = [float(w) for w in ws]
        block["winslow_total"] = float(sum(ws))
    else:
        block["winslow_per_patch"] = None
        block["winslow_total"] = None
    return block


def _residual_norm_of_solution(system: MixedSystem, c):
    d = system.project_d(c)
    rl = system.eval_RL(d, c)
    rn = system.eval_RN(d, c)
    return float(np.sqrt(rl @ rl + rn @ rn))


def geometry_doc_from_system(system: MixedSystem) -> dict:
    """Reconstruct a geometry document on the system's own basis (needed when
    the solve refined the file's basis through coarse-to-fine levels)."""
    topo = system.topology
    patches = []
    for i, tb in enumerate(topo.bases):
        p = {
            "degree_xi": tb.kv_xi.degree,
            "degree_eta": tb.kv_eta.degree,
            "knots_xi": [float(v) for v in tb.kv_xi.knots],
            "knots_eta": [float(v) for v in tb.kv_eta.knots],
        }
        am = topo.maps[i]
        if not (np.array_equal(am.A, np.eye(2)) and np.array_equal(am.b, np.zeros(2))):
            p["affine"] = {"A": [[float(v) for v in row] for row in am.A],
                           "b": [float(v) for v in am.b]}
        boundary = {}
        for face in topo.unglued_faces[i]:
            gl = topo.sig_l2g[i][tb.face_indices(face)]
            boundary[face] = [[float(x), float(y)]
                              for x, y in system._template[gl]]
        p["boundary"] = boundary
        patches.append(p)
    interfaces = [{"patch_a": itf.patch_a, "face_a": itf.face_a,
                   "patch_b": itf.patch_b, "face_b": itf.face_b,
                   "reversed": itf.reversed} for itf in topo.interfaces]
    return {"version": 1, "patches": patches, "interfaces": interfaces,
            "solver": {"mode": system.mode, "mu": system.mu,
                       "chi": system.chi}}


def solution_document(geometry_doc: dict, system: MixedSystem, c, report,
                      settings) -> dict:
    control = system.full_control_net(c)
    nets = [[[float(x), float(y)] for x, y in system.topology.gather_local(i, control)]
            for i in range(system.topology.n_patches)]
    return {
        "format": "eggmix-solution",
        "version": 1,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "geometry": geometry_doc,
        "solver_settings": settings,
        "control_nets": nets,
        "converged": bool(report.converged),
        "residual_norm": _residual_norm_of_solution(system, c),
        "report": report.to_dict(),
        "quality": _quality_block(system.topology, control),
    }


def write_solution(path, sol: dict):
    _atomic_write(path, json.dumps(sol, indent=1, sort_keys=True) + "\n")


def load_solution(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        sol = json.load(fh)
    if sol.get("format") != "eggmix-solution":
        raise InputError(f"{path} is not a solution file")
    return sol


def solution_system(sol: dict):
    """Rebuild the mixed system and coefficient vector stored in a solution."""
    geo = parse_geometry(sol["geometry"])
    settings = sol["solver_settings"]
    bvals = boundary_values_from_faces(geo.topology, geo.boundary_data)
    system = MixedSystem(geo.topology, bvals, mode=settings["mode"],
                         chi=settings["chi"], mu=settings["mu"])
    control = np.zeros((geo.topology.n_sigma, 2))
    for i, net in enumerate(sol["control_nets"]):
        control[geo.topology.sig_l2g[i]] = np.asarray(net, dtype=float)
    c = system.net_as_c(control[geo.topology.inner_indices])
    return system, c, control


def solution_patch_maps(sol: dict):
    geo = parse_geometry(sol["geometry"])
    maps = []
    for i, net in enumerate(sol["control_nets"]):
        maps.append(geo.topology.patch_map(
            i, np.zeros((geo.topology.n_sigma, 2))))
        maps[-1].control[:] = np.asarray(net, dtype=float)
    return geo, maps


# -- commands --------------------------------------------------------------------

def cmd_solve(args) -> int:
    try:
        geo = load_geometry(args.input)
    except (InputError, json.JSONDecodeError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    settings = {"mode": "full", "mu": 1e-4, "chi": 0.5, "coarse_levels": 0}
    settings.update({k: v for k, v in geo.solver.items() if k in SOLVER_KEYS})
    for key in ("mode", "mu", "chi", "coarse_levels"):
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = v  # CLI flags win over file settings
    config_kwargs = {}
    for src, dst in (("newton_tol", "newton_tol"), ("max_newton", "max_newton"),
                     ("gmres_tol", "gmres_tol"), ("gmres_restart", "gmres_restart"),
                     ("gmres_max_iter", "gmres_max_iter")):
        if src in geo.solver:
            config_kwargs[dst] = geo.solver[src]
    if args.tol is not None:
        config_kwargs["newton_tol"] = args.tol
    config = SolverConfig(verbose=args.verbose,
                          coarse_levels=int(settings["coarse_levels"]),
                          **config_kwargs)
    out_path = args.out or os.path.splitext(args.input)[0] + ".solution.json"
    try:
        bvals = boundary_values_from_faces(geo.topology, geo.boundary_data)
        levels = config.coarse_levels
        if levels > 0:
            hierarchy = build_system_hierarchy(
                geo.topology, bvals, levels, mode=settings["mode"],
                chi=settings["chi"], mu=settings["mu"])
            system = hierarchy[0].system
        else:
            system = MixedSystem(geo.topology, bvals, mode=settings["mode"],
                                 chi=settings["chi"], mu=settings["mu"])
        c_full = transfinite_global(system)
        if args.initial == "folded":
            c_full = folded_initial_guess(system, c_full)
        elif args.initial == "file":
            if not args.initial_file:
                print("input error: --initial file needs --initial-file",
                      file=sys.stderr)
                return 1
            prev = load_solution(args.initial_file)
            _, _, c_full = solution_system(prev)
            if c_full.shape[0] != system.topology.n_sigma:
                raise InputError(
                    "--initial-file solution does not match this geometry")
        c0 = system.net_as_c(c_full[system.topology.inner_indices])
        stagnated = False
        try:
            if levels > 0:
                c, report = coarse_to_fine_solve(hierarchy, c0, config)
                system = hierarchy[-1].system
            else:
                c, report = newton_solve(system, c0, config)
        except StagnationError as exc:
            report = exc.report
            _, c = exc.state
            system = getattr(exc, "system", None) or system
            stagnated = True
    except (InputError, EggmixError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    # the embedded geometry must describe the basis the control nets live on
    geometry_doc = geo.doc if system.topology is geo.topology \
        else geometry_doc_from_system(system)
    sol = solution_document(geometry_doc, system, c, report, settings)
    write_solution(out_path, sol)
    print(f"wrote {out_path}")
    print(f"converged: {report.converged}  newton_iterations: "
          f"{report.newton_iterations}  rn_evals: {report.rn_evals}  "
          f"residual: {sol['residual_norm']:.3e}")
    q = sol["quality"]
    if q["nonbijective"]:
        print(f"quality: nonbijective ({q['fold_count']} folded samples, "
              f"min detJ {q['min_detj']:.3e})")
    else:
        print(f"quality: winslow {q['winslow_total']:.6f}  min detJ "
              f"{q['min_detj']:.3e}")
    return 0 if (report.converged and not stagnated) else 2


def cmd_check(args) -> int:
    try:
        with open(args.input, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read {args.input}: {exc}", file=sys.stderr)
        return 1
    findings = validate_geometry(doc)
    if not any(f.severity == "error" for f in findings):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                geo = parse_geometry(doc)
                boundary_values_from_faces(geo.topology, geo.boundary_data)
                geo.topology.convexity_warning()
            except (KnotMismatchError, CornerMismatchError, InputError) as exc:
                findings.append(Finding("error", "", str(exc)))
            for w in caught:
                if issubclass(w.category, UserWarning):
                    findings.append(Finding("warning", "", str(w.message)))
    for f in findings:
        print(str(f))
    if not findings:
        print("ok")
    return 1 if any(f.severity == "error" for f in findings) else 0


def _sample_grid(kv, resolution):
    pts = []
    for e in range(kv.nelems):
        a, b = kv.breakpoints[e], kv.breakpoints[e + 1]
        pts.extend(a + (b - a) * np.arange(resolution) / resolution)
    pts.append(kv.breakpoints[-1])
    return np.asarray(pts)


def _sample_patch(pmap, resolution):
    xs = _sample_grid(pmap.basis.kv_xi, resolution)
    ys = _sample_grid(pmap.basis.kv_eta, resolution)
    jets = pmap.grid_jet(xs, ys, 1)
    a, b = jets["x_xi"], jets["x_eta"]
    detj = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return xs, ys, jets["x"], detj


def _write_csv(path, patches_samples):
    lines = ["patch,i,j,s,t,x,y,detj"]
    for pi, (xs, ys, X, detj) in enumerate(patches_samples):
        for i in range(len(xs)):
            for j in range(len(ys)):
                lines.append("%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g" % (
                    pi, i, j, xs[i], ys[j], X[i, j, 0], X[i, j, 1], detj[i, j]))
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_vtk(path, patches_samples):
    multi = len(patches_samples) > 1
    for pi, (xs, ys, X, detj) in enumerate(patches_samples):
        out = path
        if multi:
            stem, ext = os.path.splitext(path)
            out = f"{stem}_p{pi}{ext or '.vtk'}"
        nx, ny = len(xs), len(ys)
        lines = ["# vtk DataFile Version 3.0", "eggmix structured grid",
                 "ASCII", "DATASET STRUCTURED_GRID",
                 f"DIMENSIONS {ny} {nx} 1", f"POINTS {nx * ny} double"]
        for i in range(nx):
            for j in range(ny):
                lines.append("%.17g %.17g 0" % (X[i, j, 0], X[i, j, 1]))
        lines += [f"POINT_DATA {nx * ny}", "SCALARS detj double 1",
                  "LOOKUP_TABLE default"]
        for i in range(nx):
            for j in range(ny):
                lines.append("%.17g" % detj[i, j])
        _atomic_write(out, "\n".join(lines) + "\n")


def svg_isolines(maps, resolution):
    """Images of all element-boundary knot lines, one polyline per line."""
    polylines = []
    for pmap in maps:
        kx, ky = pmap.basis.kv_xi, pmap.basis.kv_eta
        dense_x = _sample_grid(kx, max(resolution, 4))
        dense_y = _sample_grid(ky, max(resolution, 4))
        for xv in kx.breakpoints:
            jets = pmap.grid_jet([xv], dense_y, 0)
            polylines.append(jets["x"][0])
        for yv in ky.breakpoints:
            jets = pmap.grid_jet(dense_x, [yv], 0)
            polylines.append(jets["x"][:, 0])
    return polylines


def _write_svg(path, maps, resolution):
    polylines = svg_isolines(maps, resolution)
    allpts = np.vstack(polylines)
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    margin = 0.05 * max(hi - lo)
    lo -= margin
    hi += margin
    w, h = hi - lo
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="%.6f %.6f %.6f %.6f" '
        f'width="640" height="%d">' % (lo[0], -hi[1], w, h, int(640 * h / w)),
        f'<g transform="scale(1,-1)" fill="none" stroke="black" '
        f'stroke-width="%.6f">' % (0.002 * max(w, h)),
    ]
    for poly in polylines:
        pts = " ".join("%.6f,%.6f" % (p[0], p[1]) for p in poly)
        lines.append(f'<polyline points="{pts}"/>')
    lines += ["</g>", "</svg>"]
    _atomic_write(path, "\n".join(lines) + "\n")


def cmd_sample(args) -> int:
    try:
        sol = load_solution(args.input)
        geo, maps = solution_patch_maps(sol)
    except (InputError, json.JSONDecodeError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    if args.format not in ("vtk", "svg", "csv"):
        print(f"input error: unknown format {args.format!r}", file=sys.stderr)
        return 1
    out = args.out or os.path.splitext(args.input)[0] + "." + args.format
    samples = [_sample_patch(m, args.resolution) for m in maps]
    if args.format == "csv":
        _write_csv(out, samples)
    elif args.format == "vtk":
        _write_vtk(out, samples)
    else:
        _write_svg(out, maps, args.resolution)
    print(f"wrote {out}")
    return 0


def cmd_quality(args) -> int:
    try:
        sol = load_solution(args.input)
        geo, maps = solution_patch_maps(sol)
    except (InputError, json.JSONDecodeError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    total = 0.0
    bijective = True
    min_detj = np.inf
    for i, m in enumerate(maps):
        rep = sampled_bijectivity(m, 5)
        min_detj = min(min_detj, rep.min_detj)
        if rep.fold_count:
            bijective = False
            print(f"patch {i}: nonbijective ({rep.fold_count} folded samples)")
            for loc in rep.fold_locations[:10]:
                print("  fold at s=%.4f t=%.4f detJ=%.3e" % loc)
        else:
            w = winslow(m)
            total += w
            print(f"patch {i}: winslow {w:.6f}  min detJ {rep.min_detj:.6e}")
    if bijective:
        print(f"total winslow: {total:.6f}")
    else:
        print("nonbijective")
    print(f"min detJ: {min_detj:.6e}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="eggmix",
        description="Folding-free planar spline parameterization from "
                    "boundary contours (mixed-form elliptic grid generation)")
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve a geometry file")
    ps.add_argument("input")
    ps.add_argument("--out", default=None)
    ps.add_argument("--mode", choices=("full", "xi", "eta"), default=None)
    ps.add_argument("--mu", type=float, default=None)
    ps.add_argument("--chi", type=float, default=None)
    ps.add_argument("--coarse-levels", dest="coarse_levels", type=int, default=None)
    ps.add_argument("--tol", type=float, default=None)
    ps.add_argument("--initial", choices=("transfinite", "file", "folded"),
                    default="transfinite")
    ps.add_argument("--initial-file", default=None)
    ps.add_argument("--verbose", action="store_true")
    ps.set_defaults(fn=cmd_solve)

    pc = sub.add_parser("check", help="validate a geometry file")
    pc.add_argument("input")
    pc.set_defaults(fn=cmd_check)

    pm = sub.add_parser("sample", help="export a solved map as a mesh")
    pm.add_argument("input")
    pm.add_argument("--resolution", type=int, default=4)
    pm.add_argument("--format", choices=("vtk", "svg", "csv"), default="vtk")
    pm.add_argument("--out", default=None)
    pm.set_defaults(fn=cmd_sample)

    pq = sub.add_parser("quality", help="report Winslow energy and bijectivity")
    pq.add_argument("input")
    pq.set_defaults(fn=cmd_quality)

    args = parser.parse_args(argv)
    return args.fn(args)


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
