"""``opfgrad`` command line.

Exit codes: 0 success, 2 infeasible or degenerate (output is still
written), 1 usage or input error.  Bus, generator and edge numbers are
1-based everywhere on the command line.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .conic import COND_LIMIT, DERIV_TOL, EMBED_TOL, DerivativeSystem, PerturbationTriple, \
    _load_db, conic_jacobian, embed_lp_solution
from .exceptions import DependentSets, DimensionError, OPFError, RegionBoundary
from .jacobian import (DEFAULT_BUDGET, closed_form_jacobian, combo_count, combo_jacobians,
                       enumerate_binding_combos, fd_jacobian, jacobian_to_csv,
                       worst_case_sensitivity, worst_case_to_csv)
from .lp import (BINDING_TOL, KKT_TOL, RANK_TOL, OPFModel, detect_binding, kkt_residuals,
                 solution_to_dict, uniqueness_probe)
from .network import CaseError, CaseFile, bundled_case, case_to_dict, load_case
from .opf_operator import construct_parameters_for_binding, regularity_of
from .sweep import AREA_FILTER, scan_limit_plane, scan_load_plane, trace_load_path

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _resolve_case(spec):
    p = Path(spec)
    if p.exists():
        return load_case(p)
    try:
        return bundled_case(p.stem)
    except (CaseError, OSError):
        raise CaseError(f"no such case file: {spec}") from None


def _parse_pairs(items, what):
    out = {}
    for item in items or ():
        for part in item.split(","):
            if not part:
                continue
            k, sep, v = part.partition("=")
            if not sep:
                raise UsageError(f"{what} entries must look like BUS=VALUE, got {part!r}")
            try:
                out[int(k)] = float(v)
            except ValueError:
                raise UsageError(f"bad {what} entry {part!r}") from None
    return out


def _load(args, case):
    return case.load_with(_parse_pairs(args.load, "--load"))


def _model(args, case):
    return OPFModel(case.network, case.cost, case.limits, pivot_tol=args.pivot_tol,
                    bland_after=args.bland_after)


def _emit(args, payload):
    if isinstance(payload, (dict, list)):
        text = json.dumps(payload, indent=2) + "\n"
    else:
        text = payload
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _solve(args, case):
    model = _model(args, case)
    sol = model.solve(_load(args, case))
    return model, sol


def cmd_solve(args, case):
    _, sol = _solve(args, case)
    if not sol.optimal:
        _emit(args, solution_to_dict(sol))
        return EXIT_DEGENERATE
    bs = detect_binding(sol, tol=args.binding_tol, rank_tol=args.rank_tol)
    res = kkt_residuals(sol)
    d = solution_to_dict(sol, case.network, bs, res)
    d["uniqueness"] = uniqueness_probe(sol.lp, sol, seed=args.seed)
    d["regularity"] = dict(zip(("binding_count", "expected", "rank_ok", "strict_complementarity_ok"),
                               regularity_of(sol, tol=args.binding_tol, rank_tol=args.rank_tol,
                                             binding=bs).as_tuple()))
    _emit(args, d)
    return EXIT_OK if res.ok(args.kkt_tol) else EXIT_DEGENERATE


def _jac_payload(jm, case, extra=None):
    d = {"provenance": jm.provenance, "load_buses": case.load_buses(), "J": jm.J.tolist()}
    if jm.combo is not None:
        d["S_G"] = [i + 1 for i in jm.combo.S_G]
        d["S_B"] = [e + 1 for e in jm.combo.S_B]
    if jm.step is not None:
        d["step"] = jm.step
    d.update(extra or {})
    return d


def _regular_binding(args, case):
    _, sol = _solve(args, case)
    if not sol.optimal:
        return sol, None
    bs = detect_binding(sol, tol=args.binding_tol, rank_tol=args.rank_tol)
    rep = regularity_of(sol, tol=args.binding_tol, rank_tol=args.rank_tol, binding=bs)
    return sol, (bs if rep.binding_count == rep.expected and rep.rank_ok else None)


def cmd_jacobian(args, case):
    sol, bs = _regular_binding(args, case)
    if bs is None:
        _emit(args, {"status": sol.status if not sol.optimal else "Degenerate"})
        return EXIT_DEGENERATE
    jm = closed_form_jacobian(case.network, bs.S_G, bs.S_B, args.rank_tol)
    _emit(args, jacobian_to_csv(jm.J) if args.format == "csv" else _jac_payload(jm, case))
    return EXIT_OK


def cmd_fd_check(args, case):
    sol, bs = _regular_binding(args, case)
    if bs is None:
        _emit(args, {"status": sol.status if not sol.optimal else "Degenerate"})
        return EXIT_DEGENERATE
    cf = closed_form_jacobian(case.network, bs.S_G, bs.S_B, args.rank_tol)
    try:
        fd = fd_jacobian(_model(args, case), _load(args, case), args.fd_step, tol=args.binding_tol)
    except RegionBoundary as exc:
        _emit(args, {"status": "RegionBoundary", "message": str(exc)})
        return EXIT_DEGENERATE
    diff = float(np.abs(cf.J - fd.J).max())
    _emit(args, {"max_abs_diff": diff, "closed_form": cf.J.tolist(), "finite_difference": fd.J.tolist(),
                 "step": args.fd_step, "S_G": [i + 1 for i in bs.S_G], "S_B": [e + 1 for e in bs.S_B]})
    return EXIT_OK


def cmd_conic_diff(args, case):
    model, sol = _solve(args, case)
    if not sol.optimal:
        _emit(args, {"status": sol.status})
        return EXIT_DEGENERATE
    kw = dict(deriv_tol=args.deriv_tol, cond_limit=args.cond_limit)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.dload:
            dl = np.zeros(case.network.n_load)
            for bus, v in _parse_pairs(args.dload, "--dload").items():
                k = bus - case.network.n_gen - 1
                if not 0 <= k < case.network.n_load:
                    raise UsageError(f"bus {bus} is not a load bus")
                dl[k] = v
            p, pt = embed_lp_solution(sol.lp, sol, args.embed_tol)
            d = DerivativeSystem(p, pt, **kw).derivative(PerturbationTriple(db=_load_db(sol.lp, dl)))
            payload = {"dload": dl.tolist(), "dsg": d.dx[:case.network.n_gen].tolist(),
                       "method": d.method, "condition": d.condition}
        else:
            jm = conic_jacobian(model, _load(args, case), **kw)
            payload = _jac_payload(jm, case)
    kinks = [str(w.message) for w in caught]
    if kinks:
        payload["nondifferentiable"] = kinks
    if args.format == "csv" and "J" in payload:
        _emit(args, jacobian_to_csv(np.array(payload["J"])))
    else:
        _emit(args, payload)
    return EXIT_DEGENERATE if kinks else EXIT_OK


def cmd_enumerate(args, case):
    combos = enumerate_binding_combos(case.network, args.budget, args.rank_tol)
    if args.format == "csv":
        lines = ["S_G,S_B,independent"] + [
            f"{' '.join(str(i + 1) for i in c.S_G)},{' '.join(str(e + 1) for e in c.S_B)},{c.independent}"
            for c in combos]
        _emit(args, "\n".join(lines) + "\n")
    else:
        _emit(args, {"count": len(combos), "independent": sum(c.independent for c in combos),
                     "combos": [{"S_G": [i + 1 for i in c.S_G], "S_B": [e + 1 for e in c.S_B],
                                 "independent": c.independent} for c in combos]})
    return EXIT_OK


def cmd_sensitivity(args, case):
    net = case.network
    pairs = combo_jacobians(net, enumerate_binding_combos(net, args.budget, args.rank_tol), args.rank_tol)
    gens = [args.gen] if args.gen else list(range(1, net.n_gen + 1))
    buses = [args.load_bus] if args.load_bus else case.load_buses()
    rows = []
    for i in gens:
        for bus in buses:
            if not 1 <= i <= net.n_gen:
                raise UsageError(f"generator {i} out of range 1..{net.n_gen}")
            j = bus - net.n_gen - 1
            if not 0 <= j < net.n_load:
                raise UsageError(f"bus {bus} is not a load bus")
            v, c = worst_case_sensitivity(net, i - 1, j, _jacobians=pairs)
            rows.append((i - 1, j, v, c))
    if args.format == "csv":
        _emit(args, worst_case_to_csv(rows, net))
    else:
        _emit(args, [{"gen": i + 1, "load_bus": net.n_gen + j + 1, "value": v,
                      "S_G": [k + 1 for k in c.S_G], "S_B": [e + 1 for e in c.S_B]}
                     for i, j, v, c in rows])
    return EXIT_OK


def cmd_construct(args, case):
    net = case.network
    S_G = [i - 1 for i in args.S_G or ()]
    S_B = [e - 1 for e in args.S_B or ()]
    try:
        c = construct_parameters_for_binding(net, S_G, S_B, seed=args.seed,
                                             tol=args.binding_tol, rank_tol=args.rank_tol)
    except (DependentSets, DimensionError) as exc:
        _emit(args, {"status": type(exc).__name__, "message": str(exc)})
        return EXIT_DEGENERATE
    built = CaseFile(net, c.cost, c.limits, c.load, name=f"{case.name}-constructed",
                     base_mva=case.base_mva)
    d = case_to_dict(built)
    d["binding"] = c.binding.as_dict(net)
    _emit(args, d)
    return EXIT_OK


def _range(v):
    return (float(v[0]), float(v[1]))


def cmd_scan_load(args, case):
    base = _load(args, case)
    res = tuple(args.resolution) if len(args.resolution) == 2 else args.resolution[0]
    grid = scan_load_plane(_model(args, case), base, tuple(args.axes),
                           (_range(args.x_range), _range(args.y_range)), res,
                           tol=args.binding_tol, rank_tol=args.rank_tol, threads=args.threads)
    _emit(args, grid.to_csv() if args.format == "csv" else grid.summary(args.area_filter))
    return EXIT_OK if grid.feasible_cells else EXIT_DEGENERATE


def cmd_scan_limit(args, case):
    base = _load(args, case)
    net = case.network
    free = None
    if args.free_buses:
        free = [b - net.n_gen - 1 for b in args.free_buses]
        if any(not 0 <= j < net.n_load for j in free):
            raise UsageError("--free-buses must name load buses")
    e = args.branch - 1
    if not 0 <= e < net.n_edge:
        raise UsageError(f"branch {args.branch} out of range 1..{net.n_edge}")
    res = tuple(args.resolution) if len(args.resolution) == 2 else args.resolution[0]
    grid = scan_limit_plane(_model(args, case), (base, free), e, _range(args.lower),
                            _range(args.upper), res, samples=args.samples,
                            tol=args.binding_tol, rank_tol=args.rank_tol, seed=args.seed,
                            threads=args.threads)
    _emit(args, grid.to_csv() if args.format == "csv" else grid.summary(args.area_filter))
    return EXIT_OK if grid.feasible_cells else EXIT_DEGENERATE


def cmd_path(args, case):
    base = _load(args, case)
    pts = []
    for wp in args.waypoint:
        current = dict(zip(case.load_buses(), base))
        current.update(_parse_pairs([wp], "--waypoint"))
        pts.append(case.load_with(current))
    if len(pts) < 2:
        raise UsageError("path needs at least two --waypoint values")
    tr = trace_load_path(_model(args, case), pts, args.samples, tol=args.binding_tol,
                         rank_tol=args.rank_tol)
    _emit(args, tr.to_csv() if args.format == "csv" else tr.as_dict())
    return EXIT_OK if all(s.key != "Infeasible" for s in tr.samples) else EXIT_DEGENERATE


def cmd_case_info(args, case):
    net = case.network
    d = {"name": case.name, "base_mva": case.base_mva, "generators": net.n_gen,
         "loads": net.n_load, "buses": net.n_bus, "edges": net.n_edge,
         "generator_buses": list(range(1, net.n_gen + 1)), "load_buses": case.load_buses(),
         "labels": list(net.labels),
         "edge_list": [{"edge": k + 1, "from": u, "to": v, "b": b}
                       for k, (u, v, b) in enumerate(net.edges)],
         "combinations": {"total": combo_count(net)}}
    _emit(args, d)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="opfgrad", description="DC-OPF operator: solve, differentiate, map regions.")
    p.add_argument("--version", action="version", version=f"opfgrad {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--case", required=True, help="case JSON file or bundled name (case9)")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--load", nargs="*", metavar="BUS=VALUE", help="load overrides")
    common.add_argument("--binding-tol", type=float, default=BINDING_TOL)
    common.add_argument("--rank-tol", type=float, default=RANK_TOL)
    common.add_argument("--pivot-tol", type=float, default=1e-9)
    common.add_argument("--bland-after", type=int, default=50)
    common.add_argument("--kkt-tol", type=float, default=KKT_TOL)
    common.add_argument("--fd-step", type=float, default=1e-6)
    common.add_argument("--embed-tol", type=float, default=EMBED_TOL)
    common.add_argument("--deriv-tol", type=float, default=DERIV_TOL)
    common.add_argument("--cond-limit", type=float, default=COND_LIMIT)
    common.add_argument("--area-filter", type=float, default=AREA_FILTER)
    common.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    common.add_argument("--threads", type=int, default=1)

    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    add("solve", cmd_solve, "solve the OPF and report duals, binding set, residuals")
    add("jacobian", cmd_jacobian, "closed-form Jacobian at the solved binding set")
    add("fd-check", cmd_fd_check, "compare closed-form and finite-difference Jacobians")
    sp = add("conic-diff", cmd_conic_diff, "Jacobian or directional derivative via the conic embedding")
    sp.add_argument("--dload", nargs="*", metavar="BUS=VALUE")
    add("enumerate", cmd_enumerate, "enumerate binding combinations")
    sp = add("sensitivity", cmd_sensitivity, "worst-case sensitivity")
    sp.add_argument("--gen", type=int)
    sp.add_argument("--load-bus", type=int)
    sp = add("construct", cmd_construct, "build data realising a binding combination")
    sp.add_argument("--S-G", dest="S_G", type=int, nargs="*", metavar="GEN")
    sp.add_argument("--S-B", dest="S_B", type=int, nargs="*", metavar="EDGE")
    sp = add("scan-load", cmd_scan_load, "region map over two load buses")
    sp.add_argument("--axes", type=int, nargs=2, required=True, metavar="BUS")
    sp.add_argument("--x-range", type=float, nargs=2, required=True)
    sp.add_argument("--y-range", type=float, nargs=2, required=True)
    sp.add_argument("--resolution", type=int, nargs="+", default=[200])
    sp = add("scan-limit", cmd_scan_limit, "feasibility/degeneracy map over one branch's limits")
    sp.add_argument("--branch", type=int, required=True)
    sp.add_argument("--lower", type=float, nargs=2, required=True)
    sp.add_argument("--upper", type=float, nargs=2, required=True)
    sp.add_argument("--resolution", type=int, nargs="+", default=[20])
    sp.add_argument("--samples", type=int, default=64)
    sp.add_argument("--free-buses", type=int, nargs="*")
    sp = add("path", cmd_path, "trace optimal generation along a load path")
    sp.add_argument("--waypoint", action="append", required=True, metavar="BUS=V[,BUS=V]")
    sp.add_argument("--samples", type=int, default=50)
    add("case-info", cmd_case_info, "summarise a case and its numbering")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        case = _resolve_case(args.case)
        return args.func(args, case)
    except UsageError as exc:
        print(f"opfgrad: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CaseError, OSError, json.JSONDecodeError) as exc:
        print(f"opfgrad: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OPFError as exc:
        print(f"opfgrad: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


def run():
    sys.exit(main())
