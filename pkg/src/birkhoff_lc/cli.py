"""Command-line front end: analyze / reduce / simulate / verify.

Exit codes: 0 success, 1 analysis error, 2 usage error.  Output is a plain
text report by default; --format json emits a schema-validatable document
(schema/cli_output.schema.json in the repository); simulate writes CSV by
default.  BIRKHOFF_LC_LOG=debug|info|warning controls verbosity.
"""

import argparse
import json
import logging
import os
import sys
from fractions import Fraction

import numpy as np

from . import errors, rational
from .birkhoff import assemble, build_energy, check_conservative, check_regularity
from .config import build_config, verify_kernel_identity
from .graph import build_incidence, build_loop_basis, check_tellegen, classify_loops
from .mna import compare_oracle
from .netlist import format_number, parse_netlist
from .reduce import (conserved_quantities, initial_velocity,
                     reduce_capacitor_loops, regularize)
from .sim import SimConfig, simulate

SCHEMA_VERSION = 1


def _setup_logging():
    level = os.environ.get("BIRKHOFF_LC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_netlist(fh.read())


def _fmt_mat(m):
    """Aligned integer/rational table."""
    cells = [[format_number(x) for x in row] for row in m]
    if not cells:
        return "  (empty)"
    width = max(len(c) for row in cells for c in row)
    return "\n".join("  [ " + "  ".join(c.rjust(width) for c in row) + " ]"
                     for row in cells)


def _mat_json(m):
    return [[format_number(x) for x in row] for row in m]


def _pipeline(circuit, raw_at=False):
    B = build_incidence(circuit)
    A = build_loop_basis(circuit)
    cfg = build_config(circuit, B, A)
    sys_ = assemble(cfg, raw_weights=raw_at)
    return B, A, cfg, sys_


def _symbolic_strings(sys_):
    """Human-readable Q components for all-linear systems."""
    F, K, g0, g_t, V, W_t = sys_.symbolic_linear()
    lines = []
    for j in range(sys_.dof):
        terms = []
        for i in range(sys_.dof):
            if F[j][i] != 0:
                terms.append(f"({format_number(F[j][i])})*qdd{i + 1}")
        for i in range(sys_.dof):
            if K[j][i] != 0:
                terms.append(f"({format_number(K[j][i])})*q{i + 1}")
        if g0[j] != 0:
            terms.append(f"({format_number(g0[j])})")
        for name, combo in (("g", g_t[j]), ("V", V[j]), ("W", W_t[j])):
            if not combo.is_zero():
                terms.append(f"{name}{j + 1}(t)")
        lines.append(f"Q{j + 1} = " + (" + ".join(terms) if terms else "0"))
    return lines


def cmd_analyze(args):
    circuit = _load(args.netlist)
    B, A, cfg, sys_ = _pipeline(circuit, raw_at=args.raw_at)
    cls = classify_loops(circuit, A, B)
    tell = check_tellegen(B, A)
    kernel_ok = verify_kernel_identity(cfg)
    reg = check_regularity(sys_, seed=args.seed)
    cons = check_conservative(sys_, seed=args.seed)

    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": "analyze",
        "netlist": args.netlist,
        "counts": {"b": circuit.b, "n": circuit.n, "m": circuit.m},
        "incidence": {"node_order": list(B.node_order), "entries": _mat_json(B.entries),
                      "rank": B.rank},
        "loops": {"names": list(A.loop_names), "entries": _mat_json(A.entries),
                  "rank": A.rank},
        "tellegen": tell,
        "classification": {
            "capacitor_only_loops": [A.loop_names[j] for j in cls.capacitor_only_loops],
            "inductor_only_loops": [A.loop_names[j] for j in cls.inductor_only_loops],
            "inductor_current_cutsets_present": cls.inductor_current_cutsets_present,
        },
        "config": {
            "free_coordinates": [circuit.branches[cfg.lc_indices[i]].name
                                 for i in cfg.free_indices],
            "N": _mat_json(cfg.N),
            "C_transform": _mat_json(cfg.C_transform),
            "kappa": [format_number(x) for x in cfg.kappa],
            "c_vector": [format_number(x) for x in cfg.c_vector],
            "kernel_identity": kernel_ok,
        },
        "regularity": {"status": reg.status,
                       "capacitor_loops": list(reg.capacitor_loops)},
        "conservative": {"status": cons.status, "witness": cons.witness},
    }
    if sys_.all_linear:
        doc["symbolic_Q"] = _symbolic_strings(sys_)

    if args.format == "json":
        print(json.dumps(doc, indent=2, sort_keys=True, default=str))
        return 0
    print(f"netlist: {args.netlist}")
    print(f"b = {circuit.b}, n = {circuit.n}, m = {circuit.m}")
    print(f"incidence matrix B (nodes {', '.join(B.node_order)}), rank {B.rank}:")
    print(_fmt_mat(B.entries))
    print(f"loop matrix A (loops {', '.join(A.loop_names)}), rank {A.rank}:")
    print(_fmt_mat(A.entries))
    print(f"Tellegen/Kirchhoff compatibility: {'ok' if tell else 'VIOLATED'}")
    print("capacitor-only loops:",
          ", ".join(A.loop_names[j] for j in cls.capacitor_only_loops) or "none")
    print("inductor-only loops:",
          ", ".join(A.loop_names[j] for j in cls.inductor_only_loops) or "none")
    print("inductor/current-source cutsets present:",
          cls.inductor_current_cutsets_present)
    print("free coordinates:",
          ", ".join(doc["config"]["free_coordinates"]))
    print("N:")
    print(_fmt_mat(cfg.N))
    print("C (loop transform):")
    print(_fmt_mat(cfg.C_transform))
    print("kappa:", " ".join(format_number(x) for x in cfg.kappa))
    print(f"kernel identity Ker(A1^T) = Ker(N^T): {'ok' if kernel_ok else 'VIOLATED'}")
    if sys_.all_linear:
        print("components:")
        for line in doc["symbolic_Q"]:
            print("  " + line)
    print(f"regularity: {reg.status}"
          + (f" (capacitor loops: {', '.join(reg.capacitor_loops)})"
             if reg.capacitor_loops else ""))
    print(f"conservative: {cons.status}"
          + (f" witness: {cons.witness}" if cons.witness else ""))
    return 0


def cmd_reduce(args):
    circuit = _load(args.netlist)
    _, _, cfg, sys_ = _pipeline(circuit)
    red = regularize(sys_)
    reg = check_regularity(red.inner, seed=args.seed)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": "reduce",
        "netlist": args.netlist,
        "original_dof": sys_.dof,
        "reduced_dof": red.inner.dof,
        "eliminations": [
            {"kind": e.kind, "method": e.method, "coordinate": e.coordinate + 1,
             "kernel_vector": [format_number(x) for x in e.kernel_vector],
             "pivot": str(e.pivot)}
            for e in red.eliminated
        ],
        "regularity_after": reg.status,
    }
    if red.inner.all_linear and red.inner.charge_map.is_affine:
        doc["symbolic_Q"] = _symbolic_strings(red.inner)
    if args.format == "json":
        print(json.dumps(doc, indent=2, sort_keys=True, default=str))
        return 0
    print(f"netlist: {args.netlist}")
    print(f"dof: {sys_.dof} -> {red.inner.dof}")
    if not red.eliminated:
        print("no degenerate loops; system returned unchanged")
    for e in red.eliminated:
        vec = " ".join(format_number(x) for x in e.kernel_vector)
        print(f"eliminated {e.kind} via {e.method}: coordinate {e.coordinate + 1}, "
              f"kernel [{vec}], pivot {e.pivot}")
    if "symbolic_Q" in doc:
        print("reduced components:")
        for line in doc["symbolic_Q"]:
            print("  " + line)
    print(f"regularity after reduction: {reg.status}")
    return 0


def cmd_simulate(args):
    circuit = _load(args.netlist)
    _, _, cfg, sys_ = _pipeline(circuit)
    red = regularize(sys_)
    target = red if red.eliminated else sys_
    simcfg = SimConfig(t0=args.t0, t1=args.t1, dt=args.dt, method=args.method,
                       rtol=args.rtol, atol=args.atol,
                       record_every=args.record_every)
    traj = simulate(target, cfg=simcfg)
    inner = red.inner if red.eliminated else sys_

    header = (["t"]
              + [f"q{i + 1}" for i in range(inner.dof)]
              + [f"qd{i + 1}" for i in range(inner.dof)]
              + ["E", "balance_residual"]
              + [f"cq{i + 1}" for i in range(traj.conserved.shape[1])]
              + [f"i_{n}" for n in traj.branch_names]
              + [f"v_{n}" for n in traj.branch_names])

    def rows():
        for i, t in enumerate(traj.times):
            row = [t, *traj.q[i], *traj.qdot[i],
                   traj.energy[i] if traj.energy is not None else float("nan"),
                   traj.balance_residuals[i] if traj.balance_residuals is not None
                   else float("nan"),
                   *traj.conserved[i], *traj.branch_currents[i],
                   *traj.branch_voltages[i]]
            yield row

    out = sys.stdout if args.output in (None, "-") else open(args.output, "w")
    try:
        if args.format == "json":
            doc = {
                "schema_version": SCHEMA_VERSION,
                "command": "simulate",
                "netlist": args.netlist,
                "dt": traj.dt_used,
                "method": traj.method,
                "columns": header,
                "rows": [[f"{v:.17g}" for v in row] for row in rows()],
            }
            json.dump(doc, out, indent=2, sort_keys=True)
            out.write("\n")
        else:
            out.write(",".join(header) + "\n")
            for row in rows():
                out.write(",".join(f"{v:.17g}" for v in row) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_verify(args):
    circuit = _load(args.netlist)
    checks = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except errors.CircuitError as exc:
            ok, detail = False, str(exc)
        checks.append((name, bool(ok), detail))

    B = build_incidence(circuit)
    A = build_loop_basis(circuit)
    check("tellegen", lambda: (check_tellegen(B, A), ""))
    cfg = build_config(circuit, B, A)
    check("kernel_identity", lambda: (verify_kernel_identity(cfg), ""))
    check("transform_exact", lambda: (
        rational.matmul(cfg.C_transform, cfg.A1T) == rational.transpose(cfg.N), ""))
    sys_ = assemble(cfg)
    cons = check_conservative(sys_, seed=args.seed)
    checks.append(("conservative", True, cons.status))
    red = regularize(sys_)
    reg = check_regularity(red.inner, seed=args.seed)
    check("regular_after_reduction", lambda: (reg.is_regular, reg.status))

    def energy_gradients():
        inner = red.inner
        verdict = check_conservative(inner, seed=args.seed)
        if not verdict.is_conservative:
            return True, "skipped (not conservative)"
        efun = build_energy(inner, verdict)
        rng = np.random.default_rng(args.seed)
        worst = 0.0
        for _ in range(10):
            q = rng.uniform(-0.1, 0.1, inner.dof)
            qd = rng.uniform(-0.1, 0.1, inner.dof)
            t = 0.0
            h = 1e-5
            for j in range(inner.dof):
                for arr, grad in ((q, inner.q_gradient(t, q, qd)[j]),
                                  (qd, inner.Fcal(t, qd)[j])):
                    xp, xm = arr.copy(), arr.copy()
                    xp[j] += h
                    xm[j] -= h
                    if arr is q:
                        fd = (efun(t, xp, qd) - efun(t, xm, qd)) / (2 * h)
                    else:
                        fd = (efun(t, q, xp) - efun(t, q, xm)) / (2 * h)
                    worst = max(worst, abs(fd - grad) / max(abs(grad), 1.0))
        return worst < 1e-6, f"max gradient mismatch {worst:.2e}"

    check("energy_gradients", energy_gradients)

    def drift():
        inner = red.inner
        if inner.dof == 0:
            return True, "static system"
        verdict = check_conservative(inner, seed=args.seed)
        period = None
        try:
            from .sim import estimate_min_period
            period = estimate_min_period(inner)
        except errors.CircuitError:
            pass
        t1 = 2 * period if period else 1.0
        traj = simulate(red if red.eliminated else sys_,
                        cfg=SimConfig(t0=0.0, t1=t1, method="rk4"))
        msgs = []
        ok = True
        if traj.energy is not None and inner.autonomous:
            d = np.abs(traj.energy - traj.energy[0]).max() / max(abs(traj.energy[0]), 1.0)
            msgs.append(f"energy drift {d:.2e}")
            ok = ok and d < 1e-6
        if traj.balance_residuals is not None and not inner.autonomous:
            r = np.abs(traj.balance_residuals[2:-2]).max() if len(traj.times) > 4 else 0.0
            msgs.append(f"balance residual {r:.2e}")
            ok = ok and r < 1e-4
        kcl = traj.kcl_residuals.max()
        msgs.append(f"KCL residual {kcl:.2e}")
        ok = ok and kcl < 1e-8
        if traj.conserved.shape[1]:
            dr = np.abs(traj.conserved - traj.conserved[0]).max()
            msgs.append(f"conserved drift {dr:.2e}")
            ok = ok and dr < 1e-6
        return ok, "; ".join(msgs)

    check("trajectory_invariants", drift)

    def oracle():
        if not all(br.device.is_linear or br.device.is_source
                   for br in circuit.branches):
            return True, "skipped (nonlinear devices)"
        inner = red.inner
        if inner.dof == 0:
            return True, "static system"
        from .sim import estimate_min_period
        period = estimate_min_period(inner) or 1.0
        traj = simulate(red if red.eliminated else sys_,
                        cfg=SimConfig(t0=0.0, t1=2 * period, dt=period / 1000.0))
        dev = compare_oracle(circuit, traj)
        return dev < 1e-6, f"max deviation {dev:.2e}"

    check("oracle_comparison", oracle)

    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": "verify",
        "netlist": args.netlist,
        "checks": [{"name": n, "pass": ok, "detail": d} for n, ok, d in checks],
        "all_pass": all(ok for _, ok, _ in checks),
    }
    if args.format == "json":
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        for n, ok, d in checks:
            print(f"{'PASS' if ok else 'FAIL'}  {n}" + (f"  ({d})" if d else ""))
    return 0 if doc["all_pass"] else 1


def build_parser():
    p = argparse.ArgumentParser(prog="birkhoff-lc",
                                description="LC-circuit implicit-system toolkit")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp):
        sp.add_argument("netlist", help="netlist file")
        sp.add_argument("--format", choices=("table", "json", "csv"), default="table")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("analyze", help="matrices, ranks, classification, verdicts")
    common(sp)
    sp.add_argument("--raw-at", action="store_true",
                    help="diagnostic pairing with the plain loop equations")
    sp.set_defaults(fn=cmd_analyze)

    sp = sub.add_parser("reduce", help="eliminate degenerate loops, print the ledger")
    common(sp)
    sp.set_defaults(fn=cmd_reduce)

    sp = sub.add_parser("simulate", help="integrate and write a trajectory")
    common(sp)
    sp.add_argument("--t0", type=float, default=0.0)
    sp.add_argument("--t1", type=float, default=1.0)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--method", choices=("rk4", "rk45"), default="rk4")
    sp.add_argument("--rtol", type=float, default=1e-8)
    sp.add_argument("--atol", type=float, default=1e-10)
    sp.add_argument("--record-every", type=int, default=1)
    sp.add_argument("--output", "-o", default="-")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("verify", help="run the invariant suite on a netlist")
    common(sp)
    sp.set_defaults(fn=cmd_verify)
    return p


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except errors.CircuitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
