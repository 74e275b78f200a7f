"""Independent linear oracle: node/charge state space by constraint elimination.

The circuit is stamped directly from branch incidence into the linear DAE

    E u' = J u + s(t),   u = [capacitor charges, inductor currents,
                              node voltages, voltage-source currents]

with KCL rows, device rows (q/C = voltage drop, L i' = voltage drop) and
voltage-source rows.  Algebraic rows are eliminated one variable at a time by
exact rational substitution (node voltages and source currents first), which
differentiates the source terms symbolically where index reduction demands it
(capacitor loops, inductor cutsets).  The surviving explicit ODE is integrated
with the same stepper as the primary path.  Nothing here touches loop
matrices or the configuration-space machinery; this is the verification
oracle, kept independent by construction.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Tuple

import numpy as np

from . import errors, rational
from .functions import TimeCombo, combo_matvec
from .netlist import Circuit

log = logging.getLogger("birkhoff_lc")


@dataclass
class LinearStateSpace:
    circuit: Circuit
    var_kinds: Tuple[str, ...]       # per original variable: "q", "iL", "e", "iV"
    var_branch: Tuple[int, ...]      # owning branch (or node index for "e")
    state_ids: Tuple[int, ...]       # surviving original variable indices
    M: np.ndarray                    # udot = M u + w(t) on the surviving state
    w: Tuple[TimeCombo, ...]
    S: np.ndarray                    # u_orig = S u + r(t)
    r: Tuple[TimeCombo, ...]
    dS: Tuple[TimeCombo, ...]        # r'(t) for velocity reconstruction


def build_state_space(circuit: Circuit) -> LinearStateSpace:
    for br in circuit.branches:
        if not (br.device.is_linear or br.device.is_source):
            raise errors.NonlinearDevicePresent(
                f"oracle needs linear devices; {br.name} is {br.device.kind}")

    cap = [i for i, br in enumerate(circuit.branches) if br.device.is_capacitor]
    ind = [i for i, br in enumerate(circuit.branches) if br.device.is_inductor]
    isrc = [i for i, br in enumerate(circuit.branches) if br.device.is_current_source]
    vsrc = [i for i, br in enumerate(circuit.branches) if br.device.is_voltage_source]
    nodes = [n for n in circuit.nodes if n != circuit.reference_node]
    nidx = {n: i for i, n in enumerate(nodes)}

    kinds = (["q"] * len(cap) + ["iL"] * len(ind)
             + ["e"] * len(nodes) + ["iV"] * len(vsrc))
    owner = cap + ind + list(range(len(nodes))) + vsrc
    nv = len(kinds)
    pos_q = {b: i for i, b in enumerate(cap)}
    pos_i = {b: len(cap) + i for i, b in enumerate(ind)}
    pos_e = {i: len(cap) + len(ind) + i for i in range(len(nodes))}
    pos_v = {b: len(cap) + len(ind) + len(nodes) + i for i, b in enumerate(vsrc)}

    zero = Fraction(0)
    E = [[zero] * nv for _ in range(nv)]
    J = [[zero] * nv for _ in range(nv)]
    s = [TimeCombo() for _ in range(nv)]
    row = 0

    def stamp_drop(r_, bi, sign):
        br = circuit.branches[bi]
        if br.tail in nidx:
            J[r_][pos_e[nidx[br.tail]]] += sign
        if br.head in nidx:
            J[r_][pos_e[nidx[br.head]]] -= sign

    # KCL per non-reference node: entering minus leaving currents vanish
    for node in nodes:
        for bi, br in enumerate(circuit.branches):
            sign = (1 if br.head == node else 0) - (1 if br.tail == node else 0)
            if sign == 0:
                continue
            if br.device.is_capacitor:
                E[row][pos_q[bi]] += sign
            elif br.device.is_inductor:
                J[row][pos_i[bi]] -= sign
            elif br.device.is_voltage_source:
                J[row][pos_v[bi]] -= sign
            else:  # current source: known waveform moves to the source vector
                s[row] = s[row].plus(TimeCombo(
                    [(Fraction(-sign), br.device.waveform(), 0)]))
        row += 1

    # capacitor rows: 0 = q/C - (e_tail - e_head)
    for bi in cap:
        J[row][pos_q[bi]] = 1 / circuit.branches[bi].device.value
        stamp_drop(row, bi, -1)
        row += 1
    # inductor rows: L i' = e_tail - e_head
    for bi in ind:
        E[row][pos_i[bi]] = circuit.branches[bi].device.value
        stamp_drop(row, bi, 1)
        row += 1
    # voltage-source rows: 0 = (e_tail - e_head) - v(t)
    for bi in vsrc:
        stamp_drop(row, bi, 1)
        s[row] = s[row].plus(TimeCombo([(Fraction(-1), circuit.branches[bi].device.waveform(), 0)]))
        row += 1
    assert row == nv

    var_ids = list(range(nv))
    S_total = rational.identity(nv)
    r_total = [TimeCombo() for _ in range(nv)]

    guard = 0
    while True:
        guard += 1
        if guard > nv + 2:
            raise errors.CircuitError("oracle elimination failed to terminate")
        Em = tuple(tuple(r_) for r_ in E)
        if rational.rank(Em) == len(E):
            break
        # row-reduce E, carrying J and s along, to expose one constraint row
        nrows = len(E)
        ncols = len(E[0]) if E else 0
        Ew = [list(r_) for r_ in E]
        Jw = [list(r_) for r_ in J]
        sw = list(s)
        pr = 0
        for pc in range(ncols):
            sel = next((i for i in range(pr, nrows) if Ew[i][pc] != 0), None)
            if sel is None:
                continue
            Ew[pr], Ew[sel] = Ew[sel], Ew[pr]
            Jw[pr], Jw[sel] = Jw[sel], Jw[pr]
            sw[pr], sw[sel] = sw[sel], sw[pr]
            pv = Ew[pr][pc]
            for i in range(nrows):
                if i != pr and Ew[i][pc] != 0:
                    f = Ew[i][pc] / pv
                    Ew[i] = [a - f * b for a, b in zip(Ew[i], Ew[pr])]
                    Jw[i] = [a - f * b for a, b in zip(Jw[i], Jw[pr])]
                    sw[i] = sw[i].plus(sw[pr].scaled(-f))
            pr += 1
        crow = next(i for i in range(nrows) if all(x == 0 for x in Ew[i]))
        g = Jw[crow]
        h = sw[crow]
        if all(x == 0 for x in g):
            raise errors.CircuitError(
                "ill-posed circuit: the oracle found a source-only constraint")
        # pivot preference: node voltages and source currents first
        pref = [i for i in range(ncols) if kinds_of(var_ids[i], kinds) in ("e", "iV")
                and g[i] != 0]
        pool = pref if pref else [i for i in range(ncols) if g[i] != 0]
        piv = max(pool, key=lambda i: (abs(g[i]), -i))
        gp = g[piv]
        keep = [i for i in range(ncols) if i != piv]
        # u_piv = sub . u_keep + rc(t)
        sub = [-g[i] / gp for i in keep]
        rc = h.scaled(Fraction(-1) / gp)
        Scols = []
        for newj, oldj in enumerate(keep):
            coln = [Fraction(0)] * ncols
            coln[oldj] = Fraction(1)
            coln[piv] = sub[newj]
            Scols.append(coln)
        Slocal = rational.transpose(Scols)
        rlocal = [TimeCombo() for _ in range(ncols)]
        rlocal[piv] = rc
        drlocal = rc.derivative()

        rows_keep = [i for i in range(nrows) if i != crow]
        E_new = rational.matmul(tuple(tuple(Ew[i]) for i in rows_keep), Slocal)
        J_new = rational.matmul(tuple(tuple(Jw[i]) for i in rows_keep), Slocal)
        s_new = []
        for i in rows_keep:
            acc = sw[i]
            if Jw[i][piv] != 0:
                acc = acc.plus(rc.scaled(Jw[i][piv]))
            if Ew[i][piv] != 0:
                acc = acc.plus(drlocal.scaled(-Ew[i][piv]))
            s_new.append(acc)
        E, J, s = [list(r_) for r_ in E_new], [list(r_) for r_ in J_new], s_new

        # fold into the global reconstruction u_orig = S u + r
        r_total = [rt.plus(rl) for rt, rl in
                   zip(r_total, combo_matvec(S_total, rlocal))]
        S_total = rational.matmul(S_total, Slocal)
        del var_ids[piv]

    for vid in var_ids:
        if kinds[vid] in ("e", "iV"):
            raise errors.CircuitError(
                "oracle left a non-state variable in the ODE; circuit is ill-posed")

    Em = tuple(tuple(r_) for r_ in E)
    Einv = rational.inverse(Em)
    M = rational.matmul(Einv, tuple(tuple(r_) for r_ in J))
    w = combo_matvec(Einv, s)
    return LinearStateSpace(
        circuit=circuit,
        var_kinds=tuple(kinds), var_branch=tuple(owner),
        state_ids=tuple(var_ids),
        M=rational.to_float(M) if M else np.zeros((0, 0)),
        w=tuple(w),
        S=rational.to_float(S_total) if var_ids else np.zeros((nv, 0)),
        r=tuple(r_total),
        dS=tuple(c.derivative() for c in r_total),
    )


def kinds_of(vid, kinds):
    return kinds[vid]


def initial_state(ss: LinearStateSpace) -> np.ndarray:
    init = ss.circuit.initial_state
    u0 = []
    for vid in ss.state_ids:
        br = ss.circuit.branches[ss.var_branch[vid]]
        u0.append(float(init.get(br.name, 0)))
    return np.array(u0)


def simulate_oracle(ss: LinearStateSpace, t0, t1, dt, method="rk4",
                    record_times=None):
    """Integrate the oracle ODE; returns times, branch currents and voltages."""
    from .sim import _dp45_step, _rk4_step  # same steppers as the primary path

    def rhs(t, y):
        return ss.M @ y + np.array([c(t) for c in ss.w])

    y = initial_state(ss)
    times = [t0]
    states = [y]
    nsteps = max(1, int(round((t1 - t0) / dt)))
    if method == "rk4":
        for step in range(1, nsteps + 1):
            y = _rk4_step(rhs, t0 + (step - 1) * dt, y, dt)
            times.append(t0 + step * dt)
            states.append(y)
    else:
        raise ValueError("oracle comparison uses the fixed-step method")

    times = np.array(times)
    if record_times is not None:
        sel = [int(round((t - t0) / dt)) for t in record_times]
        for i, t in zip(sel, record_times):
            if not (0 <= i < len(times)) or abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
                raise ValueError("oracle cannot reproduce the requested sample times")
    else:
        sel = list(range(len(times)))

    b = ss.circuit.b
    cur = np.zeros((len(sel), b))
    vol = np.zeros((len(sel), b))
    nodes = [n for n in ss.circuit.nodes if n != ss.circuit.reference_node]
    nidx = {n: i for i, n in enumerate(nodes)}
    nv = len(ss.var_kinds)
    pos_of = {}
    for vid in range(nv):
        pos_of[(ss.var_kinds[vid], ss.var_branch[vid])] = vid

    for out_i, si in enumerate(sel):
        t = times[si]
        ubar = states[si]
        udot_bar = rhs(t, ubar)
        u = ss.S @ ubar + np.array([c(t) for c in ss.r])
        udot = ss.S @ udot_bar + np.array([c(t) for c in ss.dS])
        evec = np.zeros(len(nodes))
        for vid in range(nv):
            if ss.var_kinds[vid] == "e":
                evec[ss.var_branch[vid]] = u[vid]

        def drop(br):
            et = evec[nidx[br.tail]] if br.tail in nidx else 0.0
            eh = evec[nidx[br.head]] if br.head in nidx else 0.0
            return et - eh

        for bi, br in enumerate(ss.circuit.branches):
            dev = br.device
            if dev.is_capacitor:
                vid = pos_of[("q", bi)]
                cur[out_i, bi] = udot[vid]
                vol[out_i, bi] = u[vid] / float(dev.value)
            elif dev.is_inductor:
                vid = pos_of[("iL", bi)]
                cur[out_i, bi] = u[vid]
                vol[out_i, bi] = float(dev.value) * udot[vid]
            elif dev.is_current_source:
                cur[out_i, bi] = dev.waveform().eval(t)
                vol[out_i, bi] = drop(br)
            else:
                vid = pos_of[("iV", bi)]
                cur[out_i, bi] = u[vid]
                vol[out_i, bi] = dev.waveform().eval(t)
    return times[sel], cur, vol


def compare_oracle(circuit: Circuit, traj, method: str = "rk4") -> float:
    """Max relative deviation of trajectory branch quantities from the oracle.

    Per branch quantity: sup-norm of the difference over the trajectory,
    scaled by max(sup-norm of the oracle signal, 1e-12); maximized over all
    branches, currents and voltages.
    """
    ss = build_state_space(circuit)
    dt = traj.dt_used
    _, cur, vol = simulate_oracle(ss, traj.times[0], traj.times[-1], dt,
                                  method=method, record_times=traj.times)
    dev = 0.0
    for mine, theirs in ((traj.branch_currents, cur), (traj.branch_voltages, vol)):
        for col in range(mine.shape[1]):
            scale = max(np.abs(theirs[:, col]).max(), 1e-12)
            dev = max(dev, np.abs(mine[:, col] - theirs[:, col]).max() / scale)
    return float(dev)
