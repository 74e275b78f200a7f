"""Time integration of the mass-matrix form and trajectory bookkeeping.

The implicit system F(t,q')q'' = -(G + V + W) is solved per stage by LU with
a singularity guard, then integrated with fixed-step RK4 or adaptive
Dormand-Prince 5(4).  Recorded samples carry energy, balance-law residuals,
conserved inductor-loop quantities, and physical branch currents/voltages
(with the source-branch complements recovered exactly from the topology).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import errors, rational
from .birkhoff import (BirkhoffSystem, EnergyFunction, build_energy,
                       check_conservative)
from .reduce import ReducedSystem, conserved_quantities, initial_velocity

log = logging.getLogger("birkhoff_lc")

SINGULAR_TOL = 1e-10


@dataclass
class SimConfig:
    t0: float = 0.0
    t1: float = 1.0
    dt: Optional[float] = None        # None: 1/1000 of the smallest linear period
    method: str = "rk4"               # "rk4" | "rk45"
    rtol: float = 1e-8
    atol: float = 1e-10
    record_every: int = 1

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError("t1 must exceed t0")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass
class Trajectory:
    times: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray
    energy: Optional[np.ndarray]
    balance_residuals: Optional[np.ndarray]
    conserved: np.ndarray                  # (T, n_quantities)
    conserved_refs: Tuple[float, ...]
    branch_names: Tuple[str, ...]
    branch_currents: np.ndarray            # (T, b)
    branch_voltages: np.ndarray            # (T, b)
    kcl_residuals: np.ndarray
    truncated_at: Optional[float] = None
    dt_used: float = 0.0
    method: str = "rk4"


def accel(sys: BirkhoffSystem, t, q, qd) -> np.ndarray:
    """Solve F(t,q') q'' = -(G + V + W); SingularMassMatrix if F degenerates."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    if sys.dof == 0:
        return np.zeros(0)
    F = sys.F_eval(t, qd)
    norm = np.abs(F).sum(axis=1).max()
    detF = np.linalg.det(F)
    if abs(detF) <= SINGULAR_TOL * max(norm, 1e-300) ** sys.dof:
        raise errors.SingularMassMatrix(
            f"mass matrix singular at t={t}, qdot={qd.tolist()}, det~{detF:.3e}")
    rhs = -(sys.G_eval(t, q) + sys.V_eval(t) + sys.W_eval(t, qd))
    return np.linalg.solve(F, rhs)


def estimate_min_period(sys: BirkhoffSystem, t=0.0, q=None, qd=None) -> Optional[float]:
    """2*pi / max frequency of the linearization F^{-1} dG/dq at a point."""
    if sys.dof == 0:
        return None
    q = np.zeros(sys.dof) if q is None else np.asarray(q, dtype=float)
    qd = np.zeros(sys.dof) if qd is None else np.asarray(qd, dtype=float)
    F = sys.F_eval(t, qd)
    K = sys.G_jac(t, q)
    try:
        w2 = np.linalg.eigvals(np.linalg.solve(F, K))
    except np.linalg.LinAlgError:
        return None
    w = np.sqrt(np.abs(w2.real[w2.real > 1e-30]))
    if w.size == 0:
        return None
    return float(2 * math.pi / w.max())


def _rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

# Dormand-Prince 5(4) tableau
_DP_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_DP_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])


def _dp45_step(f, t, y, h):
    ks = [f(t, y)]
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_DP_A[i], ks))
        ks.append(f(t + _DP_C[i] * h, yi))
    y5 = y + h * sum(b * k for b, k in zip(_DP_B5, ks))
    y4 = y + h * sum(b * k for b, k in zip(_DP_B4, ks))
    return y5, np.abs(y5 - y4).max()


def simulate(system, q0=None, qd0=None, cfg: SimConfig = None) -> Trajectory:
    """Integrate and record a trajectory with all monitored quantities."""
    red = system if isinstance(system, ReducedSystem) else None
    sys = red.inner if red else system
    if cfg is None:
        cfg = SimConfig(t1=1.0)

    if q0 is None:
        q0 = rational.vec_to_float(sys.q0) if sys.q0 else np.zeros(sys.dof)
    q0 = np.asarray(q0, dtype=float)
    if qd0 is None:
        qd0 = initial_velocity(sys)
    qd0 = np.asarray(qd0, dtype=float)

    dt = cfg.dt
    if dt is None:
        period = estimate_min_period(sys, cfg.t0, q0, qd0)
        dt = period / 1000.0 if period else (cfg.t1 - cfg.t0) / 10000.0

    def rhs(t, y):
        q, qd = y[:sys.dof], y[sys.dof:]
        return np.concatenate([qd, accel(sys, t, q, qd)])

    # verify solvability at the start (raises if unreduced degeneracy remains)
    accel(sys, cfg.t0, q0, qd0)

    times = [cfg.t0]
    states = [np.concatenate([q0, qd0])]
    truncated_at = None
    try:
        if cfg.method == "rk4":
            nsteps = max(1, int(round((cfg.t1 - cfg.t0) / dt)))
            y = states[0]
            for step in range(1, nsteps + 1):
                t_prev = cfg.t0 + (step - 1) * dt
                y = _rk4_step(rhs, t_prev, y, dt)
                if step % cfg.record_every == 0 or step == nsteps:
                    times.append(cfg.t0 + step * dt)
                    states.append(y)
        elif cfg.method == "rk45":
            t, y = cfg.t0, states[0]
            h = dt
            step = 0
            while t < cfg.t1 - 1e-15:
                h = min(h, cfg.t1 - t)
                y_new, err = _dp45_step(rhs, t, y, h)
                scale = cfg.atol + cfg.rtol * max(np.abs(y).max(), np.abs(y_new).max(), 1.0)
                if err <= scale:
                    t += h
                    y = y_new
                    step += 1
                    if step % cfg.record_every == 0 or t >= cfg.t1 - 1e-15:
                        times.append(t)
                        states.append(y)
                h = h * min(5.0, max(0.2, 0.9 * (scale / max(err, 1e-300)) ** 0.2))
        else:
            raise ValueError(f"unknown method {cfg.method!r}")
    except errors.SingularMassMatrix as exc:
        log.warning("trajectory truncated: %s", exc)
        truncated_at = times[-1]

    T = len(times)
    times_a = np.array(times)
    qs = np.array([s[:sys.dof] for s in states])
    qds = np.array([s[sys.dof:] for s in states])
    qdds = np.array([accel(sys, t, q, qd) for t, q, qd in zip(times_a, qs, qds)])

    verdict = check_conservative(sys)
    energy = None
    balance = None
    if verdict.is_conservative:
        efun = build_energy(sys, verdict)
        energy = np.array([efun(t, q, qd) for t, q, qd in zip(times_a, qs, qds)])
        dEdt_partial = np.array([efun.dEdt_partial(t, q, qd)
                                 for t, q, qd in zip(times_a, qs, qds)])
        balance = _dEdt_fd(times_a, energy) - dEdt_partial

    quantities = conserved_quantities(sys, qd0=qd0)
    conserved = np.array([[cq.evaluator(t, qd) for cq in quantities]
                          for t, qd in zip(times_a, qds)]) if quantities else \
        np.zeros((T, 0))
    refs = tuple(cq.reference for cq in quantities)

    names, cur, vol, kcl = _branch_quantities(sys, times_a, qs, qds, qdds)
    return Trajectory(times_a, qs, qds, qdds, energy, balance, conserved, refs,
                      names, cur, vol, kcl, truncated_at,
                      dt_used=dt, method=cfg.method)


def _dEdt_fd(times, E):
    """4th-order centered dE/dt inside, lower order at the edges."""
    T = len(times)
    out = np.gradient(E, times, edge_order=2 if T > 2 else 1)
    if T >= 5 and np.allclose(np.diff(times), times[1] - times[0], rtol=1e-9):
        h = times[1] - times[0]
        i = np.arange(2, T - 2)
        out[i] = (-E[i + 2] + 8 * E[i + 1] - 8 * E[i - 1] + E[i - 2]) / (12 * h)
    return out


def _branch_quantities(sys, times, qs, qds, qdds):
    """Physical branch currents/voltages plus the full-KCL residual."""
    cfg = sys.cfg
    circuit = cfg.circuit
    b = circuit.b
    T = len(times)
    names = tuple(br.name for br in circuit.branches)
    cur = np.zeros((T, b))
    vol = np.zeros((T, b))

    ind_idx = [i for i, br in enumerate(circuit.branches) if br.device.is_inductor]
    cap_idx = [i for i, br in enumerate(circuit.branches) if br.device.is_capacitor]
    isrc_idx = list(cfg.isrc_indices)
    vsrc_idx = list(cfg.vsrc_indices)
    iwave = [circuit.branches[i].device.waveform() for i in isrc_idx]
    vwave = [circuit.branches[i].device.waveform() for i in vsrc_idx]

    ddfL = [c.derivative() for c in sys._dfL]
    Bf = rational.to_float(cfg.B.entries)
    Af = rational.to_float(cfg.A.entries)

    # complements: voltage-source currents from KCL, current-source voltages from KVL
    if vsrc_idx:
        B_V = rational.rows(cfg.B.entries, vsrc_idx)
        _, piv = rational.rref(B_V)
        MV = np.linalg.inv(rational.to_float(
            rational.columns(rational.transpose(cfg.B.entries), vsrc_idx))[list(piv)])
        rowsV = list(piv)
    if isrc_idx:
        m = len(cfg.A.entries[0])
        A_I = tuple(tuple(cfg.A.entries[i][j] for j in range(m)) for i in isrc_idx)
        _, piv2 = rational.rref(A_I)
        MI = np.linalg.inv(rational.to_float(
            rational.columns(rational.transpose(cfg.A.entries), isrc_idx))[list(piv2)])
        rowsI = list(piv2)

    kcl = np.zeros(T)
    for s in range(T):
        t, q, qd, qdd = times[s], qs[s], qds[s], qdds[s]
        iL = sys.ind_currents(t, qd)
        diL = (sys._NLf @ qdd if sys.k else np.zeros(0))
        if sys.k and not sys.autonomous:
            diL = diL + np.array([c(t) for c in ddfL])
        x = sys.cap_charges(t, q)
        J = sys.charge_map.jacobian(t, q)
        iC = (J @ qd if sys.p else np.zeros(0))
        if sys.p and not sys.autonomous:
            iC = iC + sys.charge_map.time_partial(t, q)
        for a, i_branch in enumerate(ind_idx):
            cur[s, i_branch] = iL[a]
            vol[s, i_branch] = sys.ind_laws[a](iL[a]) * diL[a]
        for c, i_branch in enumerate(cap_idx):
            cur[s, i_branch] = iC[c]
            vol[s, i_branch] = sys.cap_laws[c](x[c])
        for w, i_branch in zip(iwave, isrc_idx):
            cur[s, i_branch] = w.eval(t)
        for w, i_branch in zip(vwave, vsrc_idx):
            vol[s, i_branch] = w.eval(t)
        if vsrc_idx:
            known = cur[s].copy()
            known[vsrc_idx] = 0.0
            rhs = -(Bf.T @ known)[rowsV]
            cur[s, vsrc_idx] = MV @ rhs
        if isrc_idx:
            knownv = vol[s].copy()
            knownv[isrc_idx] = 0.0
            rhs = -(Af.T @ knownv)[rowsI]
            vol[s, isrc_idx] = MI @ rhs
        kcl[s] = np.abs(Bf.T @ cur[s]).max() if len(Bf) else 0.0
    return names, cur, vol, kcl
