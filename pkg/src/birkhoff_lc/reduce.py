"""Regularization by configuration-space reduction.

Capacitor-only loops make the acceleration Gram matrix structurally singular.
Each such loop corresponds to a kernel vector of the inductor block of N; the
kernel vector is aligned onto a coordinate axis by a unimodular substitution,
the now force-only component is solved for that coordinate (exact pivot for
linear capacitors, damped warm-started Newton otherwise) and the coordinate is
eliminated.  Linear inductor-only loops integrate twice to an affine
constraint fixed by the initial data and are eliminated the same way;
nonlinear inductor loops are left alone and monitored as conserved
quantities.
"""

import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import errors, rational
from .birkhoff import AffineChargeMap, BirkhoffSystem, ImplicitChargeMap
from .functions import PolynomialSource, TimeCombo, combo_matvec

log = logging.getLogger("birkhoff_lc")


@dataclass(frozen=True)
class Elimination:
    kind: str          # "capacitor_loop" | "inductor_loop"
    method: str        # "linear_pivot" | "implicit_function" | "integrated_constraint"
    coordinate: int    # axis eliminated (in the coordinates of its stage)
    kernel_vector: tuple
    pivot: object      # Fraction coefficient (linear/integrated) or float derivative


@dataclass(frozen=True)
class ConservedQuantity:
    """One inductor-only loop invariant: sum_a w_a * antideriv(L_a)(i_a)."""

    description: str
    evaluator: Callable
    reference: Optional[float] = None


@dataclass
class ReducedSystem:
    inner: BirkhoffSystem
    eliminated: List[Elimination]
    steps: List[tuple]   # lift program, outermost first

    @property
    def dof(self):
        return self.inner.dof

    def lift(self, t, qbar, qbardot):
        """Map reduced coordinates back to the original coordinate chart."""
        q = np.asarray(qbar, dtype=float)
        qd = np.asarray(qbardot, dtype=float)
        for step in reversed(self.steps):
            tag = step[0]
            if tag == "transform":
                Tf = step[1]
                q = Tf @ q
                qd = Tf @ qd
            elif tag == "affine":
                _, j0, row, tc = step
                y = float(row @ q) + tc(t)
                yd = float(row @ qd) + tc.derivative()(t)
                q = np.insert(q, j0, y)
                qd = np.insert(qd, j0, yd)
            elif tag == "implicit":
                _, j0, cmap = step
                y = cmap.solve(t, q)
                _, _, _, _, df_dq, df_dt = cmap._implicit_partials(t, q)
                q = np.insert(q, j0, y)
                qd = np.insert(qd, j0, float(df_dq @ qd) + df_dt)
            else:  # pragma: no cover - defensive
                raise ValueError(f"unknown lift step {tag}")
        return q, qd

    def clone(self):
        inner = self.inner.clone()
        steps = []
        for step in self.steps:
            if step[0] == "implicit":
                steps.append((step[0], step[1], step[2].clone()))
            else:
                steps.append(step)
        return ReducedSystem(inner, list(self.eliminated), steps)


def _kernel_with_axes(m, dof):
    """RREF nullspace of an (r x dof) rational matrix, as (axis, vector) pairs.

    Each vector carries +1 at its free column, which is the natural axis to
    align the kernel direction onto.  An empty matrix means everything is in
    the kernel.
    """
    if not m:
        eye = rational.identity(dof)
        return [(j, eye[j]) for j in range(dof)]
    R, pivots = rational.rref(m)
    pivot_set = set(pivots)
    out = []
    for free in range(dof):
        if free in pivot_set:
            continue
        v = [Fraction(0)] * dof
        v[free] = Fraction(1)
        for prow, pcol in enumerate(pivots):
            v[pcol] = -R[prow][free]
        out.append((free, tuple(v)))
    return out


def _axis_transform(dof, j0, w):
    """Identity with column j0 replaced by the kernel vector w (w[j0] = 1)."""
    cols = []
    for j in range(dof):
        if j == j0:
            cols.append(w)
        else:
            cols.append(tuple(Fraction(1) if i == j else Fraction(0) for i in range(dof)))
    return rational.transpose(cols)


def _apply_transform(sys: BirkhoffSystem, T) -> BirkhoffSystem:
    """Coordinate change q = T qnew; components transform covariantly."""
    TT = rational.transpose(T)
    Tinv = rational.inverse(T)
    q0 = rational.matvec(Tinv, sys.q0) if sys.q0 else ()
    return replace(
        sys,
        NL=rational.matmul(sys.NL, T) if sys.NL else (),
        WL=rational.matmul(sys.WL, T) if sys.WL else (),
        WC=rational.matmul(sys.WC, T) if sys.WC else (),
        charge_map=sys.charge_map.compose_transform(T),
        V=tuple(combo_matvec(TT, sys.V)),
        q0=q0,
    )


def _drop_column(m, j0):
    return tuple(tuple(x for j, x in enumerate(row) if j != j0) for row in m) if m else ()


def _drop_entry(v, j0):
    return tuple(x for j, x in enumerate(v) if j != j0)


def reduce_capacitor_loops(sys: BirkhoffSystem, q0=None) -> ReducedSystem:
    """Eliminate every capacitor-only loop coordinate; returns the reduced system.

    Linear capacitors give an exact rational pivot solve; nonlinear ones an
    implicit function solved by damped Newton, warm-started between calls.
    """
    if not sys.gram:
        raise errors.NotConservative(
            "reduction requires the N-weighted assembly, not the diagnostic pairing")
    work = sys.clone()
    if q0 is not None:
        work = replace(work, q0=rational.vec(q0))
    eliminated: List[Elimination] = []
    steps: List[tuple] = []

    while True:
        kernel = _kernel_with_axes(work.NL, work.dof)
        if not kernel:
            break
        done = False
        failures = []
        for j0, w in kernel:
            try:
                work, step, elim = _eliminate_capacitor_direction(work, j0, w)
            except errors.DegeneratePivot as exc:
                failures.append(str(exc))
                continue
            steps.extend(step)
            eliminated.append(elim)
            done = True
            break
        if not done:
            raise errors.DegeneratePivot(
                "no capacitor-loop direction admits a pivot: " + "; ".join(failures))
    return ReducedSystem(work, eliminated, steps)


def _eliminate_capacitor_direction(work, j0, w):
    steps = []
    is_axis = all(x == (Fraction(1) if j == j0 else Fraction(0))
                  for j, x in enumerate(w))
    if not is_axis:
        T = _axis_transform(work.dof, j0, w)
        work = _apply_transform(work, T)
        steps.append(("transform", rational.to_float(T)))

    wcol = tuple(row[j0] for row in work.WC) if work.WC else ()
    voffset = work.V[j0]
    keep = [j for j in range(work.dof) if j != j0]

    # the constraint only touches capacitors with nonzero weight in this row
    touched = [i for i, c in enumerate(wcol) if c != 0]
    touched_linear = all(work.cfg.circuit.branches[
        work.cfg.circuit.branch_index(work.cap_names[i])].device.is_linear
        for i in touched)

    if touched_linear and work.charge_map.is_affine:
        # exact pivot: K[j0,:] q + g0 + g_t(t) + V_j0(t) = 0
        cm = work.charge_map
        cinv = []
        for i, name in enumerate(work.cap_names):
            dev = work.cfg.circuit.branches[work.cfg.circuit.branch_index(name)].device
            cinv.append(1 / dev.value if dev.is_linear else Fraction(0))
        Krow = tuple(sum(wcol[i] * cinv[i] * cm.NC[i][j] for i in touched)
                     for j in range(work.dof))
        g0 = sum(wcol[i] * cinv[i] * cm.kappa[i] for i in touched)
        gt = TimeCombo()
        for i in touched:
            gt = gt.plus(cm.fC[i].scaled(wcol[i] * cinv[i]))
        gt = gt.plus(voffset)
        pivot = Krow[j0]
        if pivot == 0:
            raise errors.DegeneratePivot(
                f"capacitor-loop constraint has zero coefficient on axis {j0}")
        row = tuple(-Krow[j] / pivot for j in keep)
        const = -g0 / pivot
        tcombo = gt.scaled(-1 / pivot)
        tcombo = TimeCombo(tcombo.terms, tcombo.const + const)
        new_map = cm.eliminate_affine(j0, row, Fraction(0), tcombo)
        steps.append(("affine", j0, np.array([float(x) for x in row]), tcombo))
        method = "linear_pivot"
        cmap_for_lift = None
    else:
        # nonlinear: damped-Newton implicit function anchored at the initial point
        q0f = rational.vec_to_float(work.q0) if work.q0 else np.zeros(work.dof)
        y_init = q0f[j0]
        cmap = ImplicitChargeMap(work.charge_map, j0, wcol, work.cap_laws, y_init)
        if not voffset.is_zero():
            cmap = _OffsetImplicitChargeMap(work.charge_map, j0, wcol, work.cap_laws,
                                            y_init, voffset)
        qbar0 = np.delete(q0f, j0)
        try:
            dr = cmap._dresidual_dy(0.0, qbar0, y_init,
                                    cmap.prev.charges(0.0, cmap._embed(qbar0, y_init)))
        except errors.DomainError:
            dr = None
        if dr == 0.0:
            raise errors.DegeneratePivot(
                f"implicit constraint derivative vanishes on axis {j0}")
        cmap.solve(0.0, qbar0)  # anchor: Newton from the given initial point
        new_map = cmap
        steps.append(("implicit", j0, cmap))
        method = "implicit_function"
        pivot = dr

    q0_new = _drop_entry(work.q0, j0) if work.q0 else ()
    work = replace(
        work,
        dof=work.dof - 1,
        NL=_drop_column(work.NL, j0),
        WL=_drop_column(work.WL, j0),
        WC=_drop_column(work.WC, j0),
        charge_map=new_map,
        V=tuple(v for j, v in enumerate(work.V) if j != j0),
        q0=q0_new,
        label=work.label + "-capred",
    )
    elim = Elimination("capacitor_loop", method, j0, w, pivot)
    return work, steps, elim


class _OffsetImplicitChargeMap(ImplicitChargeMap):
    """Implicit map whose constraint carries a voltage-source offset term."""

    def __init__(self, prev, j0, weights, laws, y_init, offset_combo, **kw):
        super().__init__(prev, j0, weights, laws, y_init, **kw)
        self.offset = offset_combo

    def _residual(self, t, q, y):
        r, x = super()._residual(t, q, y)
        return r + self.offset(t), x

    def time_partial(self, t, q):
        base = super().time_partial(t, q)
        # d/dt of the offset enters dh/dt; recompute the implicit correction
        y = self.solve(t, q)
        qfull = self._embed(q, y)
        x = self.prev.charges(t, qfull)
        Jprev = self.prev.jacobian(t, qfull)
        dvals = np.array([law.deriv(xi) for law, xi in zip(self.laws, x)])
        wd = self._wf * dvals
        dh_dy = float(wd @ Jprev[:, self.j0])
        extra = -self.offset.derivative()(t) / dh_dy
        return base + Jprev[:, self.j0] * extra

    def clone(self):
        c = _OffsetImplicitChargeMap(self.prev.clone(), self.j0, self.weights,
                                     self.laws, self.y_init, self.offset,
                                     newton_tol=self.newton_tol, max_iter=self.max_iter)
        c._last = self._last
        return c


def reduce_inductor_loops_linear(reduced, q0, qd0) -> ReducedSystem:
    """Integrate linear inductor-only loops to affine constraints and eliminate.

    The two integration constants come from the provided initial coordinates
    and velocities.  Loops containing a nonlinear inductor are skipped (they
    stay as monitored conserved quantities).  Accepts the ReducedSystem from
    the capacitor pass or a bare BirkhoffSystem.
    """
    if isinstance(reduced, BirkhoffSystem):
        reduced = ReducedSystem(reduced, [], [])
    if not reduced.inner.gram:
        raise errors.NotConservative(
            "reduction requires the N-weighted assembly, not the diagnostic pairing")
    work = reduced.inner.clone()
    eliminated = list(reduced.eliminated)
    steps = list(reduced.steps)
    q0 = rational.vec(Fraction(float(x)) if not isinstance(x, Fraction) else x
                      for x in q0)
    qd0 = rational.vec(Fraction(float(x)) if not isinstance(x, Fraction) else x
                       for x in qd0)

    while True:
        kernel = _kernel_with_axes(work.WC, work.dof)
        candidates = []
        for j0, w in kernel:
            if not _loop_row_is_sourceless(work, w):
                continue
            loop_inds = [a for a in range(work.k)
                         if sum(work.NL[a][j] * w[j] for j in range(work.dof)) != 0]
            if not loop_inds:
                continue  # kernel of WC that touches no inductor: nothing to integrate
            if not all(work.ind_linear[a] for a in loop_inds):
                log.info("inductor loop on axis %d has nonlinear devices; "
                         "left as a conserved quantity", j0)
                continue
            candidates.append((j0, w))
        if not candidates:
            break
        progressed = False
        for j0, w in candidates:
            try:
                work, new_steps, elim, q0, qd0 = _eliminate_inductor_direction(
                    work, j0, w, q0, qd0)
            except errors.DegeneratePivot:
                continue
            steps.extend(new_steps)
            eliminated.append(elim)
            progressed = True
            break
        if not progressed:
            raise errors.DegeneratePivot("no inductor-loop direction admits a pivot")
    return ReducedSystem(work, eliminated, steps)


def _loop_row_is_sourceless(work, w):
    vrow = TimeCombo()
    for j, c in enumerate(w):
        if c != 0:
            vrow = vrow.plus(work.V[j].scaled(c))
    if not vrow.is_zero():
        return False
    for a in range(work.k):
        coeff = sum(work.WL[a][j] * w[j] for j in range(work.dof))
        if coeff != 0 and not work.fL[a].derivative().derivative().is_zero():
            return False
    return True


def _eliminate_inductor_direction(work, j0, w, q0, qd0):
    steps = []
    is_axis = all(x == (Fraction(1) if j == j0 else Fraction(0))
                  for j, x in enumerate(w))
    if not is_axis:
        T = _axis_transform(work.dof, j0, w)
        Tinv = rational.inverse(T)
        work = _apply_transform(work, T)
        steps.append(("transform", rational.to_float(T)))
        q0 = rational.matvec(Tinv, q0)
        qd0 = rational.matvec(Tinv, qd0)

    # constraint row: sum_l c_l qdd^l + d/dt[h'(t)] = 0 with exact rationals
    lvals = [Fraction(law.coeffs[0]) if lin else None
             for law, lin in zip(work.ind_laws, work.ind_linear)]
    wl_col = tuple(row[j0] for row in work.WL) if work.WL else ()
    c_row = tuple(
        sum(wl_col[a] * lvals[a] * work.NL[a][j] for a in range(work.k) if wl_col[a] != 0)
        for j in range(work.dof))
    h = TimeCombo()
    for a in range(work.k):
        if wl_col[a] != 0:
            h = h.plus(work.fL[a].scaled(wl_col[a] * lvals[a]))
    pivot = c_row[j0]
    if pivot == 0:
        raise errors.DegeneratePivot(
            f"inductor-loop constraint has zero coefficient on axis {j0}")

    # integrate twice: sum_l c_l q^l + h(t) = beta t + gamma
    beta = sum(c * v for c, v in zip(c_row, qd0)) + Fraction(h.derivative()(0.0))
    gamma = sum(c * v for c, v in zip(c_row, q0)) + Fraction(h(0.0))

    keep = [j for j in range(work.dof) if j != j0]
    row = tuple(-c_row[j] / pivot for j in keep)
    tcombo = h.scaled(Fraction(-1) / pivot)
    tcombo = tcombo.plus(TimeCombo(
        [(beta / pivot, PolynomialSource((Fraction(0), Fraction(1))), 0)],
        gamma / pivot))
    steps.append(("affine", j0, np.array([float(x) for x in row]), tcombo))

    # substitute qdot^{j0} into the inductor current map: the beta part lands
    # in the constant current offsets, the h part in the time forcing
    nl_col = tuple(r[j0] for r in work.NL) if work.NL else ()
    NL_new = tuple(
        tuple(work.NL[a][j] - nl_col[a] * c_row[j] / pivot for j in keep)
        for a in range(work.k))
    cL_new = tuple(work.cL[a] + nl_col[a] * beta / pivot for a in range(work.k))
    fL_new = tuple(
        work.fL[a].plus(h.scaled(-nl_col[a] / pivot)) if nl_col[a] != 0
        else work.fL[a]
        for a in range(work.k))

    work = replace(
        work,
        dof=work.dof - 1,
        NL=NL_new,
        WL=NL_new if work.gram else _drop_column(work.WL, j0),
        WC=_drop_column(work.WC, j0),
        cL=cL_new,
        fL=fL_new,
        charge_map=_drop_charge_column(work.charge_map, j0),
        V=tuple(v for j, v in enumerate(work.V) if j != j0),
        q0=_drop_entry(q0, j0),
        label=work.label + "-indred",
    )
    elim = Elimination("inductor_loop", "integrated_constraint", j0, w, pivot)
    return work, steps, elim, _drop_entry(q0, j0), _drop_entry(qd0, j0)


def _drop_charge_column(cmap, j0):
    if isinstance(cmap, AffineChargeMap):
        # the column is structurally zero here (kernel of the capacitor block)
        NC_new = tuple(tuple(x for j, x in enumerate(row) if j != j0) for row in cmap.NC)
        return AffineChargeMap(NC_new, cmap.kappa, cmap.fC)
    raise errors.NonlinearInductorLoop(
        "inductor-loop reduction after a nonlinear capacitor reduction is unsupported; "
        "monitor the loop as a conserved quantity instead")


def conserved_quantities(sys, qd0=None) -> List[ConservedQuantity]:
    """One invariant per inductor-only loop: sum_a w_a L-antiderivative(i_a)."""
    if isinstance(sys, ReducedSystem):
        sys = sys.inner
    out = []
    kernel = _kernel_with_axes(sys.WC, sys.dof)
    for j0, w in kernel:
        if not _loop_row_is_sourceless(sys, w):
            continue
        coeffs = [sum(sys.WL[a][j] * w[j] for j in range(sys.dof)) for a in range(sys.k)]
        touched = [a for a in range(sys.k) if coeffs[a] != 0]
        if not touched:
            continue

        def evaluator(t, qd, _touched=tuple(touched), _coeffs=tuple(coeffs), _sys=sys):
            cur = _sys.ind_currents(t, np.asarray(qd, dtype=float))
            return sum(float(_coeffs[a]) * _sys.ind_laws[a].antideriv(cur[a])
                       for a in _touched)

        names = " ".join(
            ("-" if coeffs[a] < 0 else "+") + sys.ind_names[a] for a in touched)
        ref = evaluator(0.0, np.asarray(qd0, dtype=float)) if qd0 is not None else None
        out.append(ConservedQuantity(f"inductor loop {names}", evaluator, ref))
    return out


def initial_velocity(sys: BirkhoffSystem) -> np.ndarray:
    """Coordinate velocities matching the netlist's initial inductor currents.

    Solves NL qdot = i_L(0) - cL - f'(0) in the least-squares sense and
    rejects inconsistent initial currents (they would violate the current law
    on the inductor side).  Underdetermined directions (degenerate systems)
    come back with the minimum-norm completion.
    """
    if sys.k == 0 or sys.dof == 0:
        return np.zeros(sys.dof)
    init = sys.cfg.circuit.initial_state
    iL0 = np.array([float(init.get(name, 0)) for name in sys.ind_names])
    rhs = iL0 - sys._cLf - np.array([c(0.0) for c in sys._dfL])
    Nf = sys._NLf
    sol, *_ = np.linalg.lstsq(Nf, rhs, rcond=None)
    resid = np.abs(Nf @ sol - rhs).max()
    if resid > 1e-9 * max(1.0, np.abs(rhs).max()):
        raise errors.InconsistentInitialState(
            f"initial inductor currents violate the current law (residual {resid:.3e})")
    return sol


def regularize(sys: BirkhoffSystem, q0=None, qd0=None) -> ReducedSystem:
    """Capacitor-loop then linear inductor-loop reduction in one call.

    qd0 defaults to the velocities implied by the netlist's initial currents,
    evaluated after the capacitor pass (where the velocity solve is unique).
    """
    red = reduce_capacitor_loops(sys, q0=q0)
    if qd0 is None:
        qd0 = initial_velocity(red.inner)
    q0_eff = red.inner.q0 if red.inner.q0 else (Fraction(0),) * red.inner.dof
    return reduce_inductor_loops_linear(red, q0_eff, qd0)
