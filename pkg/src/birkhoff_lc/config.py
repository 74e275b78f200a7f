"""Affine configuration space of the integrated current law.

Integrating the current-law half of the network equations gives an affine
constraint on the charge-like branch variables x (one per inductor/capacitor
branch):  B1^T x + I(t) = c,  where I(t) collects primitives of the
current-source waveforms.  Solving for a free subset q of the x-variables
yields

    x = N q + kappa + f(t)

with an exact rational matrix N, and a nonsingular transform C with
C A1^T = N^T that re-weights the voltage-law equations into the components
conjugate to q.  Everything in this module is exact rational arithmetic;
time dependence is carried symbolically as TimeCombo objects.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple

from . import errors, rational
from .functions import TimeCombo, combo_matvec
from .graph import IncidenceMatrix, LoopMatrix
from .netlist import Circuit

log = logging.getLogger("birkhoff_lc")


@dataclass(frozen=True)
class ConfigSpace:
    circuit: Circuit
    B: IncidenceMatrix
    A: LoopMatrix
    lc_indices: Tuple[int, ...]     # branch indices carrying x-variables
    isrc_indices: Tuple[int, ...]
    vsrc_indices: Tuple[int, ...]
    free_indices: Tuple[int, ...]   # positions within lc_indices chosen as q
    N: tuple                        # (k+p) x d rational
    kappa: tuple                    # length k+p rational
    f: tuple                        # length k+p TimeCombo
    C_transform: tuple              # d x d rational, C A1^T = N^T
    c_vector: tuple                 # length n - S_V rational
    B1T: tuple
    B2T: tuple
    A1T: tuple
    A2T: tuple
    x0: tuple                       # initial x (rational)

    @property
    def dof(self):
        return len(self.free_indices)

    @property
    def q0(self):
        return tuple(self.x0[i] for i in self.free_indices)

    def lc_branch_names(self):
        return tuple(self.circuit.branches[i].name for i in self.lc_indices)


def _partition(circuit: Circuit, B: IncidenceMatrix, A: LoopMatrix):
    """Split B, A into the source-free blocks of the governing equations.

    Voltage-source currents are unknown, so the node equations are replaced
    by the (n - S_V)-dimensional space of combinations that do not touch
    them; dually, current-source voltages are unknown and the loop equations
    are combined into the (m - S_I) combinations avoiding them.
    """
    lc = tuple(i for i, br in enumerate(circuit.branches)
               if br.device.is_inductor or br.device.is_capacitor)
    isrc = tuple(i for i, br in enumerate(circuit.branches)
                 if br.device.is_current_source)
    vsrc = tuple(i for i, br in enumerate(circuit.branches)
                 if br.device.is_voltage_source)

    BT = rational.transpose(B.entries)          # n x b
    AT = rational.transpose(A.entries)          # m x b

    B_lc_T = rational.columns(BT, lc)
    B_i_T = rational.columns(BT, isrc)
    B_v_T = rational.columns(BT, vsrc)
    A_lc_T = rational.columns(AT, lc)
    A_i_T = rational.columns(AT, isrc)
    A_v_T = rational.columns(AT, vsrc)

    n = len(B.node_order)
    m = len(A.entries[0]) if A.entries else 0

    if vsrc:
        B_v = rational.rows(B.entries, vsrc)    # S_V x n
        if rational.rank(B_v) < len(vsrc):
            raise errors.RankDeficiency("voltage sources form a loop")
        P = rational.nullspace(B_v)             # (n - S_V) rows
    else:
        P = rational.identity(n)
    if isrc:
        A_i = tuple(tuple(A.entries[i][j] for j in range(m)) for i in isrc)  # S_I x m
        if rational.rank(A_i) < len(isrc):
            raise errors.RankDeficiency("current sources form a cutset-degenerate loop set")
        R = rational.nullspace(A_i)             # (m - S_I) rows
    else:
        R = rational.identity(m)

    B1T = rational.matmul(P, B_lc_T)
    B2T = rational.matmul(P, B_i_T)
    A1T = rational.matmul(R, A_lc_T)
    A2T = rational.matmul(R, A_v_T)

    if len(A1T) == 0:
        raise errors.RankDeficiency("m - S_I must be positive")
    if rational.rank(B1T) != len(B1T):
        raise errors.RankDeficiency(
            f"rank(B1^T) = {rational.rank(B1T)} < {len(B1T)} = n - S_V")
    if rational.rank(A1T) != len(A1T):
        raise errors.RankDeficiency(
            f"rank(A1^T) = {rational.rank(A1T)} < {len(A1T)} = m - S_I")
    return lc, isrc, vsrc, B1T, B2T, A1T, A2T


def build_config(circuit: Circuit, B: IncidenceMatrix, A: LoopMatrix) -> ConfigSpace:
    """Construct the configuration space for a circuit with valid (B, A)."""
    lc, isrc, vsrc, B1T, B2T, A1T, A2T = _partition(circuit, B, A)
    nvars = len(lc)
    neq = len(B1T)
    d = nvars - neq  # m - S_I

    # free coordinate selection
    if circuit.coords is not None:
        coord_pos = []
        for name in circuit.coords:
            bi = circuit.branch_index(name)
            if bi not in lc:
                raise errors.RankDeficiency(
                    f"coords branch {name!r} carries no charge variable")
            coord_pos.append(lc.index(bi))
        if len(coord_pos) != d:
            raise errors.RankDeficiency(
                f"coords must name {d} branches, got {len(coord_pos)}")
        free = tuple(coord_pos)
        pivot = tuple(i for i in range(nvars) if i not in free)
        if neq and rational.rank(rational.columns(B1T, pivot)) != neq:
            raise errors.RankDeficiency(
                "coords choice leaves a singular pivot block; pick other branches")
    else:
        _, pivots = rational.rref(B1T)
        pivot = tuple(pivots)
        free = tuple(i for i in range(nvars) if i not in pivot)

    # x_dep = P1^{-1} (c - I(t)) - P1^{-1} F1 q
    waveforms = [circuit.branches[i].device.waveform() for i in isrc]
    primitives = [TimeCombo([(Fraction(1), wf, -1)]) for wf in waveforms]
    I_combos = combo_matvec(B2T, primitives) if isrc else \
        [TimeCombo() for _ in range(neq)]

    if neq:
        P1 = rational.columns(B1T, pivot)
        P1inv = rational.inverse(P1)
        if P1inv is None:
            raise errors.RankDeficiency("pivot block singular")
        F1 = rational.columns(B1T, free)
        dep_N = rational.scale(rational.matmul(P1inv, F1), -1)   # neq x d
        dep_f = combo_matvec(rational.scale(P1inv, -1), I_combos)
    else:
        P1inv = ()
        dep_N = ()
        dep_f = []

    # initial x: capacitor charges from initial_state, inductor integrals at 0
    x0 = []
    init = dict(circuit.initial_state)
    for i in lc:
        br = circuit.branches[i]
        if br.device.is_capacitor:
            if br.name in init:
                x0.append(Fraction(init[br.name]))
            else:
                log.warning("no initial charge for capacitor %s; defaulting to 0", br.name)
                x0.append(Fraction(0))
        else:
            x0.append(Fraction(0))
    x0 = tuple(x0)
    c_vector = rational.matvec(B1T, x0) if neq else ()
    dep_kappa = rational.matvec(P1inv, c_vector) if neq else ()

    # interleave dependent/free rows back into lc order
    N_rows = [None] * nvars
    kappa = [None] * nvars
    f = [None] * nvars
    for row, pos in enumerate(pivot):
        N_rows[pos] = dep_N[row]
        kappa[pos] = dep_kappa[row]
        f[pos] = dep_f[row]
    for j, pos in enumerate(free):
        N_rows[pos] = tuple(Fraction(1) if jj == j else Fraction(0) for jj in range(d))
        kappa[pos] = Fraction(0)
        f[pos] = TimeCombo()
    N = tuple(N_rows)

    # C A1^T = N^T via any independent column block of A1^T
    NT = rational.transpose(N)
    _, acols = rational.rref(A1T)
    A1T_J = rational.columns(A1T, acols)
    NT_J = rational.columns(NT, acols)
    A1T_J_inv = rational.inverse(A1T_J)
    if A1T_J_inv is None:
        raise errors.SingularTransform("independent columns of A1^T are not invertible")
    C = rational.matmul(NT_J, A1T_J_inv)
    if rational.matmul(C, A1T) != NT:
        raise errors.SingularTransform(
            "no matrix C with C A1^T = N^T exists; kernel identity violated")
    if rational.det(C) == 0:
        raise errors.SingularTransform("C is singular")

    return ConfigSpace(
        circuit=circuit, B=B, A=A,
        lc_indices=lc, isrc_indices=isrc, vsrc_indices=vsrc,
        free_indices=free, N=N, kappa=tuple(kappa), f=tuple(f),
        C_transform=C, c_vector=tuple(c_vector),
        B1T=B1T, B2T=B2T, A1T=A1T, A2T=A2T, x0=x0,
    )


def verify_kernel_identity(cfg: ConfigSpace, A: Optional[LoopMatrix] = None) -> bool:
    """Exact check that the row spaces of A1^T and N^T coincide."""
    if A is None or A is cfg.A:
        A1T = cfg.A1T
    else:
        _, _, _, _, _, A1T, _ = _partition(cfg.circuit, cfg.B, A)
    return rational.row_space_equal(A1T, rational.transpose(cfg.N))
