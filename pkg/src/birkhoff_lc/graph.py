"""Exact integer topology matrices and loop/cutset classification.

The incidence matrix B (b x n, reference node excluded) uses +1 where a
branch enters a node and -1 where it leaves.  The loop matrix A (b x m) is
either a transcription of the netlist's explicit loops or the fundamental
loops of a deterministic spanning tree.  All arithmetic is exact.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import List, Tuple

from . import errors, rational
from .netlist import Circuit


@dataclass(frozen=True)
class IncidenceMatrix:
    entries: tuple  # b x n Fraction matrix with entries in {-1,0,1}
    node_order: Tuple[str, ...]

    @property
    def rank(self):
        return rational.rank(self.entries)


@dataclass(frozen=True)
class LoopMatrix:
    entries: tuple  # b x m Fraction matrix with entries in {-1,0,1}
    loop_names: Tuple[str, ...]

    @property
    def rank(self):
        return rational.rank(self.entries)


@dataclass(frozen=True)
class LoopClassification:
    capacitor_only_loops: Tuple[int, ...]
    inductor_only_loops: Tuple[int, ...]
    inductor_current_cutsets_present: bool


def build_incidence(circuit: Circuit) -> IncidenceMatrix:
    """B[b,n] = +1 if branch b enters node n, -1 if it leaves; ref excluded."""
    order = tuple(n for n in circuit.nodes if n != circuit.reference_node)
    index = {n: i for i, n in enumerate(order)}
    rows = []
    for br in circuit.branches:
        row = [Fraction(0)] * len(order)
        if br.head in index:
            row[index[br.head]] += 1
        if br.tail in index:
            row[index[br.tail]] -= 1
        rows.append(tuple(row))
    return IncidenceMatrix(tuple(rows), order)


def _spanning_tree(circuit: Circuit) -> List[int]:
    """Kruskal over branches, capacitors first, then netlist order."""
    order = sorted(
        range(circuit.b),
        key=lambda i: (0 if circuit.branches[i].device.is_capacitor else 1, i),
    )
    parent = {n: n for n in circuit.nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree = []
    for i in order:
        br = circuit.branches[i]
        ra, rb = find(br.tail), find(br.head)
        if ra != rb:
            parent[ra] = rb
            tree.append(i)
    return sorted(tree)


def _tree_path(circuit, tree, start, goal):
    """Signed branch sequence through tree edges from start to goal."""
    adj = {}
    for i in tree:
        br = circuit.branches[i]
        adj.setdefault(br.tail, []).append((br.head, i, 1))
        adj.setdefault(br.head, []).append((br.tail, i, -1))
    prev = {start: None}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for nxt, bi, sgn in adj.get(node, ()):
            if nxt not in prev:
                prev[nxt] = (node, bi, sgn)
                stack.append(nxt)
    path = []
    node = goal
    while prev[node] is not None:
        pnode, bi, sgn = prev[node]
        path.append((bi, sgn))
        node = pnode
    path.reverse()
    return path


def build_loop_basis(circuit: Circuit) -> LoopMatrix:
    """Loop matrix from explicit loops, else fundamental loops of the tree.

    Each fundamental loop is oriented along its co-tree branch (entry +1).
    """
    b = circuit.b
    if circuit.explicit_loops is not None:
        cols = []
        names = []
        for lname, entries in circuit.explicit_loops:
            col = [Fraction(0)] * b
            for sign, bname in entries:
                col[circuit.branch_index(bname)] += sign
            cols.append(col)
            names.append(lname)
        entries_matrix = tuple(tuple(col[i] for col in cols) for i in range(b))
        A = LoopMatrix(entries_matrix, tuple(names))
        if A.rank != circuit.m:
            raise errors.InvalidExplicitLoop(
                f"explicit loops have rank {A.rank}, need {circuit.m}")
        if any(abs(x) > 1 for row in entries_matrix for x in row):
            raise errors.InvalidExplicitLoop("a loop traverses some branch twice")
        return A

    tree = set(_spanning_tree(circuit))
    cols = []
    names = []
    for i in range(b):
        if i in tree:
            continue
        br = circuit.branches[i]
        col = [Fraction(0)] * b
        col[i] = Fraction(1)
        # close the loop: tree path from head back to tail
        for bi, sgn in _tree_path(circuit, sorted(tree), br.head, br.tail):
            col[bi] += sgn
        cols.append(col)
        names.append(f"F{br.name}")
    if not cols:
        raise errors.NoLoop("circuit has no co-tree branch")
    entries_matrix = tuple(tuple(col[i] for col in cols) for i in range(b))
    return LoopMatrix(entries_matrix, tuple(names))


def check_tellegen(B: IncidenceMatrix, A: LoopMatrix) -> bool:
    """True iff B^T A = 0 exactly and rank(A) + rank(B) = b."""
    if len(B.entries) != len(A.entries):
        raise errors.DimensionMismatch(
            f"B has {len(B.entries)} branch rows, A has {len(A.entries)}")
    prod = rational.matmul(rational.transpose(B.entries), A.entries)
    if not rational.is_zero(prod):
        return False
    return A.rank + B.rank == len(B.entries)


def classify_loops(circuit: Circuit, A: LoopMatrix, B: IncidenceMatrix) -> LoopClassification:
    """Classify basis loops by device content and decide the cutset criterion.

    capacitor_only_loops: columns of A supported on capacitor branches alone.
    inductor_only_loops: columns supported on inductor branches alone.
    inductor_current_cutsets_present: true iff some cut vector of the graph is
    supported on inductor/current-source branches only, decided by the exact
    rank test on B restricted to the complementary branches.
    """
    ind_rows = [i for i, br in enumerate(circuit.branches) if br.device.is_inductor]
    cap_rows = [i for i, br in enumerate(circuit.branches) if br.device.is_capacitor]
    isrc_rows = [i for i, br in enumerate(circuit.branches)
                 if br.device.is_current_source]
    other_for_ind = [i for i in range(circuit.b) if i not in ind_rows]

    cap_only = []
    ind_only = []
    ncols = len(A.entries[0])
    for j in range(ncols):
        col = [A.entries[i][j] for i in range(circuit.b)]
        # capacitor loop in the degeneracy sense: no inductors and no current
        # sources (independent voltage sources are allowed to ride along)
        if (all(col[i] == 0 for i in ind_rows)
                and all(col[i] == 0 for i in isrc_rows)
                and any(col[i] != 0 for i in cap_rows)):
            cap_only.append(j)
        if all(col[i] == 0 for i in other_for_ind) and any(
                col[i] != 0 for i in ind_rows):
            ind_only.append(j)

    # complementary branch set: everything that is not an inductor or a
    # current source; a cut vector vanishing there is an inductor/current cutset
    comp = [i for i, br in enumerate(circuit.branches)
            if not (br.device.is_inductor or br.device.is_current_source)]
    B_comp = rational.rows(B.entries, comp) if comp else ()
    n = len(B.node_order)
    cutsets = rational.rank(B_comp) < n if comp else n > 0
    return LoopClassification(tuple(cap_only), tuple(ind_only), cutsets)
