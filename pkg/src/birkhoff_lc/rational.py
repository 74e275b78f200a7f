"""Exact linear algebra over Fraction matrices.

Matrices are tuples of tuples of Fraction (immutable, hashable); vectors are
tuples of Fraction.  Everything here is exact: ranks, kernels and solves are
decided without floating point, which the loop/incidence theorems require.
"""

from fractions import Fraction

ZERO = Fraction(0)
ONE = Fraction(1)


def mat(rows):
    """Normalize a nested iterable into a Fraction matrix."""
    return tuple(tuple(Fraction(x) for x in row) for row in rows)


def vec(xs):
    return tuple(Fraction(x) for x in xs)


def shape(m):
    return (len(m), len(m[0]) if m else 0)


def zeros(r, c):
    return tuple(tuple(ZERO for _ in range(c)) for _ in range(r))


def identity(n):
    return tuple(tuple(ONE if i == j else ZERO for j in range(n)) for i in range(n))


def transpose(m):
    return tuple(zip(*m)) if m else ()


def matmul(a, b):
    if not a or not b:
        return ()
    bt = transpose(b)
    return tuple(tuple(sum(x * y for x, y in zip(row, col)) for col in bt) for row in a)


def matvec(a, v):
    return tuple(sum(x * y for x, y in zip(row, v)) for row in a)


def add(a, b):
    return tuple(tuple(x + y for x, y in zip(ra, rb)) for ra, rb in zip(a, b))


def scale(a, s):
    s = Fraction(s)
    return tuple(tuple(s * x for x in row) for row in a)


def is_zero(m):
    return all(x == 0 for row in m for x in row)


def columns(m, idx):
    """Submatrix of the given column indices, in order."""
    return tuple(tuple(row[j] for j in idx) for row in m)


def rows(m, idx):
    return tuple(m[i] for i in idx)


def rref(m):
    """Reduced row echelon form.

    Returns (R, pivots) where pivots maps pivot-row -> column.  Pivot choice is
    leftmost nonzero (first suitable row), so the result is deterministic for a
    given row/column ordering.
    """
    r, c = shape(m)
    work = [list(row) for row in m]
    pivots = []
    pr = 0
    for pc in range(c):
        pivot_row = None
        for i in range(pr, r):
            if work[i][pc] != 0:
                pivot_row = i
                break
        if pivot_row is None:
            continue
        work[pr], work[pivot_row] = work[pivot_row], work[pr]
        pv = work[pr][pc]
        work[pr] = [x / pv for x in work[pr]]
        for i in range(r):
            if i != pr and work[i][pc] != 0:
                f = work[i][pc]
                work[i] = [x - f * y for x, y in zip(work[i], work[pr])]
        pivots.append(pc)
        pr += 1
        if pr == r:
            break
    return tuple(tuple(row) for row in work), tuple(pivots)


def rank(m):
    if not m or not m[0]:
        return 0
    return len(rref(m)[1])


def nullspace(m):
    """Basis of {x : m x = 0}, one vector per free column of the RREF.

    Each basis vector has entry 1 at its free column, making the basis
    canonical for a fixed column order.
    """
    r, c = shape(m)
    if c == 0:
        return ()
    R, pivots = rref(m)
    pivot_set = set(pivots)
    basis = []
    for free in range(c):
        if free in pivot_set:
            continue
        v = [ZERO] * c
        v[free] = ONE
        for prow, pcol in enumerate(pivots):
            v[pcol] = -R[prow][free]
        basis.append(tuple(v))
    return tuple(basis)


def solve(a, b):
    """Solve a x = b for square nonsingular a; returns None if singular."""
    n, c = shape(a)
    if n != c:
        raise ValueError("solve expects a square matrix")
    aug = [list(ra) + [bv] for ra, bv in zip(a, b)]
    R, pivots = rref(tuple(tuple(row) for row in aug))
    if len(pivots) != n or any(p >= n for p in pivots):
        return None
    return tuple(R[i][n] for i in range(n))


def inverse(a):
    """Inverse of a square nonsingular matrix; None if singular."""
    n, c = shape(a)
    if n != c:
        raise ValueError("inverse expects a square matrix")
    aug = tuple(tuple(list(ra) + [ONE if i == j else ZERO for j in range(n)])
                for i, ra in enumerate(a))
    R, pivots = rref(aug)
    if tuple(pivots) != tuple(range(n)):
        return None
    return tuple(tuple(row[n:]) for row in R)


def det(a):
    """Determinant by fraction-free-ish Gaussian elimination."""
    n, c = shape(a)
    if n != c:
        raise ValueError("det expects a square matrix")
    work = [list(row) for row in a]
    result = ONE
    for col in range(n):
        pivot_row = None
        for i in range(col, n):
            if work[i][col] != 0:
                pivot_row = i
                break
        if pivot_row is None:
            return ZERO
        if pivot_row != col:
            work[col], work[pivot_row] = work[pivot_row], work[col]
            result = -result
        pv = work[col][col]
        result *= pv
        for i in range(col + 1, n):
            if work[i][col] != 0:
                f = work[i][col] / pv
                work[i] = [x - f * y for x, y in zip(work[i], work[col])]
    return result


def row_space_equal(a, b):
    """Exact equality of row spaces (spans) of two matrices with equal width."""
    if shape(a)[1] != shape(b)[1]:
        return False
    ra = rank(a)
    rb = rank(b)
    return ra == rb == rank(a + b)


def to_float(m):
    import numpy as np

    return np.array([[float(x) for x in row] for row in m], dtype=float)


def vec_to_float(v):
    import numpy as np

    return np.array([float(x) for x in v], dtype=float)
