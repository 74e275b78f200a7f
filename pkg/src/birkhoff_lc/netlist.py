"""Netlist format: parsing, validation and canonical serialization.

The format is line oriented, whitespace insensitive, with ``#`` comments:

    node V1 V2 V3 V4          # optional, fixes node ordering
    ref V4                    # reference node (required)
    branch L1 V4 V3 L 1       # name tail head kind params...
    branch C3 V2 V1 C 1/2
    loop I1 C1 -C2 C3         # optional explicit loop basis (signed branches)
    init C3 1/4               # capacitors: charge [C]; inductors: current [A]
    coords C3 L2 L3 L4        # optional free-coordinate override

Branch orientation tail->head is the positive current direction.  Units are
SI throughout (henry, farad, ampere, volt, second); no conversion happens
anywhere.

Device kinds and parameters (all numbers exact: integers, decimals or p/q):

    L value                          linear inductor
    C value                          linear capacitor
    Lpoly lo hi c0 c1 ...            L(i)   = c0 + c1 i + ...   on [lo, hi]
    Cpoly lo hi c0 c1 ...            C(q)   = c0 + c1 q + ...   on [lo, hi]
    Lsin  lo hi off amp omega phase  L(i)   = off + amp sin(omega i + phase)
    Csin  lo hi off amp omega phase  same shape for C(q)
    Ltable x0 y0 x1 y1 ...           piecewise-linear L(i), domain [x0, xN]
    Ctable x0 y0 x1 y1 ...           piecewise-linear C(q)
    Isrc const v | sin A omega ph | poly c0 c1 ... | pwl t0 v0 t1 v1 ...
    Vsrc  (same waveforms)           i(t) resp. v(t)
"""

import math
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from . import errors
from .functions import (
    AffineSinusoidFunction,
    ConstantSource,
    PolynomialFunction,
    PolynomialSource,
    PwlSource,
    PwlTableFunction,
    ScalarFunction,
    SinusoidSource,
    TimeFunction,
)

INDUCTOR_KINDS = ("L", "Lpoly", "Lsin", "Ltable")
CAPACITOR_KINDS = ("C", "Cpoly", "Csin", "Ctable")
SOURCE_KINDS = ("Isrc", "Vsrc")
ALL_KINDS = INDUCTOR_KINDS + CAPACITOR_KINDS + SOURCE_KINDS

_UNBOUNDED = (-math.inf, math.inf)


def parse_number(tok: str) -> Fraction:
    """Exact numeric literal: integer, p/q, decimal or scientific notation."""
    try:
        return Fraction(tok)
    except (ValueError, ZeroDivisionError):
        pass
    try:
        return Fraction(Decimal(tok))
    except (InvalidOperation, ValueError):
        raise ValueError(f"not a number: {tok!r}")


def format_number(x: Fraction) -> str:
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


@dataclass(frozen=True)
class DeviceModel:
    """One branch device: a kind tag plus its exact numeric parameters."""

    kind: str
    params: Tuple

    @property
    def is_inductor(self):
        return self.kind in INDUCTOR_KINDS

    @property
    def is_capacitor(self):
        return self.kind in CAPACITOR_KINDS

    @property
    def is_current_source(self):
        return self.kind == "Isrc"

    @property
    def is_voltage_source(self):
        return self.kind == "Vsrc"

    @property
    def is_source(self):
        return self.kind in SOURCE_KINDS

    @property
    def is_linear(self):
        return self.kind in ("L", "C")

    @property
    def value(self) -> Fraction:
        if not self.is_linear:
            raise errors.MissingDevice(f"{self.kind} device has no single scalar value")
        return self.params[0]

    def law(self) -> ScalarFunction:
        """Charge/current-controlled device law as a ScalarFunction.

        Linear devices come back as exact polynomials on an unbounded domain:
        a constant L for inductors, q/C for capacitors.
        """
        k = self.kind
        if k == "L":
            return PolynomialFunction((Fraction(self.params[0]),), _UNBOUNDED)
        if k == "C":
            return PolynomialFunction((Fraction(0), 1 / Fraction(self.params[0])), _UNBOUNDED)
        if k in ("Lpoly", "Cpoly"):
            lo, hi, *coeffs = self.params
            return PolynomialFunction(tuple(coeffs), (float(lo), float(hi)))
        if k in ("Lsin", "Csin"):
            lo, hi, off, amp, omega, phase = self.params
            return AffineSinusoidFunction(float(off), float(amp), float(omega),
                                          float(phase), (float(lo), float(hi)))
        if k in ("Ltable", "Ctable"):
            pts = tuple((float(x), float(y)) for x, y in self.params)
            return PwlTableFunction(pts)
        raise errors.MissingDevice(f"{k} is not an inductor/capacitor")

    def waveform(self) -> TimeFunction:
        if not self.is_source:
            raise errors.MissingDevice(f"{self.kind} is not a source")
        tag, *ps = self.params
        if tag == "const":
            return ConstantSource(ps[0])
        if tag == "sin":
            return SinusoidSource(float(ps[0]), float(ps[1]), float(ps[2]))
        if tag == "poly":
            return PolynomialSource(tuple(ps))
        if tag == "pwl":
            return PwlSource(tuple((float(t), float(v)) for t, v in ps))
        raise errors.MissingDevice(f"unknown waveform tag {tag!r}")


@dataclass(frozen=True)
class Branch:
    name: str
    tail: str
    head: str
    device: DeviceModel


@dataclass
class Circuit:
    """Oriented connected multigraph with one device per branch."""

    nodes: List[str]
    branches: List[Branch]
    reference_node: str
    explicit_loops: Optional[List[Tuple[str, Tuple[Tuple[int, str], ...]]]] = None
    initial_state: Dict[str, Fraction] = field(default_factory=dict)
    coords: Optional[Tuple[str, ...]] = None

    @property
    def b(self):
        return len(self.branches)

    @property
    def n(self):
        return len(self.nodes) - 1

    @property
    def m(self):
        return self.b - self.n

    def branch_index(self, name):
        for i, br in enumerate(self.branches):
            if br.name == name:
                return i
        raise KeyError(name)

    def __eq__(self, other):
        if not isinstance(other, Circuit):
            return NotImplemented
        return (self.nodes == other.nodes
                and self.branches == other.branches
                and self.reference_node == other.reference_node
                and self.explicit_loops == other.explicit_loops
                and self.initial_state == other.initial_state
                and self.coords == other.coords)


def _connected(circuit: Circuit) -> bool:
    adj = {n: set() for n in circuit.nodes}
    for br in circuit.branches:
        adj[br.tail].add(br.head)
        adj[br.head].add(br.tail)
    seen = {circuit.nodes[0]}
    stack = [circuit.nodes[0]]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == len(circuit.nodes)


def validate_circuit(circuit: Circuit, line_of=None):
    """Check every Circuit invariant; raises a NetlistError subclass on failure.

    line_of optionally maps a diagnostic key (branch/loop name) to a source
    line for better messages when called from the parser.
    """
    line_of = line_of or {}

    def loc(key):
        return line_of.get(key)

    seen = set()
    for br in circuit.branches:
        if br.name in seen:
            raise errors.DuplicateBranch(f"branch {br.name!r} defined twice", loc(br.name))
        seen.add(br.name)
        for node in (br.tail, br.head):
            if node not in circuit.nodes:
                raise errors.UnknownNode(f"branch {br.name!r} uses unknown node {node!r}",
                                         loc(br.name))
        dev = br.device
        if dev.kind not in ALL_KINDS:
            raise errors.UnknownDeviceKind(f"unknown device kind {dev.kind!r}", loc(br.name))
        if dev.is_linear and dev.params[0] == 0:
            raise errors.ZeroLinearValue(f"branch {br.name!r} has zero {dev.kind} value",
                                         loc(br.name))
        if (dev.is_inductor or dev.is_capacitor) and not dev.is_linear:
            if not dev.law().sample_nonzero():
                raise errors.NetlistError(
                    f"device law of branch {br.name!r} vanishes on its domain",
                    loc(br.name), code="ZeroDeviceFunction")

    if circuit.reference_node not in circuit.nodes:
        raise errors.UnknownNode(f"reference node {circuit.reference_node!r} not declared",
                                 loc("ref"))
    if not circuit.branches:
        raise errors.NoLoop("netlist has no branches")
    if not _connected(circuit):
        raise errors.DisconnectedGraph("circuit graph is not connected")
    if circuit.m < 1:
        raise errors.NoLoop(f"circuit has no loop (b={circuit.b}, nodes={len(circuit.nodes)})")

    names = {br.name for br in circuit.branches}
    if circuit.explicit_loops is not None:
        if len(circuit.explicit_loops) != circuit.m:
            raise errors.InvalidExplicitLoop(
                f"expected {circuit.m} loops, got {len(circuit.explicit_loops)}")
        for lname, entries in circuit.explicit_loops:
            flow = {n: 0 for n in circuit.nodes}
            support = set()
            for sign, bname in entries:
                if bname not in names:
                    raise errors.UnknownNode(
                        f"loop {lname!r} uses unknown branch {bname!r}", loc(lname))
                br = circuit.branches[circuit.branch_index(bname)]
                flow[br.tail] -= sign
                flow[br.head] += sign
                support.update((br.tail, br.head))
            if any(v != 0 for v in flow.values()):
                raise errors.InvalidExplicitLoop(
                    f"loop {lname!r} is not a closed path (unbalanced at "
                    f"{[n for n, v in flow.items() if v]})")
            if not entries:
                raise errors.InvalidExplicitLoop(f"loop {lname!r} is empty")

    for bname in circuit.initial_state:
        if bname not in names:
            raise errors.NetlistError(f"init references unknown branch {bname!r}",
                                      loc("init:" + bname), code="UnknownBranch")
        dev = circuit.branches[circuit.branch_index(bname)].device
        if dev.is_source:
            raise errors.NetlistError(f"init on source branch {bname!r} is meaningless",
                                      loc("init:" + bname), code="SyntaxError")

    if circuit.coords is not None:
        if len(set(circuit.coords)) != len(circuit.coords):
            raise errors.NetlistError("coords lists a branch twice",
                                      loc("coords"), code="SyntaxError")
        for bname in circuit.coords:
            if bname not in names:
                raise errors.NetlistError(f"coords references unknown branch {bname!r}",
                                          loc("coords"), code="UnknownBranch")
            dev = circuit.branches[circuit.branch_index(bname)].device
            if dev.is_source:
                raise errors.NetlistError(
                    f"coords may only name inductor/capacitor branches, got {bname!r}",
                    loc("coords"), code="SyntaxError")
    return circuit


def _parse_device(kind, toks, line_no):
    def num(tok):
        try:
            return parse_number(tok)
        except ValueError as exc:
            raise errors.NetlistError(str(exc), line_no) from None

    if kind in ("L", "C"):
        if len(toks) != 1:
            raise errors.NetlistError(f"{kind} takes exactly one value", line_no)
        return DeviceModel(kind, (num(toks[0]),))
    if kind in ("Lpoly", "Cpoly"):
        if len(toks) < 3:
            raise errors.NetlistError(f"{kind} needs: lo hi c0 [c1 ...]", line_no)
        lo, hi = num(toks[0]), num(toks[1])
        if not lo < hi:
            raise errors.NetlistError(f"{kind} domain must satisfy lo < hi", line_no)
        return DeviceModel(kind, (lo, hi) + tuple(num(t) for t in toks[2:]))
    if kind in ("Lsin", "Csin"):
        if len(toks) != 6:
            raise errors.NetlistError(f"{kind} needs: lo hi offset amplitude omega phase",
                                      line_no)
        lo, hi, off, amp, omega, phase = (num(t) for t in toks)
        if not lo < hi:
            raise errors.NetlistError(f"{kind} domain must satisfy lo < hi", line_no)
        if omega == 0:
            raise errors.NetlistError(f"{kind} needs omega != 0", line_no)
        return DeviceModel(kind, (lo, hi, off, amp, omega, phase))
    if kind in ("Ltable", "Ctable"):
        if len(toks) < 4 or len(toks) % 2:
            raise errors.NetlistError(f"{kind} needs x/y pairs (at least two)", line_no)
        pts = tuple((num(toks[i]), num(toks[i + 1])) for i in range(0, len(toks), 2))
        for (xa, _), (xb, _) in zip(pts, pts[1:]):
            if not xa < xb:
                raise errors.NetlistError(f"{kind} breakpoints must be strictly increasing",
                                          line_no)
        return DeviceModel(kind, pts)
    if kind in ("Isrc", "Vsrc"):
        if not toks:
            raise errors.NetlistError(f"{kind} needs a waveform", line_no)
        tag, rest = toks[0], toks[1:]
        if tag == "const":
            if len(rest) != 1:
                raise errors.NetlistError("const waveform takes one value", line_no)
            return DeviceModel(kind, ("const", num(rest[0])))
        if tag == "sin":
            if len(rest) != 3:
                raise errors.NetlistError("sin waveform needs: amplitude omega phase", line_no)
            amp, omega, phase = (num(t) for t in rest)
            if omega == 0:
                raise errors.NetlistError("sin waveform needs omega != 0", line_no)
            return DeviceModel(kind, ("sin", amp, omega, phase))
        if tag == "poly":
            if not rest:
                raise errors.NetlistError("poly waveform needs coefficients", line_no)
            return DeviceModel(kind, ("poly",) + tuple(num(t) for t in rest))
        if tag == "pwl":
            if len(rest) < 4 or len(rest) % 2:
                raise errors.NetlistError("pwl waveform needs t/v pairs (at least two)",
                                          line_no)
            pts = tuple((num(rest[i]), num(rest[i + 1])) for i in range(0, len(rest), 2))
            for (ta, _), (tb, _) in zip(pts, pts[1:]):
                if not ta < tb:
                    raise errors.NetlistError("pwl times must be strictly increasing", line_no)
            return DeviceModel(kind, ("pwl",) + pts)
        raise errors.NetlistError(f"unknown waveform {tag!r}", line_no)
    raise errors.UnknownDeviceKind(f"unknown device kind {kind!r}", line_no)


def parse_netlist(text: str) -> Circuit:
    """Parse netlist text into a validated Circuit.

    Never raises anything but NetlistError subclasses for bad input; the
    exception carries the offending line (1-based).
    """
    declared_nodes: List[str] = []
    node_directive = False
    ref: Optional[str] = None
    branches: List[Branch] = []
    loops: List[Tuple[str, Tuple[Tuple[int, str], ...]]] = []
    inits: Dict[str, Fraction] = {}
    coords: Optional[Tuple[str, ...]] = None
    line_of: Dict[str, int] = {}

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        directive, args = toks[0], toks[1:]
        if directive == "node":
            if not args:
                raise errors.NetlistError("node directive needs at least one name", line_no)
            node_directive = True
            for nm in args:
                if nm in declared_nodes:
                    raise errors.NetlistError(f"node {nm!r} declared twice", line_no)
                declared_nodes.append(nm)
        elif directive == "ref":
            if len(args) != 1:
                raise errors.NetlistError("ref directive takes one node name", line_no)
            if ref is not None:
                raise errors.NetlistError("ref given twice", line_no)
            ref = args[0]
            line_of["ref"] = line_no
        elif directive == "branch":
            if len(args) < 4:
                raise errors.NetlistError(
                    "branch needs: name tail head kind params...", line_no)
            name, tail, head, kind = args[:4]
            if any(b.name == name for b in branches):
                raise errors.DuplicateBranch(f"branch {name!r} defined twice", line_no)
            if kind not in ALL_KINDS:
                raise errors.UnknownDeviceKind(f"unknown device kind {kind!r}", line_no)
            device = _parse_device(kind, args[4:], line_no)
            if node_directive:
                for nodename in (tail, head):
                    if nodename not in declared_nodes:
                        raise errors.UnknownNode(
                            f"branch {name!r} uses undeclared node {nodename!r}", line_no)
            else:
                for nodename in (tail, head):
                    if nodename not in declared_nodes:
                        declared_nodes.append(nodename)
            branches.append(Branch(name, tail, head, device))
            line_of[name] = line_no
        elif directive == "loop":
            if len(args) < 2:
                raise errors.NetlistError("loop needs: name signed-branches...", line_no)
            lname = args[0]
            if any(l[0] == lname for l in loops):
                raise errors.NetlistError(f"loop {lname!r} defined twice", line_no)
            entries = []
            for tok in args[1:]:
                sign = 1
                bname = tok
                if tok.startswith("-"):
                    sign, bname = -1, tok[1:]
                elif tok.startswith("+"):
                    bname = tok[1:]
                entries.append((sign, bname))
            loops.append((lname, tuple(entries)))
            line_of[lname] = line_no
        elif directive == "init":
            if len(args) != 2:
                raise errors.NetlistError("init needs: branch value", line_no)
            if args[0] in inits:
                raise errors.NetlistError(f"init for {args[0]!r} given twice", line_no)
            try:
                inits[args[0]] = parse_number(args[1])
            except ValueError as exc:
                raise errors.NetlistError(str(exc), line_no) from None
            line_of["init:" + args[0]] = line_no
        elif directive == "coords":
            if coords is not None:
                raise errors.NetlistError("coords given twice", line_no)
            if not args:
                raise errors.NetlistError("coords needs at least one branch name", line_no)
            coords = tuple(args)
            line_of["coords"] = line_no
        else:
            raise errors.NetlistError(f"unknown directive {directive!r}", line_no)

    if ref is None:
        raise errors.NetlistError("missing 'ref' directive")
    circuit = Circuit(
        nodes=declared_nodes,
        branches=branches,
        reference_node=ref,
        explicit_loops=loops or None,
        initial_state=inits,
        coords=coords,
    )
    return validate_circuit(circuit, line_of)


def _format_params(device: DeviceModel) -> str:
    if device.kind in ("Ltable", "Ctable"):
        return " ".join(f"{format_number(x)} {format_number(y)}" for x, y in device.params)
    if device.is_source:
        tag, *rest = device.params
        if tag == "pwl":
            body = " ".join(f"{format_number(t)} {format_number(v)}" for t, v in rest)
        else:
            body = " ".join(format_number(x) for x in rest)
        return f"{tag} {body}"
    return " ".join(format_number(x) for x in device.params)


def serialize_circuit(circuit: Circuit) -> str:
    """Canonical text form; parse_netlist(serialize_circuit(c)) == c."""
    out = ["node " + " ".join(circuit.nodes), f"ref {circuit.reference_node}"]
    for br in circuit.branches:
        out.append(f"branch {br.name} {br.tail} {br.head} {br.device.kind} "
                   f"{_format_params(br.device)}")
    if circuit.explicit_loops:
        for lname, entries in circuit.explicit_loops:
            body = " ".join(("-" + b) if s < 0 else b for s, b in entries)
            out.append(f"loop {lname} {body}")
    for bname, val in circuit.initial_state.items():
        out.append(f"init {bname} {format_number(val)}")
    if circuit.coords:
        out.append("coords " + " ".join(circuit.coords))
    return "\n".join(out) + "\n"
