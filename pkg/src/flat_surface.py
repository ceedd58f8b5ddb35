"""
Flat Surface Module for the Staircase Retraction Probe
Half-translation surfaces on the six-punctured sphere, stored as
horizontal-cylinder diagrams over exact rationals
"""

import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from errors import InvalidSpec, InvalidSurface, NonPeriodic, OperationError

logger = logging.getLogger(__name__)

TOP = "top"
BOTTOM = "bottom"
TRANSLATION = "translation"
FOLD = "fold"

DEFAULT_MAX_STEPS = 10000

RationalLike = Union[int, float, str, Fraction]
BreakpointKey = Tuple[int, str, Fraction]


def as_rational(value: RationalLike) -> Fraction:
    """
    Convert a number to an exact rational

    Args:
        value: int, float (converted exactly), Fraction, or a string such as "3/4" or "0.25"

    Returns:
        Fraction equal to the value
    """
    if isinstance(value, bool):
        raise InvalidSpec(f"Not a rational number: {value!r}")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, float)):
        try:
            return Fraction(value)
        except (ValueError, OverflowError):
            raise InvalidSpec(f"Not a finite number: {value!r}")
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError):
            raise InvalidSpec(f"Not a rational number: {value!r}")
    raise InvalidSpec(f"Unsupported rational value: {value!r}")


def format_rational(value: Fraction) -> str:
    """Serialize a rational as 'numerator/denominator'"""
    value = Fraction(value)
    return f"{value.numerator}/{value.denominator}"


@dataclass(frozen=True)
class Cylinder:
    """Horizontal cylinder; the vertical through bottom position x meets the top circle at x - twist"""
    circumference: Fraction
    height: Fraction
    twist: Fraction = Fraction(0)

    @property
    def area(self) -> Fraction:
        return self.circumference * self.height


@dataclass(frozen=True)
class BoundarySegment:
    """Arc of a boundary circle glued to its partner by a translation or a half-turn"""
    id: int
    cylinder: int
    side: str  # "top" or "bottom"
    start: Fraction
    length: Fraction
    partner: int
    kind: str  # "translation" or "fold"


@dataclass(frozen=True)
class FlatSurface:
    """
    Half-translation surface in horizontal-cylinder coordinates

    Segment ids are their indices in `segments`. Labels name vertices by one
    breakpoint (cylinder, side, position) of the vertex.
    """
    cylinders: Tuple[Cylinder, ...]
    segments: Tuple[BoundarySegment, ...]
    labels: Dict[str, BreakpointKey] = field(default_factory=dict)

    def circle(self, j: int, side: str) -> List[BoundarySegment]:
        """Segments of one boundary circle, ordered by start"""
        return sorted((s for s in self.segments if s.cylinder == j and s.side == side), key=lambda s: s.start)

    def breakpoints(self, j: int, side: str) -> List[Fraction]:
        return [s.start for s in self.circle(j, side)]

    def end_of(self, segment: BoundarySegment) -> Fraction:
        return (segment.start + segment.length) % self.cylinders[segment.cylinder].circumference

    def partner_of(self, segment: BoundarySegment) -> BoundarySegment:
        return self.segments[segment.partner]


@dataclass(frozen=True)
class StaircaseSpec:
    """Dimensions of the staircase polygon with bottom edge 1"""
    a: Fraction
    b: Fraction
    c: Fraction
    p: Fraction
    q: Fraction

    def __post_init__(self):
        for name in ("a", "b", "c", "p", "q"):
            object.__setattr__(self, name, as_rational(getattr(self, name)))

    def validate(self):
        if self.a <= 0:
            raise InvalidSpec(f"Staircase height a must be positive, got {self.a}")
        if self.b < 0 or self.c < 0:
            raise InvalidSpec(f"Staircase heights b, c must be non-negative, got {self.b}, {self.c}")
        if self.p <= 0 or self.q <= 0:
            raise InvalidSpec(f"Staircase widths p, q must be positive, got {self.p}, {self.q}")
        if self.p + self.q >= 1:
            raise InvalidSpec(f"Staircase widths need p + q < 1, got {self.p + self.q}")

    def polygon_area(self) -> Fraction:
        return self.a + self.b * (self.p + self.q) + self.c * self.p


@dataclass(frozen=True)
class PillowcaseSpec:
    """Three left-aligned rows; type b has the narrowest middle row, type c the widest"""
    kind: str
    widths: Tuple[Fraction, Fraction, Fraction]
    heights: Tuple[Fraction, Fraction, Fraction]

    @classmethod
    def from_values(cls, kind: str, widths: Sequence[RationalLike], heights: Sequence[RationalLike]) -> "PillowcaseSpec":
        if len(widths) != 3 or len(heights) != 3:
            raise InvalidSpec("A pillowcase needs three widths and three heights", code="invalid-dims")
        return cls(kind, tuple(as_rational(w) for w in widths), tuple(as_rational(h) for h in heights))

    def validate(self):
        w1, w2, w3 = self.widths
        if min(self.widths) <= 0 or min(self.heights) <= 0:
            raise InvalidSpec("Pillowcase dimensions must be positive", code="invalid-dims")
        if self.kind == "b":
            ok = w2 < w1 and w2 < w3
        elif self.kind == "c":
            ok = w2 > w1 and w2 > w3
        else:
            raise InvalidSpec(f"Unknown pillowcase kind {self.kind!r}", code="invalid-dims")
        if not ok:
            raise InvalidSpec(f"Widths ({w1}, {w2}, {w3}) do not have the type-({self.kind}) pattern", code="invalid-dims")

    def rows(self) -> List[Tuple[Fraction, Fraction, Fraction]]:
        return [(Fraction(0), w, h) for w, h in zip(self.widths, self.heights)]


@dataclass(frozen=True)
class StratumSignature:
    """Orders of the cone points, sorted in decreasing order"""
    orders: Tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.orders)

    def __str__(self) -> str:
        parts = []
        for order in sorted(set(self.orders), reverse=True):
            count = self.orders.count(order)
            parts.append(str(order) if count == 1 else f"{order}^{count}")
        return "(" + ", ".join(parts) + ")"


@dataclass(frozen=True)
class VerticalCylinder:
    """Maximal vertical cylinder given by its crossings (cylinder, start, width, upward) of horizontal cylinders"""
    width: Fraction
    length: Fraction
    crossings: Tuple[Tuple[int, Fraction, Fraction, bool], ...]


@dataclass(frozen=True)
class CylinderDecomposition:
    cylinders: Tuple[VerticalCylinder, ...]
    adjacency: Tuple[Tuple[int, int], ...]

    @property
    def area(self) -> Fraction:
        return sum((v.width * v.length for v in self.cylinders), Fraction(0))

    def widths(self) -> List[Fraction]:
        return [v.width for v in self.cylinders]

    def lengths(self) -> List[Fraction]:
        return [v.length for v in self.cylinders]


# ---------------------------------------------------------------------------
# Validation and vertex structure
# ---------------------------------------------------------------------------

def _problems(surface: FlatSurface) -> List[Tuple[str, str]]:
    problems = []
    n = len(surface.cylinders)
    if n == 0:
        return [("tiling", "surface has no cylinders")]

    for j, cyl in enumerate(surface.cylinders):
        if cyl.circumference <= 0 or cyl.height <= 0:
            problems.append(("tiling", f"cylinder {j} has non-positive dimensions"))
        if not 0 <= cyl.twist < cyl.circumference:
            problems.append(("twist_range", f"cylinder {j} twist {cyl.twist} outside [0, {cyl.circumference})"))

    for index, seg in enumerate(surface.segments):
        if seg.id != index:
            problems.append(("involution", f"segment at index {index} has id {seg.id}"))
        if not 0 <= seg.cylinder < n or seg.side not in (TOP, BOTTOM):
            problems.append(("tiling", f"segment {index} is not on a boundary circle"))
            return problems
        if seg.length <= 0:
            problems.append(("tiling", f"segment {index} has non-positive length"))

    for j, cyl in enumerate(surface.cylinders):
        for side in (BOTTOM, TOP):
            arcs = surface.circle(j, side)
            if not arcs:
                problems.append(("tiling", f"circle ({j}, {side}) has no segments"))
                continue
            if sum(s.length for s in arcs) != cyl.circumference:
                problems.append(("tiling", f"circle ({j}, {side}) lengths do not sum to {cyl.circumference}"))
            for k, seg in enumerate(arcs):
                if not 0 <= seg.start < cyl.circumference:
                    problems.append(("tiling", f"segment {seg.id} starts outside its circle"))
                following = arcs[(k + 1) % len(arcs)]
                if (seg.start + seg.length) % cyl.circumference != following.start:
                    problems.append(("tiling", f"gap or overlap after segment {seg.id}"))

    for seg in surface.segments:
        if not 0 <= seg.partner < len(surface.segments):
            problems.append(("involution", f"segment {seg.id} has no partner"))
            continue
        partner = surface.segments[seg.partner]
        if partner.id == seg.id:
            problems.append(("involution", f"segment {seg.id} is its own partner"))
        if partner.partner != seg.id:
            problems.append(("involution", f"segment {seg.id} partner does not point back"))
        if partner.length != seg.length:
            problems.append(("involution", f"segments {seg.id} and {partner.id} differ in length"))
        if seg.kind != partner.kind or seg.kind not in (TRANSLATION, FOLD):
            problems.append(("kinds", f"segments {seg.id} and {partner.id} disagree on gluing kind"))
        elif seg.kind == TRANSLATION and seg.side == partner.side:
            problems.append(("kinds", f"translation {seg.id} glues two {seg.side} arcs"))
        elif seg.kind == FOLD and seg.side != partner.side:
            problems.append(("kinds", f"fold {seg.id} glues a top arc to a bottom arc"))

    if problems:
        return problems

    keys = set(_breakpoint_keys(surface))
    for name, key in surface.labels.items():
        if key not in keys:
            problems.append(("labels", f"label {name} is not on a breakpoint"))

    classes = vertex_classes(surface)
    sizes: Dict[int, int] = {}
    for cls in classes.values():
        sizes[cls] = sizes.get(cls, 0) + 1
    if sum(size - 2 for size in sizes.values()) != -4:
        problems.append(("gauss_bonnet", f"cone orders sum to {sum(size - 2 for size in sizes.values())}"))
    return problems


def validate(surface: FlatSurface) -> FlatSurface:
    """Raise InvalidSurface on the first violated invariant, return the surface otherwise"""
    problems = _problems(surface)
    if problems:
        check, message = problems[0]
        raise InvalidSurface(f"{check}: {message}", details={"check": check})
    return surface


def check_invariants(surface: FlatSurface) -> Dict[str, bool]:
    """Named pass/fail results of the structural invariants"""
    failed = {check for check, _ in _problems(surface)}
    names = ["tiling", "involution", "kinds", "twist_range", "labels", "gauss_bonnet"]
    return {name: name not in failed for name in names}


def _breakpoint_keys(surface: FlatSurface) -> List[BreakpointKey]:
    return sorted({(s.cylinder, s.side, s.start) for s in surface.segments})


def vertex_classes(surface: FlatSurface) -> Dict[BreakpointKey, int]:
    """
    Group breakpoints into vertices

    Returns:
        Mapping breakpoint -> vertex index; every breakpoint contributes an angle of pi
    """
    keys = _breakpoint_keys(surface)
    parent = {key: key for key in keys}

    def find(key):
        while parent[key] != key:
            parent[key] = parent[parent[key]]
            key = parent[key]
        return key

    def union(u, v):
        ru, rv = find(u), find(v)
        if ru != rv:
            if rv < ru:
                ru, rv = rv, ru
            parent[rv] = ru

    for seg in surface.segments:
        if seg.id > seg.partner:
            continue
        partner = surface.segments[seg.partner]
        seg_start = (seg.cylinder, seg.side, seg.start)
        seg_end = (seg.cylinder, seg.side, surface.end_of(seg))
        par_start = (partner.cylinder, partner.side, partner.start)
        par_end = (partner.cylinder, partner.side, surface.end_of(partner))
        if seg.kind == TRANSLATION:
            union(seg_start, par_start)
            union(seg_end, par_end)
        else:
            union(seg_start, par_end)
            union(seg_end, par_start)

    index: Dict[BreakpointKey, int] = {}
    classes = {}
    for key in keys:
        root = find(key)
        if root not in index:
            index[root] = len(index)
        classes[key] = index[root]
    return classes


def cone_angles(surface: FlatSurface) -> Dict[int, int]:
    """Cone angle of each vertex as a multiple of pi"""
    angles: Dict[int, int] = {}
    for cls in vertex_classes(surface).values():
        angles[cls] = angles.get(cls, 0) + 1
    return angles


def label_angles(surface: FlatSurface) -> Dict[str, int]:
    """Cone angle (multiple of pi) at every labelled vertex"""
    classes = vertex_classes(surface)
    angles = cone_angles(surface)
    return {name: angles[classes[key]] for name, key in sorted(surface.labels.items())}


def stratum(surface: FlatSurface) -> StratumSignature:
    orders = sorted((k - 2 for k in cone_angles(surface).values()), reverse=True)
    return StratumSignature(tuple(orders))


def area_total(surface: FlatSurface) -> Fraction:
    return sum((cyl.area for cyl in surface.cylinders), Fraction(0))


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

Row = Tuple[Fraction, Fraction, Fraction]


def _normalize_rows(rows: Sequence[Sequence[RationalLike]]) -> List[Row]:
    result = [tuple(as_rational(v) for v in row) for row in rows]
    if not result:
        raise InvalidSpec("A polygon needs at least one row")
    for k, (left, width, height) in enumerate(result):
        if width <= 0 or height <= 0:
            raise InvalidSpec(f"Row {k} needs positive width and height")
    for k in range(1, len(result)):
        lo, up = result[k - 1], result[k]
        overlap = min(lo[0] + lo[1], up[0] + up[1]) - max(lo[0], up[0])
        if overlap <= 0:
            raise InvalidSpec(f"Rows {k - 1} and {k} do not overlap")
        if lo[0] == up[0] and lo[1] == up[1]:
            raise InvalidSpec(f"Rows {k - 1} and {k} coincide; merge them into one row")
    return result


def _polygon_corners(rows: List[Row]) -> List[Tuple[int, Fraction, bool]]:
    """Corners (interface, x, convex) in counter-clockwise order from the bottom-left corner"""
    n = len(rows)
    lefts = [r[0] for r in rows]
    rights = [r[0] + r[1] for r in rows]
    corners = [(0, lefts[0], True), (0, rights[0], True)]
    for k in range(1, n):
        if rights[k] != rights[k - 1]:
            shrinking = rights[k] < rights[k - 1]
            corners.append((k, rights[k - 1], shrinking))
            corners.append((k, rights[k], not shrinking))
    corners.append((n, rights[n - 1], True))
    corners.append((n, lefts[n - 1], True))
    for k in range(n - 1, 0, -1):
        if lefts[k] != lefts[k - 1]:
            lower_wider = lefts[k - 1] < lefts[k]
            corners.append((k, lefts[k], not lower_wider))
            corners.append((k, lefts[k - 1], lower_wider))
    return corners


def _boundary_pieces(rows: List[Row], k: int) -> List[Tuple[Fraction, Fraction]]:
    n = len(rows)
    if k == 0 or k == n:
        left, width, _ = rows[0] if k == 0 else rows[n - 1]
        return [(left, left + width)]
    lo, up = rows[k - 1], rows[k]
    pieces = []
    if lo[0] != up[0]:
        pieces.append((min(lo[0], up[0]), max(lo[0], up[0])))
    if lo[0] + lo[1] != up[0] + up[1]:
        pieces.append((min(lo[0] + lo[1], up[0] + up[1]), max(lo[0] + lo[1], up[0] + up[1])))
    return pieces


def build_row_polygon(rows: Sequence[Sequence[RationalLike]],
                      points: Optional[Dict[str, Tuple[RationalLike, RationalLike]]] = None) -> FlatSurface:
    """
    Double of a rectilinear polygon made of stacked horizontal rows

    Args:
        rows: (left, width, height) of every row, bottom to top; consecutive rows overlap
        points: optional named points (x, y) on the polygon boundary; corners that are not
            named stay unlabelled and extra points on horizontal edges become marked points.
            When omitted, corners are named P6, P1, ... (convex) and Q1, Q2, ... (reflex)
            in counter-clockwise order from the bottom-left corner.

    Returns:
        FlatSurface with one cylinder of circumference 2*width per row and zero twists
    """
    rows = _normalize_rows(rows)
    n = len(rows)
    levels = [Fraction(0)]
    for _, _, height in rows:
        levels.append(levels[-1] + height)

    corners = _polygon_corners(rows)
    vertices: Dict[Tuple[int, Fraction], List[str]] = {(k, x): [] for k, x, _ in corners}

    if points is None:
        convex = [(k, x) for k, x, is_convex in corners if is_convex]
        reflex = [(k, x) for k, x, is_convex in corners if not is_convex]
        convex_names = ["P6", "P1", "P2", "P3", "P4", "P5"] if len(convex) == 6 else [f"P{i + 1}" for i in range(len(convex))]
        for name, key in zip(convex_names, convex):
            vertices[key].append(name)
        for i, key in enumerate(reflex):
            vertices[key].append(f"Q{i + 1}")
    else:
        for name, (x, y) in points.items():
            x, y = as_rational(x), as_rational(y)
            if y not in levels:
                raise InvalidSpec(f"Point {name} at height {y} is not on a horizontal edge")
            k = levels.index(y)
            key = (k, x)
            if key not in vertices and not any(a < x < b for a, b in _boundary_pieces(rows, k)):
                raise InvalidSpec(f"Point {name} at ({x}, {y}) is not on the polygon boundary")
            vertices.setdefault(key, []).append(name)

    arcs = []  # dicts describing every boundary arc
    for j, (left, width, _) in enumerate(rows):
        circumference = 2 * width
        for side in (BOTTOM, TOP):
            k = j if side == BOTTOM else j + 1
            xs = [x for (kk, x) in vertices if kk == k and left <= x <= left + width]
            positions = sorted({(x - left) % circumference for x in xs} |
                               {(circumference - (x - left)) % circumference for x in xs})
            if not positions:
                raise InvalidSpec(f"Row {j} {side} edge carries no vertex")
            overlap = None
            if 0 < k < n:
                lo, up = rows[k - 1], rows[k]
                overlap = (max(lo[0], up[0]), min(lo[0] + lo[1], up[0] + up[1]))
            for i, start in enumerate(positions):
                end = positions[i + 1] if i + 1 < len(positions) else positions[0] + circumference
                length = end - start
                sample = start + length / 3
                if sample % width == 0:
                    sample = start + 2 * length / 3
                sample %= circumference
                front = sample < width
                x_sample = left + sample if front else left + circumference - sample
                interior = overlap is not None and overlap[0] < x_sample < overlap[1]
                arcs.append({"cylinder": j, "side": side, "start": start, "length": length,
                             "interior": interior, "front": front, "x": x_sample, "sample": sample})

    index = {(arc["cylinder"], arc["side"], arc["start"]): i for i, arc in enumerate(arcs)}
    partners: Dict[int, Tuple[int, str]] = {}
    for i, arc in enumerate(arcs):
        j, side = arc["cylinder"], arc["side"]
        circumference = 2 * rows[j][1]
        if not arc["interior"]:
            mirror = (-arc["start"] - arc["length"]) % circumference
            target = index.get((j, side, mirror))
            if target is None:
                raise InvalidSurface(f"No mirror arc for row {j} {side} arc at {arc['start']}")
            partners[i] = (target, FOLD)
        elif side == TOP:
            up_left, up_width, _ = rows[j + 1]
            up_circumference = 2 * up_width
            offset = arc["x"] - up_left
            image = offset if arc["front"] else up_circumference - offset
            start = (image - (arc["sample"] - arc["start"])) % up_circumference
            target = index.get((j + 1, BOTTOM, start))
            if target is None or arcs[target]["length"] != arc["length"]:
                raise InvalidSurface(f"No matching arc above row {j} at {arc['start']}")
            partners[i] = (target, TRANSLATION)
            partners[target] = (i, TRANSLATION)

    segments = []
    for i, arc in enumerate(arcs):
        if i not in partners:
            raise InvalidSurface(f"Arc {i} of row {arc['cylinder']} was left unglued")
        target, kind = partners[i]
        segments.append(BoundarySegment(i, arc["cylinder"], arc["side"], arc["start"], arc["length"], target, kind))

    labels: Dict[str, BreakpointKey] = {}
    for (k, x), names in vertices.items():
        if k < n and rows[k][0] <= x <= rows[k][0] + rows[k][1]:
            key = (k, BOTTOM, (x - rows[k][0]) % (2 * rows[k][1]))
        else:
            key = (k - 1, TOP, (x - rows[k - 1][0]) % (2 * rows[k - 1][1]))
        for name in names:
            labels[name] = key

    cylinders = tuple(Cylinder(2 * width, height, Fraction(0)) for _, width, height in rows)
    surface = FlatSurface(cylinders, tuple(segments), dict(sorted(labels.items())))
    return validate(surface)


def build_staircase(spec: StaircaseSpec) -> FlatSurface:
    """
    Double of the staircase polygon: bottom step of width 1 and height a,
    then p+q by b, then p by c, all left-aligned. Steps of height zero are
    dropped; their corners survive as marked points.
    """
    spec.validate()
    a, b, c, p, q = spec.a, spec.b, spec.c, spec.p, spec.q
    rows = [(0, 1, a)]
    if b > 0:
        rows.append((0, p + q, b))
    if c > 0:
        rows.append((0, p, c))
    top = a + b + c
    points = {
        "P6": (0, 0), "P1": (1, 0), "P2": (1, a), "Q1": (p + q, a),
        "P3": (p + q, a + b), "Q2": (p, a + b), "P4": (p, top), "P5": (0, top),
    }
    surface = build_row_polygon(rows, points)
    logger.debug(f"Built staircase a={a} b={b} c={c} p={p} q={q} with {len(surface.cylinders)} cylinders")
    return surface


def build_rect_marked(a: RationalLike, p: RationalLike, q: RationalLike) -> FlatSurface:
    """Rectangle double with P3, P4 as marked points on the top edge"""
    return build_staircase(StaircaseSpec(a, 0, 0, p, q))


def build_pillowcase(kind: str, widths: Sequence[RationalLike], heights: Sequence[RationalLike]) -> FlatSurface:
    """
    Double of a left-aligned three-row pillowcase polygon

    Args:
        kind: "b" (middle row narrowest) or "c" (middle row widest)
        widths: row widths bottom to top
        heights: row heights bottom to top
    """
    spec = PillowcaseSpec.from_values(kind, widths, heights)
    spec.validate()
    return build_row_polygon(spec.rows())


# ---------------------------------------------------------------------------
# Polydisk action
# ---------------------------------------------------------------------------

def _as_lambda(lam: Any) -> Tuple[Fraction, Fraction]:
    if isinstance(lam, complex):
        return Fraction(lam.real), Fraction(lam.imag)
    if isinstance(lam, (tuple, list)) and len(lam) == 2:
        return as_rational(lam[0]), as_rational(lam[1])
    raise OperationError(f"Cannot read {lam!r} as a complex parameter", code="invalid-parameter")


def polydisk_act(surface: FlatSurface, j: int, lam: Any) -> FlatSurface:
    """
    Act on cylinder j: the height is scaled by Im(lam) and the cylinder is
    sheared by Re(lam) times its old height

    Args:
        surface: surface to deform
        j: cylinder index
        lam: complex number, or a (re, im) pair of rationals

    Returns:
        New surface; gluings are unchanged
    """
    re, im = _as_lambda(lam)
    if not 0 <= j < len(surface.cylinders):
        raise OperationError(f"Cylinder index {j} out of range", code="index-out-of-range")
    if im <= 0:
        raise OperationError(f"Imaginary part must be positive, got {im}", code="nonpositive-imaginary-part")
    cyl = surface.cylinders[j]
    twist = (cyl.twist + re * cyl.height) % cyl.circumference
    cylinders = list(surface.cylinders)
    cylinders[j] = Cylinder(cyl.circumference, cyl.height * im, twist)
    return replace(surface, cylinders=tuple(cylinders))


def shear(surface: FlatSurface, j: int, amount: RationalLike) -> FlatSurface:
    """Add `amount` to the twist of cylinder j"""
    if not 0 <= j < len(surface.cylinders):
        raise OperationError(f"Cylinder index {j} out of range", code="index-out-of-range")
    return polydisk_act(surface, j, (as_rational(amount) / surface.cylinders[j].height, 1))


def set_twist(surface: FlatSurface, j: int, twist: RationalLike) -> FlatSurface:
    if not 0 <= j < len(surface.cylinders):
        raise OperationError(f"Cylinder index {j} out of range", code="index-out-of-range")
    return shear(surface, j, as_rational(twist) - surface.cylinders[j].twist)


# ---------------------------------------------------------------------------
# Vertical tracing and rotation
# ---------------------------------------------------------------------------

Crossing = Tuple[int, Fraction, Fraction, bool]


class _VerticalTracer:
    """Exact first-return dynamics of the vertical flow on the boundary circles"""

    def __init__(self, surface: FlatSurface, max_steps: int):
        if max_steps <= 0:
            raise OperationError(f"max_steps must be positive, got {max_steps}", code="invalid-parameter")
        self.surface = surface
        self.max_steps = max_steps
        self.circles = {}
        self.breaks = {}
        for j in range(len(surface.cylinders)):
            for side in (BOTTOM, TOP):
                arcs = surface.circle(j, side)
                self.circles[(j, side)] = arcs
                self.breaks[(j, side)] = {s.start for s in arcs}

    def locate(self, j: int, side: str, position: Fraction) -> Tuple[BoundarySegment, Fraction]:
        circumference = self.surface.cylinders[j].circumference
        for seg in self.circles[(j, side)]:
            offset = (position - seg.start) % circumference
            if offset < seg.length:
                return seg, offset
        raise InvalidSurface(f"Position {position} not covered on circle ({j}, {side})")

    def _cross(self, seg: BoundarySegment, offset: Fraction, width: Fraction) -> Tuple[int, Fraction, bool]:
        partner = self.surface.segments[seg.partner]
        k = partner.cylinder
        cyl = self.surface.cylinders[k]
        if seg.kind == TRANSLATION:
            position = partner.start + offset
        else:
            position = partner.start + partner.length - offset - width
        if partner.side == BOTTOM:
            return k, position % cyl.circumference, True
        return k, (position + cyl.twist) % cyl.circumference, False

    def _exit_position(self, j: int, x: Fraction, up: bool) -> Tuple[str, Fraction]:
        cyl = self.surface.cylinders[j]
        if up:
            return TOP, (x - cyl.twist) % cyl.circumference
        return BOTTOM, x % cyl.circumference

    def step(self, j: int, x: Fraction, up: bool) -> Optional[Tuple[int, Fraction, bool]]:
        """Follow one vertical leaf across cylinder j; None when it ends at a vertex"""
        side, position = self._exit_position(j, x, up)
        if position in self.breaks[(j, side)]:
            return None
        seg, offset = self.locate(j, side, position)
        return self._cross(seg, offset, Fraction(0))

    def step_interval(self, j: int, x0: Fraction, width: Fraction, up: bool) -> Tuple[int, Fraction, bool]:
        side, position = self._exit_position(j, x0, up)
        circumference = self.surface.cylinders[j].circumference
        seg, mid_offset = self.locate(j, side, (position + width / 2) % circumference)
        offset = mid_offset - width / 2
        if offset < 0 or offset + width > seg.length:
            raise InvalidSurface(f"Strip of cylinder {j} at {x0} straddles a vertex")
        return self._cross(seg, offset, width)

    def cut_points(self) -> Dict[int, set]:
        """Crossings of all vertical separatrices with the bottom circles"""
        cuts = {j: set() for j in range(len(self.surface.cylinders))}
        for j, cyl in enumerate(self.surface.cylinders):
            for b in sorted(self.breaks[(j, BOTTOM)]):
                self._follow(cuts, j, b, True)
            for t in sorted(self.breaks[(j, TOP)]):
                self._follow(cuts, j, (t + cyl.twist) % cyl.circumference, False)
        return cuts

    def _follow(self, cuts: Dict[int, set], j: int, x: Fraction, up: bool):
        cuts[j].add(x)
        state = (j, x, up)
        for _ in range(self.max_steps):
            state = self.step(*state)
            if state is None:
                return
            cuts[state[0]].add(state[1])
        twists = [format_rational(c.twist) for c in self.surface.cylinders]
        raise NonPeriodic(f"Vertical separatrix from cylinder {j} at {x} did not close within {self.max_steps} steps",
                          details={"cylinder": j, "start": format_rational(x), "twists": twists})

    def cycles(self) -> Tuple[List[List[Crossing]], Dict[Tuple[int, Fraction], Fraction]]:
        cuts = self.cut_points()
        widths: Dict[Tuple[int, Fraction], Fraction] = {}
        for j, cyl in enumerate(self.surface.cylinders):
            points = sorted(cuts[j])
            for i, x0 in enumerate(points):
                end = points[i + 1] if i + 1 < len(points) else points[0] + cyl.circumference
                widths[(j, x0)] = end - x0

        owner = set()
        cycles = []
        for key in sorted(widths):
            if key in owner:
                continue
            j, x0 = key
            width = widths[key]
            crossings = []
            state = (j, x0, True)
            while True:
                if (state[0], state[1]) in owner:
                    raise InvalidSurface(f"Vertical strip at {state[:2]} is visited twice")
                owner.add((state[0], state[1]))
                crossings.append((state[0], state[1], width, state[2]))
                k, x, up = self.step_interval(state[0], state[1], width, state[2])
                if widths.get((k, x)) != width:
                    raise InvalidSurface(f"Vertical strip of width {width} lands off the cut points at ({k}, {x})")
                if (k, x) == key:
                    if not up:
                        raise InvalidSurface(f"Vertical cylinder through {key} closes with reversed direction")
                    break
                state = (k, x, up)
            cycles.append(crossings)
        return cycles, widths


def _neighbour_tables(surface: FlatSurface, cycles: List[List[Crossing]]):
    by_start, by_end = {}, {}
    for m, crossings in enumerate(cycles):
        for i, (j, x0, width, _) in enumerate(crossings):
            circumference = surface.cylinders[j].circumference
            by_start[(j, x0)] = (m, i)
            by_end[(j, (x0 + width) % circumference)] = (m, i)
    return by_start, by_end


def _neighbour(surface, cycles, tables, m: int, i: int, side: str) -> Tuple[int, int, str]:
    """Vertical cylinder across the left (top) or right (bottom) edge of crossing i of cylinder m"""
    by_start, by_end = tables
    j, x0, width, up = cycles[m][i]
    circumference = surface.cylinders[j].circumference
    look_left = (side == TOP) == up
    if look_left:
        m2, i2 = by_end[(j, x0)]
        other_side = BOTTOM if cycles[m2][i2][3] else TOP
    else:
        m2, i2 = by_start[(j, (x0 + width) % circumference)]
        other_side = TOP if cycles[m2][i2][3] else BOTTOM
    return m2, i2, other_side


def _junction(surface: FlatSurface, tracer: _VerticalTracer, crossing: Crossing, side: str) -> Optional[BreakpointKey]:
    """Breakpoint where the edge `side` of a crossing starts, if that point is a vertex"""
    j, x0, width, up = crossing
    cyl = surface.cylinders[j]
    if side == TOP:
        key = (j, BOTTOM, x0) if up else (j, TOP, (x0 + width - cyl.twist) % cyl.circumference)
    else:
        key = (j, BOTTOM, (x0 + width) % cyl.circumference) if up else (j, TOP, (x0 - cyl.twist) % cyl.circumference)
    return key if key[2] in tracer.breaks[(key[0], key[1])] else None


def trace_vertical(surface: FlatSurface, max_steps: int = DEFAULT_MAX_STEPS) -> CylinderDecomposition:
    """
    Decompose the surface into maximal vertical cylinders

    Raises:
        NonPeriodic: a vertical separatrix does not reach a vertex within max_steps crossings
    """
    tracer = _VerticalTracer(surface, max_steps)
    cycles, _ = tracer.cycles()
    tables = _neighbour_tables(surface, cycles)
    vertical = []
    adjacency = set()
    for m, crossings in enumerate(cycles):
        length = sum((surface.cylinders[j].height for j, _, _, _ in crossings), Fraction(0))
        vertical.append(VerticalCylinder(crossings[0][2], length, tuple(crossings)))
        for i in range(len(crossings)):
            for side in (BOTTOM, TOP):
                m2, _, _ = _neighbour(surface, cycles, tables, m, i, side)
                adjacency.add((min(m, m2), max(m, m2)))
    decomposition = CylinderDecomposition(tuple(vertical), tuple(sorted(adjacency)))
    logger.debug(f"Vertical decomposition: {len(vertical)} cylinders, widths {decomposition.widths()}")
    return decomposition


def rot(surface: FlatSurface, max_steps: int = DEFAULT_MAX_STEPS) -> FlatSurface:
    """
    Rebuild the surface in the cylinder coordinates of its vertical foliation

    Each vertical cylinder becomes a horizontal cylinder whose circumference is
    its length and whose height is its width; vertex labels follow their vertices.
    """
    tracer = _VerticalTracer(surface, max_steps)
    cycles, _ = tracer.cycles()
    tables = _neighbour_tables(surface, cycles)
    classes = vertex_classes(surface)

    offsets, lengths = [], []
    for crossings in cycles:
        running, cumulative = Fraction(0), []
        for j, _, _, _ in crossings:
            cumulative.append(running)
            running += surface.cylinders[j].height
        offsets.append(cumulative)
        lengths.append(running)

    runs = {}
    for m, crossings in enumerate(cycles):
        for side in (BOTTOM, TOP):
            junctions = [(i, _junction(surface, tracer, c, side)) for i, c in enumerate(crossings)]
            junctions = [(i, key) for i, key in junctions if key is not None]
            if not junctions:
                raise InvalidSurface(f"Vertical cylinder {m} has no vertex on its {side} edge")
            circle_runs = []
            for a, (i, key) in enumerate(junctions):
                start = offsets[m][i]
                end = offsets[m][junctions[a + 1][0]] if a + 1 < len(junctions) else offsets[m][junctions[0][0]] + lengths[m]
                circle_runs.append((i, start, end - start, classes[key]))
            runs[(m, side)] = circle_runs

    ids = {}
    for m in range(len(cycles)):
        for side in (BOTTOM, TOP):
            for _, start, _, _ in runs[(m, side)]:
                ids[(m, side, start)] = len(ids)

    segments = []
    new_class = {}
    for m in range(len(cycles)):
        for side in (BOTTOM, TOP):
            for i, start, length, cls in runs[(m, side)]:
                j, _, _, up = cycles[m][i]
                height = surface.cylinders[j].height
                m2, i2, side2 = _neighbour(surface, cycles, tables, m, i, side)
                up2 = cycles[m2][i2][3]
                y_old = Fraction(0) if up else height
                s2 = offsets[m2][i2] + (y_old if up2 else height - y_old)
                if up == up2:
                    kind, partner_start = TRANSLATION, s2 % lengths[m2]
                else:
                    kind, partner_start = FOLD, (s2 - length) % lengths[m2]
                if (kind == TRANSLATION) == (side == side2):
                    raise InvalidSurface(f"Inconsistent gluing between vertical cylinders {m} and {m2}")
                partner = ids.get((m2, side2, partner_start))
                if partner is None:
                    raise InvalidSurface(f"No partner run for vertical cylinder {m} {side} at {start}")
                segments.append(BoundarySegment(ids[(m, side, start)], m, side, start, length, partner, kind))
                new_class.setdefault(cls, (m, side, start))

    labels = {name: new_class[classes[key]] for name, key in surface.labels.items()}

    cylinders = tuple(Cylinder(lengths[m], cycles[m][0][2], Fraction(0)) for m in range(len(cycles)))
    result = validate(FlatSurface(cylinders, tuple(segments), dict(sorted(labels.items()))))
    logger.debug(f"rot: {len(surface.cylinders)} horizontal cylinders -> {len(cylinders)}")
    return result


# ---------------------------------------------------------------------------
# Half-turns and isomorphism
# ---------------------------------------------------------------------------

def flip_cylinder(surface: FlatSurface, j: int) -> FlatSurface:
    """The same surface described with cylinder j turned upside down (a half-turn of its chart)"""
    if not 0 <= j < len(surface.cylinders):
        raise OperationError(f"Cylinder index {j} out of range", code="index-out-of-range")
    circumference = surface.cylinders[j].circumference
    segments = []
    for seg in surface.segments:
        partner = surface.segments[seg.partner]
        touches = (seg.cylinder == j) != (partner.cylinder == j)
        kind = (FOLD if seg.kind == TRANSLATION else TRANSLATION) if touches else seg.kind
        if seg.cylinder == j:
            side = TOP if seg.side == BOTTOM else BOTTOM
            start = (-seg.start - seg.length) % circumference
            segments.append(replace(seg, side=side, start=start, kind=kind))
        else:
            segments.append(replace(seg, kind=kind))
    labels = {}
    for name, (k, side, position) in surface.labels.items():
        if k == j:
            labels[name] = (k, TOP if side == BOTTOM else BOTTOM, (-position) % circumference)
        else:
            labels[name] = (k, side, position)
    return FlatSurface(surface.cylinders, tuple(segments), labels)


def _frame_start(surface: FlatSurface, seg: BoundarySegment, flipped: bool, shift: Fraction) -> Tuple[str, Fraction]:
    """Side and start of a segment in a cylinder frame with zero twist, optionally turned upside down"""
    cyl = surface.cylinders[seg.cylinder]
    side, start = seg.side, seg.start
    if flipped:
        side = TOP if side == BOTTOM else BOTTOM
        start = -seg.start - seg.length
    if side == TOP:
        start += cyl.twist
    return side, (start + shift) % cyl.circumference


def _vertex_tags(surface: FlatSurface, labeled: bool) -> Dict[BreakpointKey, Any]:
    classes = vertex_classes(surface)
    sizes: Dict[int, int] = {}
    for cls in classes.values():
        sizes[cls] = sizes.get(cls, 0) + 1
    names: Dict[int, List[str]] = {}
    if labeled:
        for name, key in surface.labels.items():
            names.setdefault(classes[key], []).append(name)
    return {key: (sizes[cls], tuple(sorted(names.get(cls, [])))) for key, cls in classes.items()}


def _encode_from(surface: FlatSurface, tags, k0: int, flipped0: bool, shift0: Fraction) -> Tuple:
    frames = {k0: (flipped0, shift0)}
    order = [k0]
    entries = []
    idx = 0
    while idx < len(order):
        k = order[idx]
        flipped, shift = frames[k]
        rows = []
        for seg in surface.segments:
            if seg.cylinder != k:
                continue
            side, start = _frame_start(surface, seg, flipped, shift)
            rows.append((side, start, seg))
        for side, start, seg in sorted(rows, key=lambda row: (row[0], row[1])):
            partner = surface.segments[seg.partner]
            k2 = partner.cylinder
            if k2 not in frames:
                flipped2 = flipped ^ (seg.kind == FOLD)
                _, base = _frame_start(surface, partner, flipped2, Fraction(0))
                frames[k2] = (flipped2, (start - base) % surface.cylinders[k2].circumference)
                order.append(k2)
            flipped2, shift2 = frames[k2]
            kind = seg.kind
            if k2 != k and flipped != flipped2:
                kind = FOLD if kind == TRANSLATION else TRANSLATION
            side2, start2 = _frame_start(surface, partner, flipped2, shift2)
            corner = seg.start if not flipped else surface.end_of(seg)
            entries.append((order.index(k), side, start, seg.length, kind,
                            order.index(k2), side2, start2, tags[(k, seg.side, corner)]))
        idx += 1
    if len(order) != len(surface.cylinders):
        raise InvalidSurface("Surface is not connected")
    header = tuple((surface.cylinders[k].circumference, surface.cylinders[k].height) for k in order)
    return header, tuple(entries)


def canonical_form(surface: FlatSurface, labeled: bool = True) -> Tuple:
    """
    Invariant encoding of the diagram

    Two diagrams have equal canonical forms exactly when they differ by a
    relabeling of cylinders, rotations of circle coordinates, twists absorbed
    into the top coordinates and half-turns of individual cylinders.
    """
    tags = _vertex_tags(surface, labeled)
    best = None
    for k in range(len(surface.cylinders)):
        for flipped in (False, True):
            for seg in surface.segments:
                if seg.cylinder != k:
                    continue
                side, start = _frame_start(surface, seg, flipped, Fraction(0))
                if side != BOTTOM:
                    continue
                code = _encode_from(surface, tags, k, flipped, -start)
                if best is None or code < best:
                    best = code
    return best


def is_isomorphic(x: FlatSurface, y: FlatSurface, labeled: bool = True) -> bool:
    """Decide whether two diagrams describe the same half-translation surface"""
    if len(x.cylinders) != len(y.cylinders) or len(x.segments) != len(y.segments):
        return False
    if stratum(x) != stratum(y) or area_total(x) != area_total(y):
        return False
    return canonical_form(x, labeled) == canonical_form(y, labeled)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def to_json(surface: FlatSurface) -> Dict[str, Any]:
    return {
        "cylinders": [
            {"circ": format_rational(c.circumference), "height": format_rational(c.height), "twist": format_rational(c.twist)}
            for c in surface.cylinders
        ],
        "segments": [
            {"id": s.id, "circle": s.cylinder, "side": s.side, "start": format_rational(s.start),
             "len": format_rational(s.length), "partner": s.partner, "kind": s.kind}
            for s in surface.segments
        ],
        "labels": {
            name: {"circle": key[0], "side": key[1], "position": format_rational(key[2])}
            for name, key in sorted(surface.labels.items())
        },
    }


def from_json(data: Dict[str, Any]) -> FlatSurface:
    """Parse the JSON form of a surface and validate it"""
    try:
        cylinders = tuple(
            Cylinder(as_rational(c["circ"]), as_rational(c["height"]), as_rational(c.get("twist", "0")))
            for c in data["cylinders"]
        )
        segments = tuple(
            BoundarySegment(int(s["id"]), int(s["circle"]), s["side"], as_rational(s["start"]),
                            as_rational(s["len"]), int(s["partner"]), s["kind"])
            for s in sorted(data["segments"], key=lambda s: int(s["id"]))
        )
        labels = {
            name: (int(v["circle"]), v["side"], as_rational(v["position"]))
            for name, v in data.get("labels", {}).items()
        }
    except (KeyError, TypeError, ValueError, InvalidSpec) as e:
        raise InvalidSurface(f"Malformed surface JSON: {e}")
    return validate(FlatSurface(cylinders, segments, labels))
