"""
Surgery Module for the Staircase Retraction Probe
Scripted reductions of three-cylinder pillowcases to staircases by shears,
height changes and rotations, with invariant checks at every step
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

from errors import NonPeriodic, SurgeryError
from flat_surface import (
    BOTTOM, DEFAULT_MAX_STEPS, TOP, FlatSurface, StaircaseSpec, StratumSignature,
    area_total, build_row_polygon, check_invariants, format_rational,
    is_isomorphic, polydisk_act, rot, stratum, to_json,
)

logger = logging.getLogger(__name__)

SIX_POLES = StratumSignature((1, 1, -1, -1, -1, -1, -1, -1))

Row = Tuple[Fraction, Fraction, Fraction]


@dataclass
class SurgeryStep:
    """One recorded operation and the checks run on its result"""
    label: str
    operation: str  # start, shear, polydisk or rot
    params: Dict[str, Any]
    snapshot: FlatSurface
    checks: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        params = {}
        for key, value in self.params.items():
            if key == "lambda":
                params[key] = [format_rational(value[0]), format_rational(value[1])]
            else:
                params[key] = value
        checks = dict(self.checks)
        for key in ("area", "area_factor"):
            if key in checks:
                checks[key] = format_rational(checks[key])
        return {
            "label": self.label,
            "operation": self.operation,
            "params": params,
            "checks": checks,
            "surface": to_json(self.snapshot),
        }


@dataclass
class SurgeryTrace:
    kind: str
    steps: List[SurgeryStep] = field(default_factory=list)
    max_steps: int = DEFAULT_MAX_STEPS

    @property
    def result(self) -> FlatSurface:
        return self.steps[-1].snapshot

    @property
    def area_factor(self) -> Fraction:
        factor = Fraction(1)
        for step in self.steps[1:]:
            factor *= step.checks["area_factor"]
        return factor

    def record(self, label: str, operation: str, params: Dict[str, Any], snapshot: FlatSurface,
               expected_rows: Optional[Sequence[Row]] = None) -> SurgeryStep:
        """
        Append a step after checking the invariants of its result

        Raises:
            SurgeryError: the result is not a valid six-pole surface, the area changed
                by something other than the recorded scaling, or the result does not
                match the expected polygon double
        """
        invariants = check_invariants(snapshot)
        area = area_total(snapshot)
        signature = stratum(snapshot)
        checks: Dict[str, Any] = {"invariants": invariants, "area": area, "stratum": str(signature)}
        if self.steps:
            previous = self.steps[-1].snapshot
            checks["area_factor"] = area / area_total(previous)
            if operation == "polydisk":
                cyl = previous.cylinders[params["cylinder"]]
                expected_area = area_total(previous) + cyl.area * (params["lambda"][1] - 1)
                checks["area_consistent"] = area == expected_area
            else:
                checks["area_consistent"] = checks["area_factor"] == 1
        if expected_rows is not None:
            checks["matches_expected"] = is_isomorphic(snapshot, build_row_polygon(expected_rows), labeled=False)

        step = SurgeryStep(label, operation, params, snapshot, checks)
        self.steps.append(step)

        if not all(invariants.values()) or signature != SIX_POLES:
            raise SurgeryError(f"Step '{label}' broke the surface invariants: {invariants}, stratum {signature}",
                               details={"step": label})
        if not checks.get("area_consistent", True):
            raise SurgeryError(f"Step '{label}' changed the area unexpectedly", details={"step": label})
        if not checks.get("matches_expected", True):
            raise SurgeryError(f"Step '{label}' did not produce the expected polygon",
                               details={"step": label, "rows": [[format_rational(v) for v in row] for row in expected_rows]})
        logger.debug(f"[{self.kind}] {label}: {operation} {params} area={area}")
        return step

    def replay(self) -> FlatSurface:
        """Re-apply every recorded operation to the first snapshot"""
        surface = self.steps[0].snapshot
        for step in self.steps[1:]:
            surface = _apply(surface, step.operation, step.params, self.max_steps)
        return surface

    def to_json(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "area_factor": format_rational(self.area_factor),
            "steps": [step.to_dict() for step in self.steps],
        }


def _apply(surface: FlatSurface, operation: str, params: Dict[str, Any], max_steps: int) -> FlatSurface:
    if operation == "start":
        return surface
    if operation in ("shear", "polydisk"):
        return polydisk_act(surface, params["cylinder"], params["lambda"])
    if operation == "rot":
        try:
            return rot(surface, max_steps)
        except NonPeriodic as e:
            twists = [format_rational(c.twist) for c in surface.cylinders]
            raise SurgeryError(f"rot failed: {e}", code="rot-failed", details={"twists": twists})
    raise SurgeryError(f"Unknown surgery operation {operation!r}")


# ---------------------------------------------------------------------------
# Stack structure
# ---------------------------------------------------------------------------

def stack_order(surface: FlatSurface) -> List[int]:
    """Cylinder indices bottom to top when the cylinders form a chain"""
    n = len(surface.cylinders)
    neighbours = {j: set() for j in range(n)}
    for seg in surface.segments:
        k = surface.segments[seg.partner].cylinder
        if k != seg.cylinder:
            neighbours[seg.cylinder].add(k)
    if n == 1:
        return [0]
    ends = [j for j in range(n) if len(neighbours[j]) == 1]
    if len(ends) != 2 or any(len(nb) > 2 for nb in neighbours.values()):
        raise SurgeryError("Cylinders do not form a stack", code="not-a-stack")
    order = [min(ends)]
    while len(order) < n:
        following = [k for k in neighbours[order[-1]] if k not in order]
        if not following:
            raise SurgeryError("Cylinders do not form a stack", code="not-a-stack")
        order.append(following[0])
    return order


def stack_rows(surface: FlatSurface) -> List[Tuple[Fraction, Fraction]]:
    """(polygon width, height) of every cylinder in stack order"""
    return [(surface.cylinders[j].circumference / 2, surface.cylinders[j].height) for j in stack_order(surface)]


def classify_pillowcase(surface: FlatSurface) -> Optional[str]:
    """'a' for a monotone stack, 'b' for a narrow middle, 'c' for a wide middle, None otherwise"""
    try:
        rows = stack_rows(surface)
    except SurgeryError:
        return None
    if len(rows) != 3:
        return None
    w1, w2, w3 = (w for w, _ in rows)
    if w1 > w2 > w3 or w1 < w2 < w3:
        return "a"
    if w2 < w1 and w2 < w3:
        return "b"
    if w2 > w1 and w2 > w3:
        return "c"
    return None


def _left_aligned(rows: Sequence[Tuple[Fraction, Fraction]]) -> List[Row]:
    return [(Fraction(0), w, h) for w, h in rows]


def is_staircase(surface: FlatSurface) -> bool:
    """Three stacked cylinders of strictly monotone width forming a left-aligned staircase double"""
    try:
        rows = stack_rows(surface)
    except SurgeryError:
        return False
    if len(rows) != 3:
        return False
    if rows[0][0] < rows[-1][0]:
        rows = rows[::-1]
    if not rows[0][0] > rows[1][0] > rows[2][0]:
        return False
    if stratum(surface) != SIX_POLES:
        return False
    return is_isomorphic(surface, build_row_polygon(_left_aligned(rows)), labeled=False)


def staircase_dimensions(surface: FlatSurface) -> StaircaseSpec:
    """Read (a, b, c, p, q) off a staircase after scaling the bottom width to 1"""
    if not is_staircase(surface):
        raise SurgeryError("Surface is not a staircase", code="not-a-staircase")
    rows = stack_rows(surface)
    if rows[0][0] < rows[-1][0]:
        rows = rows[::-1]
    (w1, h1), (w2, h2), (w3, h3) = rows
    return StaircaseSpec(h1 / w1, h2 / w1, h3 / w1, w3 / w1, (w2 - w3) / w1)


# ---------------------------------------------------------------------------
# Shear solving
# ---------------------------------------------------------------------------

def _offset_multiset(circumference: Fraction, bottoms: List[Fraction], tops: List[Fraction], twist: Fraction) -> List[Fraction]:
    return sorted((t + twist - b) % circumference for b in bottoms for t in tops)


def solve_shear(surface: FlatSurface, j: int, target: FlatSurface) -> Fraction:
    """
    Twist of cylinder j that makes the surface isomorphic to `target`

    Candidates align one top breakpoint of j with a target top breakpoint while a
    bottom breakpoint is aligned with a target bottom breakpoint; the smallest
    candidate that passes the isomorphism test is returned.

    Raises:
        SurgeryError: no twist of cylinder j works ("shear-unsolved")
    """
    cyl = surface.cylinders[j]
    bottoms, tops = surface.breakpoints(j, BOTTOM), surface.breakpoints(j, TOP)
    candidates = set()
    for k, other in enumerate(target.cylinders):
        if other.circumference != cyl.circumference or other.height != cyl.height:
            continue
        target_bottoms, target_tops = target.breakpoints(k, BOTTOM), target.breakpoints(k, TOP)
        pattern = _offset_multiset(other.circumference, target_bottoms, target_tops, other.twist)
        for b in bottoms:
            for t in tops:
                for b2 in target_bottoms:
                    for t2 in target_tops:
                        twist = (t2 - t + other.twist - b2 + b) % cyl.circumference
                        if twist in candidates:
                            continue
                        if _offset_multiset(cyl.circumference, bottoms, tops, twist) == pattern:
                            candidates.add(twist)
    for twist in sorted(candidates):
        trial = polydisk_act(surface, j, ((twist - cyl.twist) / cyl.height, 1))
        if is_isomorphic(trial, target, labeled=False):
            return twist
    raise SurgeryError(f"No twist of cylinder {j} reaches the target polygon", code="shear-unsolved",
                       details={"cylinder": j, "candidates": len(candidates)})


class _Reduction:
    """Drives one scripted reduction and records it"""

    def __init__(self, kind: str, surface: FlatSurface, max_steps: int):
        self.trace = SurgeryTrace(kind, max_steps=max_steps)
        self.trace.record("start", "start", {}, surface)

    @property
    def surface(self) -> FlatSurface:
        return self.trace.result

    def apply(self, label: str, operation: str, params: Dict[str, Any], expected_rows=None) -> FlatSurface:
        result = _apply(self.surface, operation, params, self.trace.max_steps)
        self.trace.record(label, operation, params, result, expected_rows)
        logger.info(f"[{self.trace.kind}] {label}")
        return result

    def rot(self, label: str, expected_rows: Sequence[Row]) -> FlatSurface:
        return self.apply(label, "rot", {}, expected_rows)

    def align(self, label: str, target_rows: Sequence[Row]) -> FlatSurface:
        """Shear a single cylinder so the surface becomes the double of `target_rows`"""
        target = build_row_polygon(target_rows)
        order = stack_order(self.surface)
        if is_isomorphic(self.surface, target, labeled=False):
            return self.apply(label, "shear", {"cylinder": order[1], "lambda": (Fraction(0), Fraction(1))}, target_rows)
        for j in [order[1], order[0], order[2]]:
            try:
                twist = solve_shear(self.surface, j, target)
            except SurgeryError:
                continue
            cyl = self.surface.cylinders[j]
            return self.apply(label, "shear", {"cylinder": j, "lambda": ((twist - cyl.twist) / cyl.height, Fraction(1))},
                              target_rows)
        raise SurgeryError(f"Step '{label}': no single shear reaches the target polygon", code="shear-unsolved",
                           details={"step": label})

    def order_heights(self, label: str, rows: List[Row]) -> List[Row]:
        """Stretch the middle and top cylinders by integers until h1 < h2 < h3"""
        order = stack_order(self.surface)
        rows = list(rows)
        changed = False
        for position in (1, 2):
            left, width, height = rows[position]
            below = rows[position - 1][2]
            if height <= below:
                factor = Fraction(below // height + 1)
                rows[position] = (left, width, height * factor)
                self.apply(f"{label} (cylinder {position + 1} x{factor})", "polydisk",
                           {"cylinder": order[position], "lambda": (Fraction(0), factor)}, rows)
                changed = True
        if not changed:
            self.apply(f"{label} (already ordered)", "polydisk", {"cylinder": order[1], "lambda": (Fraction(0), Fraction(1))}, rows)
        return rows

    def finish(self) -> Tuple[FlatSurface, SurgeryTrace]:
        if not is_staircase(self.surface):
            raise SurgeryError(f"[{self.trace.kind}] reduction did not end at a staircase")
        logger.info(f"[{self.trace.kind}] reduced to staircase in {len(self.trace.steps)} steps, "
                    f"area factor {self.trace.area_factor}")
        return self.surface, self.trace


def _input_rows(surface: FlatSurface, kind: str) -> List[Row]:
    code = f"not-type-{kind}"
    if classify_pillowcase(surface) != kind:
        raise SurgeryError(f"Surface is not a type-({kind}) pillowcase", code=code)
    rows = _left_aligned(stack_rows(surface))
    if not is_isomorphic(surface, build_row_polygon(rows), labeled=False):
        raise SurgeryError(f"Surface is not the left-aligned type-({kind}) pillowcase double", code=code)
    return rows


def reduce_pillow_b(surface: FlatSurface, max_steps: int = DEFAULT_MAX_STEPS) -> Tuple[FlatSurface, SurgeryTrace]:
    """
    Reduce a pillowcase with a narrow middle row to a staircase

    Returns:
        (staircase, trace); the staircase is the last snapshot of the trace
    """
    rows = _input_rows(surface, "b")
    (_, w1, h1), (_, w2, h2), (_, w3, h3) = rows
    delta = w1 - w2
    run = _Reduction("b", surface, max_steps)

    rows = [(Fraction(0), w1, h1), (delta, w2, h2), (delta, w3, h3)]
    run.align("shear into Z shape", rows)

    rows = run.order_heights("order heights", rows)
    h1, h2, h3 = (h for _, _, h in rows)
    total = h1 + h2 + h3

    run.rot("rotate", [(Fraction(0), h1, delta), (Fraction(0), total, w2), (h1 + h2, h3, w3 - w2)])
    run.align("left-align rotated rows", [(Fraction(0), h1, delta), (Fraction(0), total, w2), (Fraction(0), h3, w3 - w2)])
    run.rot("rotate back", [(Fraction(0), delta + w3, h1), (delta, w3, h3 - h1), (delta, w2, h1 + h2)])
    run.align("shear into staircase", [(Fraction(0), delta + w3, h1), (Fraction(0), w3, h3 - h1), (Fraction(0), w2, h1 + h2)])
    return run.finish()


def reduce_pillow_c(surface: FlatSurface, max_steps: int = DEFAULT_MAX_STEPS) -> Tuple[FlatSurface, SurgeryTrace]:
    """
    Reduce a pillowcase with a wide middle row to a staircase

    Unequal outer widths need a single rotation; equal outer widths go through
    the three-vertical-cylinder construction, widening nothing when the middle
    overhang is already narrower than the outer rows.
    """
    rows = _input_rows(surface, "c")
    (_, w1, h1), (_, w2, h2), (_, w3, h3) = rows
    run = _Reduction("c", surface, max_steps)
    zero = Fraction(0)

    if w1 != w3:
        total = h1 + h2 + h3
        if w1 < w3:
            rotated = [(zero, total, w1), (h1, h2 + h3, w3 - w1), (h1, h2, w2 - w3)]
        else:
            rotated = [(zero, total, w3), (zero, h1 + h2, w1 - w3), (h1, h2, w2 - w1)]
        run.rot("rotate", rotated)
        run.align("shear into staircase", [(zero, w, h) for _, w, h in rotated])
        return run.finish()

    w = w1
    d = w2 - w
    if d >= w:
        run.rot("rotate to vertical cylinders", [(zero, h1 + h2 + h3, w), (h1, h2, d)])
        narrow = [j for j, c in enumerate(run.surface.cylinders) if c.circumference == 2 * h2 and c.height == d]
        if len(narrow) != 1:
            raise SurgeryError("Cannot identify the overhang cylinder", code="not-type-c")
        run.apply("shorten overhang cylinder", "polydisk", {"cylinder": narrow[0], "lambda": (zero, (w / 2) / d)},
                  [(zero, h1 + h2 + h3, w), (h1, h2, w / 2)])
        run.rot("rotate back", None)
        d = w / 2
        run.align("restore left-aligned pillowcase", [(zero, w, h1), (zero, w + d, h2), (zero, w, h3)])
        rows = _left_aligned(stack_rows(run.surface))
        (_, _, h1), (_, w2, h2), (_, _, h3) = rows

    rows = [(d, w, h1), (zero, w2, h2), (zero, w, h3)]
    run.align("shear out third vertical cylinder", rows)

    rows = run.order_heights("order heights", rows)
    h1, h2, h3 = (h for _, _, h in rows)
    total = h1 + h2 + h3

    run.rot("rotate", [(h1, h2 + h3, d), (zero, total, w - d), (zero, h1 + h2, d)])
    run.align("left-align rotated rows", [(zero, h2 + h3, d), (zero, total, w - d), (zero, h1 + h2, d)])
    run.rot("rotate back", [(zero, w2, h1 + h2), (zero, w, h3 - h1), (d, w - d, h1)])
    run.align("shear into staircase", [(zero, w2, h1 + h2), (zero, w, h3 - h1), (zero, w - d, h1)])
    return run.finish()


def reduce_pillowcase(surface: FlatSurface, max_steps: int = DEFAULT_MAX_STEPS) -> Tuple[FlatSurface, SurgeryTrace]:
    kind = classify_pillowcase(surface)
    if kind == "b":
        return reduce_pillow_b(surface, max_steps)
    if kind == "c":
        return reduce_pillow_c(surface, max_steps)
    raise SurgeryError(f"No scripted reduction for pattern {kind!r}", code="not-a-pillowcase")
