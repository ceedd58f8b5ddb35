#!/usr/bin/env python
"""
Test script for the flat surface model
Checks constructors, the polydisk action, vertical tracing and rot on exact diagrams
"""

import json
import logging
import math
import os
import random
import sys
from fractions import Fraction

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

from errors import InvalidSpec, InvalidSurface, NonPeriodic, OperationError
from flat_surface import (
    FOLD, TOP, StaircaseSpec, StratumSignature, area_total, build_pillowcase,
    build_rect_marked, build_row_polygon, build_staircase, check_invariants,
    flip_cylinder, from_json, is_isomorphic, label_angles, polydisk_act, rot,
    set_twist, shear, stratum, to_json, trace_vertical,
)

logging.basicConfig(level=logging.INFO, format='%(levelname)s: %(message)s')
logger = logging.getLogger(__name__)

F = Fraction
STAIRCASE = StaircaseSpec(1, 1, 1, F(1, 4), F(1, 4))
SIX_POLES = StratumSignature((1, 1, -1, -1, -1, -1, -1, -1))


def test_staircase_shape():
    surface = build_staircase(StaircaseSpec(2, 1, 1, F(1, 4), F(1, 2)))
    assert [c.circumference for c in surface.cylinders] == [2, F(3, 2), F(1, 2)]
    assert [c.height for c in surface.cylinders] == [2, 1, 1]
    assert all(c.twist == 0 for c in surface.cylinders)
    assert stratum(surface) == SIX_POLES
    angles = label_angles(surface)
    assert angles["Q1"] == 3 and angles["Q2"] == 3
    assert all(angles[f"P{i}"] == 1 for i in range(1, 7))
    assert all(check_invariants(surface).values())


def test_staircase_area():
    surface = build_staircase(STAIRCASE)
    assert area_total(surface) == F(7, 2)
    assert stratum(surface) == SIX_POLES
    assert stratum(surface).total == -4


def test_rect_marked():
    rect = build_rect_marked(1, F(1, 3), F(1, 3))
    assert len(rect.cylinders) == 1
    assert rect.cylinders[0].circumference == 2 and rect.cylinders[0].height == 1
    assert stratum(rect) == StratumSignature((0, 0, -1, -1, -1, -1))
    angles = label_angles(rect)
    assert angles["P3"] == 2 and angles["P4"] == 2
    assert rect == build_staircase(StaircaseSpec(1, 0, 0, F(1, 3), F(1, 3)))


def test_rect_marked_top_arcs():
    rect = build_rect_marked(2, F(1, 4), F(1, 2))
    top = rect.circle(0, TOP)
    assert all(seg.kind == FOLD for seg in top)
    folded = sorted(seg.length + rect.segments[seg.partner].length for seg in top if seg.id < seg.partner)
    assert folded == [F(1, 2), F(1, 2), 1]


def test_invalid_staircase():
    for bad in [(0, 1, 1, F(1, 4), F(1, 4)), (1, -1, 1, F(1, 4), F(1, 4)), (1, 1, 1, F(1, 2), F(1, 2))]:
        try:
            build_staircase(StaircaseSpec(*bad))
        except InvalidSpec as e:
            assert e.code == "invalid-spec"
        else:
            raise AssertionError(f"{bad} was accepted")


def test_pillowcase_patterns():
    pillow_b = build_pillowcase("b", (1, F(1, 2), F(3, 4)), (1, 1, 1))
    assert stratum(pillow_b) == SIX_POLES
    assert area_total(pillow_b) == F(9, 2)
    pillow_c = build_pillowcase("c", (1, F(3, 2), 1), (1, 1, 1))
    assert stratum(pillow_c) == SIX_POLES
    try:
        build_pillowcase("b", (1, 1, F(3, 4)), (1, 1, 1))
    except InvalidSpec as e:
        assert e.code == "invalid-dims"
    else:
        raise AssertionError("equal widths accepted as type b")


def test_polydisk_identity_and_dehn_twist():
    surface = build_staircase(STAIRCASE)
    assert polydisk_act(surface, 1, 1j) == surface
    cyl = surface.cylinders[1]
    assert polydisk_act(surface, 1, (cyl.circumference / cyl.height, 1)) == surface
    assert set_twist(surface, 2, 0) == surface


def test_polydisk_area():
    surface = build_staircase(STAIRCASE)
    stretched = polydisk_act(surface, 0, 2j)
    assert area_total(stretched) == F(11, 2)
    sheared = shear(surface, 1, F(1, 7))
    assert area_total(sheared) == area_total(surface)
    assert sheared.cylinders[1].twist == F(1, 7)
    tripled = surface
    for j in range(len(surface.cylinders)):
        tripled = polydisk_act(tripled, j, 3j)
    assert area_total(tripled) == 3 * area_total(surface)


def test_polydisk_errors():
    surface = build_staircase(STAIRCASE)
    try:
        polydisk_act(surface, 5, 1j)
    except OperationError as e:
        assert e.code == "index-out-of-range"
    else:
        raise AssertionError("bad index accepted")
    try:
        polydisk_act(surface, 0, (1, 0))
    except OperationError as e:
        assert e.code == "nonpositive-imaginary-part"
    else:
        raise AssertionError("Im 0 accepted")


def test_trace_staircase():
    surface = build_staircase(STAIRCASE)
    decomposition = trace_vertical(surface)
    assert len(decomposition.cylinders) == 3
    assert sorted(decomposition.widths()) == [F(1, 4), F(1, 4), F(1, 2)]
    assert sorted(decomposition.lengths()) == [2, 4, 6]
    assert decomposition.area == area_total(surface)


def test_trace_pillowcases():
    pillow_c = build_pillowcase("c", (1, F(3, 2), 1), (1, 1, 1))
    decomposition = trace_vertical(pillow_c)
    assert len(decomposition.cylinders) == 2
    assert sorted(decomposition.lengths()) == [2, 6]
    pillow_b = build_pillowcase("b", (1, F(1, 2), F(3, 4)), (1, 1, 1))
    decomposition = trace_vertical(pillow_b)
    assert len(decomposition.cylinders) == 3
    assert decomposition.area == area_total(pillow_b)


def test_trace_step_bound():
    surface = shear(build_staircase(STAIRCASE), 0, F(1, 1000003))
    try:
        trace_vertical(surface, max_steps=10)
    except NonPeriodic as e:
        assert e.code == "vertical-not-periodic"
    else:
        raise AssertionError("bounded trace finished")


def test_rot_staircase():
    surface = build_staircase(StaircaseSpec(2, 1, 1, F(1, 4), F(1, 4)))
    rotated = rot(surface)
    assert len(rotated.cylinders) == 3
    assert sorted(c.circumference for c in rotated.cylinders) == [4, 6, 8]
    assert sorted(c.height for c in rotated.cylinders) == [F(1, 4), F(1, 4), F(1, 2)]
    assert area_total(rotated) == area_total(surface)
    assert stratum(rotated) == SIX_POLES
    assert set(rotated.labels) == set(surface.labels)
    assert label_angles(rotated) == label_angles(surface)


def test_rot_rect_marked():
    rect = build_rect_marked(1, F(1, 3), F(1, 4))
    rotated = rot(rect)
    assert [c.circumference for c in rotated.cylinders] == [2, 2, 2]
    assert sorted(c.height for c in rotated.cylinders) == [F(1, 4), F(1, 3), F(5, 12)]
    assert stratum(rotated) == stratum(rect)


def test_rot_involution():
    surface = build_staircase(STAIRCASE)
    assert is_isomorphic(rot(rot(surface)), surface)
    sheared = shear(surface, 1, F(1, 8))
    assert is_isomorphic(rot(rot(sheared)), sheared)


def test_isomorphism():
    surface = build_staircase(STAIRCASE)
    assert is_isomorphic(surface, flip_cylinder(surface, 1))
    assert is_isomorphic(surface, flip_cylinder(flip_cylinder(surface, 0), 2))
    other = build_staircase(StaircaseSpec(1, 1, 1, F(1, 4), F(1, 3)))
    assert not is_isomorphic(surface, other)
    assert not is_isomorphic(surface, shear(surface, 1, F(1, 8)))
    # a left-aligned polygon and its mirror image describe the same surface
    mirrored = build_row_polygon([(0, 1, 1), (F(3, 4), F(1, 4), 1)])
    aligned = build_row_polygon([(0, 1, 1), (0, F(1, 4), 1)])
    assert is_isomorphic(mirrored, aligned, labeled=False)


def test_json_round_trip():
    surface = shear(build_staircase(StaircaseSpec(2, 1, 1, F(1, 4), F(1, 2))), 1, F(1, 3))
    text = json.dumps(to_json(surface), sort_keys=True)
    assert from_json(json.loads(text)) == surface
    data = to_json(surface)
    assert data["cylinders"][1]["twist"] == "1/3"
    assert data["cylinders"][0]["height"] == "2/1"


def test_json_rejects_broken_gluing():
    data = to_json(build_staircase(STAIRCASE))
    data["segments"][0]["partner"] = 0
    try:
        from_json(data)
    except InvalidSurface as e:
        assert e.code == "invalid-surface"
    else:
        raise AssertionError("self-glued segment accepted")


UNIT = F(1, 8)
TARGET_HEIGHTS = (F(1, 4), F(1, 2), F(3, 4), F(1))
# rot is skipped above this total circumference so the vertical tracing stays small
CIRCUMFERENCE_CAP = 32


def _starting_surfaces():
    return [
        build_staircase(STAIRCASE),
        build_pillowcase("b", (1, F(1, 2), F(3, 4)), (1, 1, 1)),
        build_pillowcase("c", (1, F(3, 2), 1), (1, 1, 1)),
    ]


def _random_step(rng, surface):
    """One random polydisk, shear, set_twist or rot step; checks the law of the operation"""
    j = rng.randrange(len(surface.cylinders))
    cyl = surface.cylinders[j]
    choice = rng.random()
    if choice < 0.3:
        lam = (F(rng.randint(-1, 1)), rng.choice(TARGET_HEIGHTS) / cyl.height)
        result = polydisk_act(surface, j, lam)
        assert area_total(result) == area_total(surface) + cyl.area * (lam[1] - 1)
        assert result.cylinders[j].height == cyl.height * lam[1]
    elif choice < 0.55:
        amount = rng.randint(-8, 8) * UNIT
        result = shear(surface, j, amount)
        assert result.cylinders[j].twist == (cyl.twist + amount) % cyl.circumference
        assert area_total(result) == area_total(surface)
    elif choice < 0.75:
        slots = max(1, math.floor(cyl.circumference / UNIT))
        twist = rng.randrange(slots) * UNIT
        result = set_twist(surface, j, twist)
        assert result.cylinders[j].twist == twist
        assert area_total(result) == area_total(surface)
    else:
        if sum(c.circumference for c in surface.cylinders) > CIRCUMFERENCE_CAP:
            return rng.choice(_starting_surfaces())
        result = rot(surface)
        assert area_total(result) == area_total(surface)
        return result
    others = [c for k, c in enumerate(result.cylinders) if k != j]
    assert others == [c for k, c in enumerate(surface.cylinders) if k != j]
    return result


def test_random_operation_sequences():
    for seed in (20240611, 7, 1234, 99991):
        rng = random.Random(seed)
        surface = rng.choice(_starting_surfaces())
        for step in range(200):
            surface = _random_step(rng, surface)
            assert all(check_invariants(surface).values()), f"seed {seed} step {step}"
            assert stratum(surface) == SIX_POLES, f"seed {seed} step {step}"
            if step % 50 == 49 and sum(c.circumference for c in surface.cylinders) <= CIRCUMFERENCE_CAP:
                assert is_isomorphic(rot(rot(surface)), surface), f"seed {seed} step {step}"


def main():
    """Run every test and report"""
    print("=== FLAT SURFACE TESTS ===")
    tests = [(name, func) for name, func in globals().items() if name.startswith("test_") and callable(func)]
    failed = 0
    for name, func in tests:
        try:
            func()
            print(f"✅ {name}")
        except Exception as e:
            failed += 1
            logger.error(f"{name} failed: {e}", exc_info=True)
            print(f"❌ {name}")
    print(f"\n=== {len(tests) - failed}/{len(tests)} PASSED ===")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
