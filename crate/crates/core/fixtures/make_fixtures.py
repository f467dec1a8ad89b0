#!/usr/bin/env python3
"""Regenerates the bundled maps, the recorded-agent set and the golden dataset.

Run from this directory: python3 make_fixtures.py
Output is deterministic (fixed seed, no timestamps).
"""

import json
import math
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))
HALF_WIDTH = 1.75
LANE_GAP = 3.5


def r(x):
    return round(x, 6)


def pts(seq):
    return [[r(x), r(y)] for x, y in seq]


def offset(centerline, d):
    """Offsets a polyline by d along the left normal (vertex bisectors)."""
    out = []
    n = len(centerline)
    for i, (x, y) in enumerate(centerline):
        a = centerline[max(i - 1, 0)]
        b = centerline[min(i + 1, n - 1)]
        tx, ty = b[0] - a[0], b[1] - a[1]
        norm = math.hypot(tx, ty)
        nx, ny = -ty / norm, tx / norm
        out.append((x + d * nx, y + d * ny))
    return out


def straight(x0, y0, heading, length, step=10.0):
    count = max(1, int(math.ceil(length / step)))
    c, s = math.cos(heading), math.sin(heading)
    return [(x0 + c * length * k / count, y0 + s * length * k / count) for k in range(count + 1)]


def sinusoidal_turn(x0, y0, heading, length, sign, step=0.25):
    """Quarter turn whose curvature rises and falls as a half sine."""
    kp = sign * math.pi ** 2 / (4.0 * length)
    count = int(round(length / step))
    h = length / count
    out = [(x0, y0)]
    x, y, th = x0, y0, heading
    sub = 20
    for k in range(count):
        for j in range(sub):
            s = (k + (j + 0.5) / sub) * h
            th_mid = heading + kp * length / math.pi * (1 - math.cos(math.pi * s / length))
            x += math.cos(th_mid) * h / sub
            y += math.sin(th_mid) * h / sub
        out.append((x, y))
    return out


def lane(lid, centerline, lane_type="straight", successors=(), predecessors=(), left=None, right=None):
    lb = offset(centerline, HALF_WIDTH)
    rb = offset(centerline, -HALF_WIDTH)
    return {
        "id": lid,
        "centerline": pts(centerline),
        "left_boundary": pts(lb),
        "right_boundary": pts(rb),
        "lane_type": lane_type,
        "successors": list(successors),
        "predecessors": list(predecessors),
        "left_neighbor": left,
        "right_neighbor": right,
    }


def polygon(l):
    ring = l["left_boundary"] + list(reversed(l["right_boundary"]))
    # counter-clockwise orientation
    area = sum(a[0] * b[1] - b[0] * a[1] for a, b in zip(ring, ring[1:] + ring[:1]))
    return ring if area > 0 else list(reversed(ring))


def corridor():
    ys = {"L1": LANE_GAP, "L2": 0.0, "L3": -LANE_GAP}
    left = {"L1": None, "L2": "L1", "L3": "L2"}
    right = {"L1": "L2", "L2": "L3", "L3": None}
    lanes = [lane(k, straight(0.0, y, 0.0, 240.0), left=left[k], right=right[k]) for k, y in ys.items()]
    return {"lanes": lanes, "drivable_area": [polygon(l) for l in lanes]}


def junction():
    approach = 300.0
    ys = {"A": LANE_GAP, "B": 0.0, "C": -LANE_GAP}
    left = {"A": None, "B": "A", "C": "B"}
    right = {"A": "B", "B": "C", "C": None}
    lanes = []
    for k, y in ys.items():
        succ = [k + "2"] + (["LT"] if k == "A" else []) + (["RT"] if k == "C" else [])
        lanes.append(lane(k, straight(0.0, y, 0.0, approach), successors=succ, left=left[k], right=right[k]))
    for k, y in ys.items():
        l2 = left[k] + "2" if left[k] else None
        r2 = right[k] + "2" if right[k] else None
        lanes.append(lane(k + "2", straight(approach, y, 0.0, 150.0), predecessors=[k], left=l2, right=r2))
    lt = sinusoidal_turn(approach, ys["A"], 0.0, 60.0, 1.0)
    rt = sinusoidal_turn(approach, ys["C"], 0.0, 80.0, -1.0)
    lanes.append(lane("LT", lt, "left_turn", successors=["LX"], predecessors=["A"]))
    lanes.append(lane("RT", rt, "right_turn", successors=["RX"], predecessors=["C"]))
    lanes.append(lane("LX", straight(lt[-1][0], lt[-1][1], math.pi / 2, 120.0), predecessors=["LT"]))
    lanes.append(lane("RX", straight(rt[-1][0], rt[-1][1], -math.pi / 2, 120.0), predecessors=["RT"]))
    return {"lanes": lanes, "drivable_area": [polygon(l) for l in lanes]}


def scenario(map_path, agents, index, source):
    return {
        "map": {"path": map_path},
        "agents": agents,
        "metadata": {
            "seed": 0,
            "scenario_index": index,
            "generator_version": "fixture",
            "config": None,
            "originals_source": source,
            "stats": None,
        },
    }


def straight_track(aid, x0, y, v, steps=111, dt=0.1, policy="straight"):
    return {
        "id": aid,
        "kind": "original",
        "policy": policy,
        "samples": [[r(k * dt), r(x0 + v * k * dt), r(y), r(v), 0.0] for k in range(steps)],
    }


def originals(rng):
    """Lane followers on the junction's through lanes, one speed per lane."""
    speeds = {"A": (LANE_GAP, 9.0), "B": (0.0, 10.0), "C": (-LANE_GAP, 11.0)}
    counts = [rng.randint(20, 39) for _ in range(24)] + [rng.randint(41, 48) for _ in range(6)]
    rng.shuffle(counts)
    files = []
    for i, total in enumerate(counts):
        per_lane = [total // 3 + (1 if k < total % 3 else 0) for k in range(3)]
        agents = []
        for (name, (y, v)), n in zip(speeds.items(), per_lane):
            end = 450.0 - v * 11.0 - 5.0
            # n vehicles with at least 12 m between consecutive fronts
            slack = end - 12.0 * (n - 1)
            cuts = sorted(rng.uniform(0.0, slack) for _ in range(n))
            for k, c in enumerate(cuts):
                agents.append(straight_track(len(agents), c + 12.0 * k, y, v))
        files.append(scenario("../maps/junction.json", agents, i, "fixture"))
    return files


def golden():
    """Small hand-checkable dataset on the corridor."""
    a = scenario("../../maps/corridor3.json", [
        straight_track(0, 10.0, 0.0, 10.0, steps=40),
        straight_track(1, 60.0, LANE_GAP, 8.0, steps=40),
    ], 0, None)
    # two vehicles converging in one lane, and one drifting sideways
    converge = [
        straight_track(0, 20.0, -LANE_GAP, 10.0, steps=40),
        straight_track(1, 40.0, -LANE_GAP, 5.0, steps=40),
    ]
    swerve = {
        "id": 2,
        "kind": "generated",
        "policy": "lane_change",
        "samples": [
            [r(k * 0.1), r(100.0 + 9.0 * k * 0.1), r(0.25 * (k * 0.1) ** 2), 9.0, 0.0]
            for k in range(40)
        ],
    }
    b = scenario("../../maps/corridor3.json", converge + [swerve], 1, None)
    return [a, b]


def write(path, doc, indent=None):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f, indent=indent)
        f.write("\n")


def main():
    rng = random.Random(20240611)
    write(os.path.join(HERE, "maps", "corridor3.json"), corridor(), indent=1)
    write(os.path.join(HERE, "maps", "junction.json"), junction(), indent=1)
    for i, doc in enumerate(originals(rng)):
        write(os.path.join(HERE, "originals", f"recorded_{i:03}.json"), doc)
    for i, doc in enumerate(golden()):
        write(os.path.join(HERE, "golden", "data", f"scenario_{i:05}.json"), doc)


if __name__ == "__main__":
    main()
