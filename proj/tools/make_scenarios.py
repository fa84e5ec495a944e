#!/usr/bin/env python3
"""Regenerates the bundled scenario files in scenarios/."""

import json
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "scenarios"

MAIN_PROGRAM = [("green", 45), ("amber", 3), ("red", 42)]
CROSS_PROGRAM = [("red", 48), ("green", 39), ("amber", 3)]

ASSUMPTIONS = [
    "signal programs are fixed 90 s cycles (main 45 green / 3 amber / 42 red), not field timings",
    "traffic volumes are calibrated to the published vehicle counts, not measured",
    "cross streets are modeled as approach links that end at the intersection",
]


class Builder:
    def __init__(self, name, description):
        self.doc = {
            "meta": {"name": name, "description": description, "assumptions": list(ASSUMPTIONS)},
            "links": [], "connectors": [], "signals": [], "stop_signs": [],
            "inputs": [], "routes": [], "eval_nodes": [],
        }

    def link(self, lid, length, lanes, limit, kind="urban"):
        self.doc["links"].append({"id": lid, "length": length, "lanes": lanes, "speed_limit": limit, "kind": kind})
        return lid

    def connect(self, a, la, b, lb):
        self.doc["connectors"].append({"from": {"link": a, "lane": la}, "to": {"link": b, "lane": lb}})

    def chain(self, a, b, lanes, shift=0):
        for lane in range(lanes):
            self.connect(a, lane, b, lane + shift)

    def route(self, rid, links):
        self.doc["routes"].append({"id": rid, "links": links})
        return rid

    def flow(self, link, rate, shares):
        self.doc["inputs"].append({
            "link": link, "rate": rate,
            "routes": [{"route": r, "probability": p} for r, p in shares],
            "human_speed_factor": {"mean": 0.95, "half_width": 0.095},
        })

    def signal(self, sid, offset, groups):
        self.doc["signals"].append({
            "id": sid, "offset": offset, "assumed": True,
            "groups": [
                {"id": gid, "program": [{"state": s, "duration": d} for s, d in program],
                 "heads": [{"link": l, "position": pos} for l, pos in heads]}
                for gid, program, heads in groups
            ],
        })

    def stop(self, sid, link, position):
        self.doc["stop_signs"].append({"id": sid, "link": link, "position": position})

    def node(self, nid, approaches, capture):
        self.doc["eval_nodes"].append({
            "id": nid, "capture_length": capture,
            "approaches": [{"link": l, "stop_position": p} for l, p in approaches],
        })

    def lengths(self):
        return {l["id"]: l["length"] for l in self.doc["links"]}

    def write(self, filename):
        OUT.mkdir(exist_ok=True)
        (OUT / filename).write_text(json.dumps(self.doc, indent=2) + "\n")


def intersection(b, sid, approach, position, offset, cross_rate, cross_len=300.0, cross_limit=11.2, sides=("n", "s")):
    heads = []
    for side in sides:
        c = b.link(f"{sid}_cross_{side}", cross_len, 1, cross_limit)
        b.flow(c, cross_rate, [(b.route(f"{sid}_cross_{side}", [c]), 1.0)])
        heads.append((c, cross_len))
    b.signal(sid, offset, [("main", MAIN_PROGRAM, [(approach, position)]), ("cross", CROSS_PROGRAM, heads)])
    return heads


def route19():
    b = Builder("route19", "Urban arterial with 5 signals joining a freeway with an on-ramp merge; 7.0 km main route")
    urban = [b.link(f"u{i}", 600.0, 2, 13.4) for i in range(1, 6)]
    for a, c in zip(urban, urban[1:]):
        b.chain(a, c, 2)
    f1 = b.link("f1", 1500.0, 2, 29.0, "freeway")
    f2 = b.link("f2_merge", 500.0, 3, 29.0, "freeway")
    f3 = b.link("f3", 2000.0, 2, 29.0, "freeway")
    ramp = b.link("ramp", 400.0, 1, 20.0, "freeway")
    b.chain(urban[-1], f1, 2)
    b.chain(f1, f2, 2, shift=1)
    b.connect(ramp, 0, f2, 0)
    b.connect(f2, 1, f3, 0)
    b.connect(f2, 2, f3, 1)
    main = b.route("main", urban + [f1, f2, f3])
    b.flow(urban[0], 1400.0, [(main, 1.0)])
    b.flow(ramp, 800.0, [(b.route("ramp", [ramp, f2, f3]), 1.0)])
    node = None
    for i, u in enumerate(urban, start=1):
        heads = intersection(b, f"s{i}", u, 600.0, (i - 1) * 17.0 % 90.0, 180.0)
        if i == 3:
            node = [(u, 600.0)] + heads
    b.node("signal_3", node, 250.0)
    b.write("route19.json")
    return b


def route15():
    b = Builder("route15", "Urban corridor with 14 signals; 7.4 km main route")
    links = [b.link(f"m{i}", 500.0, 2, 15.6) for i in range(1, 15)] + [b.link("m15", 400.0, 2, 15.6)]
    for a, c in zip(links, links[1:]):
        b.chain(a, c, 2)
    main = b.route("main", links)
    b.flow(links[0], 800.0, [(main, 1.0)])
    node = None
    for i, m in enumerate(links[:14], start=1):
        heads = intersection(b, f"s{i}", m, 500.0, (i - 1) * 29.0 % 90.0, 45.0, sides=("n",))
        if i == 7:
            node = [(m, 500.0)] + heads
    b.node("signal_7", node, 250.0)
    b.write("route15.json")
    return b


def us33():
    b = Builder("us33", "Two-lane freeway with an on-ramp/off-ramp weaving section; 30.3 km main route")
    f1 = b.link("f1", 10000.0, 2, 29.0, "freeway")
    weave = b.link("weave", 400.0, 3, 29.0, "freeway")
    f3 = b.link("f3", 19900.0, 2, 29.0, "freeway")
    on = b.link("on_ramp", 300.0, 1, 20.0, "freeway")
    off = b.link("off_ramp", 300.0, 1, 20.0, "freeway")
    b.chain(f1, weave, 2, shift=1)
    b.connect(on, 0, weave, 0)
    b.connect(weave, 1, f3, 0)
    b.connect(weave, 2, f3, 1)
    b.connect(weave, 0, off, 0)
    through = b.route("main", [f1, weave, f3])
    leave = b.route("exit", [f1, weave, off])
    b.flow(f1, 1900.0, [(through, 0.9), (leave, 0.1)])
    b.flow(on, 280.0, [(b.route("on_ramp", [on, weave, f3]), 1.0)])
    b.node("weave", [(f1, 10000.0), (on, 300.0), (weave, 400.0)], 250.0)
    b.write("us33.json")
    return b


def cosi():
    b = Builder("cosi", "4.5 km urban loop with single-lane segments, 3 signals and stop-controlled side streets")
    lanes = [2, 2, 1, 1, 2, 2, 1, 2, 2]
    links = [b.link(f"l{i}", 500.0, n, 11.2) for i, n in enumerate(lanes, start=1)]
    for a, c, na, nc in zip(links, links[1:], lanes, lanes[1:]):
        for lane in range(min(na, nc)):
            b.connect(a, lane, c, lane)
    main = b.route("loop", links)
    b.flow(links[0], 1400.0, [(main, 1.0)])
    node = None
    for k, idx in enumerate((1, 4, 7)):
        heads = intersection(b, f"s{k + 1}", links[idx], 500.0, k * 31.0, 100.0, cross_len=250.0)
        if k == 1:
            node = [(links[idx], 500.0)] + heads
    for k in range(3):
        side = b.link(f"side{k + 1}", 200.0, 1, 8.9)
        b.flow(side, 137.0, [(b.route(f"side{k + 1}", [side]), 1.0)])
        b.stop(f"stop{k + 1}", side, 198.0)
    b.node("signal_2", node, 250.0)
    b.write("cosi.json")
    return b


def sweep_specs():
    for name in ("route19", "route15", "us33", "cosi"):
        (OUT / f"sweep_{name}.json").write_text(json.dumps({"scenarios": [f"{name}.json"]}, indent=2) + "\n")
    (OUT / "sweep_all.json").write_text(json.dumps(
        {"scenarios": ["route19.json", "route15.json", "us33.json", "cosi.json"]}, indent=2) + "\n")


if __name__ == "__main__":
    for build in (route19, route15, us33, cosi):
        b = build()
        lengths = b.lengths()
        main = b.doc["routes"][0]
        print(f"{b.doc['meta']['name']}: main route {sum(lengths[l] for l in main['links']):.0f} m, "
              f"{len(b.doc['signals'])} signals, demand {sum(i['rate'] for i in b.doc['inputs']):.0f} veh/h")
    sweep_specs()
