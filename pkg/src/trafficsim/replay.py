"""Replay text format and the geometry sidecar for viewers.

One line per step:

    x y heading speed id,x y heading speed id,...;CCC...

Vehicle entries are comma separated and sorted by vehicle id; numbers render
as %.2f except heading (%.4f, radians); after the semicolon comes one color
character per lanelink in roadnet declaration order, r/y/g. Determinism
checks compare these bytes, so the format must never drift.
"""

from __future__ import annotations

COLOR_CHARS = "ryg"


def format_entry(x: float, y: float, heading: float, speed: float,
                 vid: str) -> str:
    return "%.2f %.2f %.4f %.2f %s" % (x, y, heading, speed, vid)


def format_record(entries, colors) -> str:
    """entries: iterable of (x, y, heading, speed, id) already id-sorted;
    colors: iterable of ints (0 red, 1 yellow, 2 green)."""
    body = ",".join(format_entry(*e) for e in entries)
    return body + ";" + "".join(COLOR_CHARS[c] for c in colors)


def parse_record(line: str):
    """Inverse of format_record, for audits and the viewer."""
    body, _, colors = line.rstrip("\n").partition(";")
    entries = []
    if body:
        for chunk in body.split(","):
            x, y, hd, sp, vid = chunk.split(" ")
            entries.append((float(x), float(y), float(hd), float(sp), vid))
    return entries, [COLOR_CHARS.index(ch) for ch in colors]


def roadnet_geometry(net) -> dict:
    """Static geometry document written once alongside a replay."""
    return {
        "lanes": [{"id": l.id, "points": [[x, y] for x, y in l.points],
                   "width": l.width}
                  for l in net.lanes.values()],
        "laneLinks": [{"id": ll.id,
                       "points": [[x, y] for x, y in ll.points]}
                      for ll in net.lane_link_order],
        "intersections": [{"id": it.id, "point": [it.point.x, it.point.y],
                           "virtual": it.virtual}
                          for it in net.intersections.values()],
    }
