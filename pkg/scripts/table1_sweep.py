"""Run the canonical single-intersection scenario across arrival volumes.

Steps each config in scenarios/table1 for an hour of simulated time and
prints average travel time per volume, plus the free-flow traversal time of
one vehicle on the empty network for reference.
"""

import argparse
import json
import os
import tempfile

from trafficsim.config import EngineConfig
from trafficsim.engine import Engine

VOLUMES = [100, 200, 300, 400, 500]


def free_flow_time(scen_dir):
    """Traversal time of the straight flow's vehicle, alone on the network."""
    flow = json.load(open(os.path.join(scen_dir, f"flow_{VOLUMES[0]}.json")))
    with tempfile.NamedTemporaryFile("w", suffix=".json",
                                     delete=False) as tmp:
        json.dump([], tmp)
    try:
        cfg = EngineConfig(
            roadnet_file=os.path.join(scen_dir, "roadnet.json"),
            flow_file=tmp.name)
        eng = Engine(cfg)
        eng.push_vehicle(flow[0]["vehicle"], flow[0]["route"], lane=0)
        while eng.stats["finished"] < 1:
            eng.next_step()
        att = eng.get_average_travel_time()
        eng.close()
    finally:
        os.unlink(tmp.name)
    return att


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=3600,
                    help="steps per run (default one simulated hour)")
    args = ap.parse_args()

    here = os.path.dirname(os.path.abspath(__file__))
    scen = os.path.normpath(os.path.join(here, "..", "scenarios", "table1"))

    ff = free_flow_time(scen)
    print(f"free-flow traversal: {ff:.2f} s")
    print(f"{'volume':>8} {'ATT':>8} {'finished':>9} {'active':>7}")

    prev = None
    for vol in VOLUMES:
        eng = Engine(os.path.join(scen, f"config_{vol}.json"))
        for _ in range(args.steps):
            eng.next_step()
        att = eng.get_average_travel_time()
        fin = eng.stats["finished"]
        act = eng.get_vehicle_count()
        mark = ""
        if prev is not None and att < prev:
            mark = "  (decreased)"
        prev = att
        print(f"{vol:>8} {att:>8.2f} {fin:>9} {act:>7}{mark}")
        eng.close()


if __name__ == "__main__":
    main()
