"""Regenerate scenarios/table1: the canonical single-intersection scenario.

One signalized intersection, 300 m approaches, one lane per road, fixed-time
signals, straight flows from all four borders. One flow and config file per
volume in {100..500} veh/h; the roadnet is shared. Configs use dir "." so
they run from any working directory.

Signal timing gives the straight movements 45 s of a 112 s cycle: with no
turning demand in this scenario the protected-left phases are held at a 5 s
minimum, which keeps the approach capacity (about 640 veh/h at saturation
discharge) comfortably above the heaviest arrival rate swept here.
"""

import json
import os

from trafficsim.grid import (GridParams, build_config_document,
                             build_flow_document, build_grid_document)

VOLUMES = [100, 200, 300, 400, 500]
TIMING = GridParams(green_time=45.0, left_time=5.0)


def main():
    out = os.path.join(os.path.dirname(__file__), "..", "scenarios", "table1")
    out = os.path.normpath(out)
    os.makedirs(out, exist_ok=True)

    with open(os.path.join(out, "roadnet.json"), "w", encoding="utf-8") as f:
        json.dump(build_grid_document(1, 1, TIMING), f, indent=2)

    for v in VOLUMES:
        flow_name = f"flow_{v}.json"
        with open(os.path.join(out, flow_name), "w", encoding="utf-8") as f:
            json.dump(build_flow_document(1, 1, float(v)), f, indent=2)
        cfg = build_config_document(".", flow_file=flow_name)
        cfg["dir"] = "."
        with open(os.path.join(out, f"config_{v}.json"), "w",
                  encoding="utf-8") as f:
            json.dump(cfg, f, indent=2)

    print(f"wrote {out}: roadnet.json + "
          f"{', '.join(f'flow_{v}.json' for v in VOLUMES)}")


if __name__ == "__main__":
    main()
