"""Central numba configuration. Import this before anything that imports numba.

NUMBA_NUM_THREADS caps set_num_threads(); it must be raised before numba is first
imported or thread counts above the host core count are rejected. The determinism
contract is exercised at thread counts {1,2,4,8} regardless of how many cores the
host actually has, so reserve at least 8 slots.

The workqueue threading layer is fork-safe and has no version constraints, unlike
tbb/omp whose availability varies by host.
"""

import os

_min_slots = 8
_cur = os.environ.get("NUMBA_NUM_THREADS")
if _cur is None or int(_cur) < _min_slots:
    os.environ["NUMBA_NUM_THREADS"] = str(max(_min_slots, os.cpu_count() or 1))
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numba  # noqa: E402  (import after env setup is the point)


def set_threads(n: int) -> None:
    numba.set_num_threads(int(n))
