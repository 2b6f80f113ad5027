"""Engine configuration: dataclass form plus the JSON file loader.

File keys follow the external convention (interval, dir, roadnetFile, ...);
paths in the file are taken relative to `dir`.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

from .constants import SEGMENT_LENGTH, YELLOW_TIME
from .errors import ConfigError, ParseError


@dataclass
class EngineConfig:
    roadnet_file: str
    flow_file: str
    step_interval: float = 1.0
    threads: int = 1
    seed: int = 0
    rl_traffic_light: bool = True     # signals move only via set_tl_phase
    lane_change: bool = False
    save_replay: bool = False
    replay_file: Optional[str] = None
    roadnet_log_file: Optional[str] = None
    segment_length: float = SEGMENT_LENGTH
    yellow_time: float = YELLOW_TIME

    def __post_init__(self):
        if self.step_interval <= 0:
            raise ConfigError(f"interval must be positive, got {self.step_interval}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.segment_length <= 0:
            raise ConfigError("segmentLength must be positive")
        if self.yellow_time < 0:
            raise ConfigError("yellowTime must be non-negative")


def load_config(path: str) -> EngineConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path=path, line=e.lineno, col=e.colno) from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be an object")
    for key in ("roadnetFile", "flowFile"):
        if key not in doc:
            raise ConfigError(f"{path}: missing required field {key!r}")
    base = doc.get("dir", "")
    if base and not os.path.isabs(base):
        base = os.path.join(os.path.dirname(os.path.abspath(path)), base)

    def resolve(name):
        return os.path.join(base, name) if name else None

    save_replay = bool(doc.get("saveReplay", False))
    return EngineConfig(
        roadnet_file=resolve(doc["roadnetFile"]),
        flow_file=resolve(doc["flowFile"]),
        step_interval=float(doc.get("interval", 1.0)),
        threads=int(doc.get("threads", 1)),
        seed=int(doc.get("seed", 0)),
        rl_traffic_light=bool(doc.get("rlTrafficLight", True)),
        lane_change=bool(doc.get("laneChange", False)),
        save_replay=save_replay,
        replay_file=resolve(doc.get("replayLogFile", "replay.txt"))
        if save_replay else None,
        roadnet_log_file=resolve(doc.get("roadnetLogFile", "roadnet.log.json"))
        if save_replay else None,
        segment_length=float(doc.get("segmentLength", SEGMENT_LENGTH)),
        yellow_time=float(doc.get("yellowTime", YELLOW_TIME)),
    )
