"""JSON Lines rollout logs: one header line, then one record per decision step."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .env import EnvState, StepResult
from .geometry import WorldMap

REQUIRED_HEADER = ("variant", "seed", "map")
RECORD_KEYS = ("episode", "step", "hider", "seeker", "action", "reward", "S", "H", "O", "done")


class ReplayError(ValueError):
    pass


@dataclass
class RolloutLog:
    """Decision-step records plus a header.

    ``header["map"]`` is the shared map, or None when each episode draws its own;
    per-episode maps then live in ``header["episode_maps"]`` keyed by episode
    index (as a string, since it goes through JSON).
    """

    header: dict
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def world_for(self, episode: int) -> WorldMap:
        if self.header.get("map") is not None:
            return WorldMap.from_dict(self.header["map"])
        return WorldMap.from_dict(self.header["episode_maps"][str(episode)])

    def episodes(self) -> list[list[dict]]:
        """Records grouped into episodes, in log order."""
        out: list[list[dict]] = []
        current = None
        for rec in self.records:
            if rec["episode"] != current:
                out.append([])
                current = rec["episode"]
            out[-1].append(rec)
        return out


def make_record(episode: int, state: EnvState, action: int, res: StepResult) -> dict:
    """Record of the state reached after one decision step."""
    h, s = state.hider, state.seeker
    return {
        "episode": episode,
        "step": state.decision_step - 1,
        "hider": {"pos": [h.x, h.y], "heading": h.heading, "speed": h.speed},
        "seeker": {"pos": [s.x, s.y], "heading": s.heading, "mode": state.seeker_memory.mode},
        "action": int(action),
        "reward": float(res.reward),
        "S": bool(res.visual.S),
        "H": bool(res.visual.H),
        "O": bool(res.visual.O),
        "done": bool(res.done),
        "caught": bool(res.caught),
    }


def write_replay(log: RolloutLog, path) -> Path:
    for key in REQUIRED_HEADER:
        if key not in log.header:
            raise ReplayError(f"header is missing {key!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "header", **log.header}, sort_keys=True) + "\n")
        for rec in log.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    tmp.replace(path)
    return path


def read_replay(path, expect: Optional[dict] = None) -> RolloutLog:
    """Parse a log file. ``expect`` optionally pins header fields (e.g. variant, seed)."""
    path = Path(path)
    header = None
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.endswith("\n"):
                raise ReplayError(f"{path}:{lineno}: truncated line")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReplayError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ReplayError(f"{path}:{lineno}: expected an object")
            if header is None:
                if obj.pop("type", None) != "header":
                    raise ReplayError(f"{path}:{lineno}: first line must be the header")
                for key in REQUIRED_HEADER:
                    if key not in obj:
                        raise ReplayError(f"{path}:{lineno}: header is missing {key!r}")
                header = obj
                continue
            missing = [k for k in RECORD_KEYS if k not in obj]
            if missing:
                raise ReplayError(f"{path}:{lineno}: record is missing {missing}")
            records.append(obj)
    if header is None:
        raise ReplayError(f"{path}:1: empty log")
    for key, value in (expect or {}).items():
        if header.get(key) != value:
            raise ReplayError(f"{path}:1: header {key}={header.get(key)!r}, expected {value!r}")
    return RolloutLog(header, records)
