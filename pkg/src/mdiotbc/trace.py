"""Message-trace recording for protocol sessions.

Each line is one protocol message (or annotation):
{trial?, phase, direction, round?, message_type, payload_hex, bits}.
Payloads are bit strings serialized per the package-wide hex convention;
``bits`` is the exact bit length (hex pads the tail).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gf2 import bits_to_hex


@dataclass
class TraceRecorder:
    trial: Optional[int] = None
    lines: list[dict] = field(default_factory=list)

    def message(self, phase: str, direction: str, message_type: str,
                bits: Optional[np.ndarray] = None, round_index: Optional[int] = None) -> None:
        payload = bits if bits is not None else np.zeros(0, dtype=np.uint8)
        line: dict = {
            "phase": phase,
            "direction": direction,
            "message_type": message_type,
            "payload_hex": bits_to_hex(np.asarray(payload, dtype=np.uint8)),
            "bits": int(len(payload)),
        }
        if round_index is not None:
            line["round"] = int(round_index)
        if self.trial is not None:
            line["trial"] = int(self.trial)
        self.lines.append(line)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(line, sort_keys=True, separators=(",", ":")) + "\n"
                       for line in self.lines)
