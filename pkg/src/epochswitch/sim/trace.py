"""Trace records and their line-delimited serialization.

One JSON object per line.  Every event line starts with the fields
``i`` (index), ``t`` (simulated time), ``ev`` (event kind) and ``r`` (acting
replica ``"epoch:index"``, or ``"c:k"`` for clients); event-specific fields
follow in the order they were recorded.  The first line is the header
(``ev == "header"``) and the last one the footer (``ev == "footer"``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional, Union


def rname(key: tuple[int, int]) -> str:
    return f"c:{key[1]}" if key[0] == 0 else f"{key[0]}:{key[1]}"


def rkey(name: str) -> tuple[int, int]:
    a, b = name.split(":")
    return (0, int(b)) if a == "c" else (int(a), int(b))


@dataclass
class Trace:
    header: dict[str, Any] = field(default_factory=dict)
    events: list[dict[str, Any]] = field(default_factory=list)
    footer: dict[str, Any] = field(default_factory=dict)

    def record(self, t: int, ev: str, r: str, **fields: Any) -> int:
        i = len(self.events)
        rec = {"i": i, "t": t, "ev": ev, "r": r}
        rec.update(fields)
        self.events.append(rec)
        return i

    def of(self, *kinds: str) -> Iterator[dict[str, Any]]:
        ks = set(kinds)
        return (e for e in self.events if e["ev"] in ks)

    def lines(self) -> Iterator[str]:
        yield json.dumps({"ev": "header", **self.header}, separators=(",", ":"))
        for e in self.events:
            yield json.dumps(e, separators=(",", ":"))
        yield json.dumps({"ev": "footer", **self.footer}, separators=(",", ":"))

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path: Union[str, Path]) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line)
                fh.write("\n")

    @classmethod
    def loads(cls, text: str) -> "Trace":
        tr = cls()
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            ev = rec.get("ev")
            if ev == "header":
                rec.pop("ev")
                tr.header = rec
            elif ev == "footer":
                rec.pop("ev")
                tr.footer = rec
            else:
                tr.events.append(rec)
        return tr

    @classmethod
    def read(cls, path: Union[str, Path]) -> "Trace":
        return cls.loads(Path(path).read_text())

    def find(self, ev: str, **match: Any) -> Optional[dict[str, Any]]:
        for e in self.events:
            if e["ev"] == ev and all(e.get(k) == v for k, v in match.items()):
                return e
        return None
