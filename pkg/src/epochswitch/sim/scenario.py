"""Scenario model and the YAML scenario file format (``scenario_version: 1``).

Top-level keys::

    scenario_version: 1          # required
    name: str
    seed: int                    # required
    horizon: int                 # simulated ticks
    delay: {min: int, max: int}  # uniform per-message link latency
    params: {vc_timeout, noop_timeout, resubmit_timeout, sync_timeout, liveness_slack}
    signature_scheme: mock | ed25519
    exval: always | reject_invalid_tag
    exval_overrides: {"<epoch>:<index>": predicate}   # misconfiguration controls
    allow_over_threshold: bool
    epochs:                      # first entry is the genesis epoch
      - {epoch: int, members: [int, ...], f: int,
         fault_model: crash | byzantine, consensus: sequencer | multilane}
    workload: {clients, interval, start, stop, invalid_every}
    schedule:                    # timed events, any order
      - {at: int, kind: epoch_change, target: <epoch>}
      - {at: int, kind: crash | silent | equivocate_done | tamper_sync, replica: "e:i"}
      - {at: int, kind: delay_lane, epoch: int, lane: int, extra: int}
      - {at: int, kind: delay_link, src: "e:i" | "e:*", dst: "e:i" | "e:*", extra: int,
         message: <message class name, optional>}
      - {at: int, kind: client_tx, payload: str, client: int, target: "e:i", resubmit: bool}
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from ..core_model import (
    ConsensusKind,
    EpochConfig,
    FaultModel,
    ReplicaId,
    SigningKey,
    validate_epoch_config,
)
from ..sanitizer import EXVAL_PREDICATES

SUPPORTED_VERSIONS = (1,)
FAULT_KINDS = ("crash", "silent", "equivocate_done", "tamper_sync")
EVENT_KINDS = FAULT_KINDS + ("epoch_change", "delay_lane", "delay_link", "client_tx")


class ScenarioError(ValueError):
    def __init__(self, message: str, field: str = "", line: Optional[int] = None) -> None:
        self.field = field
        self.line = line
        where = ""
        if field:
            where += f" [field {field}"
            where += f", line {line}]" if line is not None else "]"
        super().__init__(message + where)


@dataclass(frozen=True)
class EpochSpec:
    epoch: int
    members: tuple[int, ...]
    f: int
    fault_model: FaultModel
    consensus: ConsensusKind


@dataclass(frozen=True)
class Event:
    at: int
    kind: str
    args: dict[str, Any]


@dataclass(frozen=True)
class Workload:
    clients: int = 2
    interval: int = 40
    start: int = 10
    stop: int = 0
    invalid_every: int = 0


@dataclass(frozen=True)
class Params:
    vc_timeout: int = 300
    noop_timeout: int = 150
    resubmit_timeout: int = 800
    sync_timeout: int = 200
    liveness_slack: Optional[int] = None


@dataclass(frozen=True)
class Scenario:
    seed: int
    epochs: tuple[EpochSpec, ...]
    schedule: tuple[Event, ...] = ()
    horizon: int = 20000
    min_delay: int = 5
    max_delay: int = 15
    name: str = "scenario"
    params: Params = field(default_factory=Params)
    workload: Optional[Workload] = None
    exval: str = "always"
    exval_overrides: tuple[tuple[str, str], ...] = ()
    signature_scheme: str = "mock"
    allow_over_threshold: bool = False
    version: int = 1

    def epoch(self, e: int) -> EpochSpec:
        for s in self.epochs:
            if s.epoch == e:
                return s
        raise KeyError(e)

    def replica_keys(self) -> list[tuple[int, int]]:
        return [(s.epoch, m) for s in self.epochs for m in s.members]

    def signing_key(self, key: tuple[int, int]) -> SigningKey:
        return SigningKey.derive(self.seed.to_bytes(8, "big", signed=True),
                                 f"{key[0]}:{key[1]}", self.signature_scheme)

    def configs(self) -> dict[int, EpochConfig]:
        out = {}
        for s in self.epochs:
            members = tuple(ReplicaId(s.epoch, m, self.signing_key((s.epoch, m)).public_key)
                            for m in s.members)
            out[s.epoch] = EpochConfig(s.epoch, members, s.f, s.fault_model, s.consensus)
        return out

    def faulty(self) -> dict[tuple[int, int], str]:
        out: dict[tuple[int, int], str] = {}
        for ev in self.schedule:
            if ev.kind in FAULT_KINDS:
                out.setdefault(parse_replica(ev.args["replica"]), ev.kind)
        return out

    def over_threshold(self) -> bool:
        counts: dict[int, int] = {}
        for key in self.faulty():
            counts[key[0]] = counts.get(key[0], 0) + 1
        return any(c > self.epoch(e).f for e, c in counts.items())

    def liveness_slack(self, log_length: int) -> int:
        """Default: 10 x mean link latency x log length."""
        if self.params.liveness_slack is not None:
            return self.params.liveness_slack
        mean = (self.min_delay + self.max_delay) / 2
        return int(10 * mean * max(1, log_length))

    def validate(self) -> None:
        if not self.epochs:
            raise ScenarioError("at least one epoch required", "epochs")
        seen = set()
        prev = 0
        for i, s in enumerate(self.epochs):
            if s.epoch in seen:
                raise ScenarioError(f"duplicate epoch {s.epoch}", f"epochs[{i}].epoch")
            if s.epoch <= prev:
                raise ScenarioError("epoch ids must increase", f"epochs[{i}].epoch")
            prev = s.epoch
            seen.add(s.epoch)
        for s, (e, cfg) in zip(self.epochs, self.configs().items()):
            why = validate_epoch_config(cfg)
            if why is not None:
                raise ScenarioError(f"epoch {e}: {why}", f"epochs[{self.epochs.index(s)}]")
        if self.min_delay < 1 or self.max_delay < self.min_delay:
            raise ScenarioError("need 1 <= delay.min <= delay.max", "delay")
        if self.exval not in EXVAL_PREDICATES:
            raise ScenarioError(f"unknown predicate {self.exval!r}", "exval")
        keys = set(self.replica_keys())
        for name, pred in self.exval_overrides:
            if _replica_or_none(name) not in keys:
                raise ScenarioError(f"unknown replica {name}", "exval_overrides")
            if pred not in EXVAL_PREDICATES:
                raise ScenarioError(f"unknown predicate {pred!r}", "exval_overrides")
        last = 0
        for j, ev in enumerate(self.schedule):
            fld = f"schedule[{j}]"
            last = max(last, ev.at)
            if ev.kind in FAULT_KINDS:
                if _replica_or_none(ev.args["replica"]) not in keys:
                    raise ScenarioError(f"unknown replica {ev.args['replica']}", fld + ".replica")
            elif ev.kind == "epoch_change":
                if ev.args["target"] not in seen or ev.args["target"] == self.epochs[0].epoch:
                    raise ScenarioError(f"bad target epoch {ev.args['target']}", fld + ".target")
            elif ev.kind == "delay_lane":
                e = ev.args["epoch"]
                if e not in seen or not 0 <= ev.args["lane"] < len(self.epoch(e).members):
                    raise ScenarioError("unknown epoch or lane", fld)
            elif ev.kind == "delay_link":
                for side in ("src", "dst"):
                    e, _, i = str(ev.args[side]).partition(":")
                    ok = e.isdigit() and int(e) in seen and (
                        i == "*" or (i.isdigit() and (int(e), int(i)) in keys))
                    if not ok:
                        raise ScenarioError(f"unknown replica {ev.args[side]}", f"{fld}.{side}")
            elif ev.kind == "client_tx":
                t = ev.args.get("target")
                if t is not None and _replica_or_none(t) not in keys:
                    raise ScenarioError(f"unknown replica {t}", fld + ".target")
        if self.horizon <= last:
            raise ScenarioError("horizon must exceed the last scheduled event", "horizon")
        if self.over_threshold() and not self.allow_over_threshold:
            raise ScenarioError("more faults than f in an epoch; set allow_over_threshold",
                                "schedule")


def parse_replica(s: str) -> tuple[int, int]:
    a, _, b = str(s).partition(":")
    if not (a.isdigit() and b.isdigit()):
        raise ScenarioError(f"replica must look like 'epoch:index', got {s!r}")
    return int(a), int(b)


def _replica_or_none(s: str) -> Optional[tuple[int, int]]:
    try:
        return parse_replica(s)
    except ScenarioError:
        return None


# -- file parsing -------------------------------------------------------------------


def _lines(node: yaml.Node, path: tuple, out: dict[tuple, int]) -> None:
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            _lines(v, path + (k.value,), out)
            out.setdefault(path + (k.value,), k.start_mark.line + 1)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _lines(v, path + (i,), out)


def _dotted(path: tuple) -> str:
    s = ""
    for p in path:
        s += f"[{p}]" if isinstance(p, int) else (f".{p}" if s else str(p))
    return s


class _Reader:
    def __init__(self, data: dict, lines: dict[tuple, int]) -> None:
        self.data = data
        self.lines = lines

    def fail(self, msg: str, path: tuple) -> ScenarioError:
        line = None
        p = path
        while p and line is None:
            line = self.lines.get(p)
            p = p[:-1]
        return ScenarioError(msg, _dotted(path), line if line is not None else self.lines.get(()))

    def get(self, obj: Any, path: tuple, key: str, typ: type, default: Any = ...) -> Any:
        if not isinstance(obj, dict):
            raise self.fail("expected a mapping", path)
        if key not in obj:
            if default is ...:
                raise self.fail(f"{key} required", path + (key,))
            return default
        v = obj[key]
        if typ is int and (isinstance(v, bool) or not isinstance(v, int)):
            raise self.fail(f"{key} must be an integer", path + (key,))
        if typ is str and not isinstance(v, (str, int)):
            raise self.fail(f"{key} must be a string", path + (key,))
        if typ is bool and not isinstance(v, bool):
            raise self.fail(f"{key} must be true/false", path + (key,))
        if typ in (list, dict) and not isinstance(v, typ):
            raise self.fail(f"{key} must be a {typ.__name__}", path + (key,))
        return str(v) if typ is str else v


_FM = {"crash": FaultModel.CRASH, "byzantine": FaultModel.BYZANTINE}
_CK = {"sequencer": ConsensusKind.SEQUENCER, "multilane": ConsensusKind.MULTILANE}


def scenario_from_text(text: str, source: str = "<scenario>") -> Scenario:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"{source}: malformed YAML: {exc}", "",
                            mark.line + 1 if mark else None) from None
    if not isinstance(data, dict) or node is None:
        raise ScenarioError(f"{source}: top level must be a mapping", "", 1)
    lines: dict[tuple, int] = {}
    _lines(node, (), lines)
    rd = _Reader(data, lines)
    version = rd.get(data, (), "scenario_version", int)
    if version not in SUPPORTED_VERSIONS:
        raise ScenarioError(f"unsupported scenario_version {version}", "scenario_version",
                            lines.get(("scenario_version",)))
    seed = rd.get(data, (), "seed", int)
    if seed is None:
        raise rd.fail("seed required", ("seed",))
    delay = rd.get(data, (), "delay", dict, {})
    epochs = []
    for i, e in enumerate(rd.get(data, (), "epochs", list)):
        p = ("epochs", i)
        fm = rd.get(e, p, "fault_model", str)
        ck = rd.get(e, p, "consensus", str)
        if fm not in _FM:
            raise rd.fail(f"fault_model must be one of {sorted(_FM)}", p + ("fault_model",))
        if ck not in _CK:
            raise rd.fail(f"consensus must be one of {sorted(_CK)}", p + ("consensus",))
        members = rd.get(e, p, "members", list)
        if not all(isinstance(m, int) and not isinstance(m, bool) for m in members):
            raise rd.fail("members must be integers", p + ("members",))
        epochs.append(EpochSpec(rd.get(e, p, "epoch", int), tuple(members),
                                rd.get(e, p, "f", int), _FM[fm], _CK[ck]))
    schedule = []
    for j, ev in enumerate(rd.get(data, (), "schedule", list, [])):
        p = ("schedule", j)
        at = rd.get(ev, p, "at", int)
        kind = rd.get(ev, p, "kind", str)
        if kind not in EVENT_KINDS:
            raise rd.fail(f"unknown event kind {kind!r}", p + ("kind",))
        args: dict[str, Any] = {}
        if kind in FAULT_KINDS:
            args["replica"] = rd.get(ev, p, "replica", str)
        elif kind == "epoch_change":
            args["target"] = rd.get(ev, p, "target", int)
        elif kind == "delay_lane":
            args.update(epoch=rd.get(ev, p, "epoch", int), lane=rd.get(ev, p, "lane", int),
                        extra=rd.get(ev, p, "extra", int))
        elif kind == "delay_link":
            args.update(src=rd.get(ev, p, "src", str), dst=rd.get(ev, p, "dst", str),
                        extra=rd.get(ev, p, "extra", int),
                        message=rd.get(ev, p, "message", str, None))
        elif kind == "client_tx":
            args.update(payload=rd.get(ev, p, "payload", str),
                        client=rd.get(ev, p, "client", int, 1),
                        target=rd.get(ev, p, "target", str, None),
                        resubmit=rd.get(ev, p, "resubmit", bool, True))
        schedule.append(Event(at, kind, args))
    wl = rd.get(data, (), "workload", dict, None)
    workload = None
    if wl is not None:
        p = ("workload",)
        workload = Workload(rd.get(wl, p, "clients", int, 2), rd.get(wl, p, "interval", int, 40),
                            rd.get(wl, p, "start", int, 10), rd.get(wl, p, "stop", int, 0),
                            rd.get(wl, p, "invalid_every", int, 0))
    pr = rd.get(data, (), "params", dict, {})
    d = Params()
    params = Params(
        rd.get(pr, ("params",), "vc_timeout", int, d.vc_timeout),
        rd.get(pr, ("params",), "noop_timeout", int, d.noop_timeout),
        rd.get(pr, ("params",), "resubmit_timeout", int, d.resubmit_timeout),
        rd.get(pr, ("params",), "sync_timeout", int, d.sync_timeout),
        rd.get(pr, ("params",), "liveness_slack", int, d.liveness_slack),
    )
    overrides = rd.get(data, (), "exval_overrides", dict, {})
    sc = Scenario(
        seed=seed,
        epochs=tuple(epochs),
        schedule=tuple(schedule),
        horizon=rd.get(data, (), "horizon", int, 20000),
        min_delay=rd.get(delay, ("delay",), "min", int, 5),
        max_delay=rd.get(delay, ("delay",), "max", int, 15),
        name=rd.get(data, (), "name", str, "scenario"),
        params=params,
        workload=workload,
        exval=rd.get(data, (), "exval", str, "always"),
        exval_overrides=tuple(sorted((str(k), str(v)) for k, v in overrides.items())),
        signature_scheme=rd.get(data, (), "signature_scheme", str, "mock"),
        allow_over_threshold=rd.get(data, (), "allow_over_threshold", bool, False),
        version=version,
    )
    try:
        sc.validate()
    except ScenarioError as exc:
        if exc.line is None and exc.field:
            path: tuple = ()
            for part in exc.field.replace("]", "").replace("[", ".").split("."):
                if part:
                    path += (int(part),) if part.isdigit() else (part,)
            raise rd.fail(str(exc).split(" [field")[0], path) from None
        raise
    return sc


def parse_scenario(path: Union[str, Path]) -> Scenario:
    p = Path(path)
    return scenario_from_text(p.read_text(), str(p))
