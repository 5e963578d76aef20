"""Incremental translation of inner-log entries into the outer log."""
from __future__ import annotations

from typing import Callable, Iterable, Optional

from .core_model import HandoverCertificate, InnerLogEntry, OuterEntry, Transaction

ExVal = Callable[[Transaction], bool]


def always_valid(tx: Transaction) -> bool:
    return True


def reject_invalid_tag(tx: Transaction) -> bool:
    return not tx.payload.startswith(b"invalid")


EXVAL_PREDICATES: dict[str, ExVal] = {
    "always": always_valid,
    "reject_invalid_tag": reject_invalid_tag,
}


class SanitizerError(RuntimeError):
    """Out-of-order or wrong-epoch input; the consensus port must never cause this."""


class Sanitizer:
    """Single-consumer log sanitizer for one replica.

    Entries of the current epoch must arrive in contiguous position order.
    After :meth:`apply_handover` the epoch's entries past ``h`` are still
    accepted but never emitted; the first entry of the next epoch switches
    the sanitizer over, which is only legal once the prefix up to ``h`` was
    consumed.
    """

    def __init__(self, epoch: int, exval: ExVal = always_valid, *,
                 last_pos: int = 0, seen_ids: Iterable[bytes] = (), outer_next: int = 1) -> None:
        self.current_epoch = epoch
        self.last_pos = last_pos
        self.emit_cutoff: Optional[int] = None
        self.next_epoch: Optional[int] = None
        self.seen_ids: set[bytes] = set(seen_ids)
        self.outer_next = outer_next
        self.exval = exval

    @classmethod
    def from_snapshot(cls, epoch: int, position: int, outer: list[OuterEntry],
                      exval: ExVal = always_valid) -> "Sanitizer":
        return cls(epoch, exval, last_pos=position, seen_ids=(e.tx.id for e in outer),
                   outer_next=len(outer) + 1)

    def set_exval(self, predicate: ExVal) -> None:
        self.exval = predicate

    def apply_handover(self, cert: HandoverCertificate) -> None:
        if cert.old_epoch != self.current_epoch:
            raise SanitizerError(
                f"certificate ends epoch {cert.old_epoch}, sanitizer is in {self.current_epoch}")
        if self.emit_cutoff is not None and self.emit_cutoff != cert.h:
            raise SanitizerError("conflicting handover certificates for one epoch")
        self.emit_cutoff = cert.h
        self.next_epoch = cert.next_config.epoch

    @property
    def prefix_consumed(self) -> bool:
        return self.emit_cutoff is not None and self.last_pos >= self.emit_cutoff

    def ingest(self, entry: InnerLogEntry) -> list[OuterEntry]:
        if entry.epoch != self.current_epoch:
            if entry.epoch == self.next_epoch and entry.position == 1 and self.prefix_consumed:
                self.current_epoch = entry.epoch
                self.last_pos = 0
                self.emit_cutoff = None
                self.next_epoch = None
            else:
                raise SanitizerError(
                    f"entry from epoch {entry.epoch} while consuming epoch {self.current_epoch}")
        if entry.position != self.last_pos + 1:
            raise SanitizerError(
                f"expected position {self.last_pos + 1} of epoch {entry.epoch}, got {entry.position}")
        self.last_pos = entry.position
        tx = entry.content
        if not isinstance(tx, Transaction):
            return []
        if self.emit_cutoff is not None and entry.position > self.emit_cutoff:
            return []
        if tx.id in self.seen_ids or not self.exval(tx):
            return []
        self.seen_ids.add(tx.id)
        out = OuterEntry(self.outer_next, tx, (entry.epoch, entry.position))
        self.outer_next += 1
        return [out]


def export_outer_log(entries: Iterable[OuterEntry]) -> str:
    """Line-delimited export: outer position, tx id hex, source epoch, source position."""
    return "".join(e.export_line() + "\n" for e in entries)
