"""Capacity-bounded exemplar memory with per-domain buckets.

Maintenance re-partitions capacity exactly: after t domains the quotas are
floor(|M|/t) or ceil(|M|/t), with the larger quotas going to the lower
domain ids, so any two bucket sizes differ by at most one.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError
from .datagen import LabeledSet
from .seeding import substream

log = logging.getLogger(__name__)


def quotas(capacity: int, t: int) -> list[int]:
    base, extra = divmod(capacity, t)
    return [base + 1 if i < extra else base for i in range(t)]


@dataclass
class MemoryBank:
    capacity: int
    buckets: dict[int, LabeledSet] = field(default_factory=dict)
    t_seen: int = 0
    shortfalls: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity < 1:
            raise ContractError("capacity must be >= 1")

    def sizes(self) -> dict[int, int]:
        return {i: len(b) for i, b in self.buckets.items()}

    def total(self) -> int:
        return sum(len(b) for b in self.buckets.values())

    def update_after_domain(self, current: LabeledSet, t: int, seed: int) -> None:
        """Shrink old buckets to their new quotas (uniform eviction) and fill
        bucket t from `current` (uniform draw without replacement)."""
        if t != self.t_seen + 1:
            raise ContractError(
                f"update_after_domain expects t={self.t_seen + 1}, got {t}")
        q = quotas(self.capacity, t)
        rng = substream(seed, "membank", t)
        for i in range(1, t):
            bucket = self.buckets[i]
            want = q[i - 1]
            if len(bucket) > want:
                keep = np.sort(rng.choice(len(bucket), size=want, replace=False))
                self.buckets[i] = bucket.subset(keep)
        want_t = q[t - 1]
        if len(current) < want_t:
            self.shortfalls[t] = want_t - len(current)
            log.warning("domain %d supplies %d exemplars, quota %d",
                        t, len(current), want_t)
            take = np.arange(len(current))
        else:
            take = np.sort(rng.choice(len(current), size=want_t, replace=False))
        self.buckets[t] = current.subset(take, domain_id=t)
        self.t_seen = t

    def sample_past(self, per_domain_batch: int,
                    rng: np.random.Generator) -> dict[int, LabeledSet]:
        """Uniform without-replacement minibatch from every stored bucket."""
        out: dict[int, LabeledSet] = {}
        for i in sorted(self.buckets):
            bucket = self.buckets[i]
            k = min(per_domain_batch, len(bucket))
            idx = rng.choice(len(bucket), size=k, replace=False)
            out[i] = bucket.subset(idx)
        return out

    # -- optional persistence ------------------------------------------
    def to_json(self) -> str:
        payload = {
            "capacity": self.capacity,
            "t_seen": self.t_seen,
            "shortfalls": {str(k): v for k, v in self.shortfalls.items()},
            "buckets": {
                str(i): {"x": b.x.tolist(), "y": b.y.tolist(),
                         "dim": b.x.shape[1]}
                for i, b in self.buckets.items()
            },
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MemoryBank":
        payload = json.loads(text)
        bank = cls(capacity=payload["capacity"])
        bank.t_seen = payload["t_seen"]
        bank.shortfalls = {int(k): v for k, v in payload["shortfalls"].items()}
        bank.buckets = {
            int(i): LabeledSet(np.array(d["x"], dtype=np.float64).reshape(
                                   len(d["y"]), d["dim"]),
                               np.array(d["y"], dtype=np.int64),
                               domain_id=int(i))
            for i, d in payload["buckets"].items()
        }
        return bank
