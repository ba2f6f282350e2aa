"""Scenario descriptions: what to simulate, under which network and
adversary.

Scenario files are TOML (nested key/value tables).  Top-level tables:

``[config]``    protocol, n_replicas, max_faults, batch_size,
                payload_bytes, checkpoint_interval, window, flood
                ("off", "all", or a subset size), probation_base
``[net]``       latency = "synthetic" | "flat" | "jitter",
                latency_ms, latency_low/high, drop_probability,
                bandwidth_mbps (0 disables the bandwidth model)
``[workload]``  clients_per_replica, requests_per_client, duration_ms
``[[partition]]``  a = [ids], b = [ids], at, heal
``[[adversary]]``  at, kind, replica, plus action parameters

Everything has a default, so ``{}`` is a valid scenario.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .core import FaultModel, SystemConfig
from .simnet import ADVERSARY_KINDS, AdversaryAction, Partition, ScenarioInvalid, action

PROTOCOL_MODELS = {
    "pbft": FaultModel.BFT,
    "dqpbft": FaultModel.BFT,
    "linhybster": FaultModel.HYBRID,
    "destiny": FaultModel.HYBRID,
}


def default_faults(protocol: str, n: int) -> int:
    if PROTOCOL_MODELS[protocol] is FaultModel.BFT:
        return max((n - 1) // 3, 0)
    return max((n - 1) // 2, 0)


@dataclass
class Scenario:
    protocol: str = "destiny"
    n_replicas: int = 3
    max_faults: Optional[int] = None
    batch_size: int = 4
    payload_bytes: int = 64
    checkpoint_interval: int = 64
    window: int = 256
    flood: Optional[int] = None  # None off, 0 all, k subset
    probation_base: int = 64

    latency: str = "flat"
    latency_ms: float = 10.0
    latency_low: float = 10.0
    latency_high: float = 120.0
    drop_probability: float = 0.0
    bandwidth_mbps: float = 0.0
    timing_scale: float = 1.0  # stretches every timeout; useful when the
    # bandwidth model adds queueing delay on top of link latency

    clients_per_replica: int = 1
    requests_per_client: int = 5
    duration_ms: float = 20_000.0
    client_adapt_after: int = 2  # timeouts before hedging and reassignment
    client_groups: list = field(default_factory=list)  # late-arriving load

    partitions: list = field(default_factory=list)  # dicts: a, b, at, heal
    adversary: list = field(default_factory=list)  # AdversaryAction
    label: str = "scenario"

    def __post_init__(self) -> None:
        if self.protocol not in PROTOCOL_MODELS:
            raise ScenarioInvalid(f"unknown protocol {self.protocol!r}")
        if self.max_faults is None:
            self.max_faults = default_faults(self.protocol, self.n_replicas)

    def system_config(self) -> SystemConfig:
        try:
            return SystemConfig(
                n_replicas=self.n_replicas,
                max_faults=self.max_faults,
                fault_model=PROTOCOL_MODELS[self.protocol],
                batch_size=self.batch_size,
                payload_bytes=self.payload_bytes,
                checkpoint_interval=self.checkpoint_interval,
                window=self.window,
                flood_subset=self.flood,
                probation_base=self.probation_base,
            )
        except ValueError as exc:
            raise ScenarioInvalid(str(exc)) from exc

    def validate(self) -> None:
        self.system_config()
        controlled = {a.replica for a in self.adversary}
        if len(controlled) > self.max_faults:
            raise ScenarioInvalid(
                f"adversary controls {len(controlled)} replicas, budget is f={self.max_faults}"
            )
        if any(r < 0 or r >= self.n_replicas for r in controlled):
            raise ScenarioInvalid("adversary action names an unknown replica")
        for part in self.partitions:
            for side in ("a", "b"):
                if not part.get(side):
                    raise ScenarioInvalid("partition sides must be non-empty")
        if self.drop_probability < 0 or self.drop_probability >= 1:
            raise ScenarioInvalid("drop_probability must be in [0, 1)")
        if self.clients_per_replica < 0 or self.requests_per_client < 0:
            raise ScenarioInvalid("workload sizes must be non-negative")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "config": {
                "protocol": self.protocol,
                "n_replicas": self.n_replicas,
                "max_faults": self.max_faults,
                "batch_size": self.batch_size,
                "payload_bytes": self.payload_bytes,
                "checkpoint_interval": self.checkpoint_interval,
                "window": self.window,
                "flood": "off" if self.flood is None else self.flood,
                "probation_base": self.probation_base,
            },
            "net": {
                "latency": self.latency,
                "latency_ms": self.latency_ms,
                "latency_low": self.latency_low,
                "latency_high": self.latency_high,
                "drop_probability": self.drop_probability,
                "bandwidth_mbps": self.bandwidth_mbps,
                "timing_scale": self.timing_scale,
            },
            "workload": {
                "clients_per_replica": self.clients_per_replica,
                "requests_per_client": self.requests_per_client,
                "duration_ms": self.duration_ms,
                "adapt_after": self.client_adapt_after,
                "groups": list(self.client_groups),
            },
            "partition": list(self.partitions),
            "adversary": [
                {"at": a.at, "kind": a.kind, "replica": a.replica, **dict(a.params)}
                for a in self.adversary
            ],
            "label": self.label,
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict, label: str = "scenario") -> "Scenario":
        cfg = dict(data.get("config", {}))
        net = dict(data.get("net", {}))
        wl = dict(data.get("workload", {}))
        flood = cfg.get("flood", "off")
        if flood == "off":
            flood = None
        elif flood == "all":
            flood = 0
        elif not isinstance(flood, int):
            raise ScenarioInvalid(f"flood must be 'off', 'all', or an integer, got {flood!r}")
        actions = []
        for item in data.get("adversary", []):
            item = dict(item)
            try:
                at = float(item.pop("at"))
                kind = item.pop("kind")
                replica = int(item.pop("replica"))
            except KeyError as exc:
                raise ScenarioInvalid(f"adversary action missing {exc}") from exc
            if kind not in ADVERSARY_KINDS:
                raise ScenarioInvalid(f"unknown adversary action {kind!r}")
            actions.append(action(at, kind, replica, **item))
        scenario = cls(
            protocol=cfg.get("protocol", "destiny"),
            n_replicas=int(cfg.get("n_replicas", 3)),
            max_faults=cfg.get("max_faults"),
            batch_size=int(cfg.get("batch_size", 4)),
            payload_bytes=int(cfg.get("payload_bytes", 64)),
            checkpoint_interval=int(cfg.get("checkpoint_interval", 64)),
            window=int(cfg.get("window", 256)),
            flood=flood,
            probation_base=int(cfg.get("probation_base", 64)),
            latency=net.get("latency", "flat"),
            latency_ms=float(net.get("latency_ms", 10.0)),
            latency_low=float(net.get("latency_low", 10.0)),
            latency_high=float(net.get("latency_high", 120.0)),
            drop_probability=float(net.get("drop_probability", 0.0)),
            bandwidth_mbps=float(net.get("bandwidth_mbps", 0.0)),
            timing_scale=float(net.get("timing_scale", 1.0)),
            clients_per_replica=int(wl.get("clients_per_replica", 1)),
            requests_per_client=int(wl.get("requests_per_client", 5)),
            duration_ms=float(wl.get("duration_ms", 20_000.0)),
            client_adapt_after=int(wl.get("adapt_after", 2)),
            client_groups=[dict(g) for g in wl.get("groups", [])],
            partitions=[dict(p) for p in data.get("partition", [])],
            adversary=actions,
            label=data.get("label", label),
        )
        scenario.validate()
        return scenario

    @classmethod
    def from_toml(cls, path) -> "Scenario":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data, label=str(path))

    def with_overrides(self, overrides: dict) -> "Scenario":
        data = self.to_dict()
        for dotted, value in overrides.items():
            parts = dotted.split(".")
            cursor = data
            for part in parts[:-1]:
                cursor = cursor.setdefault(part, {})
            cursor[parts[-1]] = value
        return Scenario.from_dict(data, label=self.label)

    def build_partitions(self) -> list:
        out = []
        for part in self.partitions:
            out.append(
                Partition(
                    frozenset(part["a"]),
                    frozenset(part["b"]),
                    float(part.get("at", 0.0)),
                    float(part.get("heal", float("inf"))),
                )
            )
        return out


def _jsonable(value):
    if isinstance(value, (frozenset, set, tuple)):
        return sorted(value) if isinstance(value, (frozenset, set)) else list(value)
    raise TypeError(f"not jsonable: {value!r}")
