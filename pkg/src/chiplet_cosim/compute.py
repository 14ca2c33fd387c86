"""Per-segment compute evaluation behind a pluggable backend interface.

A backend takes one segment and the chiplet it runs on and returns latency
(integer ns), energy and average power. Results must depend only on those two
inputs so the coordinator can evaluate them in any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class ComputeResult:
    latency: int
    energy: float
    avg_power: float


class AnalyticalBackend:
    """Latency = MACs / sustained throughput, energy = MACs x energy per MAC.

    ``overrides`` may replace ``throughput``, ``energy_per_mac`` or ``time_scale``
    (a multiplier on latency) for every chiplet resolved to this backend.
    """

    name = "analytical"

    def __init__(self, **overrides):
        unknown = set(overrides) - {"throughput", "energy_per_mac", "time_scale"}
        if unknown:
            raise ConfigError(f"unknown analytical backend parameters {sorted(unknown)}", "backends")
        self.overrides = overrides

    def simulate(self, segment, chiplet) -> ComputeResult:
        throughput = self.overrides.get("throughput", chiplet.throughput)
        e_mac = self.overrides.get("energy_per_mac", chiplet.energy_per_mac)
        scale = self.overrides.get("time_scale", 1.0)
        if throughput <= 0:
            raise ConfigError(f"chiplet {chiplet.id} has no compute throughput", "throughput")
        macs = segment.macs
        if macs <= 0:
            return ComputeResult(1, 0.0, 0.0)
        if scale == 1 and float(throughput).is_integer():
            latency = max(1, -(-macs * 10**9 // int(throughput)))
        else:
            latency = max(1, math.ceil(macs * 1e9 * scale / throughput - 1e-9))
        energy = macs * e_mac
        return ComputeResult(latency, energy, energy / (latency * 1e-9))


BACKENDS = {"analytical": AnalyticalBackend}


def resolve_backend(type_tag: str, registry=None):
    """Backend instance for ``type_tag``.

    An empty registry means every tag uses the analytical backend with the
    chiplet's own parameters.
    """
    if not registry:
        return _DEFAULT
    try:
        desc = registry[type_tag]
    except KeyError:
        raise ConfigError(f"no backend registered for chiplet type {type_tag!r}", "backends") from None
    cls = BACKENDS.get(desc.name)
    if cls is None:
        raise ConfigError(f"unknown backend {desc.name!r}", f"backends.{type_tag}")
    return cls(**desc.params())


_DEFAULT = AnalyticalBackend()


def simulate_segment(segment, chiplet, registry=None) -> ComputeResult:
    return resolve_backend(chiplet.type_tag, registry).simulate(segment, chiplet)


class BackendSet:
    """Backends resolved once per type tag for a whole system."""

    def __init__(self, config):
        registry = config.backend_registry()
        self._by_tag = {}
        for c in config.compute_chiplets:
            if c.type_tag not in self._by_tag:
                self._by_tag[c.type_tag] = resolve_backend(c.type_tag, registry)

    def simulate(self, segment, chiplet) -> ComputeResult:
        try:
            backend = self._by_tag[chiplet.type_tag]
        except KeyError:
            raise ConfigError(f"chiplet {chiplet.id} ({chiplet.type_tag}) has no compute backend") from None
        return backend.simulate(segment, chiplet)
