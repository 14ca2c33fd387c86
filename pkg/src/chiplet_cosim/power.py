"""Per-chiplet power traces binned on a fixed time grid."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class PowerTrace:
    """``samples[i, b]`` is the mean power (W) of ``chiplets[i]`` over bin ``b``."""
    bin_width: float
    chiplets: list
    samples: np.ndarray
    start_time: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_bins(self) -> int:
        return self.samples.shape[1]

    @property
    def bin_seconds(self) -> float:
        return self.bin_width * 1e-6

    def energy(self) -> float:
        return float(self.samples.sum() * self.bin_seconds)

    def chiplet_energy(self) -> dict:
        e = self.samples.sum(axis=1) * self.bin_seconds
        return {c: float(v) for c, v in zip(self.chiplets, e)}

    def average(self) -> dict:
        if self.n_bins == 0:
            return {c: 0.0 for c in self.chiplets}
        return {c: float(v) for c, v in zip(self.chiplets, self.samples.mean(axis=1))}

    def row(self, chiplet) -> np.ndarray:
        return self.samples[self.chiplets.index(chiplet)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            for key, value in sorted(self.meta.items()):
                fh.write(f"# {key}={value}\n")
            w = csv.writer(fh)
            w.writerow(["bin_start_us", "chiplet_id", "watts"])
            for b in range(self.n_bins):
                t = self.start_time / 1000 + b * self.bin_width
                for i, c in enumerate(self.chiplets):
                    w.writerow([_fmt(t), c, repr(float(self.samples[i, b]))])

    @classmethod
    def read_csv(cls, path) -> "PowerTrace":
        meta, rows = {}, []
        with open(path) as fh:
            lines = []
            for line in fh:
                if line.startswith("#"):
                    key, _, value = line[1:].strip().partition("=")
                    meta[key] = value
                else:
                    lines.append(line)
        reader = csv.DictReader(lines)
        for r in reader:
            rows.append((float(r["bin_start_us"]), int(r["chiplet_id"]), float(r["watts"])))
        if not rows:
            return cls(float(meta.get("bin_width_us", 1.0)), [], np.zeros((0, 0)), meta=meta)
        times = sorted({t for t, _, _ in rows})
        chiplets = sorted({c for _, c, _ in rows})
        width = float(meta["bin_width_us"]) if "bin_width_us" in meta else (
            times[1] - times[0] if len(times) > 1 else 1.0)
        t0 = times[0]
        samples = np.zeros((len(chiplets), len(times)))
        ci = {c: i for i, c in enumerate(chiplets)}
        for t, c, p in rows:
            samples[ci[c], int(round((t - t0) / width))] = p
        return cls(width, chiplets, samples, start_time=int(round(t0 * 1000)), meta=meta)


def _fmt(x):
    return repr(round(x, 9))


def bin_power(compute_events, network_energy=None, bin_width_us: float = 1.0, chiplets=None,
              static=None, end_ns=None) -> PowerTrace:
    """Integrate energy events into per-chiplet power bins starting at t = 0.

    ``compute_events`` carry ``chiplet``, ``start``, ``end`` (ns) and
    ``energy`` (J); each is spread uniformly over its interval.
    ``network_energy`` maps ``(chiplet, bin_index)`` to joules already binned.
    ``static`` gives a constant draw per chiplet over ``[0, end_ns)``.
    """
    events = list(compute_events)
    width_ns = bin_width_us * 1000.0
    if chiplets is None:
        ids = {e.chiplet for e in events} | {c for c, _ in (network_energy or {})} | set(static or {})
        chiplets = sorted(ids)
    index = {c: i for i, c in enumerate(chiplets)}
    horizon = end_ns or 0
    for e in events:
        if e.end <= e.start:
            raise ValueError(f"event on chiplet {e.chiplet} has non-positive duration")
        horizon = max(horizon, e.end)
    n_bins = max(1, math.ceil(horizon / width_ns)) if horizon else 0
    if network_energy:
        n_bins = max(n_bins, max(b for _, b in network_energy) + 1)
    energy = np.zeros((len(chiplets), n_bins))
    for e in events:
        row = energy[index[e.chiplet]]
        rate = e.energy / (e.end - e.start)
        b0 = int(e.start // width_ns)
        b1 = int(math.ceil(e.end / width_ns))
        if b1 - b0 == 1:
            row[b0] += e.energy
            continue
        for b in range(b0, b1):
            lo = max(e.start, b * width_ns)
            hi = min(e.end, (b + 1) * width_ns)
            if hi > lo:
                row[b] += rate * (hi - lo)
    for (c, b), joules in (network_energy or {}).items():
        energy[index[c], b] += joules
    if static and horizon:
        edges = np.minimum(np.arange(1, n_bins + 1) * width_ns, horizon) - np.arange(n_bins) * width_ns
        edges = np.clip(edges, 0, None) * 1e-9
        for c, watts in static.items():
            energy[index[c]] += watts * edges
    return PowerTrace(bin_width_us, list(chiplets), energy / (bin_width_us * 1e-6),
                      meta={"bin_width_us": bin_width_us})


def event_energy(compute_events, network_energy=None, static=None, end_ns=0) -> float:
    """Plain sum of every energy contribution (the reference for binning)."""
    total = math.fsum(e.energy for e in compute_events)
    total += math.fsum((network_energy or {}).values())
    total += math.fsum(w * end_ns * 1e-9 for w in (static or {}).values())
    return total
