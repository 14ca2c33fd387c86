"""Compact RC thermal model of the package: active dies, interposer, spreader.

Each chiplet contributes an ``n x n`` grid of active-layer nodes (2 x 2 by
default). The interposer and the heat spreader are covered by coarser
``nx x ny`` grids spanning the chiplet bounding box plus a margin. Adjacent
nodes in a layer are coupled laterally, stacked nodes vertically through
their overlap area, and every spreader cell leaks to ambient in proportion
to its area. Temperatures are solved as rises above ambient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu, spsolve

from .errors import ConfigError
from .hardware import ThermalParams

MM = 1e-3


@dataclass(frozen=True)
class ThermalNode:
    layer: str
    x: float
    y: float
    width: float
    height: float
    thickness: float
    chiplet: int | None = None

    @property
    def volume(self) -> float:
        """m^3"""
        return self.width * self.height * self.thickness * MM ** 3


class ThermalModel:
    """Conductance matrix ``G`` (ambient links on the diagonal) and capacities ``C``."""

    def __init__(self, nodes, G, capacitance, ambient_g, injection, ambient_temperature=300.0):
        self.nodes = list(nodes)
        self.G = sp.csr_matrix(G)
        self.C = np.asarray(capacitance, dtype=float)
        self.ambient_g = np.asarray(ambient_g, dtype=float)
        self.injection = {c: list(v) for c, v in injection.items()}
        self.ambient_temperature = ambient_temperature
        n = len(self.C)
        if self.G.shape != (n, n):
            raise ConfigError("conductance matrix does not match the node count", "thermal")
        if np.any(self.C <= 0):
            raise ConfigError("heat capacities must be positive", "thermal")

    @classmethod
    def from_network(cls, n, couplings, ambient, capacitance, injection=None, ambient_temperature=300.0):
        """Build directly from ``couplings`` ``[(i, j, g)]`` and per-node ``ambient`` conductances."""
        rows, cols, vals = [], [], []
        diag = np.zeros(n)
        for i, j, g in couplings:
            if g <= 0:
                raise ConfigError(f"coupling {i}-{j} must have positive conductance", "thermal")
            rows += [i, j]
            cols += [j, i]
            vals += [-g, -g]
            diag[i] += g
            diag[j] += g
        amb = np.zeros(n)
        for i, g in (ambient.items() if isinstance(ambient, dict) else enumerate(ambient)):
            amb[i] = g
        diag += amb
        G = sp.coo_matrix((vals + list(diag), (rows + list(range(n)), cols + list(range(n)))),
                          shape=(n, n)).tocsr()
        nodes = [ThermalNode("active", 0.0, 0.0, 0.0, 0.0, 0.0) for _ in range(n)]
        cap = np.broadcast_to(np.asarray(capacitance, dtype=float), (n,)).copy()
        if injection is None:
            injection = {i: [i] for i in range(n)}
        return cls(nodes, G, cap, amb, injection, ambient_temperature)

    @property
    def size(self) -> int:
        return len(self.C)

    def injection_matrix(self, chiplets) -> sp.csr_matrix:
        """Maps per-chiplet power to node power, split evenly over each chiplet's nodes."""
        rows, cols, vals = [], [], []
        for j, c in enumerate(chiplets):
            if c not in self.injection:
                raise ConfigError(f"chiplet {c} is not part of the thermal model", "chiplets")
            idx = self.injection[c]
            rows += idx
            cols += [j] * len(idx)
            vals += [1.0 / len(idx)] * len(idx)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.size, len(chiplets)))

    def power_vector(self, power) -> np.ndarray:
        if isinstance(power, dict):
            chiplets = sorted(power)
            return self.injection_matrix(chiplets) @ np.array([power[c] for c in chiplets], dtype=float)
        p = np.asarray(power, dtype=float)
        if p.shape != (self.size,):
            raise ValueError("node power vector has the wrong length")
        return p

    def ambient_flow(self, rise) -> float:
        """Heat leaving to ambient (W) for a temperature-rise vector."""
        return float(self.ambient_g @ np.asarray(rise))

    def check_realizable(self) -> None:
        G = self.G
        if abs(G - G.T).max() > 1e-12 * max(1.0, abs(G).max()):
            raise ConfigError("conductance matrix is not symmetric", "thermal")
        off = G - sp.diags(G.diagonal())
        if off.max() > 0:
            raise ConfigError("positive off-diagonal conductance", "thermal")
        if np.any(G.diagonal() + off.sum(axis=1).A1 < -1e-12 * abs(G.diagonal()).max()):
            raise ConfigError("conductance matrix is not diagonally dominant", "thermal")

    def check_grounded(self) -> None:
        off = (self.G - sp.diags(self.G.diagonal())) != 0
        n_comp, labels = connected_components(off, directed=False)
        grounded = np.zeros(n_comp, dtype=bool)
        grounded[labels[self.ambient_g > 0]] = True
        if not grounded.all():
            raise ConfigError("part of the thermal network has no path to ambient", "thermal")


@dataclass
class ThermalState:
    rise: np.ndarray
    time: int = 0
    ambient: float = 300.0

    @property
    def kelvin(self) -> np.ndarray:
        return self.rise + self.ambient


@dataclass
class ThermalHistory:
    """Temperature rises at bin boundaries; row ``k`` is at ``times[k]`` ns."""
    times: np.ndarray
    rise: np.ndarray
    ambient: float = 300.0

    def __len__(self):
        return len(self.times)

    def __getitem__(self, k) -> ThermalState:
        return ThermalState(self.rise[k], int(self.times[k]), self.ambient)

    @property
    def final(self) -> ThermalState:
        return self[-1]


def _overlap(a, b):
    """Overlap area of two (x, y, w, h) rectangles."""
    w = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    h = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    return w * h if w > 0 and h > 0 else 0.0


def _series(t1, k1, t2, k2, area_mm2):
    """Conductance between the centres of two stacked slabs sharing ``area_mm2``."""
    area = area_mm2 * MM * MM
    return 1.0 / (0.5 * t1 * MM / (k1 * area) + 0.5 * t2 * MM / (k2 * area))


def build_thermal_model(config, params: ThermalParams | None = None) -> ThermalModel:
    p = params or config.thermal
    for name in ("active_k", "active_heat_capacity", "active_thickness", "interposer_k",
                 "interposer_heat_capacity", "interposer_thickness", "spreader_k",
                 "spreader_heat_capacity", "spreader_thickness", "ambient_conductance"):
        if getattr(p, name) <= 0:
            raise ConfigError(f"must be positive, got {getattr(p, name)!r}", f"thermal.{name}")
    a = p.active_grid
    nx, ny = p.passive_grid
    nodes, couplings = [], []
    injection = {}
    for c in config.chiplets:
        x, y, w, h = c.phys_pos
        dx, dy = w / a, h / a
        base = len(nodes)
        for j in range(a):
            for i in range(a):
                nodes.append(ThermalNode("active", x + i * dx, y + j * dy, dx, dy, p.active_thickness, c.id))
        for j in range(a):
            for i in range(a):
                n0 = base + j * a + i
                if i + 1 < a:
                    couplings.append((n0, n0 + 1, p.active_k * dy * p.active_thickness / dx * MM))
                if j + 1 < a:
                    couplings.append((n0, n0 + a, p.active_k * dx * p.active_thickness / dy * MM))
        injection[c.id] = list(range(base, base + a * a))

    x0 = min(c.phys_pos[0] for c in config.chiplets) - p.margin
    y0 = min(c.phys_pos[1] for c in config.chiplets) - p.margin
    x1 = max(c.phys_pos[0] + c.phys_pos[2] for c in config.chiplets) + p.margin
    y1 = max(c.phys_pos[1] + c.phys_pos[3] for c in config.chiplets) + p.margin
    cw, ch = (x1 - x0) / nx, (y1 - y0) / ny
    layers = {}
    for layer, t, k in (("interposer", p.interposer_thickness, p.interposer_k),
                        ("spreader", p.spreader_thickness, p.spreader_k)):
        base = len(nodes)
        layers[layer] = base
        for j in range(ny):
            for i in range(nx):
                nodes.append(ThermalNode(layer, x0 + i * cw, y0 + j * ch, cw, ch, t))
        for j in range(ny):
            for i in range(nx):
                n0 = base + j * nx + i
                if i + 1 < nx:
                    couplings.append((n0, n0 + 1, k * ch * t / cw * MM))
                if j + 1 < ny:
                    couplings.append((n0, n0 + nx, k * cw * t / ch * MM))
    ib, sb = layers["interposer"], layers["spreader"]
    for n_idx, node in enumerate(nodes[:ib]):
        rect = (node.x, node.y, node.width, node.height)
        i_lo = max(0, int((node.x - x0) // cw))
        i_hi = min(nx - 1, int((node.x + node.width - x0) // cw))
        j_lo = max(0, int((node.y - y0) // ch))
        j_hi = min(ny - 1, int((node.y + node.height - y0) // ch))
        for j in range(j_lo, j_hi + 1):
            for i in range(i_lo, i_hi + 1):
                area = _overlap(rect, (x0 + i * cw, y0 + j * ch, cw, ch))
                if area > 1e-12:
                    couplings.append((n_idx, ib + j * nx + i, _series(p.active_thickness, p.active_k,
                                                                      p.interposer_thickness, p.interposer_k,
                                                                      area)))
    cell_g = _series(p.interposer_thickness, p.interposer_k, p.spreader_thickness, p.spreader_k, cw * ch)
    for cell in range(nx * ny):
        couplings.append((ib + cell, sb + cell, cell_g))
    n = len(nodes)
    ambient = np.zeros(n)
    ambient[sb:sb + nx * ny] = p.ambient_conductance / (nx * ny)
    heat = {"active": p.active_heat_capacity, "interposer": p.interposer_heat_capacity,
            "spreader": p.spreader_heat_capacity}
    cap = np.array([heat[node.layer] * node.volume for node in nodes])
    model = ThermalModel.from_network(n, couplings, ambient, cap, injection, p.ambient_temperature)
    model.nodes = nodes
    return model


def steady_state_solve(model: ThermalModel, power) -> ThermalState:
    """Solve ``G T = P`` for the temperature rise."""
    model.check_grounded()
    P = model.power_vector(power)
    if not np.any(P):
        return ThermalState(np.zeros(model.size), 0, model.ambient_temperature)
    T = spsolve(model.G.tocsc(), P)
    resid = np.abs(model.G @ T - P).max()
    if not np.all(np.isfinite(T)) or resid > 1e-9 * np.abs(P).max():
        raise ConfigError("thermal network is singular", "thermal")
    return ThermalState(T, 0, model.ambient_temperature)


def transient_solve(model: ThermalModel, trace, initial=None, downsample: int = 1) -> ThermalHistory:
    """Backward-Euler integration, one step per power bin.

    ``trace`` is a ``PowerTrace``; the returned history starts with the
    initial state at the trace start and then holds every ``downsample``-th
    bin boundary (the last one always included).
    """
    model.check_grounded()
    dt = trace.bin_width * 1e-6
    S = model.injection_matrix(trace.chiplets) if trace.chiplets else sp.csr_matrix((model.size, 0))
    T = np.zeros(model.size) if initial is None else np.asarray(initial, dtype=float).copy()
    c_dt = model.C / dt
    lu = splu((sp.diags(c_dt) + model.G).tocsc())
    times, rows = [trace.start_time], [T.copy()]
    n_bins = trace.n_bins
    node_power = (S @ trace.samples) if trace.chiplets else np.zeros((model.size, n_bins))
    bin_ns = trace.bin_width * 1000
    for b in range(n_bins):
        T = lu.solve(c_dt * T + node_power[:, b])
        if (b + 1) % downsample == 0 or b == n_bins - 1:
            times.append(trace.start_time + round((b + 1) * bin_ns))
            rows.append(T.copy())
    return ThermalHistory(np.array(times, dtype=np.int64), np.array(rows), model.ambient_temperature)


def chiplet_temperatures(model: ThermalModel, state: ThermalState) -> dict:
    """Hottest active-node temperature (K) per chiplet."""
    return {c: float(state.kelvin[idx].max()) for c, idx in sorted(model.injection.items())}


def write_heatmap_csv(path, model: ThermalModel, state: ThermalState, meta=None) -> None:
    with open(path, "w", newline="") as fh:
        for key, value in sorted((meta or {}).items()):
            fh.write(f"# {key}={value}\n")
        w = csv.writer(fh)
        w.writerow(["chiplet_id", "node_id", "x_mm", "y_mm", "kelvin"])
        for c, idx in sorted(model.injection.items()):
            for n in idx:
                node = model.nodes[n]
                w.writerow([c, n, repr(node.x + node.width / 2), repr(node.y + node.height / 2),
                            repr(float(state.kelvin[n]))])


def write_thermal_csv(path, history: ThermalHistory, nodes=None, meta=None) -> None:
    """Long-format ``time_us, node_id, kelvin``; ``nodes`` limits the columns written."""
    idx = range(history.rise.shape[1]) if nodes is None else nodes
    with open(path, "w", newline="") as fh:
        for key, value in sorted((meta or {}).items()):
            fh.write(f"# {key}={value}\n")
        w = csv.writer(fh)
        w.writerow(["time_us", "node_id", "kelvin"])
        for k, t in enumerate(history.times):
            for n in idx:
                w.writerow([repr(t / 1000), n, repr(float(history.rise[k, n] + history.ambient))])
