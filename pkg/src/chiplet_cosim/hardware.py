"""System description: chiplets, directed links, timing constants and routing.

Config documents are JSON. Either list ``chiplets`` and ``links`` explicitly or
use the ``mesh`` shorthand with ``link_template``. Parameter values shipped as
defaults are representative, not measured.
"""

from __future__ import annotations

import graphlib
import hashlib
import json
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

from .errors import ConfigError

# Representative IMC chiplet: 2 MiB of weight storage, 128 TMAC/s.
DEFAULT_CHIPLET = {
    "type_tag": "imc-a",
    "mem_capacity": 2 * 1024 * 1024,
    "throughput": 128e12,
    "energy_per_mac": 0.05e-12,
    "static_power": 0.05,
}

DEFAULT_TIMING = {
    "cycle_period": 1,
    "flit_bytes": 16,
    "router_latency": 2,
    "buffer_depth": 8,
    "max_packet_flits": 16,
    "time_step": 1.0,
    "warmup": 1000.0,
    "cooldown": 1000.0,
}

DEFAULT_ENERGY_PER_FLIT_HOP = 64e-12


@dataclass(frozen=True)
class ChipletSpec:
    id: int
    type_tag: str
    grid_pos: tuple
    phys_pos: tuple
    mem_capacity: int
    throughput: float
    energy_per_mac: float
    static_power: float
    io_role: bool = False

    def to_dict(self):
        d = asdict(self)
        d["grid_pos"] = list(self.grid_pos)
        d["phys_pos"] = list(self.phys_pos)
        return d


@dataclass(frozen=True)
class LinkSpec:
    src: int
    dst: int
    bandwidth: int = 1
    latency: int = 1


@dataclass(frozen=True)
class ThermalParams:
    """Package stack for the compact thermal model (representative values).

    Conductivity in W/(m K), volumetric heat capacity in J/(m^3 K),
    thickness in mm, ``ambient_conductance`` in W/K for the whole spreader.
    """
    active_k: float = 120.0
    active_heat_capacity: float = 1.75e6
    active_thickness: float = 0.15
    interposer_k: float = 120.0
    interposer_heat_capacity: float = 1.75e6
    interposer_thickness: float = 0.1
    spreader_k: float = 400.0
    spreader_heat_capacity: float = 3.45e6
    spreader_thickness: float = 1.0
    ambient_conductance: float = 4.0
    ambient_temperature: float = 300.0
    active_grid: int = 2
    passive_grid: tuple = (10, 10)
    margin: float = 1.0


@dataclass(frozen=True)
class BackendDescriptor:
    name: str = "analytical"
    overrides: tuple = ()

    def params(self) -> dict:
        return dict(self.overrides)


@dataclass(frozen=True)
class SystemConfig:
    chiplets: tuple
    links: tuple
    topology_kind: str = "mesh"
    mesh_shape: tuple | None = None
    cycle_period: int = 1
    flit_bytes: int = 16
    router_latency: int = 2
    buffer_depth: int = 8
    max_packet_flits: int = 16
    energy_per_flit_hop: float = DEFAULT_ENERGY_PER_FLIT_HOP
    time_step: float = 1.0
    warmup: float = 1000.0
    cooldown: float = 1000.0
    backends: tuple = ()
    thermal: ThermalParams = field(default_factory=ThermalParams)

    def chiplet(self, cid) -> ChipletSpec:
        return self._by_id[cid]

    @property
    def _by_id(self):
        cache = self.__dict__.get("_by_id_cache")
        if cache is None:
            cache = {c.id: c for c in self.chiplets}
            object.__setattr__(self, "_by_id_cache", cache)
        return cache

    @property
    def compute_chiplets(self) -> list:
        return [c for c in self.chiplets if not c.io_role]

    @property
    def io_chiplets(self) -> list:
        return [c for c in self.chiplets if c.io_role]

    def backend_registry(self) -> dict:
        return {tag: desc for tag, desc in self.backends}

    def digest(self) -> str:
        return hashlib.sha256(serialize_config(self).encode()).hexdigest()[:16]


# --- construction -----------------------------------------------------------------

def build_mesh(width: int, height: int, link_template: Mapping | LinkSpec | None = None,
               chiplet_params: Mapping | None = None, pitch_mm: float = 5.0,
               chiplet_mm: float = 4.0, margin_mm: float = 1.0):
    """Chiplets on a ``width`` x ``height`` grid with 4-neighbour links both ways.

    Returns ``(chiplets, links)``; ids run row-major from the (0, 0) corner.
    """
    if width < 1 or height < 1:
        raise ConfigError("mesh dimensions must be positive", "mesh")
    if isinstance(link_template, LinkSpec):
        link_template = {"bandwidth": link_template.bandwidth, "latency": link_template.latency}
    tmpl = {"bandwidth": 1, "latency": 1, **(link_template or {})}
    params = {**DEFAULT_CHIPLET, **(chiplet_params or {})}
    chiplets = []
    for row in range(height):
        for col in range(width):
            cid = row * width + col
            x = margin_mm + col * pitch_mm
            y = margin_mm + row * pitch_mm
            chiplets.append(ChipletSpec(id=cid, grid_pos=(col, row), phys_pos=(x, y, chiplet_mm, chiplet_mm),
                                        **params))
    links = []
    for row in range(height):
        for col in range(width):
            cid = row * width + col
            for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                c2, r2 = col + dc, row + dr
                if 0 <= c2 < width and 0 <= r2 < height:
                    links.append(LinkSpec(cid, r2 * width + c2, tmpl["bandwidth"], tmpl["latency"]))
    return tuple(chiplets), tuple(links)


def mesh_config(width, height, **kwargs) -> SystemConfig:
    """Convenience wrapper: a validated mesh system with default timing."""
    doc = {"mesh": {"width": width, "height": height}}
    for key in ("link_template", "chiplet_defaults", "timing", "power", "io_chiplets",
                "type_pattern", "chiplet_types", "thermal", "backends"):
        if key in kwargs:
            doc[key] = kwargs.pop(key)
    if kwargs:
        raise TypeError(f"unexpected arguments {sorted(kwargs)}")
    return load_config(doc)


def _positive(value, name, integer=False, allow_zero=False):
    ok_type = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok_type:
        raise ConfigError(f"expected {'an integer' if integer else 'a number'}, got {value!r}", name)
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"must be {'non-negative' if allow_zero else 'positive'}, got {value!r}", name)
    return value


def _chiplet_from_dict(d, where):
    required = {"id", "type_tag", "grid_pos", "phys_pos", "mem_capacity", "throughput",
                "energy_per_mac", "static_power"}
    missing = required - set(d)
    if missing:
        raise ConfigError(f"missing fields {sorted(missing)}", where)
    unknown = set(d) - {f.name for f in fields(ChipletSpec)}
    if unknown:
        raise ConfigError(f"unknown fields {sorted(unknown)}", where)
    grid = tuple(d["grid_pos"])
    phys = tuple(float(v) for v in d["phys_pos"])
    if len(grid) != 2 or any(not isinstance(v, int) or v < 0 for v in grid):
        raise ConfigError("grid_pos must be two non-negative integers", f"{where}.grid_pos")
    if len(phys) != 4 or any(v < 0 for v in phys) or phys[2] <= 0 or phys[3] <= 0:
        raise ConfigError("phys_pos must be (x_mm, y_mm, width_mm, height_mm) with positive size",
                          f"{where}.phys_pos")
    io_role = bool(d.get("io_role", False))
    _positive(d["mem_capacity"], f"{where}.mem_capacity", integer=True)
    _positive(d["throughput"], f"{where}.throughput", allow_zero=io_role)
    _positive(d["energy_per_mac"], f"{where}.energy_per_mac", allow_zero=True)
    _positive(d["static_power"], f"{where}.static_power", allow_zero=True)
    return ChipletSpec(id=int(d["id"]), type_tag=str(d["type_tag"]), grid_pos=grid, phys_pos=phys,
                       mem_capacity=int(d["mem_capacity"]), throughput=d["throughput"],
                       energy_per_mac=d["energy_per_mac"], static_power=d["static_power"],
                       io_role=io_role)


def _type_params(doc, tag):
    types = doc.get("chiplet_types", {})
    base = {**DEFAULT_CHIPLET, **doc.get("chiplet_defaults", {})}
    if tag is None:
        return base
    if tag not in types and tag != base["type_tag"]:
        raise ConfigError(f"unknown chiplet type {tag!r}", "type_pattern")
    return {**base, **types.get(tag, {}), "type_tag": tag}


def _expand_mesh(doc):
    mesh = doc["mesh"]
    if isinstance(mesh, str):
        try:
            w, h = (int(v) for v in mesh.lower().replace("×", "x").split("x"))
        except ValueError:
            raise ConfigError(f"expected 'WxH', got {mesh!r}", "mesh") from None
        mesh = {"width": w, "height": h}
    w, h = mesh.get("width"), mesh.get("height")
    _positive(w, "mesh.width", integer=True)
    _positive(h, "mesh.height", integer=True)
    chiplets, links = build_mesh(w, h, doc.get("link_template"), _type_params(doc, None),
                                 mesh.get("pitch_mm", 5.0), mesh.get("chiplet_mm", 4.0),
                                 mesh.get("margin_mm", 1.0))
    pattern = doc.get("type_pattern")
    if pattern is not None:
        if isinstance(pattern, Mapping):
            if pattern.get("kind") != "alternating":
                raise ConfigError(f"unknown pattern kind {pattern.get('kind')!r}", "type_pattern.kind")
            tags = pattern["tags"]
            assign = [tags[(c.grid_pos[0] + c.grid_pos[1]) % len(tags)] for c in chiplets]
        else:
            assign = list(pattern)
            if len(assign) != len(chiplets):
                raise ConfigError(f"expected {len(chiplets)} type tags, got {len(assign)}", "type_pattern")
        chiplets = tuple(replace(c, **_type_params(doc, tag)) for c, tag in zip(chiplets, assign))
    io = doc.get("io_chiplets")
    if io is not None:
        if io == "corners":
            io = sorted({0, w - 1, (h - 1) * w, h * w - 1})
        ids = set(io)
        unknown = ids - {c.id for c in chiplets}
        if unknown:
            raise ConfigError(f"unknown chiplets {sorted(unknown)}", "io_chiplets")
        io_params = doc.get("io_params", {})
        chiplets = tuple(replace(c, io_role=True, **io_params) if c.id in ids else c for c in chiplets)
    overrides = {(d["src"], d["dst"]): d for d in doc.get("link_overrides", [])}
    if overrides:
        links = tuple(replace(l, **{k: v for k, v in overrides[(l.src, l.dst)].items() if k in
                                    ("bandwidth", "latency")})
                      if (l.src, l.dst) in overrides else l for l in links)
    return chiplets, links, (w, h)


def load_config(text) -> SystemConfig:
    """Parse and validate a config document (JSON text, path or mapping)."""
    if isinstance(text, Mapping):
        doc = text
    else:
        if isinstance(text, Path) or (isinstance(text, str) and not text.lstrip().startswith("{")):
            path = Path(text)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}", "config")
            text = path.read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, Mapping):
        raise ConfigError("config document must be a JSON object")

    if "chiplets" in doc:
        chiplets = tuple(_chiplet_from_dict(d, f"chiplets[{i}]") for i, d in enumerate(doc["chiplets"]))
        links = []
        for i, d in enumerate(doc.get("links", [])):
            try:
                links.append(LinkSpec(int(d["src"]), int(d["dst"]), d.get("bandwidth", 1), d.get("latency", 1)))
            except KeyError as exc:
                raise ConfigError(f"missing field {exc.args[0]}", f"links[{i}]") from None
        links = tuple(links)
        kind = doc.get("topology_kind", "custom")
        shape = tuple(doc["mesh_shape"]) if doc.get("mesh_shape") else None
        if kind == "mesh" and shape is None:
            shape = (max(c.grid_pos[0] for c in chiplets) + 1, max(c.grid_pos[1] for c in chiplets) + 1)
    elif "mesh" in doc:
        chiplets, links, shape = _expand_mesh(doc)
        kind = "mesh"
    else:
        raise ConfigError("config needs either 'chiplets' or 'mesh'")
    if kind not in ("mesh", "custom"):
        raise ConfigError(f"unknown topology kind {kind!r}", "topology_kind")

    timing = {**DEFAULT_TIMING, **doc.get("timing", {})}
    unknown = set(timing) - set(DEFAULT_TIMING)
    if unknown:
        raise ConfigError(f"unknown fields {sorted(unknown)}", "timing")
    for name in ("cycle_period", "flit_bytes", "router_latency", "buffer_depth", "max_packet_flits"):
        _positive(timing[name], f"timing.{name}", integer=True)
    _positive(timing["time_step"], "timing.time_step")
    _positive(timing["warmup"], "timing.warmup", allow_zero=True)
    _positive(timing["cooldown"], "timing.cooldown", allow_zero=True)
    power = doc.get("power", {})
    e_hop = power.get("energy_per_flit_hop", DEFAULT_ENERGY_PER_FLIT_HOP)
    _positive(e_hop, "power.energy_per_flit_hop", allow_zero=True)

    thermal_doc = dict(doc.get("thermal", {}))
    if "passive_grid" in thermal_doc:
        thermal_doc["passive_grid"] = tuple(thermal_doc["passive_grid"])
    unknown = set(thermal_doc) - {f.name for f in fields(ThermalParams)}
    if unknown:
        raise ConfigError(f"unknown fields {sorted(unknown)}", "thermal")
    thermal = ThermalParams(**thermal_doc)
    for f in fields(ThermalParams):
        value = getattr(thermal, f.name)
        if f.name == "passive_grid":
            if len(value) != 2 or any(not isinstance(v, int) or v < 1 for v in value):
                raise ConfigError("must be two positive integers", "thermal.passive_grid")
        elif f.name == "active_grid":
            _positive(value, "thermal.active_grid", integer=True)
        else:
            _positive(value, f"thermal.{f.name}", allow_zero=f.name == "margin")

    backends_doc = doc.get("backends", {})
    backends = tuple(sorted(
        (tag, BackendDescriptor(desc.get("name", "analytical"), tuple(sorted(desc.get("overrides", {}).items()))))
        for tag, desc in backends_doc.items()))

    config = SystemConfig(chiplets=chiplets, links=links, topology_kind=kind, mesh_shape=shape,
                          cycle_period=timing["cycle_period"], flit_bytes=timing["flit_bytes"],
                          router_latency=timing["router_latency"], buffer_depth=timing["buffer_depth"],
                          max_packet_flits=timing["max_packet_flits"], energy_per_flit_hop=e_hop,
                          time_step=timing["time_step"], warmup=timing["warmup"],
                          cooldown=timing["cooldown"], backends=backends, thermal=thermal)
    validate_config(config)
    return config


def validate_config(config: SystemConfig) -> None:
    ids = [c.id for c in config.chiplets]
    if not ids:
        raise ConfigError("no chiplets", "chiplets")
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate chiplet ids", "chiplets")
    by_id = {c.id: c for c in config.chiplets}
    seen_links = set()
    for i, link in enumerate(config.links):
        where = f"links[{i}]"
        if link.src not in by_id or link.dst not in by_id:
            raise ConfigError(f"link {link.src}->{link.dst} references an unknown chiplet", where)
        if link.src == link.dst:
            raise ConfigError("self-loop link", where)
        if (link.src, link.dst) in seen_links:
            raise ConfigError(f"duplicate link {link.src}->{link.dst}", where)
        seen_links.add((link.src, link.dst))
        _positive(link.bandwidth, f"{where}.bandwidth", integer=True)
        _positive(link.latency, f"{where}.latency", integer=True)
    for i, c in enumerate(config.chiplets):
        where = f"chiplets[{i}]"
        _positive(c.mem_capacity, f"{where}.mem_capacity", integer=True)
        if not c.io_role:
            _positive(c.throughput, f"{where}.throughput")
    boxes = [(c.id, c.phys_pos) for c in config.chiplets]
    for a in range(len(boxes)):
        ia, (xa, ya, wa, ha) = boxes[a]
        for b in range(a + 1, len(boxes)):
            ib, (xb, yb, wb, hb) = boxes[b]
            if xa < xb + wb and xb < xa + wa and ya < yb + hb and yb < ya + ha:
                raise ConfigError(f"footprints of chiplets {ia} and {ib} overlap", "chiplets.phys_pos")
    if config.topology_kind == "mesh":
        grid = {c.grid_pos: c.id for c in config.chiplets}
        if len(grid) != len(ids):
            raise ConfigError("two chiplets share a grid position", "chiplets.grid_pos")
        for c in config.chiplets:
            col, row = c.grid_pos
            for nb in ((col + 1, row), (col - 1, row), (col, row + 1), (col, row - 1)):
                if nb in grid and (c.id, grid[nb]) not in seen_links:
                    raise ConfigError(f"mesh is missing link {c.id}->{grid[nb]}", "links")
    from .compute import BACKENDS
    registry = config.backend_registry()
    for tag, desc in config.backends:
        if desc.name not in BACKENDS:
            raise ConfigError(f"unknown backend {desc.name!r}", f"backends.{tag}")
    if registry:
        for c in config.compute_chiplets:
            if c.type_tag not in registry:
                raise ConfigError(f"no backend registered for type {c.type_tag!r}", f"chiplets[{c.id}].type_tag")
    routes = compute_routes(config, validate=False)
    unreachable = routes.unreachable()
    if unreachable:
        a, b = unreachable[0]
        raise ConfigError(f"topology is disconnected: no path from chiplet {a} to {b}", "links")
    if config.topology_kind == "custom" and not routes.deadlock_free():
        raise ConfigError("routing table has cyclic channel dependencies", "links")


# --- serialization ----------------------------------------------------------------

def config_to_dict(config: SystemConfig) -> dict:
    thermal = asdict(config.thermal)
    thermal["passive_grid"] = list(config.thermal.passive_grid)
    doc = {
        "topology_kind": config.topology_kind,
        "chiplets": [c.to_dict() for c in config.chiplets],
        "links": [asdict(l) for l in config.links],
        "timing": {name: getattr(config, name) for name in DEFAULT_TIMING},
        "power": {"energy_per_flit_hop": config.energy_per_flit_hop},
        "thermal": thermal,
        "backends": {tag: {"name": d.name, "overrides": dict(d.overrides)} for tag, d in config.backends},
    }
    if config.mesh_shape is not None:
        doc["mesh_shape"] = list(config.mesh_shape)
    return doc


def serialize_config(config: SystemConfig) -> str:
    return json.dumps(config_to_dict(config), indent=1, sort_keys=True)


# --- routing ------------------------------------------------------------------------

class RoutingTable:
    """Deterministic next-hop tables.

    Meshes use X-then-Y dimension order. Other topologies use hop-count
    shortest paths, breaking ties towards the lowest next-hop id.
    """

    def __init__(self, config: SystemConfig):
        self.kind = config.topology_kind
        self.ids = sorted(c.id for c in config.chiplets)
        self.neighbors = {i: [] for i in self.ids}
        for link in config.links:
            self.neighbors[link.src].append(link.dst)
        for nbs in self.neighbors.values():
            nbs.sort()
        self.pos = {c.id: c.grid_pos for c in config.chiplets}
        self._grid = {c.grid_pos: c.id for c in config.chiplets}
        self.dist = self._all_distances()
        self._next = {}
        for cur in self.ids:
            row = {}
            for dst in self.ids:
                if dst == cur or self.dist[cur].get(dst) is None:
                    continue
                row[dst] = self._xy_step(cur, dst) if self.kind == "mesh" else self._sp_step(cur, dst)
            self._next[cur] = row

    def _all_distances(self):
        reverse = {i: [] for i in self.ids}
        for s, nbs in self.neighbors.items():
            for d in nbs:
                reverse[d].append(s)
        dist = {i: {} for i in self.ids}
        for dst in self.ids:
            seen = {dst: 0}
            queue = deque([dst])
            while queue:
                u = queue.popleft()
                for v in reverse[u]:
                    if v not in seen:
                        seen[v] = seen[u] + 1
                        queue.append(v)
            for src, d in seen.items():
                dist[src][dst] = d
        return dist

    def _xy_step(self, cur, dst):
        (cx, cy), (dx, dy) = self.pos[cur], self.pos[dst]
        if cx != dx:
            return self._grid[(cx + (1 if dx > cx else -1), cy)]
        return self._grid[(cx, cy + (1 if dy > cy else -1))]

    def _sp_step(self, cur, dst):
        want = self.dist[cur][dst] - 1
        return min(n for n in self.neighbors[cur] if self.dist[n].get(dst) == want)

    def next_hop(self, cur, dst):
        return self._next[cur].get(dst)

    def path(self, src, dst) -> list:
        """Next hops from ``src`` to ``dst`` (excluding ``src``)."""
        hops = []
        cur = src
        while cur != dst:
            cur = self._next[cur][dst]
            hops.append(cur)
        return hops

    def hops(self, src, dst) -> int:
        return self.dist[src][dst]

    def unreachable(self) -> list:
        return [(a, b) for a in self.ids for b in self.ids if b not in self.dist[a]]

    def deadlock_free(self) -> bool:
        deps = {}
        for src in self.ids:
            for dst in self.ids:
                if src == dst:
                    continue
                path = [src] + self.path(src, dst)
                chans = list(zip(path, path[1:]))
                for a, b in zip(chans, chans[1:]):
                    deps.setdefault(b, set()).add(a)
        try:
            tuple(graphlib.TopologicalSorter(deps).static_order())
        except graphlib.CycleError:
            return False
        return True


def compute_routes(config: SystemConfig, validate: bool = True) -> RoutingTable:
    cache = config.__dict__.get("_routes_cache")
    if cache is not None:
        return cache
    routes = RoutingTable(config)
    if validate:
        if routes.unreachable():
            raise ConfigError("topology is disconnected", "links")
    object.__setattr__(config, "_routes_cache", routes)
    return routes
