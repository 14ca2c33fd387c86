"""Layer-to-chiplet placement with segmentation, and memory occupancy tracking."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConsistencyError, NotMappableError
from .hardware import SystemConfig, compute_routes


@dataclass(frozen=True)
class SegmentAssignment:
    model_id: int
    layer_idx: int
    segment_idx: int
    chiplet_id: int
    fraction: float
    weight_bytes: int
    macs: int

    @property
    def key(self):
        return (self.model_id, self.layer_idx, self.segment_idx)


class OccupancyState:
    """Bytes of resident weights per chiplet."""

    def __init__(self, config: SystemConfig):
        self.capacity = {c.id: c.mem_capacity for c in config.compute_chiplets}
        self.used = {cid: 0 for cid in self.capacity}
        self.resident = {cid: {} for cid in self.capacity}

    def free(self, cid) -> int:
        return self.capacity[cid] - self.used[cid]

    def free_map(self) -> dict:
        return {cid: self.capacity[cid] - self.used[cid] for cid in self.capacity}

    @property
    def total_free(self) -> int:
        return sum(self.capacity.values()) - sum(self.used.values())

    @property
    def total_capacity(self) -> int:
        return sum(self.capacity.values())

    def apply(self, layers) -> None:
        segs = [s for layer in layers for s in layer]
        need = {}
        for s in segs:
            if s.chiplet_id not in self.capacity:
                raise ConsistencyError(f"chiplet {s.chiplet_id} cannot host compute")
            if s.key in self.resident[s.chiplet_id]:
                raise ConsistencyError(f"segment {s.key} is already resident")
            need[s.chiplet_id] = need.get(s.chiplet_id, 0) + s.weight_bytes
        for cid, nbytes in need.items():
            if self.used[cid] + nbytes > self.capacity[cid]:
                raise ConsistencyError(f"chiplet {cid} would exceed its capacity")
        for s in segs:
            self.used[s.chiplet_id] += s.weight_bytes
            self.resident[s.chiplet_id][s.key] = s

    def check(self) -> None:
        for cid, used in self.used.items():
            assert 0 <= used <= self.capacity[cid]
            assert used == sum(s.weight_bytes for s in self.resident[cid].values())


def segment_layer(stats, candidate_free) -> list:
    """Split a layer's weights over the fewest chiplets.

    ``candidate_free`` lists ``(chiplet_id, free_bytes)`` in preference order.
    The segment count ``k`` is the smallest for which the ``k`` largest free
    capacities cover the weights; among such choices the shortest preference
    prefix is used. Returns ``[(chiplet_id, bytes), ...]`` filled
    largest-capacity first.
    """
    weight = stats if isinstance(stats, int) else stats.weight_bytes
    cands = [(cid, free) for cid, free in candidate_free if free > 0]
    if weight == 0:
        if not candidate_free:
            raise NotMappableError("no candidate chiplets")
        return [(candidate_free[0][0], 0)]
    caps = sorted((free for _, free in cands), reverse=True)
    k, covered = 0, 0
    for cap in caps:
        k += 1
        covered += cap
        if covered >= weight:
            break
    else:
        raise NotMappableError(f"{weight} B do not fit the {covered} B available")
    for m in range(k, len(cands) + 1):
        prefix = sorted(enumerate(cands[:m]), key=lambda t: (-t[1][1], t[0]))[:k]
        if sum(free for _, (_, free) in prefix) >= weight:
            break
    left = weight
    split = []
    for _, (cid, free) in prefix:
        take = min(free, left)
        split.append((cid, take))
        left -= take
    return split


class NearestNeighborMapper:
    """Place consecutive layers on chiplets close to the previous layer.

    Layer 0 starts at the chiplet with the most free memory (lowest id on
    ties); every later layer ranks chiplets by hop distance from the chiplet
    nearest the rounded centroid of the previous layer's chiplets.
    """

    name = "nearest-neighbor"

    def __init__(self, config: SystemConfig, routes=None):
        self.config = config
        self.routes = routes or compute_routes(config)
        self.compute_ids = sorted(c.id for c in config.compute_chiplets)
        self._grid = {c.grid_pos: c.id for c in config.chiplets}
        self._pos = {c.id: c.grid_pos for c in config.chiplets}

    def anchor_for(self, chiplets) -> int:
        n = len(chiplets)
        cx = sum(self._pos[c][0] for c in chiplets) / n
        cy = sum(self._pos[c][1] for c in chiplets) / n
        gx, gy = int(cx + 0.5), int(cy + 0.5)
        if (gx, gy) in self._grid:
            return self._grid[(gx, gy)]
        return min(self._pos, key=lambda c: (abs(self._pos[c][0] - gx) + abs(self._pos[c][1] - gy), c))

    def place(self, model, occupancy: OccupancyState):
        free = occupancy.free_map()
        if model.weight_bytes > sum(free.values()):
            return None
        hops = self.routes.dist
        layers = []
        prev = None
        for l, stats in enumerate(model.stats):
            if prev is None:
                anchor = min(self.compute_ids, key=lambda c: (-free[c], c))
            else:
                anchor = self.anchor_for(prev)
            order = sorted(self.compute_ids, key=lambda c: (hops[anchor][c], c))
            try:
                split = segment_layer(stats, [(c, free[c]) for c in order])
            except NotMappableError:
                return None
            w, m = stats.weight_bytes, stats.macs
            segs = []
            cum = 0
            for idx, (cid, nbytes) in enumerate(split):
                if w:
                    macs = m * (cum + nbytes) // w - m * cum // w
                    fraction = nbytes / w
                else:
                    macs, fraction = m, 1.0
                cum += nbytes
                free[cid] -= nbytes
                segs.append(SegmentAssignment(model.id, l, idx, cid, fraction, nbytes, macs))
            layers.append(segs)
            prev = [s.chiplet_id for s in segs]
        return layers

    def nearest_io(self, chiplet_id) -> int:
        ios = [c.id for c in self.config.io_chiplets]
        return min(ios, key=lambda io: (self.routes.dist[io][chiplet_id], io))


MAPPERS = {"nearest-neighbor": NearestNeighborMapper}


def make_mapper(name: str, config: SystemConfig, routes=None):
    try:
        return MAPPERS[name](config, routes)
    except KeyError:
        from .errors import ConfigError
        raise ConfigError(f"unknown mapping strategy {name!r}", "mapper") from None


def place_model(model, occupancy: OccupancyState, config: SystemConfig, mapper=None):
    """Map every layer of ``model`` and commit it to ``occupancy``.

    Returns per-layer segment lists, or ``None`` (with ``occupancy``
    untouched) when some layer cannot be placed.
    """
    mapper = mapper or NearestNeighborMapper(config)
    layers = mapper.place(model, occupancy)
    if layers is None:
        return None
    occupancy.apply(layers)
    return layers


def release_model(assignments, occupancy: OccupancyState) -> OccupancyState:
    segs = [s for layer in assignments for s in layer]
    for s in segs:
        if s.key not in occupancy.resident.get(s.chiplet_id, {}):
            raise ConsistencyError(f"segment {s.key} is not resident on chiplet {s.chiplet_id}")
    for s in segs:
        del occupancy.resident[s.chiplet_id][s.key]
        occupancy.used[s.chiplet_id] -= s.weight_bytes
    return occupancy
