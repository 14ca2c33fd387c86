import itertools
import json

import pytest

from chiplet_cosim.errors import ConfigError
from chiplet_cosim.hardware import (LinkSpec, build_mesh, compute_routes, load_config, mesh_config,
                                    serialize_config)
from conftest import CONFIGS
from oracles import mesh_xy_path


@pytest.mark.parametrize("w,h,n_links", [(10, 10, 360), (1, 1, 0), (2, 2, 8), (3, 1, 4)])
def test_build_mesh_counts(w, h, n_links):
    chiplets, links = build_mesh(w, h, LinkSpec(0, 0, 2, 3))
    assert len(chiplets) == w * h
    assert len(links) == n_links
    assert all(l.bandwidth == 2 and l.latency == 3 for l in links)
    assert len({(l.src, l.dst) for l in links}) == n_links


def test_mesh_shorthand_expands():
    cfg = load_config({"mesh": "10x10"})
    assert len(cfg.chiplets) == 100 and len(cfg.links) == 360 and cfg.topology_kind == "mesh"


def test_xy_route_example():
    cfg = mesh_config(4, 3)
    routes = compute_routes(cfg)
    grid = {c.grid_pos: c.id for c in cfg.chiplets}
    hops = routes.path(grid[(1, 1)], grid[(3, 2)])
    assert hops == [grid[(2, 1)], grid[(3, 1)], grid[(3, 2)]]
    assert routes.path(5, 5) == []


def test_xy_routes_exhaustive():
    cfg = mesh_config(5, 4)
    routes = compute_routes(cfg)
    for s, d in itertools.product(range(20), repeat=2):
        path = routes.path(s, d)
        assert path == mesh_xy_path(5, s, d)
        assert len(path) == len(set(path))
        assert len(path) == abs(s % 5 - d % 5) + abs(s // 5 - d // 5)


def _ring(n=4, extra=None):
    chiplets = [{"id": i, "type_tag": "a", "grid_pos": [i, 0], "phys_pos": [i * 5, 0, 4, 4],
                 "mem_capacity": 100, "throughput": 1e9, "energy_per_mac": 0, "static_power": 0}
                for i in range(n)]
    links = []
    for i in range(n):
        j = (i + 1) % n
        links += [{"src": i, "dst": j}, {"src": j, "dst": i}]
    doc = {"topology_kind": "custom", "chiplets": chiplets, "links": links}
    doc.update(extra or {})
    return doc


def test_ring_tie_break_lowest_next_hop():
    cfg = load_config(_ring())
    routes = compute_routes(cfg)
    assert routes.path(0, 2) == [1, 2]
    assert routes.path(2, 0) == [1, 0]
    # brute force: every shortest path's first hop, lowest id wins
    for s, d in itertools.permutations(range(4), 2):
        best = min(routes.hops(n, d) for n in routes.neighbors[s])
        expect = min(n for n in routes.neighbors[s] if routes.hops(n, d) == best)
        assert routes.next_hop(s, d) == expect


def test_disconnected_topology_rejected():
    doc = _ring(3)
    doc["chiplets"].append({"id": 3, "type_tag": "a", "grid_pos": [3, 0], "phys_pos": [20, 0, 4, 4],
                            "mem_capacity": 100, "throughput": 1e9, "energy_per_mac": 0, "static_power": 0})
    with pytest.raises(ConfigError, match="disconnected"):
        load_config(doc)


def test_overlap_and_nonpositive_rejected():
    doc = _ring()
    doc["chiplets"][1]["phys_pos"] = [2, 0, 4, 4]
    with pytest.raises(ConfigError, match="overlap"):
        load_config(doc)
    doc = _ring()
    doc["chiplets"][2]["mem_capacity"] = 0
    with pytest.raises(ConfigError, match=r"chiplets\[2\].mem_capacity"):
        load_config(doc)
    with pytest.raises(ConfigError, match="timing.router_latency"):
        load_config({"mesh": "2x2", "timing": {"router_latency": 0}})
    with pytest.raises(ConfigError, match="bandwidth"):
        load_config({"mesh": "2x2", "link_template": {"bandwidth": -1}})


def test_ring_of_six_routes_are_deadlock_checked():
    # shortest paths on a 6-ring form a cyclic channel dependency
    with pytest.raises(ConfigError, match="cyclic"):
        load_config(_ring(6))


def test_alternating_types():
    cfg = load_config(CONFIGS / "hetero10x10.json")
    tags = {c.grid_pos: c.type_tag for c in cfg.chiplets}
    assert sum(t == "imc-a" for t in tags.values()) == 50
    for (x, y), tag in tags.items():
        for nb in ((x + 1, y), (x, y + 1)):
            if nb in tags:
                assert tags[nb] != tag


def test_unknown_backend_tag_rejected():
    with pytest.raises(ConfigError, match="no backend registered"):
        load_config({"mesh": "2x2", "backends": {"other": {"name": "analytical"}}})
    with pytest.raises(ConfigError, match="unknown backend"):
        load_config({"mesh": "2x2", "backends": {"imc-a": {"name": "cimloop"}}})


def test_io_corners():
    cfg = load_config(CONFIGS / "mesh10x10_io.json")
    assert sorted(c.id for c in cfg.io_chiplets) == [0, 9, 90, 99]
    assert len(cfg.compute_chiplets) == 96


def test_serialize_round_trip():
    for path in sorted(CONFIGS.glob("*.json")):
        doc = json.loads(path.read_text())
        if "mesh" not in doc and "chiplets" not in doc:
            continue
        cfg = load_config(path)
        again = load_config(serialize_config(cfg))
        assert again == cfg
        assert serialize_config(again) == serialize_config(cfg)
        assert compute_routes(again)._next == compute_routes(cfg)._next


def test_bad_documents():
    with pytest.raises(ConfigError, match="line"):
        load_config("{\n  \"mesh\": ,\n}")
    with pytest.raises(ConfigError, match="not found"):
        load_config("missing.json")
    with pytest.raises(ConfigError):
        load_config({"nothing": 1})
