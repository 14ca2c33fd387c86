"""Brute-force reference models used only by the tests.

They are written from the documented semantics, not from the package code,
and favour obviousness over speed.
"""

from __future__ import annotations

import itertools


def count_macs(layer):
    """MACs of a conv/fc/attention layer by walking every output and filter tap."""
    if layer.kind == "pool":
        return 0
    if layer.kind == "fc":
        return sum(1 for _ in range(layer.in_c) for _ in range(layer.out_c))
    total = 0
    for _oy in range(layer.out_h):
        for _ox in range(layer.out_w):
            for _oc in range(layer.out_c):
                for _ky in range(layer.k_h):
                    for _kx in range(layer.k_w):
                        total += layer.in_c
    return total


def count_output_positions(in_size, k, stride, padding):
    """Number of window positions along one axis by explicit enumeration."""
    if padding == "same":
        # the window is centred on every stride-th input position
        return len(range(0, in_size, stride))
    return sum(1 for start in range(0, in_size, stride) if start + k <= in_size)


def min_segments(weight, free):
    """Fewest chiplets whose capacities cover ``weight``, by subset enumeration."""
    if weight == 0:
        return 1
    free = [f for f in free if f > 0]
    for k in range(1, len(free) + 1):
        if any(sum(c) >= weight for c in itertools.combinations(free, k)):
            return k
    return None


def mesh_xy_path(width, src, dst):
    """Chiplets visited from src to dst under X-then-Y routing (excluding src)."""
    (sx, sy), (dx, dy) = (src % width, src // width), (dst % width, dst // width)
    path = []
    x, y = sx, sy
    while x != dx:
        x += 1 if dx > x else -1
        path.append(y * width + x)
    while y != dy:
        y += 1 if dy > y else -1
        path.append(y * width + x)
    return path


class ReferenceNetwork:
    """Flit-by-flit walker with explicit buffers, credits and arbiters.

    Per cycle ``c >= 1`` every router first allocates free outputs to waiting
    packet heads (round-robin over input ports, starting at the port after the
    previous winner), then sends up to ``bandwidth`` flits per locked output.
    A flit may leave a router ``router_latency`` cycles after it arrived. After
    the switch phase, sources inject up to their injection bandwidth into the
    local input buffer. A freed buffer slot becomes usable in the cycle after
    the flit left it. Arbiters restart from port 0 whenever the network holds
    no flits.
    """

    def __init__(self, nodes, links, path_of, router_latency=2, depth=8, flit_bytes=16, max_packet=16):
        self.R, self.depth, self.flit_bytes, self.max_packet = router_latency, depth, flit_bytes, max_packet
        self.nodes = sorted(nodes)
        self.links = {(s, d): (bw, lat) for s, d, bw, lat in links}
        self.path_of = path_of
        self.inputs, self.outputs = {}, {}
        for n in self.nodes:
            self.inputs[n] = ["local"] + sorted(s for (s, d) in self.links if d == n)
            self.outputs[n] = ["eject"] + sorted(d for (s, d) in self.links if s == n)
        self.buf = {(n, p): [] for n in self.nodes for p in self.inputs[n]}
        self.lock_out = {(n, o): None for n in self.nodes for o in self.outputs[n]}
        self.lock_in = {(n, p): None for n in self.nodes for p in self.inputs[n]}
        self.pointer = {(n, o): 0 for n in self.nodes for o in self.outputs[n]}
        # per buffer: one record per flit that holds a slot, [cycle the slot was freed or None]
        self.slots = {(n, p): [] for n in self.nodes for p in self.inputs[n]}
        self.waiting = {n: [] for n in self.nodes}
        self.outstanding = 0
        self.done = {}

    def add_flow(self, fid, src, dst, nbytes, cycle):
        flits = -(-nbytes // self.flit_bytes)
        sizes = []
        while flits > 0:
            sizes.append(min(self.max_packet, flits))
            flits -= sizes[-1]
        hops = [src] + self.path_of(src, dst)
        for pi, size in enumerate(sizes):
            for seq in range(size):
                self.waiting[src].append({"flow": fid, "seq": seq, "size": size, "path": hops, "hop": 0,
                                          "start": cycle, "last": pi == len(sizes) - 1})
        self.outstanding += 1

    def _free_slots(self, key, c):
        return self.depth - sum(1 for rec in self.slots[key] if rec[0] is None or rec[0] >= c)

    def _occupy(self, key, flit):
        flit["slot"] = [None]
        self.slots[key].append(flit["slot"])
        self.buf[key].append(flit)

    def _wanted_output(self, flit):
        if flit["hop"] == len(flit["path"]) - 1:
            return "eject"
        return flit["path"][flit["hop"] + 1]

    def _switch(self, c):
        for n in self.nodes:
            ins = self.inputs[n]
            wanted = {}
            for pi, p in enumerate(ins):
                q = self.buf[(n, p)]
                if q and self.lock_in[(n, p)] is None and q[0]["ready"] + self.R <= c:
                    o = self._wanted_output(q[0])
                    if self.lock_out[(n, o)] is None:
                        wanted.setdefault(o, []).append(pi)
            for o, cands in wanted.items():
                start = self.pointer[(n, o)]
                winner = next(pi for pi in ((start + k) % len(ins) for k in range(len(ins))) if pi in cands)
                self.lock_out[(n, o)] = ins[winner]
                self.lock_in[(n, ins[winner])] = o
                self.pointer[(n, o)] = (winner + 1) % len(ins)
            for o in self.outputs[n]:
                p = self.lock_out[(n, o)]
                if p is None:
                    continue
                q = self.buf[(n, p)]
                if o == "eject":
                    bw, lat = max(bw for (s, d), (bw, _) in self.links.items() if d == n), 0
                else:
                    bw, lat = self.links[(n, o)]
                for _ in range(bw):
                    if not q or q[0]["ready"] + self.R > c:
                        break
                    if o != "eject" and self._free_slots((o, n), c) <= 0:
                        break
                    flit = q.pop(0)
                    flit["slot"][0] = c
                    tail = flit["seq"] == flit["size"] - 1
                    if o == "eject":
                        if tail and flit["last"]:
                            self.done[flit["flow"]] = c
                            self.outstanding -= 1
                    else:
                        flit["hop"] += 1
                        flit["ready"] = c + lat
                        self._occupy((o, n), flit)
                    if tail:
                        self.lock_out[(n, o)] = None
                        self.lock_in[(n, p)] = None
                        break
        if all(not q for q in self.buf.values()):
            for key in self.pointer:
                self.pointer[key] = 0

    def _inject(self, c):
        for n in self.nodes:
            outs = [d for (s, d) in self.links if s == n]
            bw = max(self.links[(n, d)][0] for d in outs) if outs else 1
            queue = self.waiting[n]
            sent = 0
            while sent < bw and queue and queue[0]["start"] <= c and self._free_slots((n, "local"), c) > 0:
                flit = queue.pop(0)
                flit["ready"] = c
                self._occupy((n, "local"), flit)
                sent += 1

    def run(self, limit=1_000_000):
        c = 0
        self._inject(0)
        while self.outstanding and c < limit:
            c += 1
            self._switch(c)
            self._inject(c)
        return dict(self.done)


def reference_latencies(config, flows, routes):
    """Completion cycle per flow id for flows ``(id, src, dst, bytes, inject_cycle)``."""
    links = [(l.src, l.dst, l.bandwidth, l.latency) for l in config.links]
    net = ReferenceNetwork([c.id for c in config.chiplets], links, routes.path, config.router_latency,
                           config.buffer_depth, config.flit_bytes, config.max_packet_flits)
    for fid, src, dst, nbytes, cycle in sorted(flows, key=lambda f: f[4]):
        net.add_flow(fid, src, dst, nbytes, cycle)
    return net.run()
