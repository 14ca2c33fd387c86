"""Cycle-level network-on-interposer simulator.

Wormhole switching with one virtual channel, credit-based backpressure and
per-output round-robin switch allocation. The network keeps its state between
``advance`` calls, so flows can be injected at any point in simulated time and
overlap with whatever is already in flight.

Cycle ``c`` consists of two phases:

* switch phase: every output port grants up to ``bandwidth`` flits of its
  locked packet whose arrival is at least ``router_latency`` cycles old and
  for which a downstream credit is available; a flit sent on a link arrives
  at the next router ``latency`` cycles later, a flit sent to the ejection
  port is delivered in cycle ``c``;
* injection phase: each source interface moves up to its injection bandwidth
  of flits from its FIFO of packets into the router's local input buffer.

Credits freed by a departure in cycle ``c`` are usable from cycle ``c + 1``.
Input ports are scanned in fixed index order (0 is the local port, then
incoming links by source id); a grant moves the port's pointer past the
winner. Pointers return to zero whenever the network drains completely, so
the fate of a burst of traffic depends only on traffic since the last idle
instant.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Iterable

DEFAULT_MAX_PACKET_FLITS = 16


@dataclass(eq=False)
class Flow:
    id: int
    model_id: int
    layer_idx: int
    inference_idx: int
    src: int
    dst: int
    bytes: int
    inject_time: int
    complete_time: int | None = None
    kind: str = "activation"

    @property
    def latency(self):
        if self.complete_time is None:
            return None
        return self.complete_time - self.inject_time

    def __repr__(self):
        return (f"Flow(id={self.id}, {self.src}->{self.dst}, {self.bytes} B, "
                f"t={self.inject_time}..{self.complete_time})")


class Packet:
    __slots__ = ("flow", "dst", "flit_count", "inject_cycle", "injected", "route",
                 "head_injected", "tail_delivered")

    def __init__(self, flow, dst, flit_count, inject_cycle, route):
        self.flow = flow
        self.dst = dst
        self.flit_count = flit_count
        self.inject_cycle = inject_cycle
        self.injected = 0
        self.route = route
        self.head_injected = None
        self.tail_delivered = None


def packetize(nbytes: int, flit_bytes: int, max_packet_flits: int = DEFAULT_MAX_PACKET_FLITS) -> list:
    """Flit counts of the packets carrying ``nbytes``."""
    flits = -(-nbytes // flit_bytes)
    sizes = [max_packet_flits] * (flits // max_packet_flits)
    if flits % max_packet_flits:
        sizes.append(flits % max_packet_flits)
    return sizes


class NoiSimulator:
    """Persistent network state plus the cycle loop.

    ``nodes`` are chiplet ids, ``links`` are ``(src, dst, bandwidth, latency)``
    tuples and ``next_hop(cur, dst)`` gives the routing decision. Time given to
    and returned by the public methods is in nanoseconds; one cycle lasts
    ``cycle_period`` ns.
    """

    def __init__(self, nodes, links, next_hop, *, router_latency=2, buffer_depth=8, flit_bytes=16,
                 max_packet_flits=DEFAULT_MAX_PACKET_FLITS, cycle_period=1, bin_cycles=1000,
                 trace=False):
        if router_latency < 1 or buffer_depth < 1 or flit_bytes < 1 or max_packet_flits < 1:
            raise ValueError("router_latency, buffer_depth, flit_bytes and max_packet_flits must be positive")
        if cycle_period < 1 or int(cycle_period) != cycle_period:
            raise ValueError("cycle_period must be a positive integer number of ns")
        self.nodes = sorted(nodes)
        self.index = {n: i for i, n in enumerate(self.nodes)}
        self.router_latency = router_latency
        self.buffer_depth = buffer_depth
        self.flit_bytes = flit_bytes
        self.max_packet_flits = max_packet_flits
        self.cycle_period = int(cycle_period)
        self.bin_cycles = bin_cycles
        n = len(self.nodes)

        self.links = sorted((int(s), int(d), int(b), int(l)) for s, d, b, l in links)
        out_links = defaultdict(list)
        in_links = defaultdict(list)
        for lid, (s, d, b, l) in enumerate(self.links):
            if b < 1 or l < 1:
                raise ValueError(f"link {s}->{d}: bandwidth and latency must be positive")
            out_links[s].append((d, lid))
            in_links[d].append((s, lid))
        self.link_index = {(s, d): lid for lid, (s, d, _, _) in enumerate(self.links)}

        # output port 0 is ejection, then outgoing links by destination id
        self.out_bw, self.out_lat, self.out_dest, self.out_link = [], [], [], []
        self.out_credits, self.out_lock, self.out_rr = [], [], []
        self.in_bufs, self.in_lock, self.in_credit_ret = [], [], []
        out_port_of = [dict() for _ in range(n)]
        in_port_of = [dict() for _ in range(n)]
        for r, node in enumerate(self.nodes):
            ins = sorted(in_links[node])
            outs = sorted(out_links[node])
            for i, (s, _) in enumerate(ins, start=1):
                in_port_of[r][self.index[s]] = i
            for o, (d, _) in enumerate(outs, start=1):
                out_port_of[r][self.index[d]] = o
            ej_bw = max([self.links[lid][2] for _, lid in ins], default=1)
            self.out_bw.append([ej_bw] + [self.links[lid][2] for _, lid in outs])
            self.out_lat.append([0] + [self.links[lid][3] for _, lid in outs])
            self.out_link.append([-1] + [lid for _, lid in outs])
            self.out_credits.append([0] + [buffer_depth] * len(outs))
            self.out_lock.append([-1] * (len(outs) + 1))
            self.out_rr.append([0] * (len(outs) + 1))
            self.in_bufs.append([deque() for _ in range(len(ins) + 1)])
            self.in_lock.append([-1] * (len(ins) + 1))
        self.inj_bw = [max(bws[1:], default=1) for bws in self.out_bw]
        self.local_credits = [buffer_depth] * n
        for r in range(n):
            dests = [None]
            for o in range(1, len(self.out_bw[r])):
                d = self.index[self.links[self.out_link[r][o]][1]]
                dests.append((d, in_port_of[d][r]))
            self.out_dest.append(dests)
        for r in range(n):
            rets = [(self.local_credits, r)]
            for i in range(1, len(self.in_bufs[r])):
                u = next(u for u, port in in_port_of[r].items() if port == i)
                rets.append((self.out_credits[u], out_port_of[u][r]))
            self.in_credit_ret.append(rets)

        # route_out[r][d]: output port used at router r towards node d
        self.route_out = []
        self._next_hop = next_hop
        for r, node in enumerate(self.nodes):
            row = []
            for d, dst in enumerate(self.nodes):
                if d == r:
                    row.append(0)
                    continue
                nh = next_hop(node, dst)
                if nh is None or self.index.get(nh) not in out_port_of[r]:
                    row.append(-1)
                else:
                    row.append(out_port_of[r][self.index[nh]])
            self.route_out.append(row)

        self.now = 0
        self.elapsed_cycles = 0
        self.inj_queues = [deque() for _ in range(n)]
        self._queued_sources = set()
        self.buffered = [0] * n
        self.active = set()
        self.in_network = 0
        self.pending_credits = []
        self._rr_dirty = False
        self.flows = {}
        self._open_packets = {}
        self.injected_flits = 0
        self.delivered_flits = 0
        self.created_flits = 0
        self.hop_count = 0
        self._bin = 0
        self._hops_cur = [0] * n
        self._links_cur = [0] * len(self.links)
        self.hop_bins = {}
        self.link_bins = {}
        self.trace = [] if trace else None

    # --- construction helpers ------------------------------------------------

    @classmethod
    def from_config(cls, config, routes=None, trace=False):
        """Build from a ``SystemConfig`` (and optionally its ``RoutingTable``)."""
        if routes is None:
            from .hardware import compute_routes
            routes = compute_routes(config)
        bin_cycles = max(1, int(round(config.time_step * 1000 / config.cycle_period)))
        return cls([c.id for c in config.chiplets],
                   [(l.src, l.dst, l.bandwidth, l.latency) for l in config.links],
                   routes.next_hop, router_latency=config.router_latency,
                   buffer_depth=config.buffer_depth, flit_bytes=config.flit_bytes,
                   max_packet_flits=config.max_packet_flits, cycle_period=config.cycle_period,
                   bin_cycles=bin_cycles, trace=trace)

    def fresh(self):
        """An empty simulator with the same topology and parameters."""
        return NoiSimulator(self.nodes, self.links, self._next_hop, router_latency=self.router_latency,
                            buffer_depth=self.buffer_depth, flit_bytes=self.flit_bytes,
                            max_packet_flits=self.max_packet_flits, cycle_period=self.cycle_period,
                            bin_cycles=self.bin_cycles, trace=self.trace is not None)

    # --- public API ------------------------------------------------------------

    @property
    def now_ns(self) -> int:
        return self.now * self.cycle_period

    @property
    def idle(self) -> bool:
        return self.in_network == 0 and not self._queued_sources

    def route(self, src, dst) -> list:
        path = [src]
        cur = src
        while cur != dst:
            cur = self._next_hop(cur, dst)
            path.append(cur)
            if len(path) > len(self.nodes) + 1:
                raise ValueError(f"routing loop between {src} and {dst}")
        return path

    def inject_flows(self, flows: Iterable[Flow]) -> None:
        """Queue flows at their sources in the given order."""
        p = self.cycle_period
        for flow in flows:
            if flow.src == flow.dst:
                raise ValueError(f"flow {flow.id}: local traffic must not enter the network")
            if flow.bytes <= 0:
                raise ValueError(f"flow {flow.id}: bytes must be positive")
            if flow.inject_time < self.now_ns:
                raise ValueError(f"flow {flow.id}: injected at {flow.inject_time} ns, network is at "
                                 f"{self.now_ns} ns")
            s, d = self.index[flow.src], self.index[flow.dst]
            if self.route_out[s][d] < 0:
                raise ValueError(f"no route from {flow.src} to {flow.dst}")
            cycle = -(-flow.inject_time // p)
            sizes = packetize(flow.bytes, self.flit_bytes, self.max_packet_flits)
            route = self.route(flow.src, flow.dst)
            queue = self.inj_queues[s]
            for size in sizes:
                queue.append(Packet(flow, d, size, cycle, route))
            self.created_flits += sum(sizes)
            self._open_packets[flow.id] = len(sizes)
            self.flows[flow.id] = flow
            self._queued_sources.add(s)

    def advance(self, until=None) -> list:
        """Simulate until ``until`` ns or the first cycle that completes a flow.

        ``until=None`` runs to the first completion, or returns an empty list
        immediately if nothing is left in the network.
        """
        target = None if until is None else until // self.cycle_period
        if target is not None and target < self.now:
            raise ValueError(f"cannot advance backwards to {until} ns (now {self.now_ns} ns)")
        while target is None or self.now < target:
            if self.in_network == 0 and not self._injectable(self.now):
                nxt = self._next_injection_cycle()
                if nxt is None:
                    if target is None:
                        return []
                    nxt = target
                nxt = nxt if target is None else min(nxt, target)
                if nxt > self.now:
                    self._apply_credits()
                    self.elapsed_cycles += nxt - self.now
                    self.now = nxt
                    continue
            self._inject(self.now)
            self._apply_credits()
            self.now += 1
            self.elapsed_cycles += 1
            done = self._switch(self.now)
            if done:
                return sorted(done, key=lambda f: f.id)
        return []

    def run_to_completion(self) -> list:
        """Advance until every queued flow has completed."""
        done = []
        while not self.idle:
            done.extend(self.advance())
        return done

    # --- cycle phases -------------------------------------------------------------

    def _injectable(self, cycle) -> bool:
        for s in self._queued_sources:
            if self.inj_queues[s][0].inject_cycle <= cycle:
                return True
        return False

    def _next_injection_cycle(self):
        if not self._queued_sources:
            return None
        return min(self.inj_queues[s][0].inject_cycle for s in self._queued_sources)

    def _inject(self, c):
        if not self._queued_sources:
            return
        emptied = []
        for s in self._queued_sources:
            queue = self.inj_queues[s]
            bw = self.inj_bw[s]
            buf = self.in_bufs[s][0]
            while bw and queue and self.local_credits[s] > 0:
                pkt = queue[0]
                if pkt.inject_cycle > c:
                    break
                seq = pkt.injected
                if seq == 0:
                    pkt.head_injected = c
                buf.append((c, pkt, seq))
                self.local_credits[s] -= 1
                self.buffered[s] += 1
                self.in_network += 1
                self.injected_flits += 1
                pkt.injected = seq + 1
                bw -= 1
                if pkt.injected == pkt.flit_count:
                    queue.popleft()
            if self.buffered[s]:
                self.active.add(s)
            if not queue:
                emptied.append(s)
        for s in emptied:
            self._queued_sources.discard(s)

    def _apply_credits(self):
        if self.pending_credits:
            for lst, idx in self.pending_credits:
                lst[idx] += 1
            self.pending_credits = []

    def _flush_bins(self):
        b = self._bin
        for r, count in enumerate(self._hops_cur):
            if count:
                key = (self.nodes[r], b)
                self.hop_bins[key] = self.hop_bins.get(key, 0) + count
                self._hops_cur[r] = 0
        for lid, count in enumerate(self._links_cur):
            if count:
                key = (lid, b)
                self.link_bins[key] = self.link_bins.get(key, 0) + count
                self._links_cur[lid] = 0

    def _switch(self, c):
        b = c // self.bin_cycles
        if b != self._bin:
            self._flush_bins()
            self._bin = b
        R = self.router_latency
        done = []
        pending = self.pending_credits
        hops_cur, links_cur = self._hops_cur, self._links_cur
        trace = self.trace
        in_bufs_all = self.in_bufs
        buffered = self.buffered
        active = self.active
        for r in sorted(active):
            bufs = in_bufs_all[r]
            in_lock = self.in_lock[r]
            out_lock = self.out_lock[r]
            routes = self.route_out[r]
            # switch allocation for idle outputs
            cand = None
            for i, buf in enumerate(bufs):
                if buf and in_lock[i] < 0:
                    head = buf[0]
                    if head[0] + R <= c:
                        o = routes[head[1].dst]
                        if out_lock[o] < 0:
                            if cand is None:
                                cand = {}
                            cand.setdefault(o, []).append(i)
            if cand:
                rr = self.out_rr[r]
                n_in = len(bufs)
                for o, inputs in cand.items():
                    p = rr[o]
                    win = min(inputs, key=lambda i: (i - p) % n_in)
                    out_lock[o] = win
                    in_lock[win] = o
                    rr[o] = (win + 1) % n_in
                    self._rr_dirty = True
            # switch traversal for locked outputs
            credits = self.out_credits[r]
            rets = self.in_credit_ret[r]
            for o, i in enumerate(out_lock):
                if i < 0:
                    continue
                buf = bufs[i]
                bw = self.out_bw[r][o]
                sent = 0
                while sent < bw and buf:
                    arr, pkt, seq = buf[0]
                    if arr + R > c:
                        break
                    if o:
                        if credits[o] <= 0:
                            break
                        credits[o] -= 1
                        dr, di = self.out_dest[r][o]
                        in_bufs_all[dr][di].append((c + self.out_lat[r][o], pkt, seq))
                        buffered[dr] += 1
                        active.add(dr)
                        hops_cur[r] += 1
                        lid = self.out_link[r][o]
                        links_cur[lid] += 1
                        self.hop_count += 1
                    else:
                        self.in_network -= 1
                        self.delivered_flits += 1
                        if seq == pkt.flit_count - 1:
                            pkt.tail_delivered = c
                            flow = pkt.flow
                            left = self._open_packets[flow.id] - 1
                            self._open_packets[flow.id] = left
                            if left == 0:
                                del self._open_packets[flow.id]
                                flow.complete_time = c * self.cycle_period
                                done.append(flow)
                    buf.popleft()
                    buffered[r] -= 1
                    pending.append(rets[i])
                    sent += 1
                    if seq == pkt.flit_count - 1:
                        out_lock[o] = -1
                        in_lock[i] = -1
                        break
                if trace is not None and sent and o:
                    trace.append((c, self.out_link[r][o], sent))
            if not buffered[r]:
                active.discard(r)
        if self.in_network == 0 and self._rr_dirty:
            for rr in self.out_rr:
                for o in range(len(rr)):
                    rr[o] = 0
            self._rr_dirty = False
        return done

    # --- statistics -----------------------------------------------------------------

    def check_invariants(self) -> None:
        """Assert flit conservation and credit accounting (used by tests)."""
        assert self.injected_flits == self.delivered_flits + self.in_network
        assert sum(self.buffered) == self.in_network
        pending = defaultdict(int)
        for lst, idx in self.pending_credits:
            pending[(id(lst), idx)] += 1
        for r in range(len(self.nodes)):
            for i, buf in enumerate(self.in_bufs[r]):
                assert len(buf) <= self.buffer_depth
                lst, idx = self.in_credit_ret[r][i]
                assert lst[idx] + pending[(id(lst), idx)] + len(buf) == self.buffer_depth

    def _window_bins(self, window):
        period = self.cycle_period
        if window is None:
            return 0, self.now, None, None
        start_ns, end_ns = window
        c0, c1 = start_ns // period, end_ns // period
        return c0, c1, c0 // self.bin_cycles, -(-c1 // self.bin_cycles)

    def _bins(self):
        self._flush_bins()
        return self.hop_bins, self.link_bins

    def flow_stats(self, window=None) -> dict:
        """Completed-flow latencies, link utilisation and per-source aggregates.

        ``window`` is ``(start_ns, end_ns)``; link counters are kept per power
        bin, so the window is widened to whole bins.
        """
        c0, c1, b0, b1 = self._window_bins(window)
        flows = {}
        sources = {}
        for fid, flow in sorted(self.flows.items()):
            if flow.complete_time is None:
                continue
            if window is not None and not (window[0] <= flow.inject_time and flow.complete_time <= window[1]):
                continue
            flows[fid] = {"latency": flow.latency, "bytes": flow.bytes, "src": flow.src, "dst": flow.dst}
            agg = sources.setdefault(flow.src, {"flows": 0, "bytes": 0, "latency_sum": 0})
            agg["flows"] += 1
            agg["bytes"] += flow.bytes
            agg["latency_sum"] += flow.latency
        for agg in sources.values():
            agg["mean_latency"] = agg["latency_sum"] / agg["flows"]
        _, link_bins = self._bins()
        if window is None:
            cycles = max(1, self.now)
        else:
            cycles = max(1, (b1 - b0) * self.bin_cycles)
        per_link = defaultdict(int)
        for (lid, b), count in link_bins.items():
            if b0 is None or b0 <= b < b1:
                per_link[lid] += count
        links = {}
        for lid, (s, d, bw, _) in enumerate(self.links):
            links[(s, d)] = per_link.get(lid, 0) / (bw * cycles)
        return {"flows": flows, "links": links, "sources": sources}

    def network_energy(self, energy_per_flit_hop: float, window=None):
        """Total hop energy and its split over the chiplets sending each hop."""
        _, _, b0, b1 = self._window_bins(window)
        hop_bins, _ = self._bins()
        per_chiplet = defaultdict(float)
        for (node, b), count in hop_bins.items():
            if b0 is None or b0 <= b < b1:
                per_chiplet[node] += count * energy_per_flit_hop
        total = sum(per_chiplet.values())
        return total, dict(sorted(per_chiplet.items()))

    def hop_series(self) -> dict:
        """``{(chiplet, bin_index): flit_hops}`` over the whole run."""
        hop_bins, _ = self._bins()
        return dict(hop_bins)
