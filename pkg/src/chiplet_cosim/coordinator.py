"""Global event loop tying mapping, compute evaluation and the network together.

All times are integer nanoseconds. The network simulator keeps running state;
before an event at time ``t`` is handled the network is advanced to ``t`` and
every flow that completes on the way is handled at its own completion time,
so flow completions always precede compute completions and mapping attempts
stamped with the same time.

A layer's segments start together and the layer finishes when its slowest
segment does; its output flows are injected at that moment. In pipelined
mode layer ``l`` may start inference ``r`` once its inputs for ``r`` have
arrived and all of its outputs for ``r - 1`` have been delivered. Without
pipelining an inference starts only after the previous one has left the last
layer.
"""

from __future__ import annotations

import copy
import heapq
import itertools
import logging
from dataclasses import dataclass, field

from .compute import BackendSet
from .errors import ConfigError, ConsistencyError
from .hardware import SystemConfig, compute_routes
from .mapper import OccupancyState, make_mapper, release_model
from .noi import Flow, NoiSimulator
from .workload import generate_traffic, next_mappable_model

log = logging.getLogger(__name__)

FLOW_COMPLETE, COMPUTE_COMPLETE, MODEL_READY = 0, 1, 2
EVENT_NAMES = {FLOW_COMPLETE: "flow_complete", COMPUTE_COMPLETE: "compute_complete", MODEL_READY: "model_ready"}


@dataclass(order=True)
class SimEvent:
    time: int
    priority: int
    sequence: int
    payload: tuple = field(compare=False, default=())

    @property
    def kind(self):
        return EVENT_NAMES[self.priority]


class EventQueue:
    def __init__(self):
        self._heap = []
        self._seq = itertools.count()
        self.now = 0

    def push(self, time, priority, payload=()):
        if time < self.now:
            raise ConsistencyError(f"event scheduled at {time} ns, clock is at {self.now} ns")
        heapq.heappush(self._heap, SimEvent(time, priority, next(self._seq), payload))

    def pop(self) -> SimEvent:
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev

    def peek_time(self):
        return self._heap[0].time if self._heap else None

    def __len__(self):
        return len(self._heap)


@dataclass
class LayerProgress:
    """Per-layer pipeline counters (inferences are handled in order)."""
    started: int = 0
    ready: int = 0
    sent: int = 0
    computing: bool = False
    outstanding: dict = field(default_factory=dict)
    send_start: dict = field(default_factory=dict)


@dataclass(eq=False)
class ModelRun:
    model: object
    layers: list
    latency: list
    results: list
    mapped_at: int
    progress: list = field(default_factory=list)
    weights_left: int = 0
    inference_start: list = field(default_factory=list)
    inference_end: list = field(default_factory=list)
    compute_ns: list = field(default_factory=list)
    comm_ns: list = field(default_factory=list)
    finished_at: int | None = None
    weight_done_at: int | None = None


@dataclass
class ComputeEvent:
    chiplet: int
    start: int
    end: int
    energy: float


class SimulationReport:
    """Results of one run; ``to_dict`` is JSON-ready and deterministic."""

    def __init__(self, mode, pipelined, weight_stationary, config, meta=None):
        self.mode = mode
        self.pipelined = pipelined
        self.weight_stationary = weight_stationary
        self.config = config
        self.meta = dict(meta or {})
        self.models = []
        self.skipped = []
        self.flows = []
        self.compute_events = []
        self.network = None
        self.makespan = 0
        self.placements = {}

    def model_latencies(self) -> dict:
        return {m["id"]: m["latency_ns"] for m in self.models}

    def by_name(self, key="latency_ns", windowed=True) -> dict:
        rows = self.windowed_models() if windowed else self.models
        out = {}
        for m in rows:
            out.setdefault(m["name"], []).append(m[key])
        return {name: sum(v) / len(v) for name, v in sorted(out.items())}

    def window(self):
        cfg = self.config
        return int(cfg.warmup * 1000), self.makespan - int(cfg.cooldown * 1000)

    def windowed_models(self):
        lo, hi = self.window()
        rows = [m for m in self.models if m["mapped_ns"] >= lo and m["finished_ns"] <= hi]
        self._window_fallback = not rows
        return rows if rows else list(self.models)

    def energy(self) -> dict:
        compute = sum(e.energy for e in self.compute_events)
        network = 0.0
        if self.network is not None:
            network = self.network.network_energy(self.config.energy_per_flit_hop)[0]
        static = sum(c.static_power for c in self.config.chiplets) * self.makespan * 1e-9
        return {"compute_j": compute, "network_j": network, "static_j": static,
                "total_j": compute + network + static}

    def power_trace(self, bin_width_us=None):
        from .power import bin_power
        bin_width_us = bin_width_us or self.config.time_step
        net = None
        if self.network is not None and self.network.hop_count:
            e_hop = self.config.energy_per_flit_hop
            scale = bin_width_us * 1000 / (self.network.bin_cycles * self.network.cycle_period)
            if abs(scale - 1.0) > 1e-12:
                raise ConfigError("power bins must match the network statistics bins", "time_step")
            net = {k: v * e_hop for k, v in self.network.hop_series().items()}
        static = {c.id: c.static_power for c in self.config.chiplets}
        return bin_power(self.compute_events, net, bin_width_us, [c.id for c in self.config.chiplets],
                         static=static, end_ns=self.makespan)

    def to_dict(self) -> dict:
        models = self.windowed_models()
        lo, hi = self.window()
        doc = {
            "meta": {**self.meta, "mode": self.mode, "pipelined": self.pipelined,
                     "weight_stationary": self.weight_stationary, "config_hash": self.config.digest()},
            "makespan_ns": self.makespan,
            "models": self.models,
            "skipped_models": self.skipped,
            "aggregate": {
                "window_ns": [lo, hi],
                "window_fallback": self._window_fallback,
                "models_in_window": len(models),
                "mean_latency_ns": _mean(m["latency_ns"] for m in models),
                "mean_inference_latency_ns": _mean(m["mean_inference_latency_ns"] for m in models),
                "by_name_latency_ns": self.by_name("latency_ns"),
                "by_name_inference_latency_ns": self.by_name("mean_inference_latency_ns"),
            },
            "energy": self.energy(),
            "flow_count": len(self.flows),
        }
        if self.network is not None:
            stats = self.network.flow_stats(window=(lo, hi) if hi > lo else None)
            util = list(stats["links"].values())
            doc["network"] = {
                "flit_hops": self.network.hop_count,
                "mean_link_utilization": _mean(util),
                "max_link_utilization": max(util, default=0.0),
                "sources": {str(k): v for k, v in sorted(stats["sources"].items())},
            }
        return doc

    def flow_rows(self):
        for f in sorted(self.flows, key=lambda f: f.id):
            yield (f.id, f.model_id, f.layer_idx, f.inference_idx, f.src, f.dst, f.bytes, f.inject_time,
                   f.complete_time, f.kind)


FLOW_LOG_HEADER = ("flow_id", "model", "layer", "inference", "src", "dst", "bytes", "inject_ns",
                   "complete_ns", "kind")


def _mean(values):
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def _model_row(run: ModelRun, n_inf):
    lat = run.finished_at - run.mapped_at
    per_inf = [e - s for s, e in zip(run.inference_start, run.inference_end)]
    return {
        "id": run.model.id,
        "name": run.model.name,
        "inferences": n_inf,
        "mapped_ns": run.mapped_at,
        "first_start_ns": run.inference_start[0],
        "finished_ns": run.finished_at,
        "latency_ns": lat,
        "mean_inference_latency_ns": sum(per_inf) / len(per_inf),
        "weight_load_ns": (run.weight_done_at - run.mapped_at) if run.weight_done_at is not None else 0,
        "compute_ns": sum(run.compute_ns),
        "comm_ns": sum(run.comm_ns),
        "layer_compute_ns": list(run.compute_ns),
        "layer_comm_ns": list(run.comm_ns),
        "segments": sum(len(l) for l in run.layers),
        "chiplets": sorted({s.chiplet_id for l in run.layers for s in l}),
    }


def _check_workload(config, workload, weight_stationary):
    if weight_stationary and not config.io_chiplets:
        raise ConfigError("weight-stationary loading needs io chiplets", "io_chiplets")
    capacity = sum(c.mem_capacity for c in config.compute_chiplets)
    runnable, skipped = [], []
    for m in workload:
        if m.weight_bytes > capacity:
            log.warning("model %d (%s) needs %d B, system holds %d B; skipped", m.id, m.name,
                        m.weight_bytes, capacity)
            skipped.append({"id": m.id, "name": m.name, "weight_bytes": m.weight_bytes})
        else:
            runnable.append(m)
    return runnable, skipped


def _layer_timing(layers, chiplet, backends):
    results, latency = [], []
    for segs in layers:
        res = [backends.simulate(s, chiplet(s.chiplet_id)) for s in segs]
        results.append(res)
        latency.append(max(r.latency for r in res))
    return latency, results


# --- co-simulation -----------------------------------------------------------------

class Cosimulation:
    def __init__(self, config: SystemConfig, workload, pipelined=True, weight_stationary=False,
                 mapper="nearest-neighbor", age_threshold=16, meta=None, trace_events=False):
        self.config = config
        self.routes = compute_routes(config)
        self.mapper = make_mapper(mapper, config, self.routes)
        self.backends = BackendSet(config)
        self.pipelined = pipelined
        self.weight_stationary = weight_stationary
        self.age_threshold = age_threshold
        models, skipped = _check_workload(config, workload, weight_stationary)
        # arbitration ages the queued models; keep the caller's objects untouched
        self.queue = [copy.copy(m) for m in models]
        self.occupancy = OccupancyState(config)
        self.noi = NoiSimulator.from_config(config, self.routes)
        self.events = EventQueue()
        self.flow_ids = itertools.count()
        self.flow_owner = {}
        self.report = SimulationReport("cosim", pipelined, weight_stationary, config, meta)
        self.report.skipped = skipped
        self.report.network = self.noi
        self.event_trace = [] if trace_events else None

    def run(self) -> SimulationReport:
        ev_q, noi = self.events, self.noi
        ev_q.push(0, MODEL_READY)
        while True:
            t_next = ev_q.peek_time()
            if not noi.idle:
                done = noi.advance(until=t_next)
                if done:
                    t = noi.now_ns
                    ev_q.now = t
                    for flow in done:
                        self._trace(t, FLOW_COMPLETE, flow.id)
                        self._on_flow(flow, t)
                    continue
            if t_next is None:
                break
            ev = ev_q.pop()
            self._trace(ev.time, ev.priority, ev.payload[1:] if ev.payload else "")
            if ev.priority == COMPUTE_COMPLETE:
                self._on_compute(*ev.payload, ev.time)
            else:
                self._try_map(ev.time)
        if self.queue:
            raise ConsistencyError(f"{len(self.queue)} models were never mapped")
        self.report.makespan = max([noi.now_ns] + [m["finished_ns"] for m in self.report.models])
        self.report.models.sort(key=lambda m: m["id"])
        return self.report

    def _trace(self, t, prio, what):
        if self.event_trace is not None:
            self.event_trace.append((t, EVENT_NAMES[prio], str(what)))

    # mapping

    def _try_map(self, t):
        while self.queue:
            model = next_mappable_model(self.queue, self.occupancy.free_map(), self.age_threshold)
            if model is None:
                return
            layers = self.mapper.place(model, self.occupancy)
            if layers is None:
                return
            self.occupancy.apply(layers)
            self.queue.remove(model)
            self._launch(model, layers, t)

    def _launch(self, model, layers, t):
        latency, results = _layer_timing(layers, self.config.chiplet, self.backends)
        run = ModelRun(model, layers, latency, results, t,
                       progress=[LayerProgress() for _ in layers],
                       compute_ns=[0] * len(layers), comm_ns=[0] * len(layers))
        run.progress[0].ready = model.inferences
        self.report.placements[model.id] = layers
        if self.weight_stationary:
            flows = []
            for segs in layers:
                for s in segs:
                    if s.weight_bytes:
                        src = self.mapper.nearest_io(s.chiplet_id)
                        flows.append(Flow(next(self.flow_ids), model.id, s.layer_idx, -1, src, s.chiplet_id,
                                          s.weight_bytes, t, kind="weight"))
            run.weights_left = len(flows)
            for f in flows:
                self.flow_owner[f.id] = (run, None, None)
            self.report.flows.extend(flows)
            self.noi.inject_flows(flows)
            if not flows:
                run.weight_done_at = t
        self._try_start(run, 0, t)

    # compute

    def _try_start(self, run, l, t):
        if run.weights_left:
            return
        prog = run.progress[l]
        r = prog.started
        n = run.model.inferences
        if prog.computing or r >= n or prog.ready <= r or prog.sent < r:
            return
        if l == 0 and r > 0 and not self.pipelined and len(run.inference_end) < r:
            return
        prog.started += 1
        prog.computing = True
        if l == 0:
            run.inference_start.append(t)
        for s, res in zip(run.layers[l], run.results[l]):
            self.report.compute_events.append(ComputeEvent(s.chiplet_id, t, t + res.latency, res.energy))
        run.compute_ns[l] += run.latency[l]
        self.events.push(t + run.latency[l], COMPUTE_COMPLETE, (run, l, r))

    def _on_compute(self, run, l, r, t):
        prog = run.progress[l]
        prog.computing = False
        last = len(run.layers) - 1
        if l == last:
            prog.sent = r + 1
            run.inference_end.append(t)
            if r == run.model.inferences - 1:
                self._finish(run, t)
                return
            self._try_start(run, l, t)
            if not self.pipelined:
                self._try_start(run, 0, t)
            return
        stats = run.model.stats[l]
        flows = generate_traffic(run.layers[l], run.layers[l + 1], stats, t, r, ids=self.flow_ids)
        self.report.flows.extend(flows)
        remote = [f for f in flows if f.src != f.dst]
        prog.outstanding[r] = len(remote)
        prog.send_start[r] = t
        if remote:
            for f in remote:
                self.flow_owner[f.id] = (run, l, r)
            self.noi.inject_flows(remote)
        else:
            self._delivered(run, l, r, t)

    def _on_flow(self, flow, t):
        run, l, r = self.flow_owner.pop(flow.id)
        if l is None:
            run.weights_left -= 1
            if run.weights_left == 0:
                run.weight_done_at = t
                self._try_start(run, 0, t)
            return
        prog = run.progress[l]
        prog.outstanding[r] -= 1
        if prog.outstanding[r] == 0:
            self._delivered(run, l, r, t)

    def _delivered(self, run, l, r, t):
        prog = run.progress[l]
        del prog.outstanding[r]
        run.comm_ns[l] += t - prog.send_start.pop(r)
        prog.sent = r + 1
        run.progress[l + 1].ready = r + 1
        self._try_start(run, l + 1, t)
        if self.pipelined:
            self._try_start(run, l, t)

    def _finish(self, run, t):
        run.finished_at = t
        release_model(run.layers, self.occupancy)
        self.report.models.append(_model_row(run, run.model.inferences))
        self.events.push(t, MODEL_READY)


def run_cosim(config, workload, mode="pipelined", weight_stationary=False, mapper="nearest-neighbor",
              age_threshold=16, meta=None, trace_events=False) -> SimulationReport:
    if mode not in ("pipelined", "non_pipelined"):
        raise ValueError(f"unknown mode {mode!r}")
    sim = Cosimulation(config, workload, mode == "pipelined", weight_stationary, mapper, age_threshold,
                       meta, trace_events)
    report = sim.run()
    report.event_trace = sim.event_trace
    return report


def run_weight_stationary(config, workload, mode="pipelined", **kwargs) -> SimulationReport:
    return run_cosim(config, workload, mode, weight_stationary=True, **kwargs)


# --- baselines ----------------------------------------------------------------------

@dataclass
class ModelProfile:
    """One model mapped on an empty system and measured layer by layer."""
    name: str
    layers: list
    compute: list
    comm: list
    weight_load: int
    flows_per_inference: int


class ProfileCache:
    def __init__(self, config: SystemConfig, mapper="nearest-neighbor"):
        self.config = config
        self.routes = compute_routes(config)
        self.mapper = make_mapper(mapper, config, self.routes)
        self.backends = BackendSet(config)
        self.template = NoiSimulator.from_config(config, self.routes)
        self._cache = {}

    def isolated(self, flows) -> int:
        """Completion time of ``flows`` injected together into an empty network."""
        remote = [Flow(i, f.model_id, f.layer_idx, f.inference_idx, f.src, f.dst, f.bytes, 0)
                  for i, f in enumerate(flows) if f.src != f.dst]
        if not remote:
            return 0
        sim = self.template.fresh()
        sim.inject_flows(remote)
        sim.run_to_completion()
        return max(f.complete_time for f in remote)

    def profile(self, model, weight_stationary=False, layers=None) -> ModelProfile:
        """Measure ``model`` under ``layers``, or under its placement on an empty system."""
        placement = None if layers is None else tuple((s.layer_idx, s.chiplet_id, s.weight_bytes, s.macs)
                                                      for segs in layers for s in segs)
        key = (model.name, model.layers, weight_stationary, placement)
        if key in self._cache:
            return self._cache[key]
        if layers is None:
            layers = self.mapper.place(model, OccupancyState(self.config))
        if layers is None:
            raise ConsistencyError(f"model {model.name} does not fit an empty system")
        latency, _ = _layer_timing(layers, self.config.chiplet, self.backends)
        comm, count = [], 0
        for l in range(len(layers) - 1):
            flows = generate_traffic(layers[l], layers[l + 1], model.stats[l], 0)
            count += len(flows)
            comm.append(self.isolated(flows))
        comm.append(0)
        load = 0
        if weight_stationary:
            wflows = [Flow(0, model.id, s.layer_idx, -1, self.mapper.nearest_io(s.chiplet_id), s.chiplet_id,
                           s.weight_bytes, 0, kind="weight") for segs in layers for s in segs if s.weight_bytes]
            load = self.isolated(wflows)
        prof = ModelProfile(model.name, layers, latency, comm, load, count)
        self._cache[key] = prof
        return prof


def _run_baseline(kind, config, workload, weight_stationary, mapper, meta, cache, placements):
    models, skipped = _check_workload(config, workload, weight_stationary)
    cache = cache or ProfileCache(config, mapper)
    report = SimulationReport(kind, False, weight_stationary, config, meta)
    report.skipped = skipped
    placements = placements or {}
    t = 0
    for m in models:
        prof = cache.profile(m, weight_stationary, placements.get(m.id))
        report.placements[m.id] = prof.layers
        compute = prof.compute if kind == "decoupled" else [0] * len(prof.compute)
        single = sum(compute) + sum(prof.comm)
        n = m.inferences
        lat = prof.weight_load + n * single
        report.models.append({
            "id": m.id, "name": m.name, "inferences": n, "mapped_ns": t,
            "first_start_ns": t + prof.weight_load, "finished_ns": t + lat, "latency_ns": lat,
            "mean_inference_latency_ns": float(single), "weight_load_ns": prof.weight_load,
            "compute_ns": n * sum(compute), "comm_ns": n * sum(prof.comm),
            "layer_compute_ns": [n * c for c in compute], "layer_comm_ns": [n * c for c in prof.comm],
            "segments": sum(len(l) for l in prof.layers),
            "chiplets": sorted({s.chiplet_id for l in prof.layers for s in l}),
        })
        t += lat
    report.makespan = t
    return report


def run_decoupled(config, workload, weight_stationary=False, mapper="nearest-neighbor", meta=None,
                  cache=None, placements=None) -> SimulationReport:
    """Per model: sum of layer compute times plus isolated layer transfers, times inferences.

    ``placements`` (model id -> per-layer segments, e.g. a cosim report's
    ``placements``) fixes the mapping; other models are mapped alone on an
    empty system.
    """
    return _run_baseline("decoupled", config, workload, weight_stationary, mapper, meta, cache, placements)


def run_comm_only(config, workload, weight_stationary=False, mapper="nearest-neighbor", meta=None,
                  cache=None, placements=None) -> SimulationReport:
    """Per model: isolated layer transfers only, times inferences."""
    return _run_baseline("comm-only", config, workload, weight_stationary, mapper, meta, cache, placements)
