"""DNN layer descriptions, workload streams, traffic volumes and the model queue.

Everything here is shape and volume arithmetic; no tensor data is ever touched.
"""

from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError, InvalidLayerError, SchedulingError
from .noi import Flow

LAYER_KINDS = ("conv", "fc", "pool", "attention-proj")
PADDINGS = ("same", "valid")

DEFAULT_AGE_THRESHOLD = 16


@dataclass(frozen=True)
class LayerDescriptor:
    kind: str
    in_h: int
    in_w: int
    in_c: int
    k_h: int
    k_w: int
    out_c: int
    stride: int = 1
    padding: str = "valid"
    bytes_per_value: int = 1
    name: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidLayerError(f"unknown layer kind {self.kind!r}", "kind")
        if self.padding not in PADDINGS:
            raise InvalidLayerError(f"unknown padding {self.padding!r}", "padding")
        for name in ("in_h", "in_w", "in_c", "k_h", "k_w", "out_c", "stride", "bytes_per_value"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise InvalidLayerError(f"must be a positive integer, got {value!r}", name)
        if self.kind == "fc" and (self.in_h, self.in_w, self.k_h, self.k_w, self.stride) != (1, 1, 1, 1, 1):
            raise InvalidLayerError("fc layers take a flattened 1x1 input with 1x1 filters", self.name or "fc")
        if self.kind == "attention-proj" and (self.k_h, self.k_w, self.stride) != (1, 1, 1):
            raise InvalidLayerError("attention-proj layers are per-token projections (1x1, stride 1)",
                                    self.name or "attention-proj")
        if self.kind == "pool" and self.out_c != self.in_c:
            raise InvalidLayerError("pool layers preserve the channel count", "out_c")

    def _out_dim(self, size: int, k: int) -> int:
        if self.padding == "same":
            return -(-size // self.stride)
        return (size - k) // self.stride + 1

    @property
    def out_h(self) -> int:
        return self._out_dim(self.in_h, self.k_h)

    @property
    def out_w(self) -> int:
        return self._out_dim(self.in_w, self.k_w)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not d["name"]:
            del d["name"]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerDescriptor":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InvalidLayerError(f"unknown layer fields {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidLayerError(str(exc)) from None


@dataclass(frozen=True)
class LayerStats:
    macs: int
    weight_bytes: int
    output_bytes: int


def derive_layer_stats(layer: LayerDescriptor) -> LayerStats:
    out_h, out_w = layer.out_h, layer.out_w
    if out_h < 1 or out_w < 1:
        raise InvalidLayerError(
            f"degenerate output {out_h}x{out_w} for {layer.in_h}x{layer.in_w} input, "
            f"{layer.k_h}x{layer.k_w} filter, stride {layer.stride}", layer.name or layer.kind)
    bpv = layer.bytes_per_value
    output_bytes = out_h * out_w * layer.out_c * bpv
    if layer.kind == "pool":
        return LayerStats(0, 0, output_bytes)
    if layer.kind == "fc":
        macs = layer.in_c * layer.out_c
    elif layer.kind == "attention-proj":
        macs = layer.in_h * layer.in_w * layer.in_c * layer.out_c
    else:
        macs = out_h * out_w * layer.out_c * layer.k_h * layer.k_w * layer.in_c
    weight_bytes = (layer.k_h * layer.k_w * layer.in_c * layer.out_c + layer.out_c) * bpv
    return LayerStats(macs, weight_bytes, output_bytes)


def check_compatible(prev: LayerDescriptor, nxt: LayerDescriptor) -> None:
    """Raise unless ``nxt`` can consume the output of ``prev``.

    An fc layer may consume a flattened activation map.
    """
    if nxt.kind == "fc":
        if nxt.in_c == prev.out_c * prev.out_h * prev.out_w:
            return
        raise InvalidLayerError(
            f"fc input {nxt.in_c} does not match flattened {prev.out_h}x{prev.out_w}x{prev.out_c}",
            nxt.name or "fc")
    if nxt.in_c != prev.out_c:
        raise InvalidLayerError(f"input channels {nxt.in_c} != previous out_c {prev.out_c}",
                                nxt.name or nxt.kind)
    if (nxt.in_h, nxt.in_w) != (prev.out_h, prev.out_w):
        raise InvalidLayerError(
            f"input {nxt.in_h}x{nxt.in_w} != previous output {prev.out_h}x{prev.out_w}",
            nxt.name or nxt.kind)


@dataclass(eq=False)
class DnnModel:
    id: int
    name: str
    layers: tuple
    inferences: int = 1
    arrival_index: int = 0
    skip_count: int = 0

    def __post_init__(self):
        self.layers = tuple(self.layers)
        if not self.layers:
            raise ConfigError("model has no layers", self.name)
        if self.inferences < 1:
            raise ConfigError("inferences must be positive", "inferences")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            check_compatible(prev, nxt)
        self.stats = tuple(derive_layer_stats(layer) for layer in self.layers)

    @property
    def weight_bytes(self) -> int:
        return sum(s.weight_bytes for s in self.stats)

    def __repr__(self):
        return (f"DnnModel(id={self.id}, name={self.name!r}, layers={len(self.layers)}, "
                f"inferences={self.inferences}, skip_count={self.skip_count})")


# --- model library -----------------------------------------------------------

def load_library(source) -> dict:
    """Read a model library: ``{name: [layer dict, ...]}`` as JSON text, path or mapping."""
    if isinstance(source, Mapping):
        doc = source
    else:
        text = Path(source).read_text() if isinstance(source, Path) or (
            isinstance(source, str) and not source.lstrip().startswith("{")) else source
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model library is not valid JSON ({exc})") from None
    doc = doc.get("models", doc)
    library = {}
    for name, layers in doc.items():
        if not isinstance(layers, list) or not layers:
            raise ConfigError("expected a non-empty list of layers", f"models.{name}")
        parsed = []
        for i, layer in enumerate(layers):
            try:
                parsed.append(LayerDescriptor.from_dict(layer))
            except InvalidLayerError as exc:
                raise InvalidLayerError(str(exc), f"models.{name}[{i}]") from None
        library[name] = tuple(parsed)
    return library


def dump_library(library: Mapping[str, Sequence[LayerDescriptor]]) -> str:
    return json.dumps({name: [layer.to_dict() for layer in layers]
                       for name, layers in library.items()}, indent=1)


def generate_workload(count: int, model_mix, inferences: int, seed: int,
                      library: Mapping[str, Sequence[LayerDescriptor]] | None = None) -> list:
    """Sample ``count`` models from ``model_mix`` (pairs of name and weight)."""
    if library is None:
        from .zoo import builtin_library
        library = builtin_library()
    mix = list(model_mix.items()) if isinstance(model_mix, Mapping) else list(model_mix)
    if not mix:
        raise ConfigError("model mix is empty", "mix")
    if count < 1:
        raise ConfigError("count must be positive", "count")
    names = [name for name, _ in mix]
    weights = [float(w) for _, w in mix]
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ConfigError("mix weights must be non-negative and sum to a positive value", "mix")
    missing = [n for n in names if n not in library]
    if missing:
        raise ConfigError(f"unknown models {missing}", "mix")
    rng = random.Random(seed)
    picks = rng.choices(names, weights=weights, k=count)
    return [DnnModel(id=i, name=name, layers=library[name], inferences=inferences, arrival_index=i)
            for i, name in enumerate(picks)]


# --- model queue arbitration --------------------------------------------------

def next_mappable_model(queue: Sequence[DnnModel], free_resources,
                        age_threshold: int = DEFAULT_AGE_THRESHOLD):
    """Oldest model whose weights fit the free memory, honouring the age threshold.

    Models passed over in favour of a younger one get their ``skip_count``
    bumped. A model that has been skipped ``age_threshold`` times blocks every
    model behind it.
    """
    free = free_resources if isinstance(free_resources, int) else sum(free_resources.values())
    passed = []
    for model in queue:
        if model.weight_bytes <= free:
            for older in passed:
                older.skip_count += 1
            return model
        if model.skip_count >= age_threshold:
            return None
        passed.append(model)
    return None


# --- traffic ------------------------------------------------------------------

def _shares(segments) -> list:
    total = sum(s.weight_bytes for s in segments)
    if total > 0 and all(s.weight_bytes > 0 for s in segments):
        return [Fraction(s.weight_bytes, total) for s in segments]
    return [Fraction(s.fraction).limit_denominator(1 << 24) for s in segments]


def generate_traffic(src_segments, dst_segments, stats: LayerStats, time: int,
                     inference_idx: int = 0, ids: Iterable[int] | None = None) -> list:
    """Activation flows from every segment of layer l to every segment of layer l+1.

    Bytes split as ``output_bytes * src_share * dst_share`` rounded up. Flows
    whose endpoints share a chiplet are returned already complete.
    """
    if not src_segments or not dst_segments:
        raise SchedulingError("both layers must be mapped before generating traffic")
    ids = ids if ids is not None else itertools.count()
    ids = iter(ids)
    flows = []
    src_shares, dst_shares = _shares(src_segments), _shares(dst_segments)
    for src, fs in zip(src_segments, src_shares):
        for dst, fd in zip(dst_segments, dst_shares):
            nbytes = math.ceil(stats.output_bytes * fs * fd)
            if nbytes <= 0:
                continue
            flow = Flow(id=next(ids), model_id=src.model_id, layer_idx=src.layer_idx,
                        inference_idx=inference_idx, src=src.chiplet_id, dst=dst.chiplet_id,
                        bytes=nbytes, inject_time=time)
            if flow.src == flow.dst:
                flow.complete_time = time
            flows.append(flow)
    return flows
