import json
import random

import pytest

from chiplet_cosim.errors import ConfigError, InvalidLayerError, SchedulingError
from chiplet_cosim.mapper import SegmentAssignment
from chiplet_cosim.workload import (DnnModel, LayerDescriptor, LayerStats, derive_layer_stats, dump_library,
                                    generate_traffic, generate_workload, load_library, next_mappable_model)
from chiplet_cosim.zoo import builtin_library, summarize
from oracles import count_macs, count_output_positions


def conv(h, c_in, k, c_out, stride=1, padding="same"):
    return LayerDescriptor("conv", h, h, c_in, k, k, c_out, stride, padding)


def test_fc_stats():
    s = derive_layer_stats(LayerDescriptor("fc", 1, 1, 10, 1, 1, 5))
    assert (s.macs, s.weight_bytes, s.output_bytes) == (50, 55, 5)


def test_conv_stats_match_loop_count():
    layer = LayerDescriptor("conv", 8, 8, 3, 3, 3, 4, 1, "same")
    s = derive_layer_stats(layer)
    assert s.macs == 6912 == count_macs(layer)
    assert s.output_bytes == 256
    assert s.weight_bytes == 3 * 3 * 3 * 4 + 4


def test_pool_stats():
    s = derive_layer_stats(LayerDescriptor("pool", 8, 8, 4, 2, 2, 4, 2, "valid"))
    assert (s.macs, s.weight_bytes, s.output_bytes) == (0, 0, 64)


def test_attention_projection_is_fc_over_tokens():
    s = derive_layer_stats(LayerDescriptor("attention-proj", 14, 14, 768, 1, 1, 2304))
    assert s.macs == 196 * 768 * 2304
    assert s.output_bytes == 196 * 2304


def test_degenerate_layer_rejected():
    with pytest.raises(InvalidLayerError):
        derive_layer_stats(LayerDescriptor("conv", 2, 2, 3, 3, 3, 4, 1, "valid"))


@pytest.mark.parametrize("bad", [dict(in_h=0), dict(stride=0), dict(padding="full"), dict(kind="lstm"),
                                 dict(bytes_per_value=0)])
def test_invalid_descriptor_fields(bad):
    args = dict(kind="conv", in_h=8, in_w=8, in_c=3, k_h=3, k_w=3, out_c=4)
    args.update(bad)
    with pytest.raises(InvalidLayerError):
        LayerDescriptor(**args)


def test_random_layers_against_loop_oracle():
    rng = random.Random(11)
    for _ in range(100):
        k = rng.randint(1, 4)
        h = rng.randint(k, 10)
        stride = rng.randint(1, 3)
        padding = rng.choice(["same", "valid"])
        layer = LayerDescriptor("conv", h, h + rng.randint(0, 2), rng.randint(1, 4), k, k, rng.randint(1, 5),
                                stride, padding, rng.randint(1, 2))
        s = derive_layer_stats(layer)
        assert layer.out_h == count_output_positions(layer.in_h, k, stride, padding)
        assert layer.out_w == count_output_positions(layer.in_w, k, stride, padding)
        assert s.macs == count_macs(layer)
        assert s.output_bytes == layer.out_h * layer.out_w * layer.out_c * layer.bytes_per_value


def test_model_requires_compatible_layers():
    with pytest.raises(ConfigError):
        DnnModel(0, "bad", [conv(8, 3, 3, 4), conv(8, 5, 3, 4)])
    with pytest.raises(ConfigError):
        DnnModel(0, "bad", [conv(8, 3, 3, 4, stride=2), conv(8, 4, 3, 4)])
    # fc accepts the flattened output
    DnnModel(0, "ok", [conv(4, 3, 3, 2), LayerDescriptor("fc", 1, 1, 32, 1, 1, 10)])


def test_zoo_models_are_consistent():
    lib = builtin_library()
    assert set(lib) == {"AlexNet", "ResNet18", "ResNet34", "ResNet50", "ViT-B"}
    for name, layers in lib.items():
        DnnModel(0, name, layers)
    # parameter counts of the linearised chains (weights + biases at 1 B each)
    assert 58e6 < summarize(lib["AlexNet"])["weight_bytes"] < 64e6
    assert 10.5e6 < summarize(lib["ResNet18"])["weight_bytes"] < 12e6
    assert 80e6 < summarize(lib["ViT-B"])["weight_bytes"] < 105e6
    small = builtin_library(0.25)
    for name, layers in small.items():
        DnnModel(0, name, layers)


def test_library_round_trip(tmp_path):
    lib = {"tiny": (conv(8, 3, 3, 4), LayerDescriptor("pool", 8, 8, 4, 2, 2, 4, 2))}
    text = dump_library(lib)
    assert load_library(text) == lib
    path = tmp_path / "lib.json"
    path.write_text(json.dumps({"models": json.loads(text)}))
    assert load_library(path) == lib


def test_library_errors():
    with pytest.raises(ConfigError):
        load_library("{not json")
    with pytest.raises(InvalidLayerError):
        load_library({"m": [{"kind": "conv", "in_h": 8}]})


MIX = {"AlexNet": 1, "ResNet18": 1, "ResNet34": 1, "ResNet50": 1}


def test_generate_workload_deterministic():
    a = generate_workload(50, MIX, 3, seed=7)
    b = generate_workload(50, MIX, 3, seed=7)
    assert [m.name for m in a] == [m.name for m in b]
    assert [m.arrival_index for m in a] == list(range(50))
    assert all(m.inferences == 3 for m in a)
    names = {m.name for m in a}
    assert names <= set(MIX)
    assert [m.name for m in generate_workload(50, MIX, 3, seed=8)] != [m.name for m in a]


def test_generate_workload_single_and_errors():
    (m,) = generate_workload(1, {"AlexNet": 1}, 1, seed=0)
    assert m.name == "AlexNet"
    with pytest.raises(ConfigError):
        generate_workload(3, {}, 1, seed=0)
    with pytest.raises(ConfigError):
        generate_workload(3, {"AlexNet": 0}, 1, seed=0)
    with pytest.raises(ConfigError):
        generate_workload(3, {"LeNet": 1}, 1, seed=0)


def _sized(i, size):
    # one input per output plus a bias each: 2 bytes per output
    layer = LayerDescriptor("fc", 1, 1, 1, 1, 1, size // 2)
    return DnnModel(i, f"m{i}", [layer], arrival_index=i)


def test_arbitration_skips_big_model():
    big, small = _sized(0, 120), _sized(1, 10)
    assert big.weight_bytes == 120 and small.weight_bytes == 10
    assert next_mappable_model([big, small], 50, 16) is small
    assert big.skip_count == 1


def test_arbitration_blocks_on_aged_model():
    big, small = _sized(0, 120), _sized(1, 10)
    big.skip_count = 16
    assert next_mappable_model([big, small], 50, 16) is None
    assert next_mappable_model([big, small], {0: 100, 1: 30}, 16) is big


def test_arbitration_empty_and_oldest_first():
    assert next_mappable_model([], 50, 16) is None
    a, b = _sized(0, 10), _sized(1, 10)
    assert next_mappable_model([a, b], 50, 16) is a
    assert a.skip_count == b.skip_count == 0


def _seg(layer, idx, chiplet, fraction, weight=0):
    return SegmentAssignment(0, layer, idx, chiplet, fraction, weight, 0)


STATS_256 = LayerStats(0, 0, 256)


def test_traffic_single_pair():
    (f,) = generate_traffic([_seg(0, 0, 1, 1.0)], [_seg(1, 0, 2, 1.0)], STATS_256, 40)
    assert (f.src, f.dst, f.bytes, f.inject_time) == (1, 2, 256, 40)


def test_traffic_split_destinations():
    flows = generate_traffic([_seg(0, 0, 1, 1.0)], [_seg(1, 0, 2, 0.5, 8), _seg(1, 1, 3, 0.5, 8)], STATS_256, 0)
    assert [f.bytes for f in flows] == [128, 128]


def test_traffic_bilinear_split():
    src = [_seg(0, 0, 1, 0.5, 4), _seg(0, 1, 2, 0.5, 4)]
    dst = [_seg(1, 0, 3, 0.75, 6), _seg(1, 1, 4, 0.25, 2)]
    flows = generate_traffic(src, dst, LayerStats(0, 0, 1000), 0)
    assert [f.bytes for f in flows] == [375, 125, 375, 125]
    assert sum(f.bytes for f in flows) == 1000


def test_traffic_local_flows_complete_instantly():
    flows = generate_traffic([_seg(0, 0, 1, 1.0)], [_seg(1, 0, 1, 1.0)], STATS_256, 9)
    assert flows[0].complete_time == 9


def test_traffic_requires_mapping():
    with pytest.raises(SchedulingError):
        generate_traffic([], [_seg(1, 0, 1, 1.0)], STATS_256, 0)


def test_traffic_conservation_random():
    rng = random.Random(3)
    for _ in range(100):
        ns, nd = rng.randint(1, 5), rng.randint(1, 5)
        ws = [rng.randint(1, 1000) for _ in range(ns)]
        wd = [rng.randint(1, 1000) for _ in range(nd)]
        src = [_seg(0, i, i, w / sum(ws), w) for i, w in enumerate(ws)]
        dst = [_seg(1, i, 10 + i, w / sum(wd), w) for i, w in enumerate(wd)]
        out = rng.randint(1, 100000)
        flows = generate_traffic(src, dst, LayerStats(0, 0, out), 0)
        total = sum(f.bytes for f in flows)
        assert out <= total <= out + len(flows)
