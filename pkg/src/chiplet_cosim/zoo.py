"""Built-in layer chains for the evaluated networks.

Models are linearised: residual additions and projection shortcuts are
dropped, so every layer feeds exactly the next one. ``input_size`` scales the
image resolution for quick experiments; the defaults are the usual ImageNet
shapes.
"""

from __future__ import annotations

from functools import lru_cache

from .workload import LayerDescriptor, derive_layer_stats


def _conv(name, h, c_in, c_out, k, stride=1, padding="same", bpv=1):
    return LayerDescriptor("conv", h, h, c_in, k, k, c_out, stride, padding, bpv, name)


def _pool(name, h, c, k, stride, padding="valid", bpv=1):
    return LayerDescriptor("pool", h, h, c, k, k, c, stride, padding, bpv, name)


def _fc(name, c_in, c_out, bpv=1):
    return LayerDescriptor("fc", 1, 1, c_in, 1, 1, c_out, 1, "valid", bpv, name)


def _chain(builders):
    """Build layers in order, feeding each one the previous output size."""
    layers = []
    h = None
    for make in builders:
        layer = make(h)
        layers.append(layer)
        h = layer.out_h
    return tuple(layers)


def alexnet(input_size=227, bpv=1):
    b = [
        lambda h: _conv("conv1", input_size, 3, 96, 11, 4, "valid", bpv),
        lambda h: _pool("pool1", h, 96, 3, 2, bpv=bpv),
        lambda h: _conv("conv2", h, 96, 256, 5, bpv=bpv),
        lambda h: _pool("pool2", h, 256, 3, 2, bpv=bpv),
        lambda h: _conv("conv3", h, 256, 384, 3, bpv=bpv),
        lambda h: _conv("conv4", h, 384, 384, 3, bpv=bpv),
        lambda h: _conv("conv5", h, 384, 256, 3, bpv=bpv),
        lambda h: _pool("pool5", h, 256, 3, 2, bpv=bpv),
    ]
    layers = list(_chain(b))
    flat = layers[-1].out_h * layers[-1].out_w * 256
    layers += [_fc("fc6", flat, 4096, bpv), _fc("fc7", 4096, 4096, bpv), _fc("fc8", 4096, 1000, bpv)]
    return tuple(layers)


def resnet(depth, input_size=224, bpv=1):
    blocks = {18: [2, 2, 2, 2], 34: [3, 4, 6, 3], 50: [3, 4, 6, 3]}[depth]
    bottleneck = depth >= 50
    b = [
        lambda h: _conv("conv1", input_size, 3, 64, 7, 2, bpv=bpv),
        lambda h: _pool("pool1", h, 64, 3, 2, "same", bpv),
    ]
    c_in = 64
    for stage, (n, width) in enumerate(zip(blocks, (64, 128, 256, 512))):
        for blk in range(n):
            stride = 2 if stage > 0 and blk == 0 else 1
            tag = f"s{stage + 1}b{blk + 1}"
            if bottleneck:
                c_out = width * 4
                b += [
                    lambda h, ci=c_in, w=width, t=tag: _conv(t + "a", h, ci, w, 1, bpv=bpv),
                    lambda h, w=width, s=stride, t=tag: _conv(t + "b", h, w, w, 3, s, bpv=bpv),
                    lambda h, w=width, co=c_out, t=tag: _conv(t + "c", h, w, co, 1, bpv=bpv),
                ]
            else:
                c_out = width
                b += [
                    lambda h, ci=c_in, w=width, s=stride, t=tag: _conv(t + "a", h, ci, w, 3, s, bpv=bpv),
                    lambda h, w=width, t=tag: _conv(t + "b", h, w, w, 3, bpv=bpv),
                ]
            c_in = c_out
    b.append(lambda h, c=c_in: _pool("avgpool", h, c, h, 1, bpv=bpv))
    layers = list(_chain(b))
    layers.append(_fc("fc", c_in, 1000, bpv))
    return tuple(layers)


def vit_b16(input_size=224, bpv=1, depth=12, dim=768, mlp=3072):
    """ViT-B/16 proxy: patch embedding, per-block projections, head.

    The attention score/value products carry no weights and are folded into
    the output projection, which consumes the concatenated q/k/v channels.
    """
    patch = _conv("patch_embed", input_size, 3, dim, 16, 16, "valid", bpv)
    t = patch.out_h

    def proj(name, c_in, c_out):
        return LayerDescriptor("attention-proj", t, t, c_in, 1, 1, c_out, 1, "valid", bpv, name)

    layers = [patch]
    for i in range(depth):
        layers += [proj(f"blk{i}_qkv", dim, 3 * dim), proj(f"blk{i}_attn_out", 3 * dim, dim),
                   proj(f"blk{i}_mlp1", dim, mlp), proj(f"blk{i}_mlp2", mlp, dim)]
    layers += [_pool("token_pool", t, dim, t, 1, bpv=bpv), _fc("head", dim, 1000, bpv)]
    return tuple(layers)


@lru_cache(maxsize=None)
def builtin_library(scale: float = 1.0, bpv: int = 1) -> dict:
    """Name -> layer chain for AlexNet, ResNet18/34/50 and ViT-B.

    ``scale`` shrinks the input resolution (0.5 gives 112x112 ResNets).
    """
    def size(base, multiple=1):
        return max(multiple, int(round(base * scale / multiple)) * multiple)

    return {
        # below 67 px AlexNet's last pooling layer has no output
        "AlexNet": alexnet(max(67, size(227)) if scale != 1.0 else 227, bpv),
        "ResNet18": resnet(18, size(224, 32), bpv),
        "ResNet34": resnet(34, size(224, 32), bpv),
        "ResNet50": resnet(50, size(224, 32), bpv),
        "ViT-B": vit_b16(size(224, 16), bpv),
    }


CNN_MIX = {"AlexNet": 1, "ResNet18": 1, "ResNet34": 1, "ResNet50": 1}


def summarize(layers) -> dict:
    stats = [derive_layer_stats(layer) for layer in layers]
    return {
        "layers": len(layers),
        "macs": sum(s.macs for s in stats),
        "weight_bytes": sum(s.weight_bytes for s in stats),
        "activation_bytes": sum(s.output_bytes for s in stats),
    }
