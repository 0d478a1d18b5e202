"""Static layer tables for the architectures the toolkit can account for.

Only shapes live here: enough to drive size accounting, regime checks and
the toy trainer. ``aux_params`` counts the parameters that are never
quantized or stored compressed (biases, batchnorm scales/shifts) but do
count toward the uncompressed baseline size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import UnknownArchError

__all__ = [
    "LayerSpec",
    "ArchitectureSpec",
    "toy_arch",
    "resnet18",
    "resnet50",
    "get_arch",
    "parse_arch",
    "dump_arch",
    "ARCH_BUILDERS",
]

KINDS = ("cv3x3", "pw1x1", "fc", "other")


@dataclass(frozen=True)
class LayerSpec:
    """One weight tensor: conv as (c_out, c_in, k_h, k_w), fc as (out, in, 1, 1)."""

    kind: str
    c_out: int
    c_in: int
    k_h: int
    k_w: int
    quantize: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "cv3x3" and (self.k_h, self.k_w) != (3, 3):
            raise ValueError("cv3x3 layers must be 3x3")
        if self.kind == "pw1x1" and (self.k_h, self.k_w) != (1, 1):
            raise ValueError("pw1x1 layers must be 1x1")
        if min(self.c_out, self.c_in, self.k_h, self.k_w) < 1:
            raise ValueError("layer dimensions must be positive")

    @property
    def n_params(self) -> int:
        return self.c_out * self.c_in * self.k_h * self.k_w

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.c_out, self.c_in, self.k_h, self.k_w)


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)
    aux_params: int = 0

    @property
    def total_params(self) -> int:
        return sum(layer.n_params for layer in self.layers) + self.aux_params


def _cv(c_out, c_in, quantize=True):
    return LayerSpec("cv3x3", c_out, c_in, 3, 3, quantize)


def _pw(c_out, c_in, quantize=True):
    return LayerSpec("pw1x1", c_out, c_in, 1, 1, quantize)


def _fc(out_features, in_features, quantize=True):
    return LayerSpec("fc", out_features, in_features, 1, 1, quantize)


def toy_arch(n_classes: int = 8) -> ArchitectureSpec:
    """The fixed desk-scale network: two 3x3 convs around a pointwise conv.

    The 3x3 stem is cheap enough to quantize, and the classifier head stays
    dense; the net carries no biases or batchnorm, so aux_params is 0.
    """
    return ArchitectureSpec(
        name="toy",
        layers=(
            _cv(8, 1),
            _pw(8, 8),
            _cv(16, 8),
            _fc(n_classes, 16, quantize=False),
        ),
        aux_params=0,
    )


def _basic_stage(width, in_width, blocks):
    layers = [_cv(width, in_width), _cv(width, width)]
    if in_width != width:
        layers.append(_pw(width, in_width))
    for _ in range(blocks - 1):
        layers.extend([_cv(width, width), _cv(width, width)])
    return layers


def resnet18() -> ArchitectureSpec:
    layers = [LayerSpec("other", 64, 3, 7, 7, quantize=False)]
    layers += _basic_stage(64, 64, 2)
    layers += _basic_stage(128, 64, 2)
    layers += _basic_stage(256, 128, 2)
    layers += _basic_stage(512, 256, 2)
    layers.append(_fc(1000, 512))
    conv_out = sum(l.c_out for l in layers if l.kind != "fc")
    return ArchitectureSpec(
        name="resnet18",
        layers=tuple(layers),
        aux_params=2 * conv_out + 1000,  # batchnorm scale/shift + fc bias
    )


def _bottleneck_stage(width, in_width, blocks):
    out_width = width * 4
    layers = [
        _pw(width, in_width),
        _cv(width, width),
        _pw(out_width, width),
        _pw(out_width, in_width),  # projection shortcut
    ]
    for _ in range(blocks - 1):
        layers.extend([_pw(width, out_width), _cv(width, width), _pw(out_width, width)])
    return layers


def resnet50() -> ArchitectureSpec:
    layers = [LayerSpec("other", 64, 3, 7, 7, quantize=False)]
    layers += _bottleneck_stage(64, 64, 3)
    layers += _bottleneck_stage(128, 256, 4)
    layers += _bottleneck_stage(256, 512, 6)
    layers += _bottleneck_stage(512, 1024, 3)
    layers.append(_fc(1000, 2048))
    conv_out = sum(l.c_out for l in layers if l.kind != "fc")
    return ArchitectureSpec(
        name="resnet50",
        layers=tuple(layers),
        aux_params=2 * conv_out + 1000,
    )


ARCH_BUILDERS = {
    "toy": toy_arch,
    "resnet18": resnet18,
    "resnet50": resnet50,
}


def get_arch(name: str) -> ArchitectureSpec:
    try:
        return ARCH_BUILDERS[name]()
    except KeyError:
        raise UnknownArchError(name) from None


def parse_arch(text: str, name: str = "custom") -> ArchitectureSpec:
    """Plain-text layer table: ``kind c_out c_in k_h k_w quantize`` per line.

    Blank lines and ``#`` comments are skipped. An optional ``aux <count>``
    line declares uncompressed parameters (biases, batchnorm).
    """
    layers = []
    aux = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "aux":
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'aux <count>'")
            aux += int(parts[1])
            continue
        if len(parts) != 6:
            raise ValueError(
                f"line {lineno}: expected 'kind c_out c_in k_h k_w quantize'"
            )
        kind = parts[0]
        c_out, c_in, k_h, k_w = (int(v) for v in parts[1:5])
        quantize = parts[5].lower() in ("1", "true", "yes")
        layers.append(LayerSpec(kind, c_out, c_in, k_h, k_w, quantize))
    return ArchitectureSpec(name=name, layers=tuple(layers), aux_params=aux)


def dump_arch(arch: ArchitectureSpec) -> str:
    lines = [f"# {arch.name}: kind c_out c_in k_h k_w quantize"]
    for layer in arch.layers:
        lines.append(
            f"{layer.kind} {layer.c_out} {layer.c_in} {layer.k_h} {layer.k_w} "
            f"{'true' if layer.quantize else 'false'}"
        )
    if arch.aux_params:
        lines.append(f"aux {arch.aux_params}")
    return "\n".join(lines) + "\n"
