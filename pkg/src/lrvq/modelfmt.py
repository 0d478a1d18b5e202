"""Binary model container and byte-accurate size accounting.

Exported models hold merged fp16 codebooks, minimal-width integer codes
and fp16 leftovers; checkpoints reuse the same record layout with fp32
payloads plus a JSON training section. Everything is little-endian with
documented offsets, and serialization is deterministic so identical
inputs produce identical bytes.

Layout of an exported model::

    magic          6 bytes  b"LR2VQ\\0"
    version        u16
    regime         m_cv u16, m_pw u16, m_fc u16, k_cv u32, k_pw u32,
                   k_fc u32, d_cv u16, d_pw u16, skip_first_conv u8
    n_layers       u16
    per layer:
      index u16, kind u8, c_out u32, c_in u32, k_h u8, k_w u8, mode u8
      mode 1 (quantized): k_eff u32, m u16, code_width u8, n_codes u32,
                          codebook fp16[k_eff * m], codes u8/u16[n_codes]
      mode 0 (leftover):  n_params u32, data fp16[n_params]

The 33-byte header (through n_layers) is all an empty model contains.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .arch import KINDS, ArchitectureSpec, LayerSpec
from .errors import (
    FormatError,
    IncompatibleRegimeError,
    TooFewSubvectorsError,
    UnmergedLayerError,
)
from .vq import clamp_k

__all__ = [
    "CompressionRegime",
    "REGIMES",
    "CompressedLayer",
    "CompressedModel",
    "MAGIC_MODEL",
    "MAGIC_CHECKPOINT",
    "HEADER_BYTES",
    "quantized_layout",
    "serialize",
    "deserialize",
    "original_size",
    "compressed_size",
    "compression_ratio",
    "CheckpointLayer",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC_MODEL = b"LR2VQ\x00"
MAGIC_CHECKPOINT = b"LR2CK\x00"
VERSION = 1
HEADER_BYTES = 33

_MODE_LEFTOVER = 0
_MODE_QUANTIZED = 1
_CKPT_MODES = {"dense": 2, "lowrank": 3, "quantized": 4, "merged": 5}
_CKPT_MODE_NAMES = {v: k for k, v in _CKPT_MODES.items()}


@dataclass(frozen=True)
class CompressionRegime:
    """Per-layer-kind subvector sizes, centroid counts and inner dims."""

    m_cv: int
    m_pw: int
    m_fc: int
    k_cv: int
    k_pw: int
    k_fc: int
    d_cv: int
    d_pw: int
    skip_first_conv: bool = True

    def __post_init__(self):
        if not 1 <= self.d_cv <= self.m_cv:
            raise IncompatibleRegimeError(f"d_cv={self.d_cv} outside [1, {self.m_cv}]")
        if not 1 <= self.d_pw <= self.m_pw:
            raise IncompatibleRegimeError(f"d_pw={self.d_pw} outside [1, {self.m_pw}]")

    def params_for(self, kind: str) -> tuple[int, int] | None:
        """(m, k) used to quantize the given layer kind, or None."""
        if kind == "cv3x3":
            return self.m_cv, self.k_cv
        if kind == "pw1x1":
            return self.m_pw, self.k_pw
        if kind == "fc":
            return self.m_fc, self.k_fc
        return None

    def d_for(self, kind: str) -> int | None:
        """Inner dimension for low-rank learning; fc is clustered directly."""
        if kind == "cv3x3":
            return self.d_cv
        if kind == "pw1x1":
            return self.d_pw
        return None


REGIMES = {
    "resnet18-small": CompressionRegime(9, 4, 4, 256, 256, 2048, 4, 4),
    "resnet18-large": CompressionRegime(18, 4, 4, 256, 256, 2048, 4, 4),
    "resnet50-small": CompressionRegime(9, 4, 4, 256, 256, 1024, 5, 4),
    "resnet50-large": CompressionRegime(18, 8, 4, 256, 256, 1024, 5, 4),
    "toy": CompressionRegime(9, 4, 4, 256, 256, 256, 3, 3, skip_first_conv=False),
}


@dataclass(frozen=True)
class LayerLayout:
    """Resolved quantization plan for one layer of an architecture."""

    spec: LayerSpec
    quantized: bool
    m: int = 0
    k_nominal: int = 0
    k_eff: int = 0
    code_width: int = 0

    @property
    def n_subvectors(self) -> int:
        return self.spec.n_params // self.m if self.quantized else 0


def quantized_layout(
    arch: ArchitectureSpec, regime: CompressionRegime
) -> list[LayerLayout]:
    """Decide per layer whether and how the regime quantizes it.

    The first convolution is left dense when the regime says to skip it;
    layers of kind "other" have no regime parameters and always stay dense.
    Raises IncompatibleRegimeError when a subvector size does not divide a
    quantized layer's parameter count.
    """
    first_conv = next((i for i, l in enumerate(arch.layers) if l.kind != "fc"), None)
    layout = []
    for i, spec in enumerate(arch.layers):
        params = regime.params_for(spec.kind)
        skip = regime.skip_first_conv and i == first_conv
        if not spec.quantize or params is None or skip:
            layout.append(LayerLayout(spec=spec, quantized=False))
            continue
        m, k = params
        if spec.n_params % m != 0:
            raise IncompatibleRegimeError(
                f"layer {i} ({spec.kind}): m={m} does not divide {spec.n_params}"
            )
        n_sub = spec.n_params // m
        try:
            k_eff = clamp_k(k, n_sub)
        except TooFewSubvectorsError as exc:
            raise IncompatibleRegimeError(f"layer {i}: {exc}") from exc
        code_width = 8 if k <= 256 else 16
        layout.append(
            LayerLayout(
                spec=spec,
                quantized=True,
                m=m,
                k_nominal=k,
                k_eff=k_eff,
                code_width=code_width,
            )
        )
    return layout


@dataclass(frozen=True)
class CompressedLayer:
    """One serialized layer: merged fp16 codebook + codes, or fp16 leftover."""

    index: int
    spec: LayerSpec
    codebook: np.ndarray | None = None  # float16 (k_eff, m)
    codes: np.ndarray | None = None  # uint8 or uint16
    leftover: np.ndarray | None = None  # float16, flat

    @property
    def quantized(self) -> bool:
        return self.codebook is not None


@dataclass(frozen=True)
class CompressedModel:
    regime: CompressionRegime
    layers: tuple[CompressedLayer, ...] = field(default_factory=tuple)


def _pack_regime(regime: CompressionRegime) -> bytes:
    return struct.pack(
        "<HHHIIIHHB",
        regime.m_cv,
        regime.m_pw,
        regime.m_fc,
        regime.k_cv,
        regime.k_pw,
        regime.k_fc,
        regime.d_cv,
        regime.d_pw,
        int(regime.skip_first_conv),
    )


def _unpack_regime(data: bytes, offset: int) -> tuple[CompressionRegime, int]:
    fields = struct.unpack_from("<HHHIIIHHB", data, offset)
    regime = CompressionRegime(*fields[:8], skip_first_conv=bool(fields[8]))
    return regime, offset + struct.calcsize("<HHHIIIHHB")


def _pack_layer_head(index: int, spec: LayerSpec, mode: int) -> bytes:
    return struct.pack(
        "<HBIIBBB",
        index,
        KINDS.index(spec.kind),
        spec.c_out,
        spec.c_in,
        spec.k_h,
        spec.k_w,
        mode,
    )


def _unpack_layer_head(data, offset, quantize):
    index, kind_id, c_out, c_in, k_h, k_w, mode = struct.unpack_from(
        "<HBIIBBB", data, offset
    )
    spec = LayerSpec(KINDS[kind_id], c_out, c_in, k_h, k_w, quantize)
    return index, spec, mode, offset + struct.calcsize("<HBIIBBB")


def serialize(model: CompressedModel) -> bytes:
    """Deterministic byte stream for an exported model.

    Every quantized layer must already be merged (codebook width m); a
    layer that still carries its linear transform cannot be exported.
    """
    out = bytearray()
    out += MAGIC_MODEL
    out += struct.pack("<H", VERSION)
    out += _pack_regime(model.regime)
    out += struct.pack("<H", len(model.layers))
    for layer in model.layers:
        if layer.quantized:
            k_eff, m = layer.codebook.shape
            params = model.regime.params_for(layer.spec.kind)
            if params is None or m != params[0]:
                raise UnmergedLayerError(
                    f"layer {layer.index}: codebook width {m} is not the "
                    f"subvector size; merge the linear transform before export"
                )
            if layer.codebook.dtype != np.float16:
                raise FormatError("codebook payload must be float16")
            code_width = {np.uint8: 8, np.uint16: 16}.get(layer.codes.dtype.type)
            if code_width is None:
                raise FormatError("codes must be uint8 or uint16")
            out += _pack_layer_head(layer.index, layer.spec, _MODE_QUANTIZED)
            out += struct.pack("<IHBI", k_eff, m, code_width, layer.codes.size)
            out += layer.codebook.astype("<f2").tobytes()
            out += layer.codes.astype(f"<u{code_width // 8}").tobytes()
        else:
            if layer.leftover.dtype != np.float16:
                raise FormatError("leftover payload must be float16")
            out += _pack_layer_head(layer.index, layer.spec, _MODE_LEFTOVER)
            out += struct.pack("<I", layer.leftover.size)
            out += layer.leftover.astype("<f2").tobytes()
    return bytes(out)


def deserialize(data: bytes) -> CompressedModel:
    if data[:6] != MAGIC_MODEL:
        raise FormatError("bad magic; not an exported model")
    (version,) = struct.unpack_from("<H", data, 6)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    regime, offset = _unpack_regime(data, 8)
    (n_layers,) = struct.unpack_from("<H", data, offset)
    offset += 2
    layers = []
    for _ in range(n_layers):
        index, spec, mode, offset = _unpack_layer_head(data, offset, quantize=True)
        if mode == _MODE_QUANTIZED:
            k_eff, m, code_width, n_codes = struct.unpack_from("<IHBI", data, offset)
            offset += struct.calcsize("<IHBI")
            codebook = np.frombuffer(data, "<f2", k_eff * m, offset).reshape(k_eff, m)
            offset += k_eff * m * 2
            codes = np.frombuffer(data, f"<u{code_width // 8}", n_codes, offset)
            offset += n_codes * (code_width // 8)
            layers.append(
                CompressedLayer(index, spec, codebook.copy(), codes.copy(), None)
            )
        elif mode == _MODE_LEFTOVER:
            spec = LayerSpec(spec.kind, spec.c_out, spec.c_in, spec.k_h, spec.k_w, False)
            (n_params,) = struct.unpack_from("<I", data, offset)
            offset += 4
            leftover = np.frombuffer(data, "<f2", n_params, offset)
            offset += n_params * 2
            layers.append(CompressedLayer(index, spec, None, None, leftover.copy()))
        else:
            raise FormatError(f"unknown layer mode {mode}")
    if offset != len(data):
        raise FormatError(f"trailing bytes: read {offset} of {len(data)}")
    return CompressedModel(regime=regime, layers=tuple(layers))


def original_size(arch: ArchitectureSpec) -> int:
    """Uncompressed baseline: 4 bytes per parameter, biases included."""
    return 4 * arch.total_params


def compressed_size(
    arch: ArchitectureSpec,
    regime: CompressionRegime,
    include_container: bool = True,
) -> int:
    """Analytic byte count of the exported model, without building it.

    Quantized layers cost k_eff*m fp16 codebook entries plus one code per
    subvector at the regime's code width; everything else is stored as fp16
    leftovers. Biases and batchnorm are not stored. With
    ``include_container`` the fixed header and per-layer record overhead
    are included, making the count equal to ``len(serialize(...))``.
    """
    total = HEADER_BYTES if include_container else 0
    for layout in quantized_layout(arch, regime):
        if layout.quantized:
            total += layout.k_eff * layout.m * 2
            total += layout.n_subvectors * (layout.code_width // 8)
            if include_container:
                total += 25
        else:
            total += 2 * layout.spec.n_params
            if include_container:
                total += 18
    return total


def compression_ratio(arch: ArchitectureSpec, regime: CompressionRegime) -> float:
    """Uncompressed fp32 bytes over exported bytes."""
    return original_size(arch) / compressed_size(arch, regime)


# ---------------------------------------------------------------------------
# Checkpoints: fp32 payloads between pipeline stages, same record style.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckpointLayer:
    """One layer's parameters in a training checkpoint.

    arrays by mode:
      dense:     w (c_out, c_in, k_h, k_w)
      lowrank:   a (n_sub, d_tilde), b (d_tilde, m)
      quantized: codebook (k, d_tilde), codes (n_sub,), b (d_tilde, m)
      merged:    codebook (k, m), codes (n_sub,)
    """

    spec: LayerSpec
    mode: str
    arrays: dict


@dataclass(frozen=True)
class Checkpoint:
    regime: CompressionRegime
    layers: tuple[CheckpointLayer, ...]
    training: dict


def _pack_f32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _read_f32(data, offset, count, shape):
    arr = np.frombuffer(data, "<f4", count, offset).reshape(shape).astype(np.float64)
    return arr, offset + 4 * count


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    out = bytearray()
    out += MAGIC_CHECKPOINT
    out += struct.pack("<H", VERSION)
    out += _pack_regime(ckpt.regime)
    out += struct.pack("<H", len(ckpt.layers))
    for index, layer in enumerate(ckpt.layers):
        mode = _CKPT_MODES[layer.mode]
        out += _pack_layer_head(index, layer.spec, mode)
        arrays = layer.arrays
        if layer.mode == "dense":
            out += struct.pack("<I", arrays["w"].size)
            out += _pack_f32(arrays["w"])
        elif layer.mode == "lowrank":
            a, b = arrays["a"], arrays["b"]
            out += struct.pack("<HHI", a.shape[1], b.shape[1], a.shape[0])
            out += _pack_f32(a)
            out += _pack_f32(b)
        elif layer.mode == "quantized":
            cb, codes, b = arrays["codebook"], arrays["codes"], arrays["b"]
            out += struct.pack("<IHHI", cb.shape[0], cb.shape[1], b.shape[1], codes.size)
            out += _pack_f32(cb)
            out += np.ascontiguousarray(codes, dtype="<u4").tobytes()
            out += _pack_f32(b)
        elif layer.mode == "merged":
            cb, codes = arrays["codebook"], arrays["codes"]
            out += struct.pack("<IHI", cb.shape[0], cb.shape[1], codes.size)
            out += _pack_f32(cb)
            out += np.ascontiguousarray(codes, dtype="<u4").tobytes()
        else:
            raise FormatError(f"unknown checkpoint mode {layer.mode!r}")
    blob = json.dumps(ckpt.training, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(blob))
    out += blob
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != MAGIC_CHECKPOINT:
        raise FormatError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<H", data, 6)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    regime, offset = _unpack_regime(data, 8)
    (n_layers,) = struct.unpack_from("<H", data, offset)
    offset += 2
    layers = []
    for _ in range(n_layers):
        _, spec, mode_id, offset = _unpack_layer_head(data, offset, quantize=True)
        mode = _CKPT_MODE_NAMES.get(mode_id)
        if mode == "dense":
            (count,) = struct.unpack_from("<I", data, offset)
            offset += 4
            w, offset = _read_f32(data, offset, count, spec.shape)
            arrays = {"w": w}
        elif mode == "lowrank":
            d_tilde, m, n_sub = struct.unpack_from("<HHI", data, offset)
            offset += struct.calcsize("<HHI")
            a, offset = _read_f32(data, offset, n_sub * d_tilde, (n_sub, d_tilde))
            b, offset = _read_f32(data, offset, d_tilde * m, (d_tilde, m))
            arrays = {"a": a, "b": b}
        elif mode == "quantized":
            k, d_tilde, m, n_codes = struct.unpack_from("<IHHI", data, offset)
            offset += struct.calcsize("<IHHI")
            cb, offset = _read_f32(data, offset, k * d_tilde, (k, d_tilde))
            codes = np.frombuffer(data, "<u4", n_codes, offset).astype(np.int64)
            offset += 4 * n_codes
            b, offset = _read_f32(data, offset, d_tilde * m, (d_tilde, m))
            arrays = {"codebook": cb, "codes": codes, "b": b}
        elif mode == "merged":
            k, m, n_codes = struct.unpack_from("<IHI", data, offset)
            offset += struct.calcsize("<IHI")
            cb, offset = _read_f32(data, offset, k * m, (k, m))
            codes = np.frombuffer(data, "<u4", n_codes, offset).astype(np.int64)
            offset += 4 * n_codes
            arrays = {"codebook": cb, "codes": codes}
        else:
            raise FormatError(f"unknown checkpoint layer mode {mode_id}")
        layers.append(CheckpointLayer(spec=spec, mode=mode, arrays=arrays))
    (blob_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    training = json.loads(data[offset : offset + blob_len].decode("utf-8"))
    return Checkpoint(regime=regime, layers=tuple(layers), training=training)
