"""Desk-scale training of the fixed toy conv net.

The architecture never changes: 1x16x16 input -> 3x3 conv (1->8) -> relu
-> 1x1 conv (8->8) -> relu -> 3x3 conv (8->16) -> relu -> global average
pool -> linear (16 -> n_classes) -> softmax cross entropy. What varies is
how each conv stores its weights: dense tensors, a learned low-rank pair,
or a frozen-code quantized layer whose codebook is still trainable.

Backpropagation is written out explicitly for this layer set. Convolution
runs as im2col + matmul over exactly the weight matrix the quantization
path produces, so compute and compression share one representation, and
every gradient here is checkable against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .arch import ArchitectureSpec, LayerSpec, toy_arch
from .errors import DivergedLossError, ShapeMismatchError
from .linalg import make_rng, normal_matrix
from .lowrank import LowRankPair, init_lowrank, materialize
from .modelfmt import Checkpoint, CheckpointLayer, CompressionRegime, quantized_layout
from .vq import QuantizedLayer, clamp_k, clustering_error, decode, kmeans_fit, merge_codebook

__all__ = [
    "IMAGE_SIZE",
    "STREAM_DATA",
    "STREAM_INIT",
    "STREAM_TRAIN",
    "STREAM_QUANTIZE",
    "SyntheticDataset",
    "TrainConfig",
    "ConvLayer",
    "ToyNet",
    "build_dense",
    "build_lowrank",
    "quantize_net",
    "merge_net",
    "forward",
    "loss_and_grads",
    "train",
    "evaluate",
    "net_to_checkpoint",
    "net_from_checkpoint",
]

IMAGE_SIZE = 16

# Fixed Philox stream ids so each concern draws from its own counter space.
STREAM_DATA = 1
STREAM_INIT = 2
STREAM_TRAIN = 3
STREAM_QUANTIZE = 4


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticDataset:
    """Per-class random template images plus gaussian pixel noise.

    Everything is a pure function of the seed; classes are balanced in both
    splits.
    """

    seed: int
    n_classes: int = 8
    n_train: int = 1024
    n_test: int = 1024
    noise_sigma: float = 0.5
    template_scale: float = 0.45

    x_train: np.ndarray = field(init=False, repr=False, compare=False)
    y_train: np.ndarray = field(init=False, repr=False, compare=False)
    x_test: np.ndarray = field(init=False, repr=False, compare=False)
    y_test: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rng = make_rng(self.seed, STREAM_DATA)
        shape = (1, IMAGE_SIZE, IMAGE_SIZE)
        templates = rng.normal(0.0, self.template_scale, (self.n_classes, *shape))
        for name, count in (("train", self.n_train), ("test", self.n_test)):
            labels = np.arange(count, dtype=np.int64) % self.n_classes
            images = templates[labels] + rng.normal(0.0, self.noise_sigma, (count, *shape))
            object.__setattr__(self, f"x_{name}", images)
            object.__setattr__(self, f"y_{name}", labels)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr: float
    batch_size: int = 64
    optimizer: str = "adam"  # adam | sgd_momentum
    lr_schedule: str = "cosine"  # cosine | constant
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")


# ---------------------------------------------------------------------------
# Network structure
# ---------------------------------------------------------------------------


@dataclass
class ConvLayer:
    """One conv layer in a single storage mode.

    dense -> ``w`` holds the 4-D tensor; lowrank -> ``pair``; quantized or
    merged -> ``q``. ``m`` is the subvector width used when the flat weight
    vector is viewed as an (N/m, m) matrix.
    """

    spec: LayerSpec
    m: int
    mode: str
    w: np.ndarray | None = None
    pair: LowRankPair | None = None
    q: QuantizedLayer | None = None

    @property
    def n_subvectors(self) -> int:
        return self.spec.n_params // self.m

    def subvector_matrix(self) -> np.ndarray:
        """Full-width (N/m, m) weight matrix in this layer's current mode."""
        if self.mode == "dense":
            return self.w.reshape(self.n_subvectors, self.m)
        if self.mode == "lowrank":
            return materialize(self.pair)
        if self.mode == "quantized":
            return decode(self.q.codebook, self.q.codes) @ self.q.b
        if self.mode == "merged":
            return decode(self.q.codebook, self.q.codes)
        raise ValueError(f"unknown mode {self.mode!r}")

    def weight_matrix(self) -> np.ndarray:
        """(c_out, c_in*k_h*k_w) matrix for the im2col matmul."""
        s = self.spec
        return self.subvector_matrix().reshape(s.c_out, s.c_in * s.k_h * s.k_w)

    def trainables(self) -> list[np.ndarray]:
        if self.mode == "dense":
            return [self.w]
        if self.mode == "lowrank":
            return [self.pair.a, self.pair.b]
        if self.mode in ("quantized", "merged"):
            return [self.q.codebook]
        raise ValueError(f"unknown mode {self.mode!r}")

    def route_gradient(self, d_wmat: np.ndarray) -> list[np.ndarray]:
        """Map the full-width weight gradient onto this mode's parameters."""
        d_sub = d_wmat.reshape(self.n_subvectors, self.m)
        if self.mode == "dense":
            return [d_sub.reshape(self.spec.shape)]
        if self.mode == "lowrank":
            return [d_sub @ self.pair.b.T, self.pair.a.T @ d_sub]
        if self.mode in ("quantized", "merged"):
            # codebook row q accumulates the gradients of every subvector
            # slot assigned to it; codes and the transform stay frozen
            d_decoded = d_sub if self.mode == "merged" else d_sub @ self.q.b.T
            d_codebook = np.zeros_like(self.q.codebook)
            np.add.at(d_codebook, self.q.codes, d_decoded)
            return [d_codebook]
        raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class ToyNet:
    convs: list[ConvLayer]
    fc_w: np.ndarray
    n_classes: int

    @property
    def mode(self) -> str:
        modes = {c.mode for c in self.convs}
        return modes.pop() if len(modes) == 1 else "mixed"

    def trainables(self) -> list[np.ndarray]:
        params = []
        for conv in self.convs:
            params.extend(conv.trainables())
        params.append(self.fc_w)
        return params


def _conv_specs(n_classes: int) -> tuple[list[LayerSpec], LayerSpec]:
    layers = toy_arch(n_classes).layers
    return list(layers[:3]), layers[3]


def _arch_of(net: ToyNet) -> ArchitectureSpec:
    fc_spec = LayerSpec("fc", net.fc_w.shape[0], net.fc_w.shape[1], 1, 1, False)
    return ArchitectureSpec(
        name="toy", layers=(*(conv.spec for conv in net.convs), fc_spec)
    )


def _he_delta(spec: LayerSpec) -> float:
    return 2.0 / (spec.c_in * spec.k_h * spec.k_w)


def build_dense(rng: np.random.Generator, n_classes: int = 8) -> ToyNet:
    conv_specs, fc_spec = _conv_specs(n_classes)
    convs = []
    for spec in conv_specs:
        w = normal_matrix(
            rng, spec.c_out, spec.c_in * spec.k_h * spec.k_w, 0.0, _he_delta(spec)
        ).reshape(spec.shape)
        m = 9 if spec.kind == "cv3x3" else 4
        convs.append(ConvLayer(spec=spec, m=m, mode="dense", w=w))
    fc_w = normal_matrix(rng, fc_spec.c_out, fc_spec.c_in, 0.0, 2.0 / fc_spec.c_in)
    return ToyNet(convs=convs, fc_w=fc_w, n_classes=n_classes)


def build_lowrank(
    rng: np.random.Generator,
    n_classes: int,
    d_cv: int,
    d_pw: int,
    variance_mode: str = "paper",
) -> ToyNet:
    conv_specs, fc_spec = _conv_specs(n_classes)
    convs = []
    for spec in conv_specs:
        m = 9 if spec.kind == "cv3x3" else 4
        d_tilde = d_cv if spec.kind == "cv3x3" else d_pw
        pair = init_lowrank(
            rng, spec.n_params // m, m, d_tilde, _he_delta(spec), variance_mode
        )
        convs.append(ConvLayer(spec=spec, m=m, mode="lowrank", pair=pair))
    fc_w = normal_matrix(rng, fc_spec.c_out, fc_spec.c_in, 0.0, 2.0 / fc_spec.c_in)
    return ToyNet(convs=convs, fc_w=fc_w, n_classes=n_classes)


def quantize_net(
    rng: np.random.Generator,
    net: ToyNet,
    regime: CompressionRegime,
    iters: int = 100,
) -> tuple[ToyNet, list[float | None]]:
    """Cluster each quantized conv layer's subvectors into a codebook.

    Layers the regime leaves dense (the skipped first conv) are
    materialized to dense tensors and keep co-training later. Returns the
    quantized net (codes frozen, transform kept) and per-layer clustering
    errors of the full-width weights, None for unquantized layers.
    """
    layout = quantized_layout(_arch_of(net), regime)
    convs = []
    errors: list[float | None] = []
    for conv, lay in zip(net.convs, layout):
        if conv.mode != "lowrank":
            raise ShapeMismatchError(f"can only quantize lowrank layers, got {conv.mode}")
        if not lay.quantized:
            w = conv.subvector_matrix().reshape(conv.spec.shape)
            convs.append(replace(conv, mode="dense", pair=None, w=w))
            errors.append(None)
            continue
        k_eff = clamp_k(lay.k_nominal, conv.n_subvectors)
        codebook, codes = kmeans_fit(rng, conv.pair.a, k_eff, iters=iters)
        q = QuantizedLayer(codebook=codebook, codes=codes, b=conv.pair.b.copy())
        errors.append(clustering_error(materialize(conv.pair), q))
        convs.append(replace(conv, mode="quantized", pair=None, q=q))
    return ToyNet(convs=convs, fc_w=net.fc_w.copy(), n_classes=net.n_classes), errors


def merge_net(net: ToyNet) -> ToyNet:
    """Fold every quantized layer's transform into its codebook."""
    convs = []
    for conv in net.convs:
        if conv.mode == "dense":
            convs.append(replace(conv, w=conv.w.copy()))
            continue
        if conv.mode != "quantized":
            raise ShapeMismatchError(f"can only merge quantized layers, got {conv.mode}")
        convs.append(replace(conv, mode="merged", q=merge_codebook(conv.q)))
    return ToyNet(convs=convs, fc_w=net.fc_w.copy(), n_classes=net.n_classes)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, k_h: int, k_w: int, pad: int) -> np.ndarray:
    """(C*k_h*k_w, B*H*W) patch matrix for stride-1 same-size convolution."""
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (k_h, k_w), axis=(2, 3))
    # (B, C, H, W, k_h, k_w) -> rows ordered (C, k_h, k_w), cols (B, H, W)
    return windows.transpose(1, 4, 5, 0, 2, 3).reshape(c * k_h * k_w, b * h * w)


def _col2im(
    d_cols: np.ndarray, x_shape: tuple, k_h: int, k_w: int, pad: int
) -> np.ndarray:
    """Scatter-add transpose of _im2col; fixed loop order keeps it exact."""
    b, c, h, w = x_shape
    d_pad = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    d_r = d_cols.reshape(c, k_h, k_w, b, h, w).transpose(3, 0, 1, 2, 4, 5)
    for i in range(k_h):
        for j in range(k_w):
            d_pad[:, :, i : i + h, j : j + w] += d_r[:, :, i, j]
    if pad:
        return d_pad[:, :, pad:-pad, pad:-pad]
    return d_pad


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def forward(net: ToyNet, x: np.ndarray, y: np.ndarray | None = None):
    """Run the net; returns (logits, loss, cache). loss is None without labels."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != (1, IMAGE_SIZE, IMAGE_SIZE):
        raise ShapeMismatchError(f"expected (B, 1, {IMAGE_SIZE}, {IMAGE_SIZE}), got {x.shape}")
    batch = x.shape[0]
    cache = {"conv": []}
    cur = x
    for conv in net.convs:
        s = conv.spec
        pad = (s.k_h - 1) // 2
        cols = _im2col(cur, s.k_h, s.k_w, pad)
        wmat = conv.weight_matrix()
        out_mat = wmat @ cols
        out = out_mat.reshape(s.c_out, batch, IMAGE_SIZE, IMAGE_SIZE).transpose(1, 0, 2, 3)
        relu_mask = out > 0
        cache["conv"].append(
            {"x_shape": cur.shape, "cols": cols, "wmat": wmat, "mask": relu_mask, "pad": pad}
        )
        cur = out * relu_mask
    feat = cur.mean(axis=(2, 3))
    logits = feat @ net.fc_w.T
    cache["feat"] = feat
    cache["spatial"] = cur.shape
    loss = None
    if y is not None:
        probs = _softmax(logits)
        loss = float(-np.mean(np.log(probs[np.arange(batch), y] + 1e-300)))
        cache["probs"] = probs
        cache["y"] = np.asarray(y)
    return logits, loss, cache


def loss_and_grads(net: ToyNet, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy loss and gradients in trainables() order."""
    _, loss, cache = forward(net, x, y)
    batch = x.shape[0]
    probs, labels = cache["probs"], cache["y"]
    d_logits = probs.copy()
    d_logits[np.arange(batch), labels] -= 1.0
    d_logits /= batch

    d_fc = d_logits.T @ cache["feat"]
    d_feat = d_logits @ net.fc_w

    _, _, h, w = cache["spatial"]
    d_cur = np.broadcast_to(
        d_feat[:, :, None, None] / (h * w), cache["spatial"]
    ).copy()

    grads_per_conv = []
    for conv, c in zip(reversed(net.convs), reversed(cache["conv"])):
        d_out = d_cur * c["mask"]
        d_out_mat = d_out.transpose(1, 0, 2, 3).reshape(conv.spec.c_out, -1)
        d_wmat = d_out_mat @ c["cols"].T
        grads_per_conv.append(conv.route_gradient(d_wmat))
        d_cols = c["wmat"].T @ d_out_mat
        d_cur = _col2im(d_cols, c["x_shape"], conv.spec.k_h, conv.spec.k_w, c["pad"])

    grads = []
    for conv_grads in reversed(grads_per_conv):
        grads.extend(conv_grads)
    grads.append(d_fc)
    return loss, grads


def evaluate(net: ToyNet, x: np.ndarray, y: np.ndarray) -> float:
    """Deterministic top-1 accuracy."""
    logits, _, _ = forward(net, x)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(y)))


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


class _Sgd:
    def __init__(self, params, momentum):
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, params, grads, lr):
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v += g
            p -= lr * v


class _Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / max(cfg.epochs, 1)))


def train(net: ToyNet, data: SyntheticDataset, cfg: TrainConfig):
    """Optimize the net's current-mode parameters in place.

    In quantized mode only codebooks and the dense classifier move: codes
    and the linear transform are never in the parameter list, so the
    assignment structure is frozen by construction. Returns (net, history)
    where history rows are (epoch, mode, mean train loss, test accuracy).
    """
    params = net.trainables()
    opt = (
        _Adam(params)
        if cfg.optimizer == "adam"
        else _Sgd(params, momentum=cfg.momentum)
    )
    rng = make_rng(cfg.seed, STREAM_TRAIN)
    history = []
    mode = net.mode
    for epoch in range(cfg.epochs):
        lr = _lr_at(cfg, epoch)
        order = rng.permutation(data.n_train)
        losses = []
        for start in range(0, data.n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(net, data.x_train[idx], data.y_train[idx])
            if not np.isfinite(loss):
                raise DivergedLossError(epoch)
            if cfg.weight_decay:
                for p, g in zip(params, grads):
                    g += cfg.weight_decay * p
            opt.step(params, grads, lr)
            losses.append(loss)
        accuracy = evaluate(net, data.x_test, data.y_test)
        history.append((epoch, mode, float(np.mean(losses)), accuracy))
    return net, history


# ---------------------------------------------------------------------------
# Checkpoint conversion
# ---------------------------------------------------------------------------


def net_to_checkpoint(net: ToyNet, regime: CompressionRegime, training: dict) -> Checkpoint:
    layers = []
    for conv in net.convs:
        if conv.mode == "dense":
            arrays = {"w": conv.w}
        elif conv.mode == "lowrank":
            arrays = {"a": conv.pair.a, "b": conv.pair.b}
        elif conv.mode == "quantized":
            arrays = {"codebook": conv.q.codebook, "codes": conv.q.codes, "b": conv.q.b}
        else:
            arrays = {"codebook": conv.q.codebook, "codes": conv.q.codes}
        layers.append(CheckpointLayer(spec=conv.spec, mode=conv.mode, arrays=arrays))
    fc_spec = LayerSpec("fc", net.fc_w.shape[0], net.fc_w.shape[1], 1, 1, quantize=False)
    layers.append(
        CheckpointLayer(
            spec=fc_spec, mode="dense", arrays={"w": net.fc_w.reshape(fc_spec.shape)}
        )
    )
    return Checkpoint(regime=regime, layers=tuple(layers), training=dict(training))


def net_from_checkpoint(ckpt: Checkpoint) -> ToyNet:
    convs = []
    fc_w = None
    n_classes = None
    for layer in ckpt.layers:
        spec = layer.spec
        if spec.kind == "fc":
            fc_w = layer.arrays["w"].reshape(spec.c_out, spec.c_in)
            n_classes = spec.c_out
            continue
        m = 9 if spec.kind == "cv3x3" else 4
        if layer.mode == "dense":
            conv = ConvLayer(spec=spec, m=m, mode="dense", w=layer.arrays["w"])
        elif layer.mode == "lowrank":
            pair = LowRankPair(a=layer.arrays["a"], b=layer.arrays["b"])
            conv = ConvLayer(spec=spec, m=m, mode="lowrank", pair=pair)
        elif layer.mode == "quantized":
            q = QuantizedLayer(
                codebook=layer.arrays["codebook"],
                codes=layer.arrays["codes"],
                b=layer.arrays["b"],
            )
            conv = ConvLayer(spec=spec, m=m, mode="quantized", q=q)
        else:
            q = QuantizedLayer(
                codebook=layer.arrays["codebook"],
                codes=layer.arrays["codes"],
                b=None,
                merged=True,
            )
            conv = ConvLayer(spec=spec, m=m, mode="merged", q=q)
        convs.append(conv)
    if fc_w is None:
        raise ShapeMismatchError("checkpoint has no classifier layer")
    return ToyNet(convs=convs, fc_w=fc_w, n_classes=n_classes)
