"""PreMixNet / PostMixNet compatibility models and the LSRO objective."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .nn import Adam, BatchNorm, Conv2D, Linear, ReLU, TemporalSummary, TimePool, softmax
from .signal import LOG_FLOOR, N_MELS, AudioClip, mel_spectrogram, mix

CHECKPOINT_MAGIC = b"MASHNET\x00"
CHECKPOINT_VERSION = 1
STEM_ORDER = ("vocal", "harmonic", "percussion")
PROB_EPS = 1e-12

TARGETS = {
    "positive": (1.0, 0.0),
    "negative": (0.0, 1.0),
    "unlabeled": (0.5, 0.5),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "premix"
    n_mels: int = N_MELS
    input_frames: int = 512
    sourcenet_filters: tuple = (64, 64, 128, 128)
    conv2d_kernel: tuple = (3, 3)
    convblock1d_kernels: tuple = ((3, N_MELS), (3, 1))
    convblock1d_filters: int = 256
    fc_width: int = 128
    n_classes: int = 2

    def __post_init__(self):
        if self.variant not in ("premix", "postmix"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.n_mels != N_MELS:
            raise ValueError(f"models take {N_MELS}-bin mel input")
        if len(self.sourcenet_filters) != 4:
            raise ValueError("a SourceNet has four convolution layers")
        if self.pooled_frames < 1:
            raise ValueError(f"input_frames={self.input_frames} vanishes after three temporal poolings")
        object.__setattr__(self, "sourcenet_filters", tuple(self.sourcenet_filters))
        object.__setattr__(self, "conv2d_kernel", tuple(self.conv2d_kernel))
        object.__setattr__(self, "convblock1d_kernels", tuple(tuple(k) for k in self.convblock1d_kernels))

    @property
    def n_inputs(self) -> int:
        return 3 if self.variant == "premix" else 1

    @property
    def pooled_frames(self) -> int:
        return self.input_frames // 2 // 2 // 2

    @classmethod
    def desk(cls, variant="premix", **kw):
        """Reduced widths for CPU-scale experiments."""
        base = dict(variant=variant, input_frames=128, sourcenet_filters=(8, 8, 16, 16),
                    convblock1d_filters=32, fc_width=32)
        base.update(kw)
        return cls(**base)

    @classmethod
    def tiny(cls, variant="premix", **kw):
        base = dict(variant=variant, input_frames=8, sourcenet_filters=(2, 2, 3, 3),
                    convblock1d_filters=4, fc_width=4)
        base.update(kw)
        return cls(**base)


def _conv_block(c_in, filters, kernels, pads, rng, dtype):
    layers = []
    for i, (c_out, k, p) in enumerate(zip(filters, kernels, pads)):
        layers += [(f"conv{i}", Conv2D(c_in, c_out, k, p, rng, dtype)),
                   (f"bn{i}", BatchNorm(c_out, dtype=dtype)),
                   (f"relu{i}", ReLU())]
        c_in = c_out
    layers.append(("pool", TimePool()))
    return layers


class MashNet:
    """SourceNet branch(es) -> ConvBlock1D -> mean+max over time -> two FC layers."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32, zero_final=False):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        f = config.sourcenet_filters
        k2 = config.conv2d_kernel
        same2 = (k2[0] // 2, k2[1] // 2)
        self.branches = []
        names = STEM_ORDER if config.variant == "premix" else ("mix",)
        for name in names:
            layers = [(f"{name}.block0.{n}", l) for n, l in _conv_block(1, f[:2], [k2, k2], [same2, same2], rng, dtype)]
            layers += [(f"{name}.block1.{n}", l) for n, l in _conv_block(f[1], f[2:], [k2, k2], [same2, same2], rng, dtype)]
            self.branches.append(layers)
        c_in = f[3] * config.n_inputs
        (ka, kb) = config.convblock1d_kernels
        # "same" along time, "valid" along frequency
        trunk_pads = [(ka[0] // 2, 0), (kb[0] // 2, 0)]
        nf = config.convblock1d_filters
        self.trunk = [(f"trunk.{n}", l) for n, l in _conv_block(c_in, [nf, nf], [ka, kb], trunk_pads, rng, dtype)]
        self.head = [("summary", TemporalSummary()),
                     ("fc0", Linear(nf, config.fc_width, rng, dtype)),
                     ("fc_relu", ReLU()),
                     ("fc1", Linear(config.fc_width, config.n_classes, rng, dtype, zero=zero_final))]
        self._check_shapes()

    def _check_shapes(self):
        freq_after = self.config.n_mels - self.config.convblock1d_kernels[0][1] + 1
        freq_after -= self.config.convblock1d_kernels[1][1] - 1
        if freq_after != 1:
            raise ValueError("ConvBlock1D kernels must collapse the mel axis to width 1")
        fc_in = self.head[1][1].params["W"].shape[0]
        assert fc_in == self.config.convblock1d_filters

    def named_layers(self):
        for branch in self.branches:
            yield from branch
        yield from self.trunk
        yield from self.head

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, l in self.named_layers() for k, v in l.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": l.grads[k] for n, l in self.named_layers() for k in l.params}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, l in self.named_layers() for k, v in l.buffers.items()}

    def set_buffer(self, name, value):
        lname, key = name.rsplit(".", 1)
        dict(self.named_layers())[lname].buffers[key] = value

    def zero_grad(self):
        for _, l in self.named_layers():
            l.zero_grad()

    # -- computation ---------------------------------------------------------

    def logits(self, inputs, training=False):
        """``inputs``: list (one per branch) of arrays shaped (batch, frames, n_mels)."""
        if len(inputs) != len(self.branches):
            raise ValueError(f"{self.config.variant} expects {len(self.branches)} inputs, got {len(inputs)}")
        outs = []
        for branch, x in zip(self.branches, inputs):
            x = np.asarray(x, dtype=self.dtype)
            if x.ndim != 3 or x.shape[1:] != (self.config.input_frames, self.config.n_mels):
                raise ValueError(f"input shape {x.shape} does not match "
                                 f"(batch, {self.config.input_frames}, {self.config.n_mels})")
            h = x[..., None]
            for _, layer in branch:
                h = layer.forward(h, training)
            outs.append(h)
        self._split = [o.shape[-1] for o in outs]
        h = np.concatenate(outs, axis=-1) if len(outs) > 1 else outs[0]
        for _, layer in self.trunk + self.head:
            h = layer.forward(h, training)
        if not np.all(np.isfinite(h)):
            raise FloatingPointError("non-finite activations in forward pass")
        return h

    def forward(self, inputs, training=False):
        return softmax(self.logits(inputs, training))

    def backward(self, dlogits):
        g = dlogits
        for _, layer in reversed(self.trunk + self.head):
            g = layer.backward(g)
        parts = np.split(g, np.cumsum(self._split)[:-1], axis=-1)
        for branch, gp in zip(self.branches, parts):
            for _, layer in reversed(branch):
                gp = layer.backward(gp)

    def loss_and_grad(self, inputs, targets, training=True):
        """Mean LSRO cross-entropy over the batch; accumulates parameter gradients."""
        targets = np.asarray(targets, dtype=self.dtype)
        probs = softmax(self.logits(inputs, training))
        loss = float(np.mean(lsro_loss(probs, targets)))
        self.backward((probs - targets) / len(targets))
        return loss, probs


def lsro_loss(probs, target):
    """Cross-entropy -sum_k target_k log(probs_k); the unlabeled target is (0.5, 0.5)."""
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if np.any(probs < 0) or np.any(target < 0):
        raise ValueError("distributions must be nonnegative")
    return -np.sum(target * np.log(np.maximum(probs, PROB_EPS)), axis=-1)


def target_for(label: str):
    return TARGETS[label]


# ---------------------------------------------------------------------------
# Input preparation

def crop_frames(values: np.ndarray, frames: int) -> np.ndarray:
    """Keep the first ``frames`` frames; pad short inputs with the silence level."""
    if values.shape[0] >= frames:
        return values[:frames]
    pad = np.full((frames - values.shape[0], values.shape[1]), LOG_FLOOR)
    return np.concatenate([values, pad], axis=0)


def standardize(values: np.ndarray) -> np.ndarray:
    std = values.std()
    centered = values - values.mean()
    return centered / std if std > 1e-8 else centered


def clip_features(clip: AudioClip, frames: int) -> np.ndarray:
    return crop_frames(mel_spectrogram(clip).values, frames)


def network_inputs(features, config: ModelConfig):
    """Standardize cropped mel features into per-branch batches.

    ``features`` has shape (batch, n_inputs, frames, n_mels).
    """
    f = np.asarray(features)[:, :, :config.input_frames]
    out = []
    for j in range(config.n_inputs):
        x = np.stack([standardize(f[b, j]) for b in range(f.shape[0])])
        out.append(x)
    return out


def mashability(net: MashNet, stems=None, mixture=None) -> float:
    """Posterior of the positive class for one candidate.

    PreMixNet consumes the three transformed stems; PostMixNet the mix
    (computed from ``stems`` when ``mixture`` is not given).
    """
    cfg = net.config
    if cfg.variant == "premix":
        clips = list(stems)
    else:
        clips = [mixture if mixture is not None else mix(stems)]
    feats = np.stack([clip_features(c, cfg.input_frames) for c in clips])[None]
    return float(net.forward(network_inputs(feats, cfg))[0, 0])


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(net: MashNet, path, optimizer: Adam | None = None, extra=None):
    """Header (config echo) followed by little-endian float32 blocks in declaration order."""
    blocks = list(net.parameters().items()) + list(net.buffers().items())
    if optimizer is not None:
        blocks += [(f"adam.m.{k}", v) for k, v in optimizer.m.items()]
        blocks += [(f"adam.v.{k}", v) for k, v in optimizer.v.items()]
    header = {
        "config": asdict(net.config),
        "blocks": [[name, list(arr.shape)] for name, arr in blocks],
        "adam": None if optimizer is None else {"t": optimizer.t, "lr": optimizer.lr,
                                                "beta1": optimizer.beta1, "beta2": optimizer.beta2,
                                                "eps": optimizer.eps},
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(raw)))
        fh.write(raw)
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, with_optimizer=False):
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a mashnet checkpoint")
        version, n = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(n).decode())
        data = {}
        for name, shape in header["blocks"]:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            data[name] = arr.astype(np.float32)
    cfg = header["config"]
    cfg["convblock1d_kernels"] = tuple(tuple(k) for k in cfg["convblock1d_kernels"])
    net = MashNet(ModelConfig(**cfg))
    params = net.parameters()
    for name in params:
        params[name][...] = data[name]
    for name in net.buffers():
        net.set_buffer(name, data[name].copy())
    if not with_optimizer:
        return net
    opt = None
    if header["adam"] is not None:
        a = header["adam"]
        opt = Adam(net.parameters(), a["lr"], a["beta1"], a["beta2"], a["eps"])
        opt.t = a["t"]
        for k in opt.m:
            opt.m[k][...] = data[f"adam.m.{k}"]
            opt.v[k][...] = data[f"adam.v.{k}"]
    return net, opt, header["extra"]


# ---------------------------------------------------------------------------
# Gradient verification

def grad_check(config: ModelConfig, seed: int = 0, batch: int = 3, per_group: int = 12,
               h: float = 1e-5) -> float:
    """Worst relative error between backprop and central differences.

    Runs in float64 in both batch-norm modes (batch statistics and running
    statistics); per parameter group the error is ||a - n|| / (||a|| + ||n||)
    over up to ``per_group`` sampled coordinates (skipping any whose
    perturbation flips a ReLU or max-over-time decision), with the denominator
    floored at 1e-4.
    """
    rng = np.random.default_rng(seed)
    net = MashNet(config, seed=seed, dtype=np.float64)
    inputs = [rng.standard_normal((batch, config.input_frames, config.n_mels)) for _ in range(config.n_inputs)]
    labels = ["positive", "negative", "unlabeled"]
    targets = np.array([TARGETS[labels[i % 3]] for i in range(batch)])
    # non-trivial running statistics for the inference-mode check
    for name, buf in net.buffers().items():
        if name.endswith("running_mean"):
            net.set_buffer(name, rng.normal(0.0, 0.1, buf.shape))
        else:
            net.set_buffer(name, rng.uniform(0.5, 1.5, buf.shape))

    worst = 0.0
    for training in (True, False):
        net.zero_grad()
        net.loss_and_grad(inputs, targets, training)
        analytic = {k: g.copy() for k, g in net.gradients().items()}
        saved = {k: v.copy() for k, v in net.buffers().items()}

        def loss_at():
            probs = net.forward(inputs, training)
            pattern = [l._mask.copy() if isinstance(l, ReLU) else l._argmax.copy()
                       for _, l in net.named_layers() if isinstance(l, (ReLU, TemporalSummary))]
            return float(np.mean(lsro_loss(probs, targets))), pattern

        for name, p in net.parameters().items():
            flat = p.reshape(-1)
            order = rng.permutation(flat.size)
            idx, num = [], []
            for i in order:
                if len(idx) == per_group:
                    break
                old = flat[i]
                flat[i] = old + h
                up, pat_up = loss_at()
                flat[i] = old - h
                down, pat_down = loss_at()
                flat[i] = old
                # central differences are meaningless across an activation kink
                if any(not np.array_equal(a, b) for a, b in zip(pat_up, pat_down)):
                    continue
                idx.append(i)
                num.append((up - down) / (2 * h))
            idx, num = np.array(idx, dtype=int), np.array(num)
            ana = analytic[name].reshape(-1)[idx]
            # the floor absorbs rounding noise on groups with vanishing gradient
            # (conv biases feeding batch statistics)
            denom = max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-4)
            worst = max(worst, float(np.linalg.norm(ana - num) / denom))
        for k, v in saved.items():
            net.set_buffer(k, v)
    return worst


def loss_grad_check(probs, target, h=1e-7) -> float:
    """Absolute gap between the closed-form d(loss)/d(logits) = p - t and finite differences."""
    probs = np.asarray(probs, dtype=np.float64)
    logits = np.log(probs)
    target = np.asarray(target, dtype=np.float64)
    analytic = softmax(logits) - target
    num = np.empty_like(logits)
    for k in range(len(logits)):
        d = np.zeros_like(logits)
        d[k] = h
        num[k] = (lsro_loss(softmax(logits + d), target) - lsro_loss(softmax(logits - d), target)) / (2 * h)
    return float(np.max(np.abs(analytic - num)))
