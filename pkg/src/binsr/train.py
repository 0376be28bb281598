"""Training loop for networks with binarized residual blocks.

Each step: sync binary layers (signs, and alpha in deterministic mode) ->
forward -> loss -> backward (straight-through, clipped shadow gradients) ->
optimizer update of shadow weights and real parameters.  Signs are only
refreshed at the next sync, never inside the update.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import BinaryConv2d
from .models import SrModel, forward_sr

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, step, value):
        super().__init__(f"loss became {value} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    initial_lr: float = 1e-4
    decay_factor: float = 0.9
    decay_interval_epochs: int = 20
    batch_size: int = 16
    epochs: int = 1
    iterations_per_epoch: int = 50
    clip_lo: float = -5.0
    clip_hi: float = 5.0
    loss: str = "mse"
    charbonnier_eps: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clamp_shadow: bool = False
    patch_size: int = 32
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.clip_lo < self.clip_hi:
            raise ValueError("clip_lo must be < clip_hi")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.batch_size < 1 or self.decay_interval_epochs < 1:
            raise ValueError("batch_size and decay_interval_epochs must be >= 1")
        if self.loss not in ("mse", "charbonnier"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def lr_multiplier(epoch: int, cfg: TrainConfig) -> float:
    """Step decay factor applied to the initial learning rate at ``epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.decay_factor ** (epoch // cfg.decay_interval_epochs)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    return cfg.initial_lr * lr_multiplier(epoch, cfg)


def loss(pred, target, kind="mse", eps=1e-3):
    """Return ``(value, d value / d pred)``."""
    if pred.shape != target.shape:
        raise ValueError(f"loss shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target
    n = diff.size
    if kind == "mse":
        value = float(np.mean(diff ** 2))
        grad = 2 * diff / n
    elif kind == "charbonnier":
        root = np.sqrt(diff ** 2 + eps ** 2)
        value = float(np.mean(root))
        grad = diff / root / n
    else:
        raise ValueError(f"unknown loss {kind!r}")
    return value, grad.astype(pred.dtype)


class SGD:
    def __init__(self, momentum=0.0):
        self.momentum = momentum
        self.velocity = {}

    def step(self, name, param, grad, lr):
        if self.momentum:
            v = self.velocity.get(name)
            v = grad if v is None else self.momentum * v + grad
            self.velocity[name] = v
            grad = v
        param.data = (param.data - lr * grad).astype(param.data.dtype)


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, {}

    def step(self, name, param, grad, lr):
        t = self.t.get(name, 0) + 1
        self.t[name] = t
        m = self.beta1 * self.m.get(name, 0) + (1 - self.beta1) * grad
        v = self.beta2 * self.v.get(name, 0) + (1 - self.beta2) * grad * grad
        self.m[name], self.v[name] = m, v
        mhat = m / (1 - self.beta1 ** t)
        vhat = v / (1 - self.beta2 ** t)
        param.data = (param.data - lr * mhat / (np.sqrt(vhat) + self.eps)).astype(param.data.dtype)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(cfg.momentum)
    return Adam(cfg.beta1, cfg.beta2, cfg.adam_eps)


def forward_sync(target):
    """Refresh signs (and deterministic alphas) of a layer or a whole model."""
    layers = [target] if isinstance(target, BinaryConv2d) else target.binary_layers()
    for layer in layers:
        layer.sync()


def backward_binary_conv(layer: BinaryConv2d, x, upstream_grad):
    """Run one binary layer's backward pass for input ``x``.

    Returns ``(g_W, g_alpha, input_grad)``; ``g_alpha`` is ``None`` in
    deterministic mode.  The layer's parameter gradients are also set.
    """
    layer.shadow.zero_grad()
    layer.alpha.zero_grad()
    layer._cache.append(x)
    gx = layer.backward(upstream_grad)
    layer.finalize_grad()
    return layer.shadow.grad, layer.alpha.grad, gx


def update_step(params: dict, grads: dict, lr: float, optimizer, clamp_shadow=False):
    """Apply one optimizer step to every trainable parameter.

    ``params`` and ``grads`` are keyed by parameter name.
    """
    missing = [k for k, p in params.items() if p.trainable and k not in grads]
    if missing:
        raise KeyError(f"missing gradients for {missing[:5]}")
    for name, p in params.items():
        if not p.trainable:
            continue
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != {p.data.shape} for {name}")
        optimizer.step(name, p, g, lr)
        if clamp_shadow and p.kind == "binary":
            np.clip(p.data, -1, 1, out=p.data)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_psnr: float
    bit_flip_fraction: float


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    def to_lines(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    @classmethod
    def from_lines(cls, text: str) -> "TrainingLog":
        return cls([EpochRecord(**json.loads(l)) for l in text.splitlines() if l.strip()])

    def __len__(self):
        return len(self.records)


def _signs(model):
    return [l.signs.copy() for l in model.binary_layers()]


def train_step(model: SrModel, lr_batch, hr_batch, cfg: TrainConfig, optimizer, lr: float):
    forward_sync(model)
    model.zero_grad()
    pred = model.forward(lr_batch, train=True)
    value, grad = loss(pred, hr_batch, cfg.loss, cfg.charbonnier_eps)
    if not math.isfinite(value):
        return value
    model.backward(grad)
    params = model.trainable()
    grads = {k: p.grad for k, p in params.items()}
    update_step(params, grads, lr, optimizer, cfg.clamp_shadow)
    return value


def evaluate_psnr(model: SrModel, pairs) -> float:
    from .data import psnr_y
    if not pairs:
        return float("nan")
    vals = []
    for lr_img, hr_img in pairs:
        sr = np.clip(forward_sr(model, lr_img), 0, 1)
        vals.append(psnr_y(sr, hr_img))
    return float(np.mean(vals))


def train(model: SrModel, dataset, cfg: TrainConfig, val_pairs=(), sampler=None) -> TrainingLog:
    """Train ``model`` in place on HR images from ``dataset``.

    ``dataset`` is a sequence of (H, W, 3) arrays in [0, 1].  ``sampler`` may
    replace the default ``(images, rng) -> (lr_batch, hr_batch)`` patch sampler.
    """
    from .data import sample_batch
    if cfg.epochs and not len(dataset):
        raise ValueError("empty training dataset")
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(cfg)
    model.set_clip(cfg.clip_lo, cfg.clip_hi)
    scale = model.cfg.scale
    if sampler is None:
        def sampler(images, r):
            return sample_batch(images, cfg.batch_size, cfg.patch_size, scale, r, cfg.noise_sigma)
    history = TrainingLog()
    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        forward_sync(model)
        before = _signs(model)
        losses = []
        for _ in range(cfg.iterations_per_epoch):
            lr_batch, hr_batch = sampler(dataset, rng)
            value = train_step(model, lr_batch, hr_batch, cfg, optimizer, lr)
            if not math.isfinite(value):
                raise TrainingDivergedError(step, value)
            losses.append(value)
            step += 1
        forward_sync(model)
        after = _signs(model)
        total = sum(b.size for b in before)
        flipped = sum(int((b != a).sum()) for b, a in zip(before, after))
        rec = EpochRecord(epoch, lr, float(np.mean(losses)) if losses else float("nan"),
                          evaluate_psnr(model, list(val_pairs)),
                          flipped / total if total else 0.0)
        history.records.append(rec)
        log.info("epoch %d lr %.3g loss %.5f val %.2f dB flips %.4f", rec.epoch, rec.lr,
                 rec.train_loss, rec.val_psnr, rec.bit_flip_fraction)
    model.root.clear_cache()
    return history
