"""Net1D-lite regressor, Adam with cosine decay, and the training loop."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .labels import LabelDensity, expected_labels
from .loss import LossConfig, total_loss_terms


class NonFiniteActivation(FloatingPointError):
    pass


class DivergenceDetected(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite training loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Holds named parameters in a fixed order."""

    params: dict[str, ad.DiffArray]

    def parameters(self) -> list[ad.DiffArray]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"state mismatch on {sorted(missing)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.value = np.array(state[k], dtype=p.dtype, copy=True)

    def __call__(self, x) -> ad.DiffArray:
        return self.forward(x)

    def predict(self, signals, batch_size: int = 1024) -> np.ndarray:
        """Plain-array inference over (N, L) signals."""
        signals = np.asarray(signals)
        out = []
        for start in range(0, len(signals), batch_size):
            xb = signals[start:start + batch_size, None, :]
            out.append(self.forward(xb).value.astype(np.float64))
        return np.concatenate(out) if out else np.empty(0)


@dataclass(frozen=True)
class Net1DConfig:
    length: int = 100
    channels: int = 16
    blocks: int = 2
    kernel_size: int = 7
    pool: int = 4
    se_ratio: int = 4
    output_shift: float = 0.0
    output_scale: float = 1.0
    dtype: str = "float32"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class Net1DLite(Module):
    """Stem conv, average pool, residual conv blocks with SE gating, linear head.

    Input (batch, 1, length); output (batch,) equal to
    ``output_shift + output_scale * head(pooled features)``.
    """

    def __init__(self, cfg: Net1DConfig = Net1DConfig()):
        if cfg.length % cfg.pool:
            raise ValueError("length must be divisible by pool")
        self.cfg = cfg
        dt = np.dtype(cfg.dtype)
        rng = np.random.default_rng([cfg.seed, 4])
        C, K = cfg.channels, cfg.kernel_size
        hidden = max(1, C // cfg.se_ratio)
        p = {}
        p["stem_w"] = _uniform(rng, (K, 1, C), K, dt)
        p["stem_b"] = np.zeros(C, dt)
        for b in range(cfg.blocks):
            p[f"block{b}.conv1_w"] = _uniform(rng, (K, C, C), K * C, dt)
            p[f"block{b}.conv1_b"] = np.zeros(C, dt)
            p[f"block{b}.conv2_w"] = _uniform(rng, (K, C, C), K * C, dt)
            p[f"block{b}.conv2_b"] = np.zeros(C, dt)
            p[f"block{b}.se1_w"] = _uniform(rng, (C, hidden), C, dt)
            p[f"block{b}.se1_b"] = np.zeros(hidden, dt)
            p[f"block{b}.se2_w"] = _uniform(rng, (hidden, C), hidden, dt)
            p[f"block{b}.se2_b"] = np.zeros(C, dt)
        p["head_w"] = _uniform(rng, (C, 1), C, dt)
        p["head_b"] = np.zeros(1, dt)
        self.params = {k: ad.parameter(v, name=k) for k, v in p.items()}

    def se_gate(self, h: ad.DiffArray, b: int) -> ad.DiffArray:
        P = self.params
        squeezed = ad.mean(h, axis=1)
        z = ad.relu(ad.dense(squeezed, P[f"block{b}.se1_w"], P[f"block{b}.se1_b"]))
        return ad.sigmoid(ad.dense(z, P[f"block{b}.se2_w"], P[f"block{b}.se2_b"]))

    def block(self, x: ad.DiffArray, b: int) -> ad.DiffArray:
        P = self.params
        h = ad.relu(ad.conv1d(x, P[f"block{b}.conv1_w"], P[f"block{b}.conv1_b"]))
        h = ad.conv1d(h, P[f"block{b}.conv2_w"], P[f"block{b}.conv2_b"])
        gate = self.se_gate(h, b)
        B, _, C = h.shape
        return ad.add(x, ad.mul(h, ad.reshape(gate, (B, 1, C))))

    def forward(self, x) -> ad.DiffArray:
        cfg, P = self.cfg, self.params
        x = x if isinstance(x, ad.DiffArray) else ad.DiffArray(np.asarray(x, dtype=cfg.dtype))
        if x.value.ndim != 3 or x.shape[1] != 1 or x.shape[2] != cfg.length:
            raise ad.ShapeMismatch(f"expected input (batch, 1, {cfg.length}), got {x.shape}")
        B = x.shape[0]
        h = ad.transpose(x, (0, 2, 1))
        h = ad.relu(ad.conv1d(h, P["stem_w"], P["stem_b"]))
        h = ad.avg_pool1d(h, cfg.pool)
        for b in range(cfg.blocks):
            h = self.block(h, b)
        feats = ad.mean(h, axis=1)
        out = ad.reshape(ad.dense(feats, P["head_w"], P["head_b"]), (B,))
        if cfg.output_scale != 1.0 or cfg.output_shift != 0.0:
            out = ad.add(ad.mul(out, cfg.output_scale), cfg.output_shift)
        if not np.all(np.isfinite(out.value)):
            raise NonFiniteActivation("model produced non-finite predictions")
        return out


@dataclass(frozen=True)
class DenseConfig:
    in_features: int = 1
    dtype: str = "float64"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class DenseRegressor(Module):
    """Single linear layer on (batch, 1, in_features) inputs."""

    def __init__(self, cfg: DenseConfig = DenseConfig()):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 4])
        dt = np.dtype(cfg.dtype)
        self.params = {
            "head_w": ad.parameter(_uniform(rng, (cfg.in_features, 1), cfg.in_features, dt), "head_w"),
            "head_b": ad.parameter(np.zeros(1, dt), "head_b"),
        }

    def forward(self, x) -> ad.DiffArray:
        x = x if isinstance(x, ad.DiffArray) else ad.DiffArray(np.asarray(x, dtype=self.cfg.dtype))
        B = x.shape[0]
        flat = ad.reshape(x, (B, self.cfg.in_features))
        return ad.reshape(ad.dense(flat, self.params["head_w"], self.params["head_b"]), (B,))


def is_decayed(name: str) -> bool:
    return name.endswith("_w")


class Adam:
    """Adam with decoupled weight decay on non-bias parameters."""

    def __init__(self, params: dict[str, ad.DiffArray], lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.value)
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay and is_decayed(k):
                p.value -= (self.lr * self.weight_decay) * p.value
            p.value -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params.values())


def cosine_lr(base_lr: float, epoch: int, epochs: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    epochs: int = 50
    lr: float = 3e-3
    weight_decay: float = 1e-4
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    plain: float
    dist: float


@dataclass
class TrainResult:
    model: Module
    log: list[EpochLog]


def train(model: Module, signals, labels, cfg: TrainConfig, density: LabelDensity,
          progress=None) -> TrainResult:
    """Mini-batch training on (N, L) signals against (N,) labels.

    Shuffling is driven by ``cfg.seed`` only, so two calls with equal inputs
    produce identical parameters.
    """
    signals = np.asarray(signals)
    labels = np.asarray(labels, dtype=np.float64)
    n = len(labels)
    if n == 0:
        raise ValueError("empty training set")
    dtype = next(iter(model.params.values())).dtype
    opt = Adam(model.params, cfg.lr, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 3])
    expected_cache: dict[int, np.ndarray] = {}
    log: list[EpochLog] = []
    for epoch in range(cfg.epochs):
        opt.lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        order = rng.permutation(n)
        tot = plain = dist = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            m = len(idx)
            if m not in expected_cache:
                expected_cache[m] = expected_labels(density, m)
            xb = ad.DiffArray(signals[idx, None, :].astype(dtype))
            try:
                preds = model(xb)
            except NonFiniteActivation:
                raise DivergenceDetected(epoch, b, math.nan) from None
            terms = total_loss_terms(preds, labels[idx].astype(dtype), expected_cache[m].astype(dtype), cfg.loss)
            value = float(terms.total.value)
            if not math.isfinite(value):
                raise DivergenceDetected(epoch, b, value)
            opt.zero_grad()
            ad.backward(terms.total)
            opt.step()
            tot += value * m
            plain += terms.plain * m
            dist += terms.dist * m
        entry = EpochLog(epoch, opt.lr, tot / n, plain / n, dist / n)
        log.append(entry)
        if progress is not None:
            progress(entry)
    return TrainResult(model, log)


# checkpoint: .npz holding every parameter under its name plus a JSON
# "__meta__" entry with the model class, model config, train config and seed

def save_checkpoint(path, model: Module, train_cfg: TrainConfig | None = None, extra: dict | None = None) -> None:
    meta = {
        "model": type(model).__name__,
        "model_config": model.cfg.to_dict(),
        "train_config": None if train_cfg is None else train_cfg.to_dict(),
        "seed": None if train_cfg is None else train_cfg.seed,
        "shapes": {k: list(p.shape) for k, p in model.params.items()},
        **(extra or {}),
    }
    arrays = {k: p.value for k, p in model.params.items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[Module, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        state = {k: data[k] for k in data.files if k != "__meta__"}
    if meta["model"] == "Net1DLite":
        model: Module = Net1DLite(Net1DConfig(**meta["model_config"]))
    elif meta["model"] == "DenseRegressor":
        model = DenseRegressor(DenseConfig(**meta["model_config"]))
    else:
        raise ValueError(f"unknown model type {meta['model']!r}")
    model.load_state_dict(state)
    return model, meta
