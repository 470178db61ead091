"""Tabular diffusion model: training, fine-tuning, sampling and checkpoints.

Continuous columns are z-scored and diffused with Gaussian noise; categorical
columns use multinomial diffusion (or, in the ``gaussian-onehot`` ablation,
Gaussian noise on their one-hot encodings). The response is an ordinary
column, so every sample carries a joint ``(X, y)`` row.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..data import (Dataset, Schema, StandardizationStats, destandardize, standardize)
from ..numerics import RngStream
from .mlp import Adam, DenoiserMlp, timestep_embedding
from .schedule import (NoiseSchedule, ScheduleKind, categorical_posterior, make_schedule,
                       mix_uniform)

log = logging.getLogger(__name__)


class CategoricalMode(str, enum.Enum):
    MULTINOMIAL = "multinomial"
    GAUSSIAN_ONEHOT = "gaussian-onehot"


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    T: int = 100
    epochs: int = 500
    batch_size: int = 128
    learning_rate: float = 1e-3
    hidden_dims: tuple[int, ...] = (128, 128)
    seed: int = 0
    schedule_kind: ScheduleKind = ScheduleKind.LINEAR
    beta_start: float = 1e-4
    beta_end: float = 0.2
    embed_dim: int = 32
    categorical_mode: CategoricalMode = CategoricalMode.MULTINOMIAL

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "schedule_kind", ScheduleKind(self.schedule_kind))
        object.__setattr__(self, "categorical_mode", CategoricalMode(self.categorical_mode))
        for name in ("T", "batch_size", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0 < self.learning_rate < 1:
            raise ValueError("learning_rate must lie in (0, 1)")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        d["schedule_kind"] = self.schedule_kind.value
        d["categorical_mode"] = self.categorical_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class _Layout:
    """Column bookkeeping between a Dataset and the network's vector space."""

    cont: tuple[int, ...]
    cat: tuple[int, ...]
    cards: tuple[int, ...]
    mode: CategoricalMode

    @classmethod
    def of(cls, schema: Schema, mode: CategoricalMode) -> "_Layout":
        cat = tuple(schema.categorical_indices)
        return cls(tuple(schema.continuous_indices), cat,
                   tuple(schema.kinds[j].cardinality for j in cat), mode)

    @property
    def width(self) -> int:
        return len(self.cont) + sum(self.cards)

    @property
    def gaussian_width(self) -> int:
        """Dimensions handled by Gaussian diffusion."""
        return self.width if self.mode is CategoricalMode.GAUSSIAN_ONEHOT else len(self.cont)

    def offsets(self):
        off = len(self.cont)
        for k in self.cards:
            yield off, off + k
            off += k

    def encode(self, values: np.ndarray) -> np.ndarray:
        """Standardized values -> [continuous | one-hot blocks]."""
        n = values.shape[0]
        out = np.zeros((n, self.width))
        out[:, :len(self.cont)] = values[:, list(self.cont)]
        for (a, b), j in zip(self.offsets(), self.cat):
            out[np.arange(n), a + values[:, j].astype(np.int64)] = 1.0
        return out


@dataclass(eq=False)
class DiffusionModel:
    schedule: NoiseSchedule
    net: DenoiserMlp
    stats: StandardizationStats
    schema: Schema
    config: TrainConfig
    train_log: list[float] = field(default_factory=list)

    @property
    def layout(self) -> _Layout:
        return _Layout.of(self.schema, self.config.categorical_mode)

    def equals(self, other: "DiffusionModel") -> bool:
        return (
            self.schedule.equals(other.schedule)
            and self.schema == other.schema
            and self.stats == other.stats
            and self.config == other.config
            and self.net.dims == other.net.dims
            and all(np.array_equal(a, b) for a, b in zip(self.net.params, other.net.params))
            and np.array_equal(np.asarray(self.train_log), np.asarray(other.train_log))
        )


def _net_input(x_enc: np.ndarray, t: np.ndarray, embed_dim: int) -> np.ndarray:
    return np.hstack([x_enc, timestep_embedding(t, embed_dim)])


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sample_categories(probs: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """One draw per row by inverse CDF."""
    cdf = np.cumsum(probs, axis=1)
    u = gen.random(probs.shape[0]) * cdf[:, -1]
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def corrupt(x_enc, t, layout: _Layout, sched: NoiseSchedule, gen: np.random.Generator):
    """Draw x_t for a batch; returns (x_t encoded, gaussian noise)."""
    g = layout.gaussian_width
    eps = gen.standard_normal((x_enc.shape[0], g))
    ab = sched.abar(t)[:, None]
    xt = x_enc.copy()
    xt[:, :g] = np.sqrt(ab) * x_enc[:, :g] + np.sqrt(1.0 - ab) * eps
    if layout.mode is CategoricalMode.MULTINOMIAL:
        n = x_enc.shape[0]
        for a, b in layout.offsets():
            probs = mix_uniform(x_enc[:, a:b], sched.abar(t))
            k = _sample_categories(probs, gen)
            xt[:, a:b] = 0.0
            xt[np.arange(n), a + k] = 1.0
    return xt, eps


def loss_and_grad(net: DenoiserMlp, x_in, eps, x0_enc, layout: _Layout):
    """Loss (mean squared noise error + mean categorical cross-entropy) and dLoss/dParams.

    Gaussian term averages over rows and Gaussian dimensions; the categorical
    term averages cross-entropy over rows and categorical columns.
    """
    out, cache = net.forward(x_in, keep=True)
    nb = x_in.shape[0]
    g = layout.gaussian_width
    grad = np.zeros_like(out)
    loss = 0.0
    if g:
        diff = out[:, :g] - eps
        loss += float(np.mean(diff**2))
        grad[:, :g] = 2.0 * diff / (nb * g)
    if layout.mode is CategoricalMode.MULTINOMIAL and layout.cards:
        ncat = len(layout.cards)
        for a, b in layout.offsets():
            logits = out[:, a:b]
            z = logits - logits.max(axis=1, keepdims=True)
            logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
            logp = z - logsum
            target = x0_enc[:, a:b]
            loss += float(-(target * logp).sum() / (nb * ncat))
            grad[:, a:b] = (np.exp(logp) - target) / (nb * ncat)
    return loss, net.backward(cache, grad)


def _fit(net: DenoiserMlp, data_std: Dataset, cfg: TrainConfig, sched: NoiseSchedule,
         gen: np.random.Generator) -> list[float]:
    layout = _Layout.of(data_std.schema, cfg.categorical_mode)
    x_all = layout.encode(data_std.values)
    n = x_all.shape[0]
    opt = Adam(net.params, lr=cfg.learning_rate)
    params = net.params
    history: list[float] = []
    above = 0
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    for epoch in range(cfg.epochs):
        order = gen.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x0 = x_all[idx]
            t = gen.integers(1, sched.T + 1, size=idx.size)
            xt, eps = corrupt(x0, t, layout, sched, gen)
            loss, grads = loss_and_grad(net, _net_input(xt, t, cfg.embed_dim), eps, x0, layout)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, loss)
            # linear learning-rate annealing to zero
            opt.step(params, grads, lr=cfg.learning_rate * (1.0 - step / total_steps))
            step += 1
            total += loss * idx.size
            count += idx.size
        epoch_loss = total / count
        history.append(epoch_loss)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise DivergenceError(epoch, epoch_loss)
        above = above + 1 if epoch_loss > 10.0 * history[0] else 0
        if above >= 20:
            raise DivergenceError(epoch, epoch_loss)
    return history


def train(d: Dataset, cfg: TrainConfig, rng: RngStream | None = None) -> DiffusionModel:
    """Fit a denoiser on ``d`` (features and response jointly).

    The random stream defaults to ``RngStream(cfg.seed)``.
    """
    if cfg.epochs < 1:
        raise TrainingError("no training performed: epochs must be >= 1")
    if d.n < 2:
        raise TrainingError("training needs at least 2 rows")
    rng = RngStream(cfg.seed) if rng is None else rng
    gen = rng.generator()
    data_std, stats = standardize(d)
    sched = make_schedule(cfg.schedule_kind, cfg.T, cfg.beta_start, cfg.beta_end)
    layout = _Layout.of(d.schema, cfg.categorical_mode)
    dims = (layout.width + cfg.embed_dim, *cfg.hidden_dims, layout.width)
    net = DenoiserMlp.init(dims, gen)
    history = _fit(net, data_std, cfg, sched, gen)
    log.info("trained diffusion model: first loss %.4f, last loss %.4f", history[0], history[-1])
    return DiffusionModel(sched, net, stats, d.schema, cfg, history)


def fine_tune(m: DiffusionModel, d: Dataset, cfg: TrainConfig | None = None,
              rng: RngStream | None = None) -> DiffusionModel:
    """Continue training ``m`` on ``d``; architecture and schedule come from ``m``.

    Standardization statistics are recomputed from ``d``. From ``cfg`` only the
    optimization settings (epochs, batch size, learning rate, seed) are used.
    """
    if d.schema != m.schema:
        raise TrainingError("schema of fine-tuning data does not match the pre-trained model")
    cfg = m.config if cfg is None else cfg
    if cfg.epochs < 1:
        raise TrainingError("no training performed: epochs must be >= 1")
    run_cfg = replace(m.config, epochs=cfg.epochs, batch_size=cfg.batch_size,
                      learning_rate=cfg.learning_rate, seed=cfg.seed)
    rng = RngStream(run_cfg.seed) if rng is None else rng
    gen = rng.generator()
    data_std, stats = standardize(d)
    net = m.net.copy()
    history = _fit(net, data_std, run_cfg, m.schedule, gen)
    return DiffusionModel(m.schedule, net, stats, m.schema, run_cfg, history)


def generate(m: DiffusionModel, n_syn: int, rng: RngStream) -> Dataset:
    """Ancestral sampling from ``t = T`` down to 1, returned on the original scale."""
    if n_syn < 1:
        raise ValueError("n_syn must be >= 1")
    gen = rng.generator()
    layout = m.layout
    sched = m.schedule
    g = layout.gaussian_width
    x = np.zeros((n_syn, layout.width))
    x[:, :g] = gen.standard_normal((n_syn, g))
    multinomial = layout.mode is CategoricalMode.MULTINOMIAL
    if multinomial:
        for a, b in layout.offsets():
            k = gen.integers(0, b - a, size=n_syn)
            x[np.arange(n_syn), a + k] = 1.0
    rows = np.arange(n_syn)
    for t in range(sched.T, 0, -1):
        tt = np.full(n_syn, t)
        out = m.net.forward(_net_input(x, tt, m.config.embed_dim))
        new = np.zeros_like(x)
        if g:
            beta, alpha, ab = sched.betas[t - 1], sched.alphas[t - 1], sched.abar(t)
            mean = (x[:, :g] - beta / math.sqrt(1.0 - ab) * out[:, :g]) / math.sqrt(alpha)
            if t > 1:
                mean = mean + math.sqrt(beta) * gen.standard_normal(mean.shape)
            new[:, :g] = mean
        if multinomial:
            for a, b in layout.offsets():
                probs0 = _softmax(out[:, a:b])
                probs = categorical_posterior(x[:, a:b], probs0, t, sched) if t > 1 else probs0
                new[rows, a + _sample_categories(probs, gen)] = 1.0
        x = new
    values = np.zeros((n_syn, m.schema.n_columns))
    values[:, list(layout.cont)] = x[:, :len(layout.cont)]
    for (a, b), j in zip(layout.offsets(), layout.cat):
        values[:, j] = np.argmax(x[:, a:b], axis=1)
    return destandardize(Dataset(m.schema, values), m.stats)


# -- checkpoints ------------------------------------------------------------

MAGIC = b"SYNTHSEL-CKPT\n"
FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


def _arrays_of(m: DiffusionModel) -> list[tuple[str, np.ndarray]]:
    arrays = [
        ("betas", m.schedule.betas),
        ("stats_mean", np.asarray(m.stats.mean, dtype=np.float64)),
        ("stats_sd", np.asarray(m.stats.sd, dtype=np.float64)),
        ("train_log", np.asarray(m.train_log, dtype=np.float64)),
    ]
    for i, (W, b) in enumerate(zip(m.net.weights, m.net.biases)):
        arrays += [(f"W{i}", W), (f"b{i}", b)]
    return arrays


def save_checkpoint(m: DiffusionModel, path: str | Path) -> None:
    """Versioned file: magic, little-endian u32 version and u64 header length,
    a JSON header, then float64 little-endian arrays in row-major order."""
    payload = bytearray()
    entries = []
    for name, arr in _arrays_of(m):
        arr = np.ascontiguousarray(arr, dtype=_LE_F64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload += arr.tobytes(order="C")
    header = {
        "format": "synthsel-diffusion",
        "schema": m.schema.to_dict(),
        "stats_columns": list(m.stats.columns),
        "stats_n_columns": m.stats.n_columns,
        "schedule_kind": m.schedule.kind.value,
        "config": m.config.to_dict(),
        "dims": list(m.net.dims),
        "arrays": entries,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
        fh.write(head)
        fh.write(payload)


def load_checkpoint(path: str | Path) -> DiffusionModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError("not a synthsel checkpoint (bad magic)")
    pos = len(MAGIC)
    if len(raw) < pos + 12:
        raise CheckpointError("corrupt checkpoint: truncated preamble")
    version, head_len = struct.unpack_from("<IQ", raw, pos)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} is not supported (expected {FORMAT_VERSION})"
        )
    pos += 12
    if len(raw) < pos + head_len:
        raise CheckpointError("corrupt checkpoint: truncated header")
    try:
        header = json.loads(raw[pos:pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    payload = raw[pos + head_len:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(
            f"corrupt checkpoint: payload has {len(payload)} bytes, expected {header['payload_bytes']}"
        )
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError("corrupt checkpoint: checksum mismatch")
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype=_LE_F64, count=count, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    n_layers = len(header["dims"]) - 1
    net = DenoiserMlp(tuple(header["dims"]),
                      [arrays[f"W{i}"] for i in range(n_layers)],
                      [arrays[f"b{i}"] for i in range(n_layers)])
    schema = Schema.from_dict(header["schema"])
    stats = StandardizationStats(tuple(header["stats_columns"]),
                                 tuple(float(v) for v in arrays["stats_mean"]),
                                 tuple(float(v) for v in arrays["stats_sd"]),
                                 header["stats_n_columns"])
    sched = NoiseSchedule(arrays["betas"], ScheduleKind(header["schedule_kind"]))
    cfg = TrainConfig.from_dict(header["config"])
    return DiffusionModel(sched, net, stats, schema, cfg, [float(v) for v in arrays["train_log"]])
