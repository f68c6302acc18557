"""Multiple-timescales recurrent network.

Three node groups integrate inputs at different rates: input/output (io),
fast context, and slow context. Each neuron follows

    u[i](t) = (1 - 1/tau[i]) * u[i](t-1) + (1/tau[i]) * sum_j w[i,j] * x[j](t)
    y[i](t) = tanh(u[i](t))

The io slots of the next input mix the previous prediction with the recorded
target via a feedback rate ``alpha``; context slots always feed back their
own outputs. Training runs exact backpropagation through time on the summed
one-step prediction error, updating both the weights and each sequence's
initial slow-context state, which serves as the latent code of the trial.

State vector order is ``[io | fast | slow]``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import ChannelLayout, Sequence
from .numerics.seeding import spawn_rng
from .numerics.tensor import NumericsError, ensure_finite
from .serialize import read_container, write_container

MAGIC = b"MTR1"


class MtrnnError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class NodeGroups:
    """Counts and time constants of the three node groups.

    The io count equals the width of ``layout``; all time constants must be
    at least 1 so the leak coefficient (1 - 1/tau) stays in [0, 1).
    """

    layout: ChannelLayout = field(default_factory=ChannelLayout)
    fast_count: int = 100
    slow_count: int = 10
    io_tau: float = 2.0
    fast_tau: float = 5.0
    slow_tau: float = 70.0

    def __post_init__(self):
        for name, tau in (("io", self.io_tau), ("fast", self.fast_tau), ("slow", self.slow_tau)):
            if tau < 1.0:
                raise MtrnnError(f"{name} time constant must be >= 1, got {tau}")
        if self.fast_count <= 0 or self.slow_count <= 0:
            raise MtrnnError("fast and slow node counts must be positive")

    @property
    def io_count(self) -> int:
        return self.layout.width

    @property
    def total(self) -> int:
        return self.io_count + self.fast_count + self.slow_count

    @property
    def io_slice(self) -> slice:
        return slice(0, self.io_count)

    @property
    def fast_slice(self) -> slice:
        return slice(self.io_count, self.io_count + self.fast_count)

    @property
    def slow_slice(self) -> slice:
        return slice(self.io_count + self.fast_count, self.total)

    def tau_vector(self) -> np.ndarray:
        tau = np.empty(self.total)
        tau[self.io_slice] = self.io_tau
        tau[self.fast_slice] = self.fast_tau
        tau[self.slow_slice] = self.slow_tau
        return tau

    def to_json(self) -> dict:
        return {
            "layout": self.layout.to_json(),
            "fast_count": self.fast_count,
            "slow_count": self.slow_count,
            "io_tau": self.io_tau,
            "fast_tau": self.fast_tau,
            "slow_tau": self.slow_tau,
        }

    @classmethod
    def from_json(cls, data) -> "NodeGroups":
        return cls(layout=ChannelLayout.from_json(data["layout"]),
                   fast_count=int(data["fast_count"]), slow_count=int(data["slow_count"]),
                   io_tau=float(data["io_tau"]), fast_tau=float(data["fast_tau"]),
                   slow_tau=float(data["slow_tau"]))


def default_mask(groups: NodeGroups) -> np.ndarray:
    """Canonical topology: io <-> fast, fast <-> slow, fast and slow recurrent.

    io-io, io-slow, and slow-io connections are absent.
    """
    n = groups.total
    mask = np.zeros((n, n), dtype=bool)
    io, fast, slow = groups.io_slice, groups.fast_slice, groups.slow_slice
    mask[io, fast] = True
    mask[fast, io] = True
    mask[fast, fast] = True
    mask[fast, slow] = True
    mask[slow, fast] = True
    mask[slow, slow] = True
    return mask


@dataclass
class MtrnnModel:
    """Node groups, connectivity mask, and the weight matrix w[i, j] (j -> i)."""

    groups: NodeGroups
    mask: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        n = self.groups.total
        self.mask = np.asarray(self.mask, dtype=bool)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.mask.shape != (n, n) or self.weights.shape != (n, n):
            raise MtrnnError(f"mask/weights must be [{n}, {n}]")
        if np.any(self.weights[~self.mask] != 0.0):
            raise MtrnnError("weights outside the connectivity mask must be exactly zero")

    def copy(self) -> "MtrnnModel":
        return MtrnnModel(self.groups, self.mask.copy(), self.weights.copy())

    def checksum(self) -> str:
        return hashlib.sha256(
            np.ascontiguousarray(self.weights).tobytes()
        ).hexdigest()


def build_model(groups: NodeGroups, seed: int, mask: np.ndarray | None = None) -> MtrnnModel:
    """Seeded uniform init in +-1/sqrt(fan_in), fan_in counted per masked row."""
    if mask is None:
        mask = default_mask(groups)
    mask = np.asarray(mask, dtype=bool)
    rng = spawn_rng(seed, "mtrnn-init")
    n = groups.total
    w = rng.uniform(-1.0, 1.0, size=(n, n))
    fan_in = np.maximum(mask.sum(axis=1), 1)
    w *= (1.0 / np.sqrt(fan_in))[:, None]
    w[~mask] = 0.0
    return MtrnnModel(groups=groups, mask=mask, weights=w)


@dataclass
class MtrnnState:
    """Internal values, outputs, step index, and the staged first input frame."""

    u: np.ndarray
    y: np.ndarray
    t: int
    staged_x0: np.ndarray | None = None


def init_state(model: MtrnnModel, cs0: np.ndarray, x0: np.ndarray) -> MtrnnState:
    """Fresh state: slow internals set to ``cs0``, everything else zero.

    ``x0`` is the first recorded io frame; the first step consumes it
    unmixed.
    """
    g = model.groups
    cs0 = np.asarray(cs0, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if cs0.shape != (g.slow_count,):
        raise MtrnnError(f"cs0 must have shape ({g.slow_count},), got {cs0.shape}")
    if x0.shape != (g.io_count,):
        raise MtrnnError(f"x0 must have shape ({g.io_count},), got {x0.shape}")
    u = np.zeros(g.total)
    u[g.slow_slice] = cs0
    return MtrnnState(u=u, y=np.tanh(u), t=0, staged_x0=x0.copy())


def step(model: MtrnnModel, state: MtrnnState, x_t: np.ndarray) -> MtrnnState:
    """One dynamics update given a fully assembled input vector of size N."""
    g = model.groups
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (g.total,):
        raise MtrnnError(f"step input must have shape ({g.total},), got {x_t.shape}")
    tau = g.tau_vector()
    u = (1.0 - 1.0 / tau) * state.u + (1.0 / tau) * (model.weights @ x_t)
    ensure_finite("mtrnn step", u)
    return MtrnnState(u=u, y=np.tanh(u), t=state.t + 1, staged_x0=None)


def mix_input(prev_y: np.ndarray, target: np.ndarray, alpha: float,
              mask: np.ndarray | None = None) -> np.ndarray:
    """Per-channel convex mix alpha*prev_y + (1-alpha)*target.

    Channels where ``mask`` is False bypass mixing and take the target
    directly.
    """
    if not 0.0 <= alpha <= 1.0:
        raise MtrnnError(f"feedback rate must be in [0, 1], got {alpha}")
    prev_y = np.asarray(prev_y, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prev_y.shape != target.shape:
        raise MtrnnError(f"mix_input shapes differ: {prev_y.shape} vs {target.shape}")
    mixed = alpha * prev_y + (1.0 - alpha) * target
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        mixed = np.where(mask, mixed, target)
    return mixed


@dataclass(frozen=True)
class FeedbackPolicy:
    """Feedback rate and where targets come from (recorded data or live stream)."""

    alpha: float
    source: str = "recorded"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise MtrnnError(f"feedback rate must be in [0, 1], got {self.alpha}")
        if self.source not in ("recorded", "live"):
            raise MtrnnError(f"policy source must be 'recorded' or 'live', got {self.source!r}")


# ---------------------------------------------------------------------------
# Batched unrolled forward/backward
# ---------------------------------------------------------------------------

def _as_batch_targets(model: MtrnnModel, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 2:
        targets = targets[None]
    if targets.ndim != 3 or targets.shape[2] != model.groups.io_count:
        raise MtrnnError(
            f"targets must be [B, T, {model.groups.io_count}], got {targets.shape}"
        )
    if targets.shape[1] < 2:
        raise MtrnnError("sequences need at least 2 steps")
    if float(np.abs(targets).max(initial=0.0)) > 1.0:
        raise MtrnnError("unnormalized data detected: |value| > 1")
    return targets


def _as_channel_mask(model: MtrnnModel, channel_mask, batch: int) -> np.ndarray:
    d = model.groups.io_count
    if channel_mask is None:
        m = np.ones((batch, d), dtype=np.float64)
    else:
        m = np.asarray(channel_mask, dtype=np.float64)
        if m.ndim == 1:
            m = np.broadcast_to(m, (batch, d)).copy()
        if m.shape != (batch, d):
            raise MtrnnError(f"channel mask must be [{d}] or [{batch}, {d}], got {m.shape}")
    return m


def forward_batch(model: MtrnnModel, targets: np.ndarray, cs0: np.ndarray, alpha: float,
                  channel_mask=None, keep_trace: bool = False):
    """Unroll the dynamics over [B, T, D] targets with per-sequence cs0.

    Returns ``(loss_per_seq, cache)``; the cache holds everything the
    backward pass needs. Predictions made at step k are scored against
    targets[k], for k = 1..T-1.
    """
    if not 0.0 <= alpha <= 1.0:
        raise MtrnnError(f"feedback rate must be in [0, 1], got {alpha}")
    g = model.groups
    targets = _as_batch_targets(model, targets)
    b, t_len, d = targets.shape
    cs0 = np.asarray(cs0, dtype=np.float64)
    if cs0.ndim == 1:
        cs0 = cs0[None]
    if cs0.shape != (b, g.slow_count):
        raise MtrnnError(f"cs0 must be [{b}, {g.slow_count}], got {cs0.shape}")
    m = _as_channel_mask(model, channel_mask, b)

    n = g.total
    tau = g.tau_vector()
    leak = 1.0 - 1.0 / tau
    rate = 1.0 / tau
    k_steps = t_len - 1

    ys = np.zeros((k_steps + 1, b, n))
    xs = np.zeros((k_steps, b, n))
    u = np.zeros((b, n))
    u[:, g.slow_slice] = cs0
    y = np.tanh(u)
    ys[0] = y
    wt = model.weights.T
    for k in range(1, k_steps + 1):
        x = np.empty((b, n))
        if k == 1:
            x[:, g.io_slice] = targets[:, 0, :]
        else:
            x[:, g.io_slice] = alpha * y[:, g.io_slice] + (1.0 - alpha) * targets[:, k - 1, :]
        x[:, g.io_count:] = y[:, g.io_count:]
        u = leak * u + rate * (x @ wt)
        y = np.tanh(u)
        xs[k - 1] = x
        ys[k] = y
    ensure_finite("mtrnn internal state", u)
    err = (ys[1:, :, :d] - targets.transpose(1, 0, 2)[1:]) * m[None, :, :]
    loss = np.einsum("kbd,kbd->b", err, err, optimize=True)
    cache = {
        "targets": targets, "cs0": cs0, "alpha": alpha, "mask": m,
        "ys": ys, "xs": xs, "leak": leak, "rate": rate, "u_final": u.copy(),
    }
    if not np.isfinite(loss).all():
        raise MtrnnError("non-finite loss in forward pass")
    if keep_trace:
        cache["predictions"] = ys[1:, :, :d].transpose(1, 0, 2)
    return loss, cache


def backward_batch(model: MtrnnModel, cache: dict, want_weight_grads: bool = True):
    """Exact gradients of the summed prediction error wrt weights and cs0.

    Gradient flows through the leak term, the tanh, and the alpha-weighted
    feedback of predictions into later inputs.
    """
    g = model.groups
    targets = cache["targets"]
    ys, xs = cache["ys"], cache["xs"]
    leak, rate, alpha, m = cache["leak"], cache["rate"], cache["alpha"], cache["mask"]
    b, t_len, d = targets.shape
    k_steps = t_len - 1
    n = g.total
    w = model.weights

    grad_w = np.zeros((n, n)) if want_weight_grads else None
    grad_cs0 = np.zeros((b, g.slow_count))

    g_next = np.zeros((b, n))
    for k in range(k_steps, -1, -1):
        dy = np.zeros((b, n))
        if k >= 1:
            dy[:, g.io_slice] = 2.0 * (ys[k][:, g.io_slice] - targets[:, k, :]) * m
        if k < k_steps:
            fb = (rate * g_next) @ w
            fb[:, g.io_slice] *= alpha if (k + 1) >= 2 else 0.0
            dy += fb
        g_cur = dy * (1.0 - ys[k] * ys[k])
        if k < k_steps:
            g_cur += leak * g_next
        if k >= 1 and want_weight_grads:
            grad_w += np.einsum("bi,bj->ij", rate * g_cur, xs[k - 1], optimize=True)
        g_next = g_cur
    grad_cs0 = g_next[:, g.slow_slice].copy()
    if want_weight_grads:
        grad_w[~model.mask] = 0.0
        ensure_finite("mtrnn weight gradients", grad_w)
    ensure_finite("mtrnn cs0 gradients", grad_cs0)
    return grad_w, grad_cs0


def sequence_loss(model: MtrnnModel, cs0: np.ndarray, sequence, alpha: float,
                  channel_mask=None) -> float:
    """Summed one-step prediction error over steps 1..T-1 and masked channels."""
    targets, mask = _sequence_targets(model, sequence, channel_mask)
    loss, _ = forward_batch(model, targets[None], np.asarray(cs0)[None], alpha, mask[None])
    return float(loss[0])


def bptt_grads(model: MtrnnModel, cs0: np.ndarray, sequence, alpha: float,
               channel_mask=None):
    """Exact (grad_weights, grad_cs0) of :func:`sequence_loss`."""
    targets, mask = _sequence_targets(model, sequence, channel_mask)
    _, cache = forward_batch(model, targets[None], np.asarray(cs0)[None], alpha, mask[None])
    grad_w, grad_cs0 = backward_batch(model, cache)
    return grad_w, grad_cs0[0]


def _sequence_targets(model: MtrnnModel, sequence, channel_mask):
    if isinstance(sequence, Sequence):
        targets = sequence.data
        mask = sequence.mask.astype(np.float64)
    else:
        targets = np.asarray(sequence, dtype=np.float64)
        mask = np.ones(model.groups.io_count)
    if channel_mask is not None:
        mask = np.asarray(channel_mask, dtype=np.float64)
    if targets.ndim != 2 or targets.shape[1] != model.groups.io_count:
        raise MtrnnError(
            f"sequence data must be [T, {model.groups.io_count}], got {targets.shape}"
        )
    return targets, mask


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

class LatentStore(dict):
    """Map sequence-id -> initial slow-context state vector."""

    @classmethod
    def zeros(cls, slow_count: int, ids) -> "LatentStore":
        store = cls()
        for seq_id in ids:
            store[str(seq_id)] = np.zeros(slow_count)
        return store

    def matrix(self, ids) -> np.ndarray:
        return np.stack([np.asarray(self[str(i)], dtype=np.float64) for i in ids])

    def copy(self) -> "LatentStore":
        out = LatentStore()
        for k, v in self.items():
            out[k] = np.array(v, dtype=np.float64)
        return out


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    cs0_learning_rate: float | None = None
    epochs: int = 1000
    feedback_rate: float = 0.9
    update_mode: str = "batch"
    # optional step decay; 0 disables it (plain fixed-rate descent)
    lr_decay: float = 1.0
    lr_decay_every: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise MtrnnError("learning rate must be positive")
        if self.update_mode not in ("batch", "sequence"):
            raise MtrnnError(f"update_mode must be 'batch' or 'sequence', got {self.update_mode!r}")

    @property
    def cs0_rate(self) -> float:
        return self.learning_rate if self.cs0_learning_rate is None else self.cs0_learning_rate

    def rates_at(self, epoch: int) -> tuple[float, float]:
        scale = 1.0
        if self.lr_decay_every > 0:
            scale = self.lr_decay ** (epoch // self.lr_decay_every)
        return self.learning_rate * scale, self.cs0_rate * scale


def train(model: MtrnnModel, sequences: list[Sequence], store: LatentStore,
          config: TrainConfig):
    """Full BPTT training of weights and per-sequence latent initial states.

    Returns ``(model, store, history)`` where history holds the total loss
    per epoch, summed over sequences. Inputs are not modified. Raises
    :class:`TrainingDiverged` with the epoch index if the loss goes
    non-finite.
    """
    if not sequences:
        raise MtrnnError("training needs at least one sequence")
    widths = {s.width for s in sequences}
    if widths != {model.groups.io_count}:
        raise MtrnnError(f"sequences must all have io width {model.groups.io_count}")
    model = model.copy()
    store = store.copy()
    for seq in sequences:
        if seq.id not in store:
            store[seq.id] = np.zeros(model.groups.slow_count)
    history: list[float] = []

    # Group sequences of equal length so each group runs as one batch.
    by_len: dict[int, list[Sequence]] = {}
    for seq in sorted(sequences, key=lambda s: s.id):
        by_len.setdefault(seq.steps, []).append(seq)
    groups = [(
        [s.id for s in seqs],
        np.stack([s.data for s in seqs]),
        np.stack([s.mask.astype(np.float64) for s in seqs]),
    ) for _, seqs in sorted(by_len.items())]

    for epoch in range(config.epochs):
        total = 0.0
        lr, cs0_lr = config.rates_at(epoch)
        if config.update_mode == "batch":
            grad_w_total = np.zeros_like(model.weights)
            cs0_grads: list[tuple[list[str], np.ndarray]] = []
            for ids, targets, masks in groups:
                cs0 = store.matrix(ids)
                loss, cache = forward_batch(model, targets, cs0, config.feedback_rate, masks)
                grad_w, grad_cs0 = backward_batch(model, cache)
                grad_w_total += grad_w
                cs0_grads.append((ids, grad_cs0))
                total += float(loss.sum())
            if not np.isfinite(total):
                raise TrainingDiverged(epoch, "loss is not finite")
            model.weights = model.weights - lr * grad_w_total
            model.weights[~model.mask] = 0.0
            for ids, grad_cs0 in cs0_grads:
                for i, seq_id in enumerate(ids):
                    store[seq_id] = store[seq_id] - cs0_lr * grad_cs0[i]
        else:
            for ids, targets, masks in groups:
                for i, seq_id in enumerate(ids):
                    cs0 = store[seq_id][None]
                    loss, cache = forward_batch(
                        model, targets[i][None], cs0, config.feedback_rate, masks[i][None]
                    )
                    grad_w, grad_cs0 = backward_batch(model, cache)
                    total += float(loss[0])
                    if not np.isfinite(total):
                        raise TrainingDiverged(epoch, f"loss diverged on {seq_id}")
                    model.weights = model.weights - lr * grad_w
                    model.weights[~model.mask] = 0.0
                    store[seq_id] = store[seq_id] - cs0_lr * grad_cs0[0]
        history.append(total)
    return model, store, history


def corpus_loss(model: MtrnnModel, sequences: list[Sequence], store: LatentStore,
                alpha: float) -> float:
    total = 0.0
    for seq in sequences:
        total += sequence_loss(model, store[seq.id], seq, alpha)
    return total


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_model(path: Path, model: MtrnnModel, store: LatentStore | None = None) -> None:
    store = store if store is not None else LatentStore()
    ids = sorted(store)
    header = {"groups": model.groups.to_json(), "sequence_ids": ids}
    tensors = [model.mask.astype(np.float64), model.weights]
    tensors.extend(np.asarray(store[i], dtype=np.float64) for i in ids)
    with open(path, "wb") as fh:
        write_container(fh, MAGIC, header, tensors)


def load_model(path: Path) -> tuple[MtrnnModel, LatentStore]:
    with open(path, "rb") as fh:
        header, tensors = read_container(fh, MAGIC)
    groups = NodeGroups.from_json(header["groups"])
    ids = header["sequence_ids"]
    if len(tensors) != 2 + len(ids):
        raise MtrnnError(f"model file holds {len(tensors)} tensors, expected {2 + len(ids)}")
    model = MtrnnModel(groups=groups, mask=tensors[0] != 0.0, weights=tensors[1])
    store = LatentStore()
    for seq_id, vec in zip(ids, tensors[2:]):
        store[seq_id] = vec
    return model, store
