"""Inference-time latent-state exploration and closed-loop motion generation.

Exploration freezes the trained weights and regresses the initial
slow-context state against a streamed sensor prefix: the network runs fully
closed-loop (feedback rate 1.0), so its outputs depend only on the latent
state and the first input frame, and gradient descent on the summed sensor
prediction error is the only way to shrink the error. Motor channels never
enter the objective; the stirring program is the same for every object.

Generation then rolls the network forward with the explored latent state:
motor and grip channels run fully closed-loop (their predictions drive the
actuator), sensor channels mix live readings with predictions through the
feedback policy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import ChannelLayout, NormalizationSpec, Sequence
from .mtrnn import FeedbackPolicy, MtrnnModel, backward_batch, forward_batch
from .simulator import (
    LiveSession,
    ObjectSpec,
    StageScore,
    TrialTiming,
    score_rollout,
    stir_commands,
)

io_dtype = np.float64


class ExplorerError(ValueError):
    pass


@dataclass(frozen=True)
class ExplorationConfig:
    """Budget and geometry of the latent search."""

    epochs: int = 10000
    learning_rate: float = 0.01
    t_ap: int = 142
    alpha: float = 1.0
    init: str = "zeros"
    seed: int = 0
    plateau_window: int = 1000
    plateau_rtol: float = 1e-3

    def __post_init__(self):
        if self.epochs < 0:
            raise ExplorerError("epochs must be non-negative")
        if self.init not in ("zeros", "store-mean"):
            raise ExplorerError(f"init policy must be 'zeros' or 'store-mean', got {self.init!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ExplorerError("alpha must be in [0, 1]")


@dataclass
class ExplorationResult:
    """Best latent state found, its loss, and the per-epoch trace."""

    cs0: np.ndarray
    loss_trace: list[float]
    converged: bool
    initial_loss: float
    best_loss: float
    best_epoch: int

    def __post_init__(self):
        if self.loss_trace and self.best_loss > self.loss_trace[0] + 1e-12:
            raise ExplorerError("best loss above initial loss; keep-best violated")


def _sensor_mask(layout: ChannelLayout, seq_mask: np.ndarray | None) -> np.ndarray:
    mask = np.zeros(layout.width)
    mask[layout.sensor_indices()] = 1.0
    if seq_mask is not None:
        mask = mask * np.asarray(seq_mask, dtype=np.float64)
    return mask


def _prefix_of(observed, t_ap: int) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(observed, Sequence):
        return observed.data[:t_ap], observed.mask
    arr = np.asarray(observed, dtype=io_dtype)
    return arr[:t_ap], None


def explore_many(model: MtrnnModel, observed_list, config: ExplorationConfig,
                 init_cs0: np.ndarray | None = None) -> list[ExplorationResult]:
    """Latent search on several observed prefixes at once (shared epochs).

    All prefixes must share the length ``config.t_ap``; the batch runs as one
    unrolled forward/backward per epoch. Weights are never touched.
    """
    if not observed_list:
        raise ExplorerError("no observed prefixes given")
    layout = model.groups.layout
    prefixes, masks = [], []
    for obs in observed_list:
        prefix, seq_mask = _prefix_of(obs, config.t_ap)
        if prefix.shape[0] < 2:
            raise ExplorerError("observed prefix must hold at least 2 steps")
        if prefix.shape[0] != config.t_ap:
            raise ExplorerError(
                f"observed prefix has {prefix.shape[0]} steps, config.t_ap is {config.t_ap}"
            )
        prefixes.append(prefix)
        masks.append(_sensor_mask(layout, seq_mask))
    targets = np.stack(prefixes)
    mask = np.stack(masks)
    b = targets.shape[0]
    slow = model.groups.slow_count

    if init_cs0 is not None:
        cs0 = np.broadcast_to(np.asarray(init_cs0, dtype=io_dtype), (b, slow)).copy()
    else:
        cs0 = np.zeros((b, slow))

    best = cs0.copy()
    best_loss = None
    best_epoch = np.zeros(b, dtype=int)
    traces = [[] for _ in range(b)]
    initial = None
    for epoch in range(config.epochs):
        loss, cache = forward_batch(model, targets, cs0, config.alpha, mask)
        if not np.isfinite(loss).all():
            raise ExplorerError(f"non-finite exploration loss at epoch {epoch}")
        if initial is None:
            initial = loss.copy()
            best_loss = loss.copy()
        improved = loss < best_loss
        best[improved] = cs0[improved]
        best_loss = np.minimum(best_loss, loss)
        best_epoch[improved] = epoch
        for i in range(b):
            traces[i].append(float(loss[i]))
        _, grad_cs0 = backward_batch(model, cache, want_weight_grads=False)
        cs0 = cs0 - config.learning_rate * grad_cs0
    if initial is None:
        loss, _ = forward_batch(model, targets, cs0, config.alpha, mask)
        initial = loss.copy()
        best_loss = loss.copy()

    results = []
    for i in range(b):
        trace = traces[i]
        converged = False
        if len(trace) > config.plateau_window:
            running = np.minimum.accumulate(trace)
            prev = running[-config.plateau_window - 1]
            converged = (prev - running[-1]) <= config.plateau_rtol * max(prev, 1e-300)
        results.append(ExplorationResult(
            cs0=best[i].copy(), loss_trace=trace, converged=converged,
            initial_loss=float(initial[i]), best_loss=float(best_loss[i]),
            best_epoch=int(best_epoch[i]),
        ))
    return results


def explore(model: MtrnnModel, observed, config: ExplorationConfig,
            init_cs0: np.ndarray | None = None) -> ExplorationResult:
    """Latent search on a single observed stir prefix."""
    return explore_many(model, [observed], config, init_cs0=init_cs0)[0]


def prefix_state(model: MtrnnModel, prefix: np.ndarray, cs0: np.ndarray,
                 alpha: float = 1.0):
    """Internal state (u, y) after running the stir prefix closed-loop.

    The state at the phase boundary is carried into motion generation
    unchanged.
    """
    _, cache = forward_batch(model, prefix[None], np.asarray(cs0)[None], alpha)
    ys = cache["ys"]
    return cache["u_final"][0].copy(), ys[-1][0].copy()


# ---------------------------------------------------------------------------
# Sources for closed-loop generation
# ---------------------------------------------------------------------------

class RecordedSource:
    """Serves target frames from a recorded normalized sequence.

    Recorded data has targets for every channel, actuators included, so a
    rollout against it can mix all channels.
    """

    has_actuator_targets = True

    def __init__(self, sequence: Sequence, start: int = 0):
        self.sequence = sequence
        self.layout = sequence.layout
        self.cursor = start

    def first_frame(self) -> np.ndarray:
        return self.sequence.data[self.cursor]

    def next_frame(self, predicted: np.ndarray) -> np.ndarray:
        """The next recorded frame; ignores the prediction."""
        self.cursor += 1
        if self.cursor >= self.sequence.steps:
            raise ExplorerError("recorded stream exhausted before rollout finished")
        return self.sequence.data[self.cursor]


class SimulatorSource:
    """Drives a live session with predicted motor commands, returns sensors.

    Predictions arrive normalized; motor and grip channels are denormalized
    for the actuator, and the resulting raw sensor frame is normalized back
    with the training-corpus spec (clamping anything out of range). There are
    no actuator targets: the predictions themselves move the robot.
    """

    has_actuator_targets = False

    def __init__(self, session: LiveSession, norm: NormalizationSpec,
                 layout: ChannelLayout, zero_idx: np.ndarray | None = None):
        self.session = session
        self.norm = norm
        self.layout = layout
        self.zero_idx = zero_idx

    def next_frame(self, predicted: np.ndarray) -> np.ndarray:
        if self.session.exhausted:
            raise ExplorerError("live session exhausted before rollout finished")
        full = np.zeros(self.layout.width)
        full[:] = predicted
        raw = self.norm.denormalize(full[None])[0]
        motor = raw[self.layout.slice_of("motor")]
        grip = raw[self.layout.slice_of("grip")][0]
        frame = self.session.step(motor, grip)
        raw_row = np.zeros(self.layout.width)
        raw_row[self.layout.slice_of("image")] = frame[0:15]
        raw_row[self.layout.slice_of("tactile")] = frame[15:19]
        raw_row[self.layout.slice_of("force")] = frame[19:25]
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            normed, _ = self.norm.normalize(raw_row[None])
        out = normed[0]
        out[self.layout.actuator_indices()] = predicted[self.layout.actuator_indices()]
        if self.zero_idx is not None:
            out[self.zero_idx] = 0.0
        return out


def rollout(model: MtrnnModel, cs0: np.ndarray, source, policy: FeedbackPolicy,
            steps: int, initial_state=None) -> np.ndarray:
    """Closed-loop generation: returns the [steps, D] matrix of predictions.

    Sensor channels mix the prediction with the source's reading through
    ``policy.alpha``. Actuator channels (motor, grip) mix too when the source
    carries recorded targets for them; against a live environment they feed
    back the prediction alone, which is what drives the actuator.
    """
    g = model.groups
    layout = g.layout
    tau = g.tau_vector()
    leak, rate_v = 1.0 - 1.0 / tau, 1.0 / tau
    sensor_idx = layout.sensor_indices()
    actuator_idx = layout.actuator_indices()
    mix_actuators = policy.source == "recorded" and source.has_actuator_targets

    if initial_state is not None:
        u, y = initial_state
        u, y = u.copy(), y.copy()
        staged = None
    else:
        u = np.zeros(g.total)
        u[g.slow_slice] = np.asarray(cs0, dtype=io_dtype)
        y = np.tanh(u)
        staged = source.first_frame()

    out = np.zeros((steps, layout.width))
    for k in range(steps):
        x = np.empty(g.total)
        if staged is not None and k == 0:
            x[g.io_slice] = staged
        else:
            pred = y[g.io_slice]
            frame = source.next_frame(pred)
            io = np.empty(layout.width)
            if mix_actuators:
                io[actuator_idx] = (policy.alpha * pred[actuator_idx]
                                    + (1.0 - policy.alpha) * frame[actuator_idx])
            else:
                io[actuator_idx] = pred[actuator_idx]
            io[sensor_idx] = (policy.alpha * pred[sensor_idx]
                              + (1.0 - policy.alpha) * frame[sensor_idx])
            x[g.io_slice] = io
        x[g.io_count:] = y[g.io_count:]
        u = leak * u + rate_v * (model.weights @ x)
        y = np.tanh(u)
        out[k] = y[g.io_slice]
    return out


@dataclass
class EpisodeResult:
    """Everything one end-to-end evaluation produced."""

    exploration: ExplorationResult
    generated: Sequence
    score: StageScore
    session: LiveSession


def explore_then_act(model: MtrnnModel, spec: ObjectSpec, seed: int,
                     norm: NormalizationSpec, timing: TrialTiming,
                     explore_config: ExplorationConfig,
                     policy: FeedbackPolicy | None = None,
                     init_cs0: np.ndarray | None = None) -> EpisodeResult:
    """Stir, explore the latent state, then generate the motion phase.

    The stirring motor program is fixed; sensors collected during it form the
    exploration prefix. The internal state at the end of the stir carries
    into motion generation unchanged.
    """
    cfg = explore_config
    if cfg.t_ap != timing.t_ap:
        cfg = ExplorationConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                                t_ap=timing.t_ap, alpha=cfg.alpha, init=cfg.init,
                                seed=cfg.seed, plateau_window=cfg.plateau_window,
                                plateau_rtol=cfg.plateau_rtol)
    return run_episodes(model, [(spec, seed)], norm, timing, cfg, policy=policy,
                        init_cs0=init_cs0)[0]


def run_episodes(model: MtrnnModel, episodes: list[tuple[ObjectSpec, int]],
                 norm: NormalizationSpec, timing: TrialTiming,
                 explore_config: ExplorationConfig,
                 policy: FeedbackPolicy | None = None,
                 init_cs0: np.ndarray | None = None,
                 sensor_subset: tuple[str, ...] | None = None) -> list[EpisodeResult]:
    """Evaluate many (spec, seed) episodes, batching the exploration phase.

    Behavior matches calling :func:`explore_then_act` per episode; the latent
    searches share their unrolled passes for speed. ``sensor_subset``
    restricts the sensor groups a masked model is allowed to see: excluded
    channels are zeroed in the prefix and the live stream, and drop out of
    the exploration objective.
    """
    policy = policy or FeedbackPolicy(alpha=0.8, source="live")
    layout = model.groups.layout
    import warnings as _warnings

    zero_idx = None
    chan_mask = np.ones(layout.width, dtype=bool)
    if sensor_subset is not None:
        from .dataset import SENSOR_GROUPS
        dropped = [g for g in layout.group_names()
                   if g in SENSOR_GROUPS and g not in set(sensor_subset)]
        if dropped:
            zero_idx = layout.indices_of(dropped)
            chan_mask[zero_idx] = False

    sessions, prefixes = [], []
    cmds = stir_commands(timing)
    for spec, seed in episodes:
        session = LiveSession(spec, seed, timing)
        rows = np.zeros((timing.t_ap, layout.width))
        for t in range(timing.t_ap):
            frame = session.step(cmds[t, :7], cmds[t, 7])
            rows[t, layout.slice_of("image")] = frame[0:15]
            rows[t, layout.slice_of("motor")] = session.transcript.motor[t]
            rows[t, layout.slice_of("tactile")] = frame[15:19]
            rows[t, layout.slice_of("force")] = frame[19:25]
            rows[t, layout.slice_of("grip")] = session.transcript.grip[t]
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore")
            observed, _ = norm.normalize(rows)
        if zero_idx is not None:
            observed[:, zero_idx] = 0.0
        sessions.append(session)
        prefixes.append(Sequence(id=f"obs-{spec.id}-{seed}", data=observed, layout=layout,
                                 t_ap=timing.t_ap, mask=chan_mask, normalized=True,
                                 norm_provenance=norm.provenance))

    results = explore_many(model, prefixes, explore_config, init_cs0=init_cs0)

    episodes_out = []
    for (spec, seed), session, obs_seq, result in zip(episodes, sessions, prefixes, results):
        observed = obs_seq.data
        u_end, y_end = prefix_state(model, observed, result.cs0, alpha=explore_config.alpha)
        source = SimulatorSource(session, norm, layout, zero_idx=zero_idx)
        generated = rollout(model, result.cs0, source, policy, timing.t_motion,
                            initial_state=(u_end, y_end))
        gen_seq = Sequence(
            id=f"gen-{spec.id}-{spec.amount}-s{seed}",
            data=np.clip(np.vstack([observed, generated]), -1.0, 1.0),
            layout=layout, t_ap=timing.t_ap,
            meta={"object": spec.to_json(), "seed": int(seed), "generated": True},
            normalized=True, norm_provenance=norm.provenance,
        )
        episodes_out.append(EpisodeResult(exploration=result, generated=gen_seq,
                                          score=score_rollout(session), session=session))
    return episodes_out


# ---------------------------------------------------------------------------
# Artifact writers
# ---------------------------------------------------------------------------

def write_loss_trace(path: Path, result: ExplorationResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for epoch, value in enumerate(result.loss_trace):
            writer.writerow([epoch, format(value, ".9g")])


def write_cs0(path: Path, result: ExplorationResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"cs0_{i}" for i in range(result.cs0.size)])
        writer.writerow([format(v, ".9g") for v in result.cs0])
