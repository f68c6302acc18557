"""Deterministic synthetic stand-in for the robot and kitchen.

Generates multimodal sensorimotor trials from object parameters and serves as
a live environment for closed-loop rollouts with staged success scoring.

Every trial has a stirring phase driven by a fixed motor program (identical
for all objects) and a motion phase that reaches a tool rack, grasps a tool,
scoops or lifts the ingredient at the pot, carries it to the bowl, pours, and
returns home. Sensor channels are fixed closed-form functions:

- force   = f(motor velocity, effective mass, viscosity, held load) + noise
- tactile = f(grip strength, friction) + noise
- image   = f(color, size, position, amount, surface state) + noise

Color never enters force/tactile; weight and friction never enter the image
channels. That separation is what the modality-ablation experiments probe.

``generate_trial`` replays the canonical command program through the same
live-session core used for closed-loop evaluation, so a recorded trial and a
live replay of its own commands agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import json

import numpy as np

from .dataset import (
    ChannelLayout,
    Corpus,
    NormalizationSpec,
    Sequence,
    fit_normalization,
    normalize_sequence,
)
from .numerics.seeding import child_seed, spawn_rng

LADLE = "ladle"
TURNER = "turner"

JOINT_LIMIT = 1.6
SENSOR_NOISE_STD = 0.02
# five sweeps over the full-scale 142-step stir; shorter stirs see fewer
# sweeps at the same per-step speed rather than faster ones
STIR_RATE = 5.0 / 142.0
STIR_GRIP = 0.45

# 7-dim joint-space poses (6 arm joints + gripper angle)
HOME = np.array([0.0, -0.2, 0.1, 0.0, 0.0, 0.0, 0.8])
RACK = {
    LADLE: np.array([0.95, -0.45, 0.55, -0.35, 0.55, 0.25, 0.8]),
    TURNER: np.array([-0.95, 0.45, 0.55, -0.35, -0.55, 0.25, 0.8]),
}
POT = np.array([0.20, 0.65, -0.45, 0.40, 0.05, 0.10, 0.2])
BOWL = np.array([-0.35, -0.55, -0.15, 0.55, -0.40, 0.10, 0.2])

STIR_CENTER = np.array([0.20, 0.55, -0.35, 0.35, 0.00, 0.05, 0.35])
STIR_AMP = np.array([0.50, 0.12, 0.20, 0.10, 0.28, 0.22, 0.0])
STIR_PHASE = np.array([0.0, np.pi / 2, np.pi, 0.0, np.pi / 3, np.pi / 6, 0.0])

# state-machine thresholds (calibrated so canonical runs pass with margin)
ZONE_RADIUS = 0.55
GRASP_BAND = {LADLE: (0.22, 0.98), TURNER: (0.18, 0.94)}
SCOOP_RADIUS = 0.60
GRIP_NEED_BASE = 0.12
GRIP_NEED_GAIN = 0.42
PATH_SPILL_DIST = 0.85
EARLY_TILT_MAX = 1.10
POUR_TILT_MARGIN = 0.22
POUR_GAIN = 55.0  # transferred fraction per unit tilt excess, over one motion phase
BOWL_RADIUS = 0.70
VOLUME_THRESHOLD = 50.0

# sensor noise: 0.02 in normalized units, mapped through nominal channel spans
NOISE_NOMINAL_SPAN = np.concatenate([
    np.full(15, 1.8), np.full(4, 0.6), np.full(6, 0.5),
])
SENSOR_NOISE_PER_CHANNEL = SENSOR_NOISE_STD * NOISE_NOMINAL_SPAN / 1.8

# motion-phase segment boundaries, as fractions of the motion step count
SEG_REACH = 0.22
SEG_GRASP = 0.34
SEG_APPROACH = 0.50
SEG_SCOOP = 0.60
SEG_CARRY = 0.72
SEG_POUR = 0.86

FORCE_MASS_GAIN = np.array([0.9, 0.7, -0.5, 0.6, -0.4, 0.3])
FORCE_VISC_GAIN = np.array([0.3, -0.4, 0.6, 0.2, 0.5, -0.3])
FORCE_HELD_GAIN = np.array([0.5, 0.9, 0.3, -0.6, 0.4, 0.7])
FORCE_BASE = np.array([0.05, -0.05, 0.02, 0.04, -0.03, 0.01])
TACTILE_GRIP_GAIN = np.array([0.8, 0.6, 0.9, 0.7])
TACTILE_FRICTION_GAIN = np.array([0.9, -0.5, 0.4, -0.8])
IMAGE_WAVE_GAIN = np.array([1.0, 0.8, -0.6, 0.5, -0.4])
IMAGE_WAVE_SQ_GAIN = np.array([0.2, -0.3, 0.4, 0.3, -0.2])
CLASS_APPEARANCE = {"granular": 0.25, "block": -0.25, "liquid": 0.05}


class SimulatorError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectSpec:
    """Synthetic object parameters plus the ground-truth tool label.

    Extrinsic: color, size, position offset (all visible). Intrinsic: weight,
    friction, viscosity (felt through interaction). Granular and liquid
    objects call for the ladle, blocks for the turner.
    """

    id: str
    cls: str
    color: float
    size: float
    position: tuple[float, float]
    weight: float
    friction: float
    viscosity: float
    amount: str = "large"

    def __post_init__(self):
        if self.cls not in ("granular", "block", "liquid"):
            raise SimulatorError(f"unknown object class {self.cls!r}")
        if self.amount not in ("small", "large"):
            raise SimulatorError(f"amount must be 'small' or 'large', got {self.amount!r}")
        for name in ("color", "size", "weight", "friction", "viscosity"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise SimulatorError(f"{name} must be in [0, 1], got {val}")
        if not all(-1.0 <= p <= 1.0 for p in self.position):
            raise SimulatorError(f"position offsets must be in [-1, 1], got {self.position}")

    @property
    def tool(self) -> str:
        return TURNER if self.cls == "block" else LADLE

    @property
    def amount_factor(self) -> float:
        return 1.0 if self.amount == "large" else 0.5

    @property
    def mass(self) -> float:
        return self.weight * self.amount_factor

    @property
    def total_units(self) -> float:
        if self.cls == "block":
            return 2.0 if self.amount == "large" else 1.0
        return 600.0 if self.amount == "large" else 300.0

    def with_amount(self, amount: str) -> "ObjectSpec":
        return ObjectSpec(self.id, self.cls, self.color, self.size, self.position,
                          self.weight, self.friction, self.viscosity, amount)

    def to_json(self) -> dict:
        return {
            "id": self.id, "class": self.cls, "color": self.color, "size": self.size,
            "position": list(self.position), "weight": self.weight,
            "friction": self.friction, "viscosity": self.viscosity,
            "amount": self.amount, "tool": self.tool,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ObjectSpec":
        return cls(id=str(data["id"]), cls=str(data["class"]), color=float(data["color"]),
                   size=float(data["size"]), position=tuple(data["position"]),
                   weight=float(data["weight"]), friction=float(data["friction"]),
                   viscosity=float(data["viscosity"]), amount=str(data.get("amount", "large")))


@dataclass(frozen=True)
class TrialTiming:
    """Step counts of the two phases (10 Hz steps)."""

    t_ap: int = 142
    t_motion: int = 292

    def __post_init__(self):
        if self.t_ap < 4 or self.t_motion < 10:
            raise SimulatorError("phases too short to be meaningful")

    @property
    def total(self) -> int:
        return self.t_ap + self.t_motion

    @classmethod
    def from_total(cls, steps: int) -> "TrialTiming":
        """Paper-shaped split for 434 steps, otherwise one third stirring."""
        if steps == 434:
            return cls(142, 292)
        t_ap = steps // 3
        return cls(t_ap, steps - t_ap)


@dataclass
class StageScore:
    """Four staged booleans; later stages can only pass if earlier ones did."""

    tool_selection: bool = False
    tool_grasping: bool = False
    pick_up: bool = False
    pour: bool = False

    def __post_init__(self):
        stages = [self.tool_selection, self.tool_grasping, self.pick_up, self.pour]
        for earlier, later in zip(stages, stages[1:]):
            if later and not earlier:
                raise SimulatorError("stage score violates monotonicity")

    def as_tuple(self) -> tuple[bool, bool, bool, bool]:
        return (self.tool_selection, self.tool_grasping, self.pick_up, self.pour)

    @property
    def all_stages(self) -> bool:
        return all(self.as_tuple())


# ---------------------------------------------------------------------------
# Canonical command programs
# ---------------------------------------------------------------------------

def stir_commands(timing: TrialTiming) -> np.ndarray:
    """Fixed stirring program: [t_ap, 8] of 7 joint targets plus grip strength.

    Identical for every object, and a pure function of the step index, so a
    shorter stir phase is a prefix of a longer one.
    """
    angle = 2.0 * np.pi * STIR_RATE * np.arange(timing.t_ap)
    motor = STIR_CENTER[None, :] + STIR_AMP[None, :] * np.sin(
        angle[:, None] + STIR_PHASE[None, :]
    )
    grip = np.full((timing.t_ap, 1), STIR_GRIP)
    return np.hstack([motor, grip])


def scoop_inclination(tool: str, viscosity: float) -> float:
    """Wrist angle while lifting; deeper for runnier ingredients."""
    if tool == LADLE:
        return 0.50 + 0.35 * (1.0 - viscosity)
    return 0.25 + 0.20 * (1.0 - viscosity)


def pour_inclination(tool: str, viscosity: float) -> float:
    base = 0.70 if tool == LADLE else 0.55
    return base + 0.30 * (1.0 - viscosity)


def grip_command(weight: float, friction: float) -> float:
    """Commanded grip strength, increasing with weight times friction."""
    return 0.35 + 0.50 * weight * friction


def _smoothstep(a: float, b: float, x: np.ndarray) -> np.ndarray:
    t = np.clip((x - a) / (b - a), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def motion_commands(spec: ObjectSpec, timing: TrialTiming,
                    tool: str | None = None) -> np.ndarray:
    """Canonical motion program for ``spec``: [t_motion, 8].

    ``tool`` overrides the tool branch (used by negative-control tests);
    inclination follows viscosity, grip strength follows weight*friction.
    """
    tool = tool or spec.tool
    steps = timing.t_motion
    frac = (np.arange(steps) + 0.5) / steps
    rack = RACK[tool]
    incl = scoop_inclination(tool, spec.viscosity)
    pour = pour_inclination(tool, spec.viscosity)
    strength = grip_command(spec.weight, spec.friction)

    scoop_pose = POT.copy()
    scoop_pose[5] = incl
    scoop_pose[6] = 0.2
    carry_pose = 0.5 * (POT + BOWL)
    carry_pose[1] -= 0.25
    carry_pose[5] = 0.6 * incl
    carry_pose[6] = 0.2
    bowl_pose = BOWL.copy()
    bowl_pose[5] = 0.5 * incl
    bowl_pose[6] = 0.2
    pour_pose = BOWL.copy()
    pour_pose[5] = pour
    pour_pose[6] = 0.2

    knots = [
        (0.0, HOME),
        (SEG_REACH, rack),
        (SEG_GRASP, rack),
        (SEG_APPROACH, POT * 1.0),
        (SEG_SCOOP, scoop_pose),
        ((SEG_SCOOP + SEG_CARRY) / 2.0, carry_pose),
        (SEG_CARRY, bowl_pose),
        (SEG_CARRY + 0.04, pour_pose),
        (SEG_POUR, pour_pose),
        (1.0, HOME),
    ]
    motor = np.zeros((steps, 7))
    for (f0, p0), (f1, p1) in zip(knots, knots[1:]):
        blend = _smoothstep(f0, f1, frac)[:, None]
        seg = (frac >= f0) & (frac < f1)
        motor[seg] = (p0[None, :] + blend * (p1 - p0)[None, :])[seg]

    # gripper angle: open on approach, closes over the grasp window, reopens
    # after the pour
    closing = _smoothstep(SEG_REACH + 0.02, SEG_GRASP, frac)
    opening = _smoothstep(SEG_POUR + 0.02, SEG_POUR + 0.08, frac)
    motor[:, 6] = 0.8 - 0.6 * closing + 0.6 * opening

    grip = np.zeros(steps)
    ramp = _smoothstep(SEG_REACH, SEG_GRASP, frac)
    release = 1.0 - _smoothstep(SEG_POUR, SEG_POUR + 0.06, frac)
    grip = strength * ramp * release
    return np.hstack([motor, grip[:, None]])


def canonical_commands(spec: ObjectSpec, timing: TrialTiming,
                       tool: str | None = None) -> np.ndarray:
    return np.vstack([stir_commands(timing), motion_commands(spec, timing, tool=tool)])


# ---------------------------------------------------------------------------
# Live session
# ---------------------------------------------------------------------------

@dataclass
class Transcript:
    """Everything a finished session recorded, enough to score it."""

    spec: ObjectSpec
    timing: TrialTiming
    motor: np.ndarray
    grip: np.ndarray
    sensors: np.ndarray
    first_zone: str | None = None
    tool_held: str | None = None
    ever_held: bool = False
    spilled: bool = False
    transferred_frac: float = 0.0
    clamped_steps: int = 0
    steps_done: int = 0
    zone_min_dist: dict = field(default_factory=dict)
    grasp_strength: float | None = None
    pickup_margin: float | None = None

    @property
    def transferred_units(self) -> float:
        if self.spec.cls == "block":
            return float(np.floor(self.transferred_frac * self.spec.total_units + 0.5))
        return self.transferred_frac * self.spec.total_units


class LiveSession:
    """Step-wise environment: feed motor and grip commands, read sensors back.

    The ingredient state (tool acquired, held, spilled, poured) evolves by
    threshold rules on trajectory deviation and grip adequacy. Deterministic
    given (spec, seed): sensor noise is pre-drawn in a spec-independent order.
    """

    def __init__(self, spec: ObjectSpec, seed: int, timing: TrialTiming | None = None):
        self.spec = spec
        self.seed = int(seed)
        self.timing = timing or TrialTiming()
        rng = spawn_rng(self.seed, "trial-noise")
        self._noise = rng.normal(size=(self.timing.total, 25)) * SENSOR_NOISE_PER_CHANNEL
        self._reference = None  # canonical path, for deviation checks
        self.t = 0
        self._prev_motor = None
        self._held_now = False
        self._zone_peak = {LADLE: 0.0, TURNER: 0.0}
        self._overgrip = {LADLE: False, TURNER: False}
        self._in_zone = {LADLE: False, TURNER: False}
        self.transcript = Transcript(
            spec=spec, timing=self.timing,
            motor=np.zeros((self.timing.total, 7)),
            grip=np.zeros(self.timing.total),
            sensors=np.zeros((self.timing.total, 25)),
            zone_min_dist={LADLE: np.inf, TURNER: np.inf},
        )
        self._grip_ok_since = None

    @property
    def exhausted(self) -> bool:
        return self.t >= self.timing.total

    def _reference_path(self) -> np.ndarray:
        if self._reference is None:
            self._reference = motion_commands(self.spec, self.timing)[:, :7]
        return self._reference

    def step(self, motor_cmd: np.ndarray, grip_strength: float) -> np.ndarray:
        """Advance one step; returns the raw 25-dim sensor frame
        (image 15, tactile 4, force 6)."""
        if self.exhausted:
            raise SimulatorError("session exhausted: no steps remain")
        tr = self.transcript
        cmd = np.asarray(motor_cmd, dtype=np.float64)
        if cmd.shape != (7,):
            raise SimulatorError(f"motor command must have 7 joints, got shape {cmd.shape}")
        clamped = np.clip(cmd, -JOINT_LIMIT, JOINT_LIMIT)
        if np.any(clamped != cmd):
            tr.clamped_steps += 1
        grip = float(np.clip(grip_strength, 0.0, 1.0))

        t = self.t
        stirring = t < self.timing.t_ap
        vel = np.zeros(7) if self._prev_motor is None else clamped - self._prev_motor
        speed = float(np.linalg.norm(vel)) * 2.0

        if not stirring:
            self._motion_state_update(clamped, grip, t - self.timing.t_ap)

        frame = self._sensor_frame(t, clamped, grip, speed, stirring)
        tr.motor[t] = clamped
        tr.grip[t] = grip
        tr.sensors[t] = frame
        self._prev_motor = clamped
        self.t += 1
        tr.steps_done = self.t
        return frame

    # -- state machine -----------------------------------------------------

    def _motion_state_update(self, cmd: np.ndarray, grip: float, tm: int) -> None:
        tr = self.transcript
        spec = self.spec
        frac = (tm + 0.5) / self.timing.t_motion
        for tool in (LADLE, TURNER):
            # rack zones are about arm posture; the gripper angle is free
            dist = float(np.linalg.norm(cmd[:6] - RACK[tool][:6]))
            tr.zone_min_dist[tool] = min(tr.zone_min_dist[tool], dist)
            in_zone = dist < ZONE_RADIUS
            if in_zone and tr.first_zone is None:
                tr.first_zone = tool
            if in_zone and tr.tool_held is None:
                self._zone_peak[tool] = max(self._zone_peak[tool], grip)
                if grip > GRASP_BAND[tool][1]:
                    self._overgrip[tool] = True
                self._in_zone[tool] = True
            elif self._in_zone[tool] and tr.tool_held is None:
                # leaving the rack zone decides the grasp: the peak strength
                # must have reached the band without ever overshooting it
                lo, hi = GRASP_BAND[tool]
                peak = self._zone_peak[tool]
                if lo <= peak <= hi and not self._overgrip[tool]:
                    tr.tool_held = tool
                    tr.grasp_strength = peak
                self._in_zone[tool] = False

        grip_needed = GRIP_NEED_BASE + GRIP_NEED_GAIN * spec.weight * spec.friction
        in_pot = float(np.linalg.norm(cmd[:5] - POT[:5])) < SCOOP_RADIUS
        if (not tr.ever_held and tr.tool_held == spec.tool and in_pot
                and SEG_APPROACH <= frac < SEG_CARRY and grip >= grip_needed):
            tr.ever_held = True
            tr.pickup_margin = grip - grip_needed
            self._held_now = True

        if frac >= SEG_POUR:
            # pour window over: whatever was not transferred rides back with
            # the tool, so releasing the grip is no longer a spill
            self._held_now = False
        if self._held_now and not tr.spilled:
            if grip < grip_needed:
                tr.spilled = True
                self._held_now = False
            ref = self._reference_path()
            deviation = float(np.linalg.norm(cmd[:5] - ref[min(tm, len(ref) - 1), :5]))
            if deviation > PATH_SPILL_DIST:
                tr.spilled = True
                self._held_now = False
            in_bowl = float(np.linalg.norm(cmd[:2] - BOWL[:2])) < BOWL_RADIUS
            tilt = float(cmd[5])
            if not in_bowl and tilt > EARLY_TILT_MAX:
                tr.spilled = True
                self._held_now = False
            if in_bowl and not tr.spilled:
                tilt_min = pour_inclination(spec.tool, spec.viscosity) - POUR_TILT_MARGIN
                excess = tilt - tilt_min
                if excess > 0.0:
                    tr.transferred_frac = min(
                        1.0,
                        tr.transferred_frac + POUR_GAIN / self.timing.t_motion * excess,
                    )

    # -- sensors -----------------------------------------------------------

    def _sensor_frame(self, t: int, cmd: np.ndarray, grip: float, speed: float,
                      stirring: bool) -> np.ndarray:
        spec = self.spec
        tr = self.transcript
        held = 1.0 if getattr(self, "_held_now", False) else 0.0
        if stirring:
            contact = 1.0
            phase = 2.0 * np.pi * STIR_RATE * t
        else:
            frac = (t - self.timing.t_ap + 0.5) / self.timing.t_motion
            contact = 1.0 if (SEG_APPROACH <= frac < SEG_CARRY) else 0.0
            phase = 2.0 * np.pi * 3.0 * frac

        mass = spec.mass
        load = held * mass * (1.0 - tr.transferred_frac)

        force = (FORCE_BASE
                 + (contact * (mass * FORCE_MASS_GAIN + spec.viscosity * FORCE_VISC_GAIN)
                    * speed)
                 + load * FORCE_HELD_GAIN * (1.0 + 0.2 * speed))
        tactile = grip * (TACTILE_GRIP_GAIN + spec.friction * TACTILE_FRICTION_GAIN)

        image = np.empty(15)
        c = spec.color
        image[0:5] = [c, c * c, 0.8 * np.sin(np.pi * c), 0.8 * np.cos(np.pi * c), 1.0 - c]
        fill = 0.4 + 0.6 * spec.amount_factor * (1.0 - tr.transferred_frac)
        image[5:10] = [spec.size, spec.position[0], spec.position[1], fill, spec.size * fill]
        wave = self._surface_wave(phase, contact, held, speed)
        image[10:15] = (wave * IMAGE_WAVE_GAIN + wave * wave * IMAGE_WAVE_SQ_GAIN
                        + CLASS_APPEARANCE[spec.cls])

        frame = np.concatenate([image, tactile, force])
        frame += self._noise[t]
        return frame

    def _surface_wave(self, phase: float, contact: float, held: float, speed: float) -> float:
        spec = self.spec
        damp = 1.0 - 0.5 * spec.viscosity
        if spec.cls == "granular":
            base = np.sin(phase)
        elif spec.cls == "block":
            base = np.tanh(2.5 * np.sin(phase)) / np.tanh(2.5)
        else:
            base = 0.7 * np.sin(phase) + 0.3 * np.sin(2.0 * phase + 0.5)
        agitation = contact * min(1.0, 0.3 + speed) + 0.35 * held
        return float(damp * agitation * base)


# ---------------------------------------------------------------------------
# Trial generation and scoring
# ---------------------------------------------------------------------------

@dataclass
class TrialRecording:
    """One generated trial: raw sequence, object spec, and the trial seed."""

    sequence: Sequence
    spec: ObjectSpec
    seed: int


def generate_trial(spec: ObjectSpec, seed: int, timing: TrialTiming | None = None,
                   layout: ChannelLayout | None = None, seq_id: str | None = None,
                   tool: str | None = None) -> TrialRecording:
    """Run the canonical command program through a live session and record it.

    The returned sequence is raw (unnormalized); corpus assembly fits the
    normalization afterwards. ``tool`` forces the wrong-tool branch for
    negative controls.
    """
    timing = timing or TrialTiming()
    layout = layout or ChannelLayout()
    session = LiveSession(spec, seed, timing)
    cmds = canonical_commands(spec, timing, tool=tool)
    rows = np.zeros((timing.total, layout.width))
    img = layout.slice_of("image")
    mot = layout.slice_of("motor")
    tac = layout.slice_of("tactile")
    frc = layout.slice_of("force")
    grp = layout.slice_of("grip")
    for t in range(timing.total):
        frame = session.step(cmds[t, :7], cmds[t, 7])
        rows[t, img] = frame[0:15]
        rows[t, mot] = session.transcript.motor[t]
        rows[t, tac] = frame[15:19]
        rows[t, frc] = frame[19:25]
        rows[t, grp] = session.transcript.grip[t]
    seq = Sequence(
        id=seq_id or f"{spec.id}-{spec.amount}-s{seed}",
        data=rows, layout=layout, t_ap=timing.t_ap,
        meta={"object": spec.to_json(), "seed": int(seed)},
    )
    return TrialRecording(sequence=seq, spec=spec, seed=int(seed))


def score_rollout(session: LiveSession | Transcript) -> StageScore:
    """Staged success for a completed session.

    Selection: first rack zone entered is the correct tool's. Grasping: grip
    strength inside the tool band while in the zone. Pick-up: held state
    achieved. Pour: enough transferred without spilling or dropping.
    """
    tr = session.transcript if isinstance(session, LiveSession) else session
    if tr.steps_done < tr.timing.total:
        raise SimulatorError(
            f"incomplete transcript: {tr.steps_done}/{tr.timing.total} steps"
        )
    spec = tr.spec
    selection = tr.first_zone == spec.tool
    grasping = selection and tr.tool_held == spec.tool
    pick_up = grasping and tr.ever_held
    threshold = 1.0 if spec.cls == "block" else VOLUME_THRESHOLD
    pour = bool(pick_up and not tr.spilled and tr.transferred_units >= threshold)
    return StageScore(tool_selection=bool(selection), tool_grasping=bool(grasping),
                      pick_up=bool(pick_up), pour=pour)


def score_margins(session: LiveSession | Transcript) -> dict:
    """Rule margins of a transcript, as fractions of each threshold.

    Used once to calibrate the committed constants: canonical trials must
    clear every stage with at least 20 percent to spare.
    """
    tr = session.transcript if isinstance(session, LiveSession) else session
    spec = tr.spec
    margins = {}
    zone = tr.zone_min_dist[spec.tool]
    margins["zone"] = (ZONE_RADIUS - zone) / ZONE_RADIUS
    lo, hi = GRASP_BAND[spec.tool]
    gs = tr.grasp_strength if tr.grasp_strength is not None else np.nan
    half = (hi - lo) / 2.0
    margins["grasp_band"] = min(gs - lo, hi - gs) / half if np.isfinite(gs) else -1.0
    need = GRIP_NEED_BASE + GRIP_NEED_GAIN * spec.weight * spec.friction
    margins["grip_need"] = (tr.pickup_margin / need) if tr.pickup_margin is not None else -1.0
    if spec.cls == "block":
        # block transfer is quantized; margin measured on the continuous
        # fraction against the 0.5 rounding boundary for one block
        margins["pour"] = tr.transferred_frac / (0.5 / spec.total_units) - 1.0
    else:
        margins["pour"] = tr.transferred_units / VOLUME_THRESHOLD - 1.0
    return margins


def build_corpus(catalog: list[ObjectSpec], name: str, seed: int,
                 timing: TrialTiming | None = None, trials_per_combo: int = 4,
                 amounts: tuple[str, ...] = ("small", "large"),
                 layout: ChannelLayout | None = None,
                 norm: NormalizationSpec | None = None) -> Corpus:
    """Generate the trial matrix for a catalog and normalize it.

    Default matrix: every object at every amount, ``trials_per_combo`` seeds
    each. When ``norm`` is given (evaluation corpora), it is used instead of
    fitting fresh bounds, so evaluation never peeks at its own ranges.
    """
    timing = timing or TrialTiming()
    layout = layout or ChannelLayout()
    raw: list[Sequence] = []
    for spec in catalog:
        for amount in amounts:
            s = spec.with_amount(amount)
            for k in range(trials_per_combo):
                trial_seed = child_seed(seed, s.id, amount, k)
                raw.append(generate_trial(s, trial_seed, timing, layout).sequence)
    if norm is None:
        norm = fit_normalization(raw, provenance=name)
    normalized = [normalize_sequence(seq, norm) for seq in raw]
    return Corpus(name=name, layout=layout, sequences=normalized, norm=norm,
                  extra={"timing": {"t_ap": timing.t_ap, "t_motion": timing.t_motion},
                         "catalog": [s.to_json() for s in catalog],
                         "seed": int(seed)})


# ---------------------------------------------------------------------------
# Catalogs
# ---------------------------------------------------------------------------

def training_catalog() -> list[ObjectSpec]:
    """Six training objects: three granular (ladle), three block (turner).

    Parameter levels are crossed so that color class, weight class, and
    object class stay mutually uninformative: each color or weight level
    pairs one granular with one block object.
    """
    return [
        ObjectSpec("granular-a", "granular", 0.90, 0.25, (0.10, -0.05), 0.15, 0.30, 0.60),
        ObjectSpec("granular-b", "granular", 0.55, 0.45, (-0.15, 0.10), 0.50, 0.60, 0.30),
        ObjectSpec("granular-c", "granular", 0.20, 0.65, (0.05, 0.15), 0.85, 0.45, 0.45),
        ObjectSpec("block-a", "block", 0.85, 0.60, (-0.05, -0.10), 0.55, 0.55, 0.55),
        ObjectSpec("block-b", "block", 0.50, 0.30, (0.15, 0.05), 0.90, 0.35, 0.40),
        ObjectSpec("block-c", "block", 0.15, 0.50, (-0.10, -0.15), 0.20, 0.65, 0.25),
    ]


def heldout_catalog() -> list[ObjectSpec]:
    """Evaluation objects inside the trained parameter hull; liquids appear
    only here."""
    return [
        ObjectSpec("liquid-a", "liquid", 0.88, 0.35, (0.00, 0.00), 0.45, 0.40, 0.50),
        ObjectSpec("liquid-b", "liquid", 0.60, 0.40, (0.05, -0.05), 0.40, 0.45, 0.35),
        ObjectSpec("granular-x", "granular", 0.70, 0.40, (0.00, 0.05), 0.35, 0.50, 0.45),
        ObjectSpec("block-x", "block", 0.65, 0.45, (0.05, 0.00), 0.60, 0.50, 0.45),
    ]


def load_catalog(path: Path) -> list[ObjectSpec]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise SimulatorError(f"{path}: catalog must be a JSON list of object specs")
    return [ObjectSpec.from_json(entry) for entry in data]


def save_catalog(specs: list[ObjectSpec], path: Path) -> None:
    Path(path).write_text(
        json.dumps([s.to_json() for s in specs], indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# Procedural image rendering (for exercising the autoencoder)
# ---------------------------------------------------------------------------

def render_image(spec: ObjectSpec, phase: float = 0.0, size_wh: tuple[int, int] = (32, 24),
                 fill: float | None = None) -> np.ndarray:
    """Procedural [3, H, W] scene in [0, 255]: pot, bowl, and the ingredient.

    Color, size, position, amount, and the surface phase are all visible;
    nothing intrinsic is. Deterministic: no noise.
    """
    w, h = size_wh
    img = np.full((3, h, w), 70.0)
    yy, xx = np.mgrid[0:h, 0:w]

    # table edge gradient
    img[:, :, :] += (yy / h * 20.0)[None, :, :]

    # pot: dark ellipse, upper right quadrant
    pot_cx, pot_cy = 0.68 * w, 0.40 * h
    pot_r = 0.30 * w
    pot = ((xx - pot_cx) ** 2 + (1.4 * (yy - pot_cy)) ** 2) < pot_r ** 2
    img[:, pot] = 40.0

    # bowl: light ellipse, lower left
    bowl_cx, bowl_cy = 0.22 * w, 0.72 * h
    bowl = ((xx - bowl_cx) ** 2 + (1.5 * (yy - bowl_cy)) ** 2) < (0.18 * w) ** 2
    img[:, bowl] = 150.0

    # ingredient blob inside the pot
    c = spec.color
    rgb = np.array([60.0 + 180.0 * c, 60.0 + 150.0 * (1.0 - abs(2.0 * c - 1.0)),
                    210.0 - 170.0 * c])
    f = spec.amount_factor if fill is None else fill
    r = pot_r * (0.35 + 0.45 * spec.size) * (0.6 + 0.4 * f)
    cx = pot_cx + spec.position[0] * 0.25 * pot_r
    cy = pot_cy + spec.position[1] * 0.25 * pot_r
    blob = ((xx - cx) ** 2 + (1.4 * (yy - cy)) ** 2) < r ** 2
    blob &= pot
    for ch in range(3):
        img[ch, blob] = rgb[ch]

    # motion-coupled surface texture
    if spec.cls == "granular":
        tex = 18.0 * np.sin(0.9 * xx + 1.3 * yy + 6.0 * phase)
    elif spec.cls == "block":
        tex = 22.0 * np.sign(np.sin(0.5 * xx + 3.0 * phase) * np.sin(0.6 * yy))
    else:
        tex = 14.0 * np.sin(0.4 * xx + 0.3 * yy + 9.0 * phase)
    tex *= (1.0 - 0.5 * spec.viscosity)
    for ch in range(3):
        img[ch, blob] += tex[blob]

    return np.clip(img, 0.0, 255.0)
