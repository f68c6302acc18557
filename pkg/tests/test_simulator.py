import numpy as np
import pytest

from toolsense.dataset import ChannelLayout
from toolsense.numerics.seeding import child_seed
from toolsense.simulator import (
    LADLE,
    TURNER,
    LiveSession,
    ObjectSpec,
    SimulatorError,
    StageScore,
    TrialTiming,
    canonical_commands,
    generate_trial,
    grip_command,
    heldout_catalog,
    load_catalog,
    render_image,
    save_catalog,
    scoop_inclination,
    score_margins,
    score_rollout,
    stir_commands,
    training_catalog,
)

DESK = TrialTiming(60, 120)


def run_canonical(spec, seed=5, timing=DESK, tool=None):
    session = LiveSession(spec, seed, timing)
    cmds = canonical_commands(spec, timing, tool=tool)
    for t in range(timing.total):
        session.step(cmds[t, :7], cmds[t, 7])
    return session


class TestObjectSpec:
    def test_tool_follows_class(self):
        for spec in training_catalog():
            expected = TURNER if spec.cls == "block" else LADLE
            assert spec.tool == expected
        for spec in heldout_catalog():
            if spec.cls == "liquid":
                assert spec.tool == LADLE

    def test_parameter_validation(self):
        with pytest.raises(SimulatorError):
            ObjectSpec("bad", "granular", 1.5, 0.5, (0, 0), 0.5, 0.5, 0.5)
        with pytest.raises(SimulatorError):
            ObjectSpec("bad", "paste", 0.5, 0.5, (0, 0), 0.5, 0.5, 0.5)

    def test_json_roundtrip(self, tmp_path):
        specs = training_catalog()
        path = tmp_path / "catalog.json"
        save_catalog(specs, path)
        loaded = load_catalog(path)
        assert loaded == specs

    def test_timing_split(self):
        assert TrialTiming.from_total(434) == TrialTiming(142, 292)
        assert TrialTiming.from_total(180) == TrialTiming(60, 120)


class TestGenerateTrial:
    def test_deterministic_bit_identical(self):
        spec = training_catalog()[0]
        a = generate_trial(spec, 9, DESK)
        b = generate_trial(spec, 9, DESK)
        np.testing.assert_array_equal(a.sequence.data, b.sequence.data)

    def test_color_only_change_touches_image_head_only(self):
        base = training_catalog()[1]
        other = ObjectSpec(base.id, base.cls, 0.95, base.size, base.position,
                           base.weight, base.friction, base.viscosity, base.amount)
        a = generate_trial(base, 4, DESK).sequence
        b = generate_trial(other, 4, DESK).sequence
        np.testing.assert_array_equal(a.channels("force"), b.channels("force"))
        np.testing.assert_array_equal(a.channels("tactile"), b.channels("tactile"))
        np.testing.assert_array_equal(a.channels("motor"), b.channels("motor"))
        img_a, img_b = a.channels("image"), b.channels("image")
        assert np.abs(img_a[:, :5] - img_b[:, :5]).max() > 0.05
        np.testing.assert_array_equal(img_a[:, 5:], img_b[:, 5:])

    def test_weight_only_change_spares_image(self):
        base = training_catalog()[1]
        other = ObjectSpec(base.id, base.cls, base.color, base.size, base.position,
                           0.95, base.friction, base.viscosity, base.amount)
        a = generate_trial(base, 4, DESK).sequence
        b = generate_trial(other, 4, DESK).sequence
        np.testing.assert_array_equal(a.channels("image"), b.channels("image"))
        assert np.abs(a.channels("force") - b.channels("force")).max() > 0.01

    def test_training_matrix_has_48_distinct_trials(self):
        rows = []
        for spec in training_catalog():
            for amount in ("small", "large"):
                s = spec.with_amount(amount)
                for k in range(4):
                    seed = child_seed(1234, s.id, amount, k)
                    rows.append(generate_trial(s, seed, DESK).sequence)
        assert len(rows) == 48
        flat = [tuple(r.data[:3].ravel()) for r in rows]
        assert len(set(flat)) == 48

    def test_stir_motor_identical_across_specs(self):
        seqs = [generate_trial(s, 11, DESK).sequence for s in training_catalog()]
        base_motor = seqs[0].channels("motor")[:DESK.t_ap]
        base_grip = seqs[0].channels("grip")[:DESK.t_ap]
        for seq in seqs[1:]:
            np.testing.assert_array_equal(seq.channels("motor")[:DESK.t_ap], base_motor)
            np.testing.assert_array_equal(seq.channels("grip")[:DESK.t_ap], base_grip)

    def test_phase_boundary_recorded(self):
        rec = generate_trial(training_catalog()[0], 2, DESK)
        assert rec.sequence.t_ap == DESK.t_ap
        assert rec.sequence.steps == DESK.total

    def test_command_monotonicities(self):
        # inclination decreases with viscosity, grip strength rises with w*f
        assert scoop_inclination(LADLE, 0.2) > scoop_inclination(LADLE, 0.8)
        assert scoop_inclination(TURNER, 0.2) > scoop_inclination(TURNER, 0.8)
        assert grip_command(0.9, 0.9) > grip_command(0.2, 0.2)


class TestLiveSession:
    def test_replaying_recorded_motor_reproduces_sensors(self):
        spec = training_catalog()[2]
        rec = generate_trial(spec, 21, DESK).sequence
        session = LiveSession(spec, 21, DESK)
        motor = rec.channels("motor")
        grip = rec.channels("grip")[:, 0]
        frames = np.stack([session.step(motor[t], grip[t]) for t in range(DESK.total)])
        recorded = np.hstack([rec.channels("image"), rec.channels("tactile"),
                              rec.channels("force")])
        assert np.abs(frames - recorded).max() < 1e-9

    def test_out_of_range_commands_clamped_and_flagged(self):
        session = LiveSession(training_catalog()[0], 1, DESK)
        session.step(np.full(7, 9.0), 0.5)
        assert session.transcript.clamped_steps == 1
        assert np.abs(session.transcript.motor[0]).max() <= 1.6

    def test_exhaustion_raises(self):
        timing = TrialTiming(5, 12)
        session = LiveSession(training_catalog()[0], 1, timing)
        for _ in range(timing.total):
            session.step(np.zeros(7), 0.0)
        assert session.exhausted
        with pytest.raises(SimulatorError, match="exhausted"):
            session.step(np.zeros(7), 0.0)

    def test_weak_grip_during_carry_spills(self):
        spec = training_catalog()[2].with_amount("large")
        timing = DESK
        session = LiveSession(spec, 5, timing)
        cmds = canonical_commands(spec, timing)
        drop_after = timing.t_ap + int(0.62 * timing.t_motion)
        for t in range(timing.total):
            strength = cmds[t, 7] if t <= drop_after else 0.05
            session.step(cmds[t, :7], strength)
        assert session.transcript.spilled
        score = score_rollout(session)
        assert score.pick_up and not score.pour


class TestScoring:
    @pytest.mark.parametrize("timing", [DESK, TrialTiming(142, 292)],
                             ids=["desk", "paper"])
    def test_canonical_runs_pass_all_stages_with_margin(self, timing):
        for spec in training_catalog():
            for amount in ("small", "large"):
                s = spec.with_amount(amount)
                session = run_canonical(s, timing=timing)
                score = score_rollout(session)
                assert score.all_stages, f"{s.id} {amount} failed {score.as_tuple()}"
                margins = score_margins(session)
                low = min(margins.values())
                assert low >= 0.2, f"{s.id} {amount} margin {margins}"

    def test_wrong_tool_fails_pickup(self):
        block = next(s for s in training_catalog() if s.cls == "block")
        session = run_canonical(block, tool=LADLE)
        score = score_rollout(session)
        assert not score.pick_up

    def test_zero_motion_fails_everything(self):
        session = LiveSession(training_catalog()[0], 3, DESK)
        for _ in range(DESK.total):
            session.step(np.zeros(7), 0.0)
        assert score_rollout(session).as_tuple() == (False, False, False, False)

    def test_incomplete_transcript_rejected(self):
        session = LiveSession(training_catalog()[0], 3, DESK)
        session.step(np.zeros(7), 0.0)
        with pytest.raises(SimulatorError, match="incomplete"):
            score_rollout(session)

    def test_stage_monotonicity_enforced(self):
        with pytest.raises(SimulatorError):
            StageScore(tool_selection=False, tool_grasping=True,
                       pick_up=False, pour=False)


class TestStirProgram:
    def test_identical_across_calls(self):
        np.testing.assert_array_equal(stir_commands(DESK), stir_commands(DESK))

    def test_shorter_stir_is_prefix_of_longer(self):
        a = stir_commands(TrialTiming(60, 120))
        b = stir_commands(TrialTiming(142, 292))
        np.testing.assert_allclose(a, b[:60], atol=1e-12)


class TestRenderImage:
    def test_shape_and_range(self):
        img = render_image(training_catalog()[0])
        assert img.shape == (3, 24, 32)
        assert img.min() >= 0.0 and img.max() <= 255.0

    def test_color_changes_pixels(self):
        base = training_catalog()[0]
        other = ObjectSpec("x", base.cls, 0.05, base.size, base.position,
                           base.weight, base.friction, base.viscosity)
        assert np.abs(render_image(base) - render_image(other)).max() > 20.0

    def test_deterministic(self):
        spec = training_catalog()[1]
        np.testing.assert_array_equal(render_image(spec, 0.3), render_image(spec, 0.3))

    def test_phase_animates_surface(self):
        spec = training_catalog()[0]
        assert np.abs(render_image(spec, 0.0) - render_image(spec, 0.5)).max() > 1.0
