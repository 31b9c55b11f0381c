import json
from pathlib import Path

import numpy as np
import pytest

from motionweave.core import Direction, FrameImage, MotionPlan
from motionweave.errors import (
    BackendError,
    CharacterNotFoundError,
    FrameRangeError,
    NodeSchemaError,
    PlanParseError,
    UsageError,
    VocabularyError,
)
from motionweave.planner import (
    DIRECTION_VOCAB,
    SKELETON_NODES,
    HeadingHint,
    ReplayProvider,
    StubHeadingProvider,
    build_prompt,
    fallback_plan,
    parse_motion_plan,
    parse_skeleton_plan,
    plan_from_prompt,
    resolve_heading,
)

DATA = Path(__file__).parent / "data"
AIRPLANE_PROMPT = "An airplane is landing on the runway."


class TestBuildPrompt:
    def test_moving_objects_command(self):
        text = build_prompt("moving_objects", AIRPLANE_PROMPT)
        assert "identify the moving objects or parts" in text
        assert AIRPLANE_PROMPT in text

    def test_directions_command_lists_vocabulary_and_heading(self):
        hint = HeadingHint(character="airplane", heading=Direction.LEFT)
        text = build_prompt("directions", AIRPLANE_PROMPT, heading=hint, frame_count=8)
        for label in DIRECTION_VOCAB:
            assert f'"{label}"' in text
        assert "for each two frames of 8 frames" in text
        assert "And the airplane is heading towards left." in text

    def test_directions_matches_golden_file(self):
        hint = HeadingHint(character="airplane", heading=Direction.LEFT)
        text = build_prompt("directions", AIRPLANE_PROMPT, heading=hint, frame_count=8)
        assert text == (DATA / "airplane_directions_prompt.txt").read_text()

    def test_empty_prompt_is_usage_error(self):
        with pytest.raises(UsageError):
            build_prompt("directions", "")

    def test_unknown_kind_is_usage_error(self):
        with pytest.raises(UsageError):
            build_prompt("poetry", AIRPLANE_PROMPT)

    def test_heading_cannot_be_motionless(self):
        with pytest.raises(UsageError):
            HeadingHint(character="airplane", heading=Direction.MOTIONLESS)


class TestParseMotionPlan:
    def test_four_groups_expand_to_seven_transitions(self):
        text = "\n".join(['["airplane": "down", "runway": "motionless"]'] * 4)
        plan = parse_motion_plan(text, 8)
        assert plan.names() == ["airplane"]  # motionless runway folds into background
        assert plan.character("airplane").directions == (Direction.DOWN,) * 7

    def test_single_group_two_frames(self):
        plan = parse_motion_plan('["man": "right down"]', 2)
        assert plan.character("man").directions == (Direction.RIGHT_DOWN,)

    def test_unknown_direction_names_token(self):
        with pytest.raises(VocabularyError) as err:
            parse_motion_plan('["man": "sideways"]', 2)
        assert err.value.token == "sideways"

    def test_unparseable_text_carries_byte_offset(self):
        with pytest.raises(PlanParseError) as err:
            parse_motion_plan("no brackets here", 8)
        assert err.value.offset == 0
        with pytest.raises(PlanParseError) as err:
            parse_motion_plan('["man" right]', 8)
        assert err.value.offset > 0

    def test_character_missing_from_a_group_is_motionless_there(self):
        text = '["man": "right", "dog": "left"]\n["man": "right"]'
        plan = parse_motion_plan(text, 5)
        assert plan.character("man").directions == (Direction.RIGHT,) * 4
        assert plan.character("dog").directions == (
            Direction.LEFT,
            Direction.LEFT,
            Direction.MOTIONLESS,
            Direction.MOTIONLESS,
        )

    def test_missing_groups_pad_motionless(self):
        plan = parse_motion_plan('["man": "up"]', 8)
        assert plan.character("man").directions == (Direction.UP,) * 2 + (
            Direction.MOTIONLESS,
        ) * 5

    def test_round_trip_through_serialisation(self):
        text = '["bird": "right up", "cat": "down"]\n["bird": "right up", "cat": "down"]'
        plan = parse_motion_plan(text, 4)
        assert MotionPlan.from_json(plan.to_json()) == plan

    def test_golden_transcript_round_trip(self):
        provider = ReplayProvider(DATA / "airplane_transcript.txt")
        hint = HeadingHint(character="airplane", heading=Direction.LEFT)
        plan = plan_from_prompt(AIRPLANE_PROMPT, 8, provider=provider, heading=hint)
        golden = MotionPlan.from_json((DATA / "airplane_plan.json").read_text())
        assert plan == golden
        assert json.loads(plan.to_json()) == json.loads(golden.to_json())


class TestFallback:
    def test_landing_maps_to_down(self):
        result = fallback_plan("airplane landing on the runway", 8)
        assert result.warning is None
        assert result.plan.names() == ["airplane"]
        assert result.plan.character("airplane").directions == (Direction.DOWN,) * 7

    def test_no_motion_verb_warns(self):
        result = fallback_plan("a man standing", 8)
        assert result.warning is not None
        (track,) = result.plan.characters
        assert track.is_motionless()
        assert track.name == "man standing"

    def test_two_stage_jump_splits_floor_ceil(self):
        result = fallback_plan("a horse jumping over an obstacle", 8)
        assert result.plan.character("horse").directions == (
            (Direction.UP,) * 3 + (Direction.DOWN,) * 4
        )

    def test_pure_function_of_inputs(self):
        a = fallback_plan("a red square moving right", 8)
        b = fallback_plan("a red square moving right", 8)
        assert a.plan == b.plan
        assert a.plan.character("red square").directions == (Direction.RIGHT,) * 7

    def test_custom_lexicon(self):
        result = fallback_plan("a kite soaring", 6, lexicon={"soaring": ("up",)})
        assert result.plan.character("kite").directions == (Direction.UP,) * 5

    def test_empty_lexicon_rejected(self):
        with pytest.raises(UsageError):
            fallback_plan("a kite soaring", 6, lexicon={})


class TestSkeletonParse:
    def test_sample_line(self):
        plan = parse_skeleton_plan("Frame 2: right hand: right", 8)
        assert plan.nodes["right_hand"][0] is Direction.RIGHT
        for node in SKELETON_NODES:
            for k, d in enumerate(plan.nodes[node]):
                if (node, k) != ("right_hand", 0):
                    assert d is Direction.MOTIONLESS

    def test_empty_text_is_all_motionless(self):
        plan = parse_skeleton_plan("", 8)
        assert all(
            d is Direction.MOTIONLESS for dirs in plan.nodes.values() for d in dirs
        )

    def test_frame_out_of_range(self):
        with pytest.raises(FrameRangeError):
            parse_skeleton_plan("Frame 9: head: up", 8)
        with pytest.raises(FrameRangeError):
            parse_skeleton_plan("Frame 1: head: up", 8)

    def test_unknown_node(self):
        with pytest.raises(NodeSchemaError):
            parse_skeleton_plan("Frame 2: tail: up", 8)

    def test_exactly_ten_nodes(self):
        assert len(SKELETON_NODES) == 10
        plan = parse_skeleton_plan("Frame 3: left foot: left\nFrame 4: head: up", 8)
        assert set(plan.nodes) == set(SKELETON_NODES)
        assert plan.nodes["left_foot"][1] is Direction.LEFT
        assert plan.nodes["head"][2] is Direction.UP

    def test_surrounding_chatter_ignored(self):
        text = "Sure! Here is the movement:\nFrame 2: right hand: right\nHope this helps."
        plan = parse_skeleton_plan(text, 8)
        assert plan.nodes["right_hand"][0] is Direction.RIGHT


class TestProviders:
    def test_replay_provider_misses_unknown_prompt(self):
        provider = ReplayProvider(DATA / "airplane_transcript.txt")
        with pytest.raises(BackendError):
            provider.complete("never recorded")

    def test_replay_record_and_read_back(self, tmp_path):
        path = tmp_path / "transcript.txt"
        ReplayProvider.record(path, "ask", "answer\nwith two lines")
        assert ReplayProvider(path).complete("ask") == "answer\nwith two lines"

    def test_stub_heading_provider(self):
        frame = FrameImage(np.zeros((8, 8, 3), dtype=np.uint8))
        provider = StubHeadingProvider({"airplane": Direction.LEFT})
        hint = resolve_heading(frame, "airplane", provider)
        assert hint.heading is Direction.LEFT
        with pytest.raises(CharacterNotFoundError):
            resolve_heading(frame, "ghost", provider)


from hypothesis import given
from hypothesis import strategies as st


@given(
    st.sampled_from(list(Direction)),
    st.sampled_from([" ", "_", "-", "  "]),
    st.booleans(),
)
def test_fuzzy_parsing_never_invents_labels(direction, separator, upper):
    from motionweave.core import parse_direction

    token = direction.value.replace("_", separator)
    if upper:
        token = token.upper()
    assert parse_direction(f" {token} ") is direction


@given(st.text(max_size=20))
def test_arbitrary_text_parses_to_a_label_or_errors(text):
    from motionweave.core import parse_direction

    try:
        result = parse_direction(text)
    except VocabularyError:
        return
    assert result in list(Direction)


def test_http_provider_maps_failures_to_backend_error():
    from motionweave.planner import HttpChatProvider

    provider = HttpChatProvider("http://127.0.0.1:9", timeout=0.2)
    with pytest.raises(BackendError):
        provider.complete("hello")
