import json
import math
import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trpfuse.errors import SchemaError, ValidationError
from trpfuse.ingest import (
    Dialog,
    ParticipantResponses,
    TimelineConfig,
    aggregate_icc_labels,
    build_ccpe_timeline,
    load_ground_truth,
    load_icc_responses,
    load_prediction_stream,
    parse_ccpe,
    store_ground_truth,
    store_prediction_stream,
)
from trpfuse.timeline import FrameStream, GroundTruth


class TestParseCcpe:
    def test_fixture(self, ccpe_bytes):
        dialogs = parse_ccpe(ccpe_bytes)
        assert [d.id for d in dialogs] == ["CCPE-fix1", "CCPE-fix2"]
        assert dialogs[0].utterances == (
            ("ASSISTANT", "What kind of movies do you like?"),
            ("USER", "I really like comedies."),
            ("ASSISTANT", "Why comedies?"),
        )

    def test_empty_array(self):
        assert parse_ccpe(b"[]") == []

    def test_malformed_reports_offset(self):
        with pytest.raises(SchemaError, match="byte offset 12"):
            parse_ccpe(b'[{"a": 1}, {')

    def test_offset_counts_bytes_not_chars(self):
        doc = '["é", '.encode()
        with pytest.raises(SchemaError, match=f"byte offset {len(doc)}"):
            parse_ccpe(doc)

    def test_missing_field_names_dialog(self):
        doc = json.dumps([{"conversationId": "X1", "utterances": [{"speaker": "USER"}]}]).encode()
        with pytest.raises(SchemaError, match="X1.*'text'"):
            parse_ccpe(doc)
        with pytest.raises(SchemaError, match="conversationId"):
            parse_ccpe(b'[{"utterances": []}]')

    @pytest.mark.skipif(not os.environ.get("CCPE_DATA_JSON"), reason="set CCPE_DATA_JSON to the public data.json")
    def test_public_corpus_count(self):
        with open(os.environ["CCPE_DATA_JSON"], "rb") as fh:
            assert len(parse_ccpe(fh.read())) == 502


class TestCcpeTimeline:
    def test_two_turns(self):
        d = Dialog("d", (("USER", "one two three four five"), ("ASSISTANT", "a b c d e")))
        truth, spans = build_ccpe_timeline(d, TimelineConfig())
        assert truth.events.tolist() == [99, 299]
        assert truth.total_frames == 400
        assert [(s, e) for s, e, *_ in spans] == [(0.0, 2.0), (4.0, 6.0)]

    def test_single_word(self):
        truth, _ = build_ccpe_timeline(Dialog("d", (("USER", "hi"),)))
        # 1 word / 2.5 w/s = 0.4 s = 20 frames
        assert truth.events.tolist() == [19]

    def test_empty_dialog(self):
        with pytest.raises(ValidationError):
            build_ccpe_timeline(Dialog("d", ()))

    def test_same_speaker_runs_merge(self, ccpe_bytes):
        d = parse_ccpe(ccpe_bytes)[1]
        truth, spans = build_ccpe_timeline(d)
        assert len(spans) == 2
        assert spans[1][3] == "I saw Arrival. It was great."

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from(["USER", "ASSISTANT"]), st.text("ab ", min_size=0, max_size=30)), min_size=1, max_size=8))
    def test_events_at_turn_ends(self, utts):
        truth, spans = build_ccpe_timeline(Dialog("d", tuple(utts)))
        assert len(truth.events) == len(spans)
        for e, (s, end, *_) in zip(truth.events, spans):
            assert e == round(end * 50) - 1
            assert round(s * 50) <= e


def brute_icc(responses, n, total, agreement, smear):
    """Per-frame coverage count on the smear-padded timeline, runs by scanning."""
    need = max(1, math.ceil(round(agreement * n, 9)))
    frames = range(-smear, total + smear)
    hit = [sum(any(abs(f - r) <= smear for r in resp if r < total) for resp in responses) >= need for f in frames]
    events, k = set(), 0
    while k < len(hit):
        if hit[k]:
            j = k
            while j + 1 < len(hit) and hit[j + 1]:
                j += 1
            events.add(min(max((k + j) // 2 - smear, 0), total - 1))
            k = j + 1
        else:
            k += 1
    return sorted(events)


class TestIcc:
    def test_three_of_ten_agree(self):
        resp = ParticipantResponses(10, ((500,), (505,), (510,)))
        truth = aggregate_icc_labels(resp, 1000)
        assert truth.events.tolist() == [505]
        assert truth.events.tolist() == brute_icc(resp.responses, 10, 1000, 0.3, 37)

    def test_two_of_ten_insufficient(self):
        truth = aggregate_icc_labels(ParticipantResponses(10, ((500,), (500,))), 1000)
        assert truth.events.size == 0

    def test_single_participant(self):
        assert aggregate_icc_labels(ParticipantResponses(1, ((0,),)), 100).events.tolist() == [0]

    def test_zero_frames_rejected(self):
        with pytest.raises(ValidationError):
            aggregate_icc_labels(ParticipantResponses(1, ((0,),)), 0)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.lists(st.integers(0, 299), max_size=4), min_size=1, max_size=6),
        st.sampled_from([0.1, 0.3, 0.5, 1.0]),
        st.integers(0, 20),
    )
    def test_matches_brute_force(self, responses, agreement, smear):
        resp = ParticipantResponses(len(responses), tuple(tuple(r) for r in responses))
        got = aggregate_icc_labels(resp, 300, agreement, smear).events.tolist()
        assert got == brute_icc(responses, len(responses), 300, agreement, smear)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 299), max_size=4), min_size=1, max_size=6))
    def test_higher_agreement_events_nest_in_lower_runs(self, responses):
        # superlevel sets are nested, so a strict event sits on loosely agreed frames
        resp = ParticipantResponses(len(responses), tuple(tuple(r) for r in responses))
        n = len(responses)
        levels = (0.1, 0.3, 0.6, 1.0)
        for lo, hi in zip(levels, levels[1:]):
            need = max(1, math.ceil(round(lo * n, 9)))
            for e in aggregate_icc_labels(resp, 300, hi, 10).events:
                if 0 < e < 299:  # clamped centers may sit off their run
                    cov = sum(any(abs(e - r) <= 10 for r in rs) for rs in responses)
                    assert cov >= need

    def test_higher_agreement_can_split_a_run(self):
        # one loose run [0, 32] becomes two strict runs split at frame 11
        resp = ParticipantResponses(2, ((2,), (0, 22)))
        assert aggregate_icc_labels(resp, 300, 0.5, 10).events.size == 1
        assert aggregate_icc_labels(resp, 300, 1.0, 10).events.size == 2

    def test_full_agreement_single_participant_is_dilated_runs(self):
        resp = ParticipantResponses(1, ((100, 110, 250),))
        # [90,120] and [240,260]
        assert aggregate_icc_labels(resp, 300, 1.0, 10).events.tolist() == [105, 250]

    def test_load_responses(self, tmp_path):
        p = tmp_path / "resp.csv"
        p.write_text("participant_id,response_frame\np1,500\np2,505\np1,900\n")
        resp = load_icc_responses(p, n_participants=10)
        assert resp.n_participants == 10
        assert resp.responses == ((500, 900), (505,))


class TestStreamFiles:
    def test_round_trip(self, tmp_path, rng):
        s = FrameStream(rng.random(100))
        store_prediction_stream(s, tmp_path / "s.csv")
        back = load_prediction_stream(tmp_path / "s.csv")
        assert back.values.tobytes() == s.values.tobytes()

    def test_out_of_range_row(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("frame,prob\n0,0.5\n1,1.5\n")
        with pytest.raises(ValidationError, match=":3: prob 1.5"):
            load_prediction_stream(p)

    def test_density(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("frame,prob\n0,0.1\n1,0.2\n3,0.3\n")
        with pytest.raises(ValidationError, match="missing frame 2"):
            load_prediction_stream(p)

    def test_ground_truth_round_trip(self, tmp_path):
        t = GroundTruth([3, 40, 99], 100)
        store_ground_truth(t, tmp_path / "r.events.csv", tmp_path / "r.meta")
        assert (tmp_path / "r.meta").read_text() == "total_frames=100\n"
        back = load_ground_truth(tmp_path / "r.events.csv", tmp_path / "r.meta")
        assert back.events.tolist() == [3, 40, 99] and back.total_frames == 100
