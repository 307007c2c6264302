import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keydyn.dataset import (
    DEFAULT_COLUMNS,
    DatasetSplit,
    ImportReport,
    KeyEvent,
    KeystrokeSession,
    by_subject,
    generate_synthetic,
    import_sessions,
    read_sessions,
    split_subjects,
    subjects_of,
    write_sessions,
)
from keydyn.errors import ConfigurationError, DataError


def make_session(subject="s0", session="0", n=3, step=100, hold=50):
    events = tuple(KeyEvent(65 + i, i * step, i * step + hold) for i in range(n))
    return KeystrokeSession(subject, session, events)


class TestKeyEvent:
    def test_valid(self):
        e = KeyEvent(65, 10, 90)
        assert (e.keycode, e.press_ms, e.release_ms) == (65, 10, 90)

    @pytest.mark.parametrize("code", [-1, 256, 1000])
    def test_keycode_out_of_range(self, code):
        with pytest.raises(ValueError):
            KeyEvent(code, 0, 1)

    def test_release_before_press(self):
        with pytest.raises(ValueError):
            KeyEvent(65, 100, 99)

    def test_zero_hold_allowed(self):
        assert KeyEvent(65, 5, 5).release_ms == 5


class TestKeystrokeSession:
    def test_too_short(self):
        with pytest.raises(ValueError):
            KeystrokeSession("s", "0", (KeyEvent(65, 0, 10),))

    def test_unsorted_events_rejected(self):
        events = (KeyEvent(65, 100, 150), KeyEvent(66, 0, 50))
        with pytest.raises(ValueError):
            KeystrokeSession("s", "0", events)

    def test_len(self):
        assert len(make_session(n=7)) == 7


class TestSynthetic:
    def test_counts_and_ids(self):
        sessions = generate_synthetic(3, 4, 10, seed=0)
        assert len(sessions) == 12
        assert all(len(s) == 10 for s in sessions)
        assert subjects_of(sessions) == ["synth-0000", "synth-0001", "synth-0002"]

    def test_deterministic(self):
        assert generate_synthetic(2, 3, 8, seed=5) == generate_synthetic(2, 3, 8, seed=5)

    def test_seed_changes_data(self):
        assert generate_synthetic(2, 3, 8, seed=5) != generate_synthetic(2, 3, 8, seed=6)

    def test_event_sanity(self):
        for s in generate_synthetic(2, 2, 30, seed=1):
            presses = [e.press_ms for e in s.events]
            assert presses[0] == 0
            assert all(b > a for a, b in zip(presses, presses[1:]))  # strictly advancing
            assert all(e.release_ms > e.press_ms for e in s.events)
            assert all(32 <= e.keycode <= 126 for e in s.events)

    @pytest.mark.parametrize("bad", [(0, 1, 5), (1, 0, 5), (1, 1, 1)])
    def test_invalid_counts(self, bad):
        with pytest.raises(ValueError):
            generate_synthetic(*bad, seed=0)


@settings(max_examples=25, deadline=None)
@given(
    n_subjects=st.integers(1, 4),
    per=st.integers(1, 4),
    keys=st.integers(2, 12),
    seed=st.integers(0, 10_000),
)
def test_jsonl_round_trip_identity(tmp_path_factory, n_subjects, per, keys, seed):
    """write -> read returns an equal corpus (values, order, ids)."""
    path = tmp_path_factory.mktemp("rt") / "sessions.jsonl"
    sessions = generate_synthetic(n_subjects, per, keys, seed)
    write_sessions(sessions, path)
    assert read_sessions(path) == sessions


def test_read_sessions_missing_file(tmp_path):
    with pytest.raises(DataError):
        read_sessions(tmp_path / "nope.jsonl")


def test_read_sessions_bad_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"subject_id": "a"}\n')
    with pytest.raises(DataError, match="bad session record"):
        read_sessions(p)


class TestImport:
    HEADER = "participant\tsection\tkeycode\tpress\trelease"

    def _write(self, tmp_path, rows, header=None):
        p = tmp_path / "log.tsv"
        p.write_text("\n".join([header or self.HEADER] + rows) + "\n")
        return p

    def test_basic_grouping_and_normalization(self, tmp_path):
        rows = [
            "p1\t1\t65\t5000\t5100",
            "p1\t1\t66\t5200\t5300",
            "p1\t2\t65\t9000\t9050",
            "p1\t2\t67\t9100\t9200",
        ]
        report = import_sessions(self._write(tmp_path, rows))
        assert len(report.sessions) == 2
        first = report.sessions[0]
        # timestamps are rebased to the session's first press
        assert first.events[0].press_ms == 0
        assert first.events[1].press_ms == 200

    def test_rows_out_of_order_are_sorted(self, tmp_path):
        rows = [
            "p1\t1\t66\t5200\t5300",
            "p1\t1\t65\t5000\t5100",
        ]
        report = import_sessions(self._write(tmp_path, rows))
        assert [e.keycode for e in report.sessions[0].events] == [65, 66]

    def test_bad_rows_skipped_and_counted(self, tmp_path):
        rows = [
            "p1\t1\t65\t0\t100",
            "p1\t1\tnot_a_number\t10\t20",
            "p1\t1\t66\t200\t300",
        ]
        report = import_sessions(self._write(tmp_path, rows))
        assert report.skipped_rows == 1
        assert len(report.sessions[0].events) == 2

    def test_short_sessions_dropped_and_counted(self, tmp_path):
        rows = [
            "p1\t1\t65\t0\t100",
            "p1\t2\t65\t0\t100",
            "p1\t2\t66\t200\t300",
        ]
        report = import_sessions(self._write(tmp_path, rows))
        assert report.dropped_sessions == 1
        assert len(report.sessions) == 1

    def test_comma_delimiter_sniffed(self, tmp_path):
        p = tmp_path / "log.csv"
        p.write_text(
            "participant,section,keycode,press,release\n"
            "p1,1,65,0,100\n"
            "p1,1,66,150,250\n"
        )
        report = import_sessions(p)
        assert len(report.sessions) == 1

    def test_column_map(self, tmp_path):
        header = "user\tblock\tkeycode\tpress\trelease"
        rows = ["u9\t1\t65\t0\t100", "u9\t1\t66\t150\t250"]
        report = import_sessions(
            self._write(tmp_path, rows, header=header),
            column_map={"subject": "user", "session": "block"},
        )
        assert report.sessions[0].subject_id == "u9"

    def test_missing_column_is_configuration_error(self, tmp_path):
        header = "participant\tsection\tkeycode\tpress"
        with pytest.raises(ConfigurationError, match="missing columns"):
            import_sessions(self._write(tmp_path, ["p\t1\t65\t0"], header=header))

    def test_unknown_column_map_key(self, tmp_path):
        p = self._write(tmp_path, ["p\t1\t65\t0\t10"])
        with pytest.raises(ConfigurationError, match="unknown column-map"):
            import_sessions(p, column_map={"bogus": "x"})

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            import_sessions(tmp_path / "absent.tsv")


class TestSplit:
    def test_disjoint_and_sized(self):
        sessions = generate_synthetic(6, 2, 5, seed=2)
        split = split_subjects(sessions, n_train=4, seed=0)
        assert len(split.train_subjects) == 4
        assert len(split.eval_subjects) == 2
        assert not (split.train_subjects & split.eval_subjects)

    def test_deterministic(self):
        sessions = generate_synthetic(6, 2, 5, seed=2)
        assert split_subjects(sessions, 3, seed=7) == split_subjects(sessions, 3, seed=7)

    @pytest.mark.parametrize("n_train", [0, 6, 7])
    def test_bad_sizes(self, n_train):
        sessions = generate_synthetic(6, 2, 5, seed=2)
        with pytest.raises(ValueError):
            split_subjects(sessions, n_train, seed=0)

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            DatasetSplit(frozenset({"a"}), frozenset({"a", "b"}))


def test_by_subject_sorted_by_session_id():
    s1 = make_session("s0", "02")
    s2 = make_session("s0", "01")
    s3 = make_session("s1", "01")
    groups = by_subject([s1, s2, s3])
    assert [s.session_id for s in groups["s0"]] == ["01", "02"]
    assert set(groups) == {"s0", "s1"}
