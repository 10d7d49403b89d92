from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from translog.logformat import LineFormat, LineFormatError, is_alert
from translog.sessionizer import (LabeledLine, Session, SessionError, chrono_split, group_sessions,
                                  label_counts, labeled_lines, read_sessions, truncate,
                                  window_sessions, write_sessions)


def lines_of(n, anomalous=()):
    return labeled_lines(list(range(n)), [i in set(anomalous) for i in range(n)])


def test_window_sizes_and_partial_tail():
    sessions = window_sessions(lines_of(45), 20)
    assert [len(s.template_ids) for s in sessions] == [20, 20, 5]
    assert [s.first_index for s in sessions] == [0, 20, 40]


def test_one_anomalous_line_marks_window():
    sessions = window_sessions(lines_of(20, anomalous=[13]), 20)
    assert len(sessions) == 1 and sessions[0].label


def test_all_normal_windows():
    sessions = window_sessions(lines_of(40), 20)
    assert len(sessions) == 2 and not any(s.label for s in sessions)


def test_window_size_validated():
    with pytest.raises(SessionError):
        window_sessions(lines_of(5), 0)


def test_group_sessions_keys_in_first_seen_order():
    lines = [LabeledLine(0, 7, False, group_key="A"), LabeledLine(1, 8, True, group_key="B"),
             LabeledLine(2, 9, False, group_key="A")]
    sessions = group_sessions(lines, r"unused")
    assert [s.origin for s in sessions] == ["A", "B"]
    assert sessions[0].template_ids == [7, 9] and sessions[1].label


def test_group_sessions_single_key_and_regex():
    lines = labeled_lines([1, 2, 3], [False] * 3,
                          ["read blk_1 ok", "write blk_1", "close blk_1"])
    sessions = group_sessions(lines, r"(blk_\d+)")
    assert len(sessions) == 1 and sessions[0].origin == "blk_1"
    with pytest.raises(SessionError, match="no group keys"):
        group_sessions(lines, r"nomatch")


def test_group_sessions_hundred_keys_seven_anomalous():
    bad = {3, 11, 25, 40, 58, 77, 99}
    contents, labels = [], []
    for rep in range(3):
        for k in range(100):
            contents.append(f"event on blk_{k}")
            labels.append(k in bad and rep == 1)
    sessions = group_sessions(labeled_lines([0] * 300, labels, contents), r"blk_\d+")
    assert len(sessions) == 100
    assert sum(s.label for s in sessions) == 7


def test_chrono_split_sizes():
    ten = window_sessions(lines_of(200), 20)
    train, test = chrono_split(ten, 0.8)
    assert len(train) == 8 and len(test) == 2
    five = window_sessions(lines_of(100), 20)
    assert tuple(map(len, chrono_split(five, 0.8))) == (4, 1)
    with pytest.raises(SessionError):
        chrono_split(ten[:1])
    with pytest.raises(SessionError):
        chrono_split(ten, 1.0)


@given(st.integers(2, 300), st.integers(1, 30), st.floats(0.05, 0.95))
def test_split_is_chronological_and_complete(n_lines, window, frac):
    sessions = window_sessions(lines_of(n_lines), window)
    if len(sessions) < 2:
        return
    train, test = chrono_split(list(reversed(sessions)), frac)
    assert len(train) + len(test) == len(sessions)
    if train and test:
        assert max(s.first_index for s in train) < min(s.first_index for s in test)


@given(st.integers(1, 200), st.integers(1, 25), st.sets(st.integers(0, 199)))
def test_windows_partition_lines(n, window, anomalous):
    sessions = window_sessions(lines_of(n, anomalous), window)
    assert sum(len(s.template_ids) for s in sessions) == n
    assert [t for s in sessions for t in s.template_ids] == list(range(n))
    for s in sessions:
        span = range(s.first_index, s.first_index + len(s.template_ids))
        assert s.label == any(i in anomalous for i in span)


def test_truncate_and_counts():
    s = Session(list(range(25)), True)
    assert truncate(s, 20).template_ids == list(range(20))
    assert label_counts([s, Session([1], False)]) == {"anomalous": 1, "normal": 1}


def test_round_trip(tmp_path):
    sessions = window_sessions(lines_of(45, [3]), 20, "dom")
    write_sessions(tmp_path / "s.jsonl", sessions)
    assert read_sessions(tmp_path / "s.jsonl") == sessions


def test_length_mismatch():
    with pytest.raises(SessionError):
        labeled_lines([1, 2], [True])


def test_line_format():
    fmt = LineFormat.parse("<Label> <Timestamp> <Content>")
    row = fmt.split("- 1117838570 send block 5")
    assert row == {"Label": "-", "Timestamp": "1117838570", "Content": "send block 5"}
    assert not is_alert(row["Label"]) and is_alert("KERNDTLB")
    with pytest.raises(LineFormatError):
        fmt.split("-")
    with pytest.raises(LineFormatError):
        LineFormat.parse("<Content> <Label>")
