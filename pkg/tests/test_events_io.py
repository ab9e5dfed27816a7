import numpy as np
import pytest

from eventvo.events import (
    EVENT_DTYPE,
    empty_events,
    make_events,
    read_events_text,
    validate_events,
    write_events_text,
)


def test_make_events_dtype_and_fields():
    ev = make_events([10, 20], [1, 2], [3, 4], [1, -1])
    assert ev.dtype == EVENT_DTYPE
    assert ev["t"].tolist() == [10, 20]
    assert ev["x"].tolist() == [1, 2]
    assert ev["y"].tolist() == [3, 4]
    assert ev["p"].tolist() == [1, -1]


def test_empty_events():
    ev = empty_events()
    assert len(ev) == 0
    assert ev.dtype == EVENT_DTYPE
    validate_events(ev)  # empty stream is valid


def test_validate_rejects_decreasing_timestamps():
    ev = make_events([5, 4], [0, 0], [0, 0], [1, 1])
    with pytest.raises(ValueError, match="non-decreasing"):
        validate_events(ev)


def test_validate_rejects_bad_polarity():
    ev = make_events([0], [0], [0], [0])
    with pytest.raises(ValueError, match="polarity"):
        validate_events(ev)


def test_validate_rejects_out_of_bounds():
    ev = make_events([0], [8], [0], [1])
    with pytest.raises(ValueError):
        validate_events(ev, width=8, height=8)
    ev = make_events([0], [0], [-1], [1])
    with pytest.raises(ValueError):
        validate_events(ev, width=8, height=8)


def test_text_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    n = 500
    t = np.sort(rng.integers(0, 10_000, n))
    ev = make_events(t, rng.integers(0, 64, n), rng.integers(0, 48, n),
                     rng.choice([-1, 1], n))
    path = tmp_path / "events.txt"
    write_events_text(path, ev)
    back = read_events_text(path)
    assert np.array_equal(back, ev)


def test_text_format_is_one_event_per_line(tmp_path):
    ev = make_events([7], [3], [4], [-1])
    path = tmp_path / "one.txt"
    write_events_text(path, ev)
    line = path.read_text().strip()
    assert line.split() == ["7", "3", "4", "-1"]


def test_read_skips_comments_and_blank_lines(tmp_path):
    path = tmp_path / "ev.txt"
    path.write_text("# header\n\n1 2 3 1\n  # indented comment\n4 5 6 -1\n")
    ev = read_events_text(path)
    assert len(ev) == 2
    assert ev["t"].tolist() == [1, 4]


def test_read_rejects_ragged_file(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 2 3\n")
    with pytest.raises(ValueError, match="multiple of 4"):
        read_events_text(path)


def test_read_rejects_non_integer(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 2 3 x\n")
    with pytest.raises(ValueError):
        read_events_text(path)
