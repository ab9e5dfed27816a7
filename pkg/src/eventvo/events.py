"""Event stream representation and the plain-text event file format.

An event stream is a structured array with fields t (integer microseconds,
non-decreasing), pixel coordinates x, y, and polarity p in {-1, +1}. The text
format is one event per line: "t_us x y p", space separated.
"""

from __future__ import annotations

import numpy as np

EVENT_DTYPE = np.dtype([("t", "<i8"), ("x", "<i4"), ("y", "<i4"), ("p", "<i1")])


def make_events(t, x, y, p):
    t = np.asarray(t)
    out = np.empty(t.shape, dtype=EVENT_DTYPE)
    out["t"] = t
    out["x"] = x
    out["y"] = y
    out["p"] = p
    return out


def empty_events():
    return np.empty(0, dtype=EVENT_DTYPE)


def validate_events(events, width=None, height=None):
    """Raise ValueError on non-monotone timestamps, bad polarity or bounds."""
    if events.dtype != EVENT_DTYPE:
        raise ValueError(f"expected event dtype {EVENT_DTYPE}, got {events.dtype}")
    if len(events) == 0:
        return
    if np.any(np.diff(events["t"]) < 0):
        raise ValueError("event timestamps must be non-decreasing")
    if not np.all(np.abs(events["p"]) == 1):
        raise ValueError("event polarity must be -1 or +1")
    if width is not None:
        if np.any(events["x"] < 0) or np.any(events["x"] >= width):
            raise ValueError(f"event x coordinate outside [0, {width})")
    if height is not None:
        if np.any(events["y"] < 0) or np.any(events["y"] >= height):
            raise ValueError(f"event y coordinate outside [0, {height})")


def write_events_text(path, events):
    cols = np.stack(
        [events["t"], events["x"], events["y"], events["p"]]
    ).T.astype(np.int64)
    np.savetxt(path, cols, fmt="%d")


def read_events_text(path):
    with open(path, "r") as f:
        tokens = [
            tok
            for line in f
            if line.strip() and not line.lstrip().startswith("#")
            for tok in line.split()
        ]
    if not tokens:
        return empty_events()
    if len(tokens) % 4:
        raise ValueError(f"{path}: token count not a multiple of 4")
    try:
        flat = np.array(tokens, dtype=np.int64)
    except ValueError as exc:
        raise ValueError(f"{path}: non-integer event field ({exc})") from exc
    rows = flat.reshape(-1, 4)
    events = make_events(rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3])
    validate_events(events)
    return events
