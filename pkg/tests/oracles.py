"""Independent reference implementations used as test oracles.

These are deliberately written as straight-line brute force, sharing no
code with the package: a group-by aggregator for downsampling, a window
filter for alert dedup, and a closed-loop Euler integrator with an inline
hysteresis controller for the tank.
"""

from __future__ import annotations


def groupby_downsample(samples: list[tuple[int, str]], t0: int, t1: int,
                       bucket_ms: int) -> list[tuple[int, int, float | None,
                                                     float | None, float | None]]:
    """Brute-force bucket aggregation over (t_ms, value) pairs.

    Returns (start_ms, count, min, max, mean) tuples for nonempty buckets.
    """
    groups: dict[int, list[str]] = {}
    for t, v in samples:
        if t0 <= t < t1:
            k = (t - t0) // bucket_ms
            groups.setdefault(k, []).append(v)
    out = []
    for k in sorted(groups):
        values = groups[k]
        nums = []
        for v in values:
            try:
                nums.append(float(v))
            except ValueError:
                pass
        if nums:
            out.append((t0 + k * bucket_ms, len(values), min(nums), max(nums),
                        sum(nums) / len(nums)))
        else:
            out.append((t0 + k * bucket_ms, len(values), None, None, None))
    return out


def window_filter(raise_times_ms: list[int], window_ms: int) -> list[bool]:
    """Reference dedup: True where a raise would be delivered."""
    decisions = []
    last_delivery = None
    for t in raise_times_ms:
        if last_delivery is None or t - last_delivery >= window_ms:
            decisions.append(True)
            last_delivery = t
        else:
            decisions.append(False)
    return decisions


def closed_loop_pump(duration_s: int, level0: float = 50.0,
                     fill: float = 2.0, drain: float = 0.5,
                     on_below: float = 20.0, off_above: float = 90.0,
                     pump0: bool = False, latch0: bool = False,
                     start_s: int = 0) -> dict:
    """Euler-integrate the tank at 1 s steps with an inline dead-band
    controller: integrate, then sample-and-act, pump effective next step.

    Returns the toggle list [(t_ms, "1"/"0")], the level bounds, and the
    final (level, pump, latch) state.
    """
    level = level0
    pump = pump0
    latch = latch0
    toggles: list[tuple[int, str]] = []
    lo = hi = level
    for step in range(1, duration_s + 1):
        t_s = start_s + step
        level = level + ((fill if pump else 0.0) - drain) * 1.0
        level = min(100.0, max(0.0, level))
        lo = min(lo, level)
        hi = max(hi, level)
        if not latch and level < on_below:
            latch = True
            pump = True
            toggles.append((t_s * 1000, "1"))
        elif latch and level > off_above:
            latch = False
            pump = False
            toggles.append((t_s * 1000, "0"))
    return {"toggles": toggles, "level_min": lo, "level_max": hi,
            "level": level, "pump": pump, "latch": latch}


def trace_interpreter(trace: list[tuple[int, float]], on_when: str,
                      on_th: float, off_th: float,
                      latch0: bool = False) -> list[tuple[int, str]]:
    """Straight-line dead-band interpreter over an explicit input trace."""
    latch = latch0
    actions = []
    for t_ms, v in trace:
        if on_when == "below":
            turn_on, turn_off = v < on_th, v > off_th
        else:
            turn_on, turn_off = v > on_th, v < off_th
        if not latch and turn_on:
            latch = True
            actions.append((t_ms, "1"))
        elif latch and turn_off:
            latch = False
            actions.append((t_ms, "0"))
    return actions
