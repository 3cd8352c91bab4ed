"""Append-only telemetry store with range and downsampling queries.

Storage is newline-delimited TSV, one file per (home, day):

    <data_dir>/<home_id>/<YYYYMMDD>.tsv
    t_ms<TAB>home<TAB>device<TAB>pin<TAB>value

Human-greppable and trivially replayable; adequate at 1 Hz times tens of
pins.  Values are escaped on write (\\ \t \n \r) so arbitrary device
strings cannot break record framing; `export` emits stored lines verbatim.
Single writer per file, any number of readers.
"""

from __future__ import annotations

import os
from bisect import bisect_left
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

MS_PER_DAY = 86_400_000


class OrderError(Exception):
    """Append behind the (home, pin) stream head; caller drops or clamps."""


class QueryError(Exception):
    """Malformed query range."""


@dataclass(frozen=True)
class Sample:
    t_ms: int
    home_id: str
    device_id: str
    pin: int
    value: str


@dataclass(frozen=True)
class Bucket:
    start_ms: int
    count: int
    min: float | None
    max: float | None
    mean: float | None


def _escape(value: str) -> str:
    if "\\" in value or "\t" in value or "\n" in value or "\r" in value:
        value = (value.replace("\\", "\\\\").replace("\t", "\\t")
                 .replace("\n", "\\n").replace("\r", "\\r"))
    return value


def _unescape(value: str) -> str:
    if "\\" not in value:
        return value
    out = []
    i = 0
    while i < len(value):
        c = value[i]
        if c == "\\" and i + 1 < len(value):
            nxt = value[i + 1]
            out.append({"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def format_record(sample: Sample) -> str:
    """One TSV line, without the trailing newline."""
    return (f"{sample.t_ms}\t{sample.home_id}\t{sample.device_id}"
            f"\t{sample.pin}\t{_escape(sample.value)}")


def parse_record(line: str) -> Sample:
    t_ms, home, device, pin, value = line.rstrip("\n").split("\t", 4)
    return Sample(int(t_ms), home, device, int(pin), _unescape(value))


def _day_name(t_ms: int) -> str:
    return datetime.fromtimestamp(t_ms // 1000, tz=timezone.utc).strftime("%Y%m%d")


class TelemetryStore:
    """Durable append-only sample log with an in-memory query index."""

    def __init__(self, data_dir: str | os.PathLike):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        # (home, pin) -> parallel lists of timestamps and samples, ascending
        self._times: dict[tuple[str, int], list[int]] = {}
        self._samples: dict[tuple[str, int], list[Sample]] = {}
        self._files: dict[tuple[str, str], object] = {}
        self._load()

    def _load(self) -> None:
        for home_dir in sorted(p for p in self.data_dir.iterdir() if p.is_dir()):
            for day_file in sorted(home_dir.glob("*.tsv")):
                with open(day_file, encoding="utf-8") as f:
                    for line in f:
                        if line.strip():
                            self._index(parse_record(line))

    def _index(self, sample: Sample) -> None:
        key = (sample.home_id, sample.pin)
        self._times.setdefault(key, []).append(sample.t_ms)
        self._samples.setdefault(key, []).append(sample)

    def last_t_ms(self, home_id: str, pin: int) -> int | None:
        times = self._times.get((home_id, pin))
        return times[-1] if times else None

    def append(self, sample: Sample) -> None:
        """Durably append one sample; out-of-order appends raise OrderError."""
        last = self.last_t_ms(sample.home_id, sample.pin)
        if last is not None and sample.t_ms < last:
            raise OrderError(
                f"{sample.home_id}/pin{sample.pin}: t={sample.t_ms} behind {last}")
        day = _day_name(sample.t_ms)
        fkey = (sample.home_id, day)
        fh = self._files.get(fkey)
        if fh is None:
            home_dir = self.data_dir / sample.home_id
            home_dir.mkdir(exist_ok=True)
            fh = open(home_dir / f"{day}.tsv", "a", encoding="utf-8")
            self._files[fkey] = fh
        fh.write(format_record(sample) + "\n")
        self._index(sample)

    def query_range(self, home_id: str, pin: int, t0: int, t1: int) -> list[Sample]:
        """All samples with t0 <= t < t1, ascending; raises QueryError if t0 > t1."""
        if t0 > t1:
            raise QueryError(f"t0 {t0} > t1 {t1}")
        key = (home_id, pin)
        times = self._times.get(key)
        if not times:
            return []
        lo = bisect_left(times, t0)
        hi = bisect_left(times, t1)
        return self._samples[key][lo:hi]

    def downsample(self, home_id: str, pin: int, t0: int, t1: int,
                   bucket_ms: int) -> list[Bucket]:
        """Aggregate [t0, t1) into buckets aligned to t0 + k*bucket_ms.

        Empty buckets are omitted.  Non-numeric values count toward
        bucket.count but are excluded from min/max/mean.
        """
        if bucket_ms < 1000:
            raise QueryError(f"bucket_ms {bucket_ms} below 1000")
        samples = self.query_range(home_id, pin, t0, t1)
        buckets: list[Bucket] = []
        idx = -1
        count = 0
        vals: list[float] = []
        start = 0

        def close():
            if count:
                if vals:
                    buckets.append(Bucket(start, count, min(vals), max(vals),
                                          sum(vals) / len(vals)))
                else:
                    buckets.append(Bucket(start, count, None, None, None))

        for s in samples:
            k = (s.t_ms - t0) // bucket_ms
            if k != idx:
                close()
                idx = k
                start = t0 + k * bucket_ms
                count = 0
                vals = []
            count += 1
            try:
                vals.append(float(s.value))
            except ValueError:
                pass
        close()
        return buckets

    def latest(self, home_id: str, pin: int) -> Sample | None:
        samples = self._samples.get((home_id, pin))
        return samples[-1] if samples else None

    def pins(self, home_id: str) -> list[int]:
        return sorted(p for h, p in self._times if h == home_id)

    def total_samples(self) -> int:
        return sum(len(v) for v in self._samples.values())

    def flush(self) -> None:
        for fh in self._files.values():
            fh.flush()

    def close(self) -> None:
        for fh in self._files.values():
            fh.close()
        self._files.clear()

    def __enter__(self) -> "TelemetryStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def export_lines(data_dir: str | os.PathLike, home_id: str, pin: int | None = None,
                 t0: int | None = None, t1: int | None = None):
    """Yield stored TSV lines for a home, filtered, in query order.

    Reads the files directly (no store instance needed) and emits the
    stored record text verbatim, so exported output re-ingests losslessly.
    """
    home_dir = Path(data_dir) / home_id
    if not home_dir.is_dir():
        return
    for day_file in sorted(home_dir.glob("*.tsv")):
        with open(day_file, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                s = parse_record(line)
                if pin is not None and s.pin != pin:
                    continue
                if t0 is not None and s.t_ms < t0:
                    continue
                if t1 is not None and s.t_ms >= t1:
                    continue
                yield line
