"""Measurement scheduler: runs throughput probes between endpoints.

A coordinator owns the schedule. Every `interval_s` it queues each
measurable path, in an order that rotates slowly from tick to tick, and
dispatches measurements whenever both ends are idle, so no endpoint ever
takes part in two transfers at once. Completed measurements flow back to
the coordinator, which is the only writer to the dataset sink.

Two runners are provided: `CommandRunner` shells out to a measurement
tool and parses its report, and `SimulatedRunner` draws measurements from
a scenario on a virtual clock.
"""
from __future__ import annotations

import heapq
import json
import logging
import math
import os
import re
import shlex
import socket
import subprocess
import time
from collections import deque
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

from .core_model import BandwidthSample, Catalog, Path

log = logging.getLogger("cloudbench.probe")

DEFAULT_COMMAND = "iperf -c {dst_host} -p {dst_port} -t {duration} -i 1 -w {window} -f m"
# "[  3]  0.0- 1.0 sec   13.4 MBytes   112 Mbits/sec"
DEFAULT_PATTERN = (
    r"(?P<start>\d+(?:\.\d+)?)\s*-\s*(?P<end>\d+(?:\.\d+)?)\s*sec\b.*?"
    r"(?P<value>\d+(?:\.\d+)?)\s*(?P<unit>[KMG]?)bits/sec"
)
UNIT_SCALE = {"": 1e-6, "K": 1e-3, "M": 1.0, "G": 1e3}


class ProbeError(Exception):
    pass


class ConfigError(ProbeError, ValueError):
    pass


class RunnerParseError(ProbeError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class EndpointUnreachable(ProbeError):
    pass


class CampaignAborted(ProbeError):
    pass


def configure_logging(env: Mapping[str, str] | None = None) -> None:
    """Set the package log level from CLOUDBENCH_LOG (name or number)."""
    env = os.environ if env is None else env
    level = env.get("CLOUDBENCH_LOG", "WARNING").strip().upper()
    value = int(level) if level.isdigit() else getattr(logging, level, logging.WARNING)
    logging.basicConfig(format="%(asctime)s %(name)s %(levelname)s %(message)s")
    logging.getLogger("cloudbench").setLevel(value)


# -- configuration ------------------------------------------------------------------

@dataclass
class ProbeConfig:
    endpoints: dict[str, str]
    duration_s: int = 300
    interval_s: int = 3600
    window: str = "16M"
    max_concurrency: int | None = None
    command: str = DEFAULT_COMMAND
    pattern: str = DEFAULT_PATTERN
    preflight_timeout_s: float = 5.0
    ticks: int = 1
    start_utc: int | None = None

    def validate(self, catalog: Catalog | None = None) -> None:
        if len(self.endpoints) < 2:
            raise ConfigError("need at least two endpoints")
        if self.duration_s <= 0 or self.interval_s <= 0:
            raise ConfigError("duration_s and interval_s must be positive")
        if self.duration_s > self.interval_s:
            raise ConfigError(f"duration_s ({self.duration_s}) exceeds interval_s ({self.interval_s})")
        if self.max_concurrency is not None and self.max_concurrency < 1:
            raise ConfigError("max_concurrency must be >= 1")
        if self.ticks < 1:
            raise ConfigError("ticks must be >= 1")
        for dc_id, addr in self.endpoints.items():
            if catalog is not None and dc_id not in catalog:
                raise ConfigError(f"endpoint {dc_id!r} is not in the catalog")
            host, _, port = addr.rpartition(":")
            if not host or not port.isdigit():
                raise ConfigError(f"endpoint {dc_id!r}: expected host:port, got {addr!r}")
        try:
            re.compile(self.pattern)
        except re.error as exc:
            raise ConfigError(f"bad extraction pattern: {exc}") from exc

    def paths(self) -> list[Path]:
        ids = list(self.endpoints)
        return [Path(a, b) for a in ids for b in ids if a != b]

    def address(self, dc_id: str) -> tuple[str, int]:
        host, _, port = self.endpoints[dc_id].rpartition(":")
        return host, int(port)

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "ProbeConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "endpoints" not in doc:
            raise ConfigError("config needs an endpoints map")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ProbeConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


# -- runner output --------------------------------------------------------------------

@dataclass(frozen=True)
class RunnerOutput:
    per_second_mbps: tuple[float, ...] | None
    mean_mbps: float | None
    exit_status: int = 0
    raw: str = ""

    def __post_init__(self):
        if self.per_second_mbps is not None and any(v < 0 for v in self.per_second_mbps):
            raise RunnerParseError("negative rate in runner output", self.raw)
        if self.mean_mbps is not None and self.mean_mbps < 0:
            raise RunnerParseError("negative mean in runner output", self.raw)

    def to_sample(self, path: Path, start_utc: int, duration_s: int) -> BandwidthSample:
        """Sample for the dataset; the per-second payload is kept only when it
        covers the duration exactly (tools report ragged edges)."""
        per_sec = self.per_second_mbps
        if per_sec is not None and abs(len(per_sec) - duration_s) > 2:
            raise RunnerParseError(
                f"{len(per_sec)} per-second rates for a {duration_s} s measurement", self.raw)
        if per_sec is not None and len(per_sec) == duration_s:
            values = tuple(round(v, 6) for v in per_sec)
            return BandwidthSample(path, start_utc, duration_s, round(math.fsum(values) / duration_s, 6), values)
        if self.mean_mbps is not None:
            mean = self.mean_mbps
        elif per_sec:
            mean = math.fsum(per_sec) / len(per_sec)
        else:
            raise RunnerParseError("runner output has no rate", self.raw)
        return BandwidthSample(path, start_utc, duration_s, round(mean, 6))


def parse_runner_output(raw: str, pattern: str = DEFAULT_PATTERN) -> RunnerOutput:
    """Extract rates from tool output, normalized to Mb/s.

    Matches spanning about one second are per-second rates; a longer span
    is the tool's summary. Patterns without start/end groups yield only
    per-second rates.
    """
    rx = re.compile(pattern)
    per_sec: list[float] = []
    summary = None
    for m in rx.finditer(raw):
        unit = m.groupdict().get("unit") or ""
        unit = unit.upper()
        if unit not in UNIT_SCALE:
            raise RunnerParseError(f"unknown unit {unit!r}bits/sec", raw)
        value = float(m.group("value")) * UNIT_SCALE[unit]
        gd = m.groupdict()
        if gd.get("start") is not None and gd.get("end") is not None:
            span = float(gd["end"]) - float(gd["start"])
            if span > 1.5:
                summary = value
                continue
        per_sec.append(value)
    if not per_sec and summary is None:
        raise RunnerParseError("no rate found in runner output", raw)
    return RunnerOutput(tuple(per_sec) if per_sec else None, summary, 0, raw)


# -- runners -----------------------------------------------------------------------

class Runner(Protocol):
    virtual: bool

    def preflight(self, endpoint: str) -> None: ...

    def measure(self, path: Path, duration_s: int, start_utc: int) -> RunnerOutput: ...


class CommandRunner:
    """Runs the configured command template and parses its report."""

    virtual = False

    def __init__(self, config: ProbeConfig, preflight: Callable[[str, int, float], None] | None = None):
        self.config = config
        self._preflight = preflight or _tcp_preflight

    def preflight(self, endpoint: str) -> None:
        host, port = self.config.address(endpoint)
        self._preflight(host, port, self.config.preflight_timeout_s)

    def command_for(self, path: Path, duration_s: int) -> list[str]:
        src_host, src_port = self.config.address(path.src)
        dst_host, dst_port = self.config.address(path.dst)
        text = self.config.command.format(
            src=path.src, dst=path.dst, src_host=src_host, src_port=src_port,
            dst_host=dst_host, dst_port=dst_port, duration=duration_s, window=self.config.window,
        )
        return shlex.split(text)

    def measure(self, path: Path, duration_s: int, start_utc: int) -> RunnerOutput:
        argv = self.command_for(path, duration_s)
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=duration_s + 60)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise EndpointUnreachable(f"{path}: {exc}") from exc
        if proc.returncode != 0:
            raise EndpointUnreachable(f"{path}: exit status {proc.returncode}: {proc.stderr.strip()[:200]}")
        out = parse_runner_output(proc.stdout, self.config.pattern)
        return RunnerOutput(out.per_second_mbps, out.mean_mbps, proc.returncode, proc.stdout)


def _tcp_preflight(host: str, port: int, timeout: float) -> None:
    try:
        with socket.create_connection((host, port), timeout=timeout):
            pass
    except OSError as exc:
        raise EndpointUnreachable(f"{host}:{port}: {exc}") from exc


class SimulatedRunner:
    """Measurements drawn from a scenario; time is virtual."""

    virtual = True

    def __init__(self, scenario, down: Sequence[str] = (), failing_paths: Sequence[Path] = ()):
        scenario.validate()
        self.scenario = scenario
        self.down = set(down)
        self.failing_paths = {Path(*p) for p in failing_paths}

    def preflight(self, endpoint: str) -> None:
        if endpoint in self.down:
            raise EndpointUnreachable(f"{endpoint}: simulated outage")

    def measure(self, path: Path, duration_s: int, start_utc: int) -> RunnerOutput:
        from .simulate import generate_per_second

        if path in self.failing_paths or path.src in self.down or path.dst in self.down:
            raise EndpointUnreachable(f"{path}: simulated failure")
        s = generate_per_second(self.scenario, path, max(duration_s, 2), start_utc)
        per_sec = s.per_second_mbps[:duration_s]
        return RunnerOutput(tuple(per_sec), None, 0, "")


def simulated_runner(scenario, **kw) -> SimulatedRunner:
    return SimulatedRunner(scenario, **kw)


# -- scheduling ----------------------------------------------------------------------

def rotated_order(paths: Sequence[Path], tick: int) -> list[Path]:
    """Order for a tick: `tick` rounds of odd-even transposition.

    Each round swaps alternate neighbour pairs, so a path moves at most one
    slot between consecutive ticks while sweeping through every slot over
    time.
    """
    order = list(paths)
    m = len(order)
    rounds = tick % (2 * m) if m > 1 else 0
    for r in range(rounds):
        for i in range(r % 2, m - 1, 2):
            order[i], order[i + 1] = order[i + 1], order[i]
    return order


@dataclass(frozen=True)
class LogEntry:
    tick: int
    path: Path
    start: float
    end: float
    status: str  # "ok", "failed", "skipped"
    reason: str = ""


@dataclass
class CampaignReport:
    successes: dict[Path, int] = field(default_factory=dict)
    failures: dict[Path, int] = field(default_factory=dict)
    log: list[LogEntry] = field(default_factory=list)
    unreachable: dict[str, str] = field(default_factory=dict)
    aborted: str | None = None

    @property
    def samples_written(self) -> int:
        return sum(self.successes.values())

    def record(self, entry: LogEntry) -> None:
        self.log.append(entry)
        if entry.status == "ok":
            self.successes[entry.path] = self.successes.get(entry.path, 0) + 1
        else:
            self.failures[entry.path] = self.failures.get(entry.path, 0) + 1


def check_exclusion(log_entries: Sequence[LogEntry]) -> list[tuple[LogEntry, LogEntry]]:
    """Pairs of measurements that overlapped in time while sharing an endpoint."""
    runs = sorted((e for e in log_entries if e.status != "skipped"), key=lambda e: e.start)
    clashes = []
    active: list[LogEntry] = []
    for e in runs:
        active = [a for a in active if a.end > e.start]
        for a in active:
            if set(a.path) & set(e.path):
                clashes.append((a, e))
        active.append(e)
    return clashes


class _Dispatcher:
    def __init__(self, limit: int):
        self.queue: deque[tuple[int, Path]] = deque()
        self.busy: set[str] = set()
        self.busy_paths: set[Path] = set()
        self.inflight = 0
        self.limit = limit

    def take_ready(self) -> list[tuple[int, Path]]:
        started = []
        for item in list(self.queue):
            if self.inflight >= self.limit:
                break
            _, p = item
            if p.src in self.busy or p.dst in self.busy:
                continue
            self.queue.remove(item)
            self.busy.update(p)
            self.busy_paths.add(p)
            self.inflight += 1
            started.append(item)
        return started

    def release(self, path: Path) -> None:
        self.busy.difference_update(path)
        self.busy_paths.discard(path)
        self.inflight -= 1

    def pending(self, path: Path) -> bool:
        return any(p == path for _, p in self.queue)


def _preflight_all(config: ProbeConfig, runner, report: CampaignReport) -> set[str]:
    down = set()
    for ep in config.endpoints:
        try:
            runner.preflight(ep)
        except ProbeError as exc:
            down.add(ep)
            report.unreachable[ep] = str(exc)
            log.warning("preflight failed for %s: %s", ep, exc)
    return down


def _enqueue_tick(k: int, now: float, config: ProbeConfig, paths: list[Path], down: set[str],
                  disp: _Dispatcher, report: CampaignReport) -> None:
    for p in rotated_order(paths, k):
        if p.src in down or p.dst in down:
            ep = p.src if p.src in down else p.dst
            report.record(LogEntry(k, p, now, now, "skipped", f"endpoint {ep} unreachable"))
            log.info("tick %d: skip %s (endpoint %s unreachable)", k, p, ep)
        elif disp.pending(p) or p in disp.busy_paths:
            report.record(LogEntry(k, p, now, now, "skipped", "previous tick still pending"))
            log.info("tick %d: skip %s (schedule overrun)", k, p)
        else:
            disp.queue.append((k, p))


def run_campaign(config: ProbeConfig, runner, sink, catalog: Catalog | None = None,
                 clock: Callable[[], float] = time.time, sleep: Callable[[float], None] = time.sleep
                 ) -> CampaignReport:
    """Measure every path once per tick for `config.ticks` ticks.

    `sink` needs an ``append(sample)`` method. A sink failure aborts the
    campaign (re-raised as CampaignAborted after the report is filled in);
    runner failures are logged and the sample is skipped.
    """
    config.validate(catalog)
    report = CampaignReport()
    down = _preflight_all(config, runner, report)
    paths = config.paths()
    limit = config.max_concurrency or max(1, len(config.endpoints) // 2)
    disp = _Dispatcher(limit)
    if getattr(runner, "virtual", False):
        start = config.start_utc if config.start_utc is not None else runner.scenario.start_utc
        _run_virtual(config, runner, sink, report, disp, paths, down, start)
    else:
        start = config.start_utc if config.start_utc is not None else int(clock())
        _run_threads(config, runner, sink, report, disp, paths, down, start, clock, sleep)
    return report


def _finish(k, p, t0, t1, result, config, sink, report):
    if isinstance(result, BaseException):
        report.record(LogEntry(k, p, t0, t1, "failed", str(result)))
        log.warning("tick %d: %s failed: %s", k, p, result)
        return
    try:
        sample = result.to_sample(p, int(t0), config.duration_s)
    except ProbeError as exc:
        report.record(LogEntry(k, p, t0, t1, "failed", str(exc)))
        log.warning("tick %d: %s unusable output: %s", k, p, exc)
        return
    try:
        sink.append(sample)
    except Exception as exc:  # any sink failure ends the campaign
        report.record(LogEntry(k, p, t0, t1, "failed", f"sink: {exc}"))
        report.aborted = str(exc)
        log.error("sink write failed, aborting: %s", exc)
        raise CampaignAborted(str(exc)) from exc
    report.record(LogEntry(k, p, t0, t1, "ok"))


def _run_virtual(config, runner, sink, report, disp, paths, down, start):
    events: list[tuple[float, int, str, Any]] = []
    seq = 0
    for k in range(config.ticks):
        heapq.heappush(events, (start + k * config.interval_s, seq, "tick", k))
        seq += 1
    while events:
        now, _, kind, payload = heapq.heappop(events)
        if kind == "tick":
            _enqueue_tick(payload, now, config, paths, down, disp, report)
        else:
            k, p, t0, result = payload
            disp.release(p)
            _finish(k, p, t0, now, result, config, sink, report)
        # completions at the same instant free endpoints before dispatching
        if events and events[0][0] == now:
            continue
        for k, p in disp.take_ready():
            try:
                result = runner.measure(p, config.duration_s, int(now))
            except ProbeError as exc:
                result = exc
            heapq.heappush(events, (now + config.duration_s, seq, "done", (k, p, now, result)))
            seq += 1


def _run_threads(config, runner, sink, report, disp, paths, down, start, clock, sleep):
    next_tick = 0
    futures: dict[Future, tuple[int, Path, float]] = {}
    with ThreadPoolExecutor(max_workers=disp.limit) as pool:
        while next_tick < config.ticks or futures or disp.queue:
            now = clock()
            while next_tick < config.ticks and now >= start + next_tick * config.interval_s:
                _enqueue_tick(next_tick, now, config, paths, down, disp, report)
                next_tick += 1
            for k, p in disp.take_ready():
                t0 = clock()
                futures[pool.submit(runner.measure, p, config.duration_s, int(t0))] = (k, p, t0)
            timeout = None
            if next_tick < config.ticks:
                timeout = max(0.0, start + next_tick * config.interval_s - clock())
            if not futures:
                if timeout is None:
                    break
                sleep(timeout)
                continue
            done, _ = wait(list(futures), timeout=timeout, return_when=FIRST_COMPLETED)
            for f in done:
                k, p, t0 = futures.pop(f)
                t1 = clock()
                disp.release(p)
                exc = f.exception()
                result = exc if exc is not None else f.result()
                if exc is not None and not isinstance(exc, ProbeError):
                    result = ProbeError(f"runner error: {exc!r}")
                _finish(k, p, t0, t1, result, config, sink, report)
