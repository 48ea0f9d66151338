"""Deterministic event loop composing scheduler, channel, and relay stage.

Each run is a pure function of (config, process, n_packets, seed): the
channel outcomes come from a seeded PCG64 stream and the relay scan is
deterministic, so identical arguments reproduce traces byte-for-byte.

Trace CSV layout: ``# key=value`` header lines (config snapshot, seed, rng
algorithm) followed by ``seq,tx_start_us,received,relayed,latency_us`` with
an empty latency field for packets that were not relayed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import channel as _channel
from ._kernels import relay_scan
from .clusters import loss_run_lengths
from .node import ConfigError, EmptyTrace, LinkConfig, Mode, compute_per

RNG_ALGORITHM = "numpy-pcg64"


class TraceFormatError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class PacketTrace:
    """Per-packet outcome record of one simulated run."""

    config: LinkConfig
    process_spec: str
    seed: int
    tx_start_s: np.ndarray
    received: np.ndarray
    relayed: np.ndarray
    latency_s: np.ndarray  # NaN where not relayed

    def __post_init__(self):
        n = self.tx_start_s.size
        if n < 1:
            raise EmptyTrace("trace must contain at least one packet")
        if not (self.received.size == self.relayed.size == self.latency_s.size == n):
            raise ValueError("trace arrays must share one length")
        if np.any(self.relayed & ~self.received):
            raise ValueError("relayed packets must have been received")

    @property
    def n_tx(self) -> int:
        return self.tx_start_s.size

    @property
    def n_received(self) -> int:
        return int(self.received.sum())

    @property
    def n_relayed(self) -> int:
        return int(self.relayed.sum())

    @property
    def blocked(self) -> np.ndarray:
        """Packets the channel delivered but the relay stage ignored."""
        return self.received & ~self.relayed

    def header(self) -> dict[str, str]:
        cfg = self.config
        items = {
            "mode": cfg.mode.value,
            "baud": str(cfg.baud),
            "ipd_us": repr(cfg.ipd_s * 1e6),
            "beacon_interval_us": repr(cfg.beacon_interval_s * 1e6),
            "t_proc_us": repr(cfg.t_proc_s * 1e6),
            "guard_us": repr(cfg.guard_s * 1e6),
            "payload": cfg.reference_payload.hex(),
            "preamble": cfg.preamble.hex(),
            "process": self.process_spec,
            "n_packets": str(self.n_tx),
            "seed": str(self.seed),
            "rng": RNG_ALGORITHM,
        }
        return items


def run(config: LinkConfig, process: _channel.ErrorProcess, n_packets: int,
        seed: int) -> PacketTrace:
    """Simulate ``n_packets`` transmissions through channel and relay."""
    if n_packets < 1:
        raise ConfigError(f"n_packets must be >= 1, got {n_packets}")
    rng = np.random.default_rng(seed)
    lost = _channel.sample_losses(process, n_packets, rng)
    received = (~lost).astype(np.uint8)

    relayed = np.zeros(n_packets, dtype=np.uint8)
    blocked = np.zeros(n_packets, dtype=np.uint8)
    latency_s = np.full(n_packets, np.nan)
    relay_scan(received, config.period_s, config.packet_time_s,
               config.dead_time_s, config.l0_s, relayed, blocked, latency_s)

    tx_start_s = np.arange(n_packets, dtype=np.float64) * config.period_s
    return PacketTrace(
        config=config,
        process_spec=_channel.process_to_spec(process),
        seed=seed,
        tx_start_s=tx_start_s,
        received=received.astype(bool),
        relayed=relayed.astype(bool),
        latency_s=latency_s,
    )


@dataclass(frozen=True)
class Summary:
    per: float
    n_tx: int
    n_received: int
    n_relayed: int
    n_blocked: int
    min_latency_s: float
    mean_latency_s: float
    max_cluster: int


def summarize(trace: PacketTrace) -> Summary:
    """Aggregate a trace into the headline link metrics."""
    lat = trace.latency_s[trace.relayed]
    runs = loss_run_lengths(trace.received)
    return Summary(
        per=compute_per(trace.n_tx, trace.n_relayed, trace.config.mode),
        n_tx=trace.n_tx,
        n_received=trace.n_received,
        n_relayed=trace.n_relayed,
        n_blocked=int(trace.blocked.sum()),
        min_latency_s=float(lat.min()) if lat.size else float("nan"),
        mean_latency_s=float(lat.mean()) if lat.size else float("nan"),
        max_cluster=int(runs.max()) if runs.size else 0,
    )


def write_trace_csv(trace: PacketTrace, path) -> None:
    lines = [f"# {key}={value}" for key, value in trace.header().items()]
    lines.append("seq,tx_start_us,received,relayed,latency_us")
    tx_us = trace.tx_start_s * 1e6
    lat_us = trace.latency_s * 1e6
    for k in range(trace.n_tx):
        lat = repr(float(lat_us[k])) if trace.relayed[k] else ""
        lines.append(f"{k},{float(tx_us[k])!r},{int(trace.received[k])},"
                     f"{int(trace.relayed[k])},{lat}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _config_from_header(header: dict[str, str]) -> LinkConfig:
    return LinkConfig(
        baud=int(header["baud"]),
        mode=Mode(header["mode"]),
        ipd_s=float(header["ipd_us"]) / 1e6,
        beacon_interval_s=float(header["beacon_interval_us"]) / 1e6,
        t_proc_s=float(header["t_proc_us"]) / 1e6,
        guard_s=float(header["guard_us"]) / 1e6,
        reference_payload=bytes.fromhex(header["payload"]),
        preamble=bytes.fromhex(header["preamble"]),
    )


def read_trace_csv(path) -> PacketTrace:
    header: dict[str, str] = {}
    seqs: list[int] = []
    tx_us: list[float] = []
    received: list[bool] = []
    relayed: list[bool] = []
    latency_us: list[float] = []
    with open(path, newline="") as fh:
        saw_columns = False
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key.strip()] = value.strip()
                continue
            if not saw_columns:
                if line != "seq,tx_start_us,received,relayed,latency_us":
                    raise TraceFormatError(path, lineno, f"bad column header {line!r}")
                saw_columns = True
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise TraceFormatError(path, lineno, f"expected 5 fields, got {len(parts)}")
            try:
                seqs.append(int(parts[0]))
                tx_us.append(float(parts[1]))
                received.append(bool(int(parts[2])))
                relayed.append(bool(int(parts[3])))
                latency_us.append(float(parts[4]) if parts[4] else float("nan"))
            except ValueError as exc:
                raise TraceFormatError(path, lineno, str(exc)) from None
    if not seqs:
        raise TraceFormatError(path, 0, "no packet records")
    if seqs != list(range(len(seqs))):
        raise TraceFormatError(path, 0, "seq must increase from 0 without gaps")
    missing = {"mode", "baud", "ipd_us", "beacon_interval_us", "t_proc_us",
               "guard_us", "payload", "preamble", "seed"} - set(header)
    if missing:
        raise TraceFormatError(path, 0, f"missing header keys: {sorted(missing)}")
    try:
        config = _config_from_header(header)
    except (KeyError, ValueError) as exc:
        raise TraceFormatError(path, 0, f"bad header: {exc}") from None
    return PacketTrace(
        config=config,
        process_spec=header.get("process", ""),
        seed=int(header["seed"]),
        tx_start_s=np.asarray(tx_us) / 1e6,
        received=np.asarray(received, dtype=bool),
        relayed=np.asarray(relayed, dtype=bool),
        latency_s=np.asarray(latency_us) / 1e6,
    )
