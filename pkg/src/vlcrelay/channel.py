"""Stochastic packet-loss processes and the measured PER-vs-distance table.

Optics, gain stages, and ambient-light rejection are deliberately out of
scope; the channel is whatever marks a packet lost.  Four interchangeable
processes cover the regimes of interest, from memoryless checks to the
bursty clustering seen on a real link, and an ingested table anchors PER
to measured distances per baud rate.
"""

from __future__ import annotations

import csv
import importlib.resources
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import nbinom

from ._kernels import ge_chain

BITS_PER_PACKET = 32
PER_FLOOR = 1e-5
_RUN_CAP = 10**7  # tail guard for inverse-CDF run draws


class ChannelError(ValueError):
    """Invalid channel parameter or table."""


class OutOfRange(ChannelError):
    def __init__(self, distance_m: float, lo: float, hi: float):
        super().__init__(f"distance {distance_m} m outside table span [{lo}, {hi}] m")
        self.distance_m = distance_m


class UnknownBaud(ChannelError):
    def __init__(self, baud: int, known):
        super().__init__(f"baud {baud} not in table (known: {sorted(known)})")
        self.baud = baud


def _check_prob(name: str, value: float):
    if not 0.0 <= value <= 1.0:
        raise ChannelError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class IidPacket:
    """Each packet lost independently with probability p_loss."""

    p_loss: float

    def __post_init__(self):
        _check_prob("p_loss", self.p_loss)

    @property
    def loss_rate(self) -> float:
        return self.p_loss


@dataclass(frozen=True)
class IidBit:
    """Independent bit flips; a packet is lost as soon as one bit flips."""

    p_bit: float

    def __post_init__(self):
        _check_prob("p_bit", self.p_bit)

    @property
    def loss_rate(self) -> float:
        return 1.0 - (1.0 - self.p_bit) ** BITS_PER_PACKET


@dataclass(frozen=True)
class GilbertElliott:
    """Two-state burst model: good/bad states with per-state loss rates."""

    p_gb: float
    p_bg: float
    loss_good: float
    loss_bad: float

    def __post_init__(self):
        for name in ("p_gb", "p_bg", "loss_good", "loss_bad"):
            _check_prob(name, getattr(self, name))

    @property
    def loss_rate(self) -> float:
        """Stationary loss rate from the balance equations."""
        denom = self.p_gb + self.p_bg
        if denom == 0.0:  # chain never leaves its start state (good)
            return self.loss_good
        pi_bad = self.p_gb / denom
        return (1.0 - pi_bad) * self.loss_good + pi_bad * self.loss_bad


@dataclass(frozen=True)
class NbCluster:
    """Loss runs drawn from an over-dispersed count law.

    Cluster sizes follow the negative binomial (r, p) conditioned on >= 1;
    success runs between clusters are geometric with per-packet start
    probability ``p_start``, which tunes the overall loss rate.
    """

    r: float
    p: float
    p_start: float

    def __post_init__(self):
        if self.r <= 0:
            raise ChannelError(f"r must be > 0, got {self.r}")
        if not 0.0 < self.p < 1.0:
            raise ChannelError(f"p must be in (0, 1), got {self.p}")
        if not 0.0 < self.p_start <= 1.0:
            raise ChannelError(f"p_start must be in (0, 1], got {self.p_start}")

    @property
    def mean_cluster(self) -> float:
        mu = self.r * (1.0 - self.p) / self.p
        p0 = self.p ** self.r
        return mu / (1.0 - p0)

    @property
    def loss_rate(self) -> float:
        return self.mean_cluster / (self.mean_cluster + 1.0 / self.p_start)

    @classmethod
    def for_law(cls, r: float, p: float) -> "NbCluster":
        """Pick p_start so the per-window run-length law (zeros included)
        is exactly the unconditional negative binomial (r, p)."""
        if r <= 0 or not 0.0 < p < 1.0:
            raise ChannelError(f"need r > 0 and p in (0, 1), got r={r}, p={p}")
        return cls(r=r, p=p, p_start=1.0 - p ** r)

    @classmethod
    def for_target_per(cls, r: float, p: float, target_per: float) -> "NbCluster":
        """Pick p_start so the long-run loss rate equals ``target_per``."""
        if not 0.0 < target_per < 1.0:
            raise ChannelError(f"target_per must be in (0, 1), got {target_per}")
        mu = r * (1.0 - p) / p
        p0 = p ** r
        mean_cluster = mu / (1.0 - p0)
        p_start = target_per / (mean_cluster * (1.0 - target_per))
        if p_start > 1.0:
            raise ChannelError(
                f"target_per {target_per} unreachable with clusters averaging "
                f"{mean_cluster:.3g} packets"
            )
        return cls(r=r, p=p, p_start=p_start)


ErrorProcess = IidPacket | IidBit | GilbertElliott | NbCluster


def _draw_cluster_size(process: NbCluster, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of a cluster size (>= 1)."""
    p0 = process.p ** process.r
    u = rng.random()
    target = p0 + (1.0 - u) * (1.0 - p0)  # in (p0, 1]
    k = float(nbinom.ppf(target, process.r, process.p))
    if not math.isfinite(k):
        return _RUN_CAP
    return max(1, min(int(k), _RUN_CAP))


def sample_losses(process: ErrorProcess, n: int, rng: np.random.Generator) -> np.ndarray:
    """Loss flags for ``n`` consecutive packets (True = lost).

    Deterministic in the generator state; consumes randomness in the same
    order as repeated sample_packet_outcome calls.
    """
    if n < 1:
        raise ChannelError(f"n must be >= 1, got {n}")
    if isinstance(process, IidPacket):
        return rng.random(n) < process.p_loss
    if isinstance(process, IidBit):
        return rng.binomial(BITS_PER_PACKET, process.p_bit, size=n) > 0
    if isinstance(process, GilbertElliott):
        u = rng.random(2 * n)
        lost = np.zeros(n, dtype=np.uint8)
        ge_chain(u[0::2], u[1::2], process.p_gb, process.p_bg,
                 process.loss_good, process.loss_bad, lost)
        return lost.astype(bool)
    if isinstance(process, NbCluster):
        lost = np.empty(n, dtype=bool)
        pos = 0
        in_loss = False  # streams start in a success run
        while pos < n:
            if in_loss:
                run = _draw_cluster_size(process, rng)
                lost[pos:pos + run] = True
            else:
                run = int(rng.geometric(process.p_start))
                lost[pos:pos + run] = False
            pos += run
            in_loss = not in_loss
        return lost
    raise ChannelError(f"unknown error process {process!r}")


def sample_packet_outcome(process: ErrorProcess, rng: np.random.Generator,
                          state=None) -> tuple[bool, object]:
    """Draw one packet outcome; thread ``state`` through successive calls.

    Walks the same random stream as sample_losses, one packet at a time.
    """
    if isinstance(process, IidPacket):
        return bool(rng.random() < process.p_loss), None
    if isinstance(process, IidBit):
        return bool(rng.binomial(BITS_PER_PACKET, process.p_bit) > 0), None
    if isinstance(process, GilbertElliott):
        ge_state = 0 if state is None else state
        u_loss = rng.random()
        u_trans = rng.random()
        if ge_state == 0:
            lost = u_loss < process.loss_good
            if u_trans < process.p_gb:
                ge_state = 1
        else:
            lost = u_loss < process.loss_bad
            if u_trans < process.p_bg:
                ge_state = 0
        return bool(lost), ge_state
    if isinstance(process, NbCluster):
        if state is None:
            in_loss, remaining = False, 0  # streams start in a success run
        else:
            in_loss, remaining = state
            if remaining == 0:
                in_loss = not in_loss
        if remaining == 0:
            if in_loss:
                remaining = _draw_cluster_size(process, rng)
            else:
                remaining = int(rng.geometric(process.p_start))
        return bool(in_loss), (in_loss, remaining - 1)
    raise ChannelError(f"unknown error process {process!r}")


def process_from_spec(spec: str) -> ErrorProcess:
    """Parse 'name:param=value,...' descriptors, e.g. 'iid-packet:p=0.1'."""
    name, _, rest = spec.partition(":")
    params: dict[str, float] = {}
    if rest:
        for item in rest.split(","):
            key, _, value = item.partition("=")
            if not value:
                raise ChannelError(f"malformed process parameter {item!r}")
            params[key.strip()] = float(value)
    try:
        if name == "iid-packet":
            return IidPacket(p_loss=params.pop("p"))
        if name == "iid-bit":
            return IidBit(p_bit=params.pop("p"))
        if name == "gilbert-elliott":
            return GilbertElliott(p_gb=params.pop("p_gb"), p_bg=params.pop("p_bg"),
                                  loss_good=params.pop("loss_good"),
                                  loss_bad=params.pop("loss_bad"))
        if name == "nb-cluster":
            if "target_per" in params:
                return NbCluster.for_target_per(params.pop("r"), params.pop("p"),
                                                params.pop("target_per"))
            return NbCluster(r=params.pop("r"), p=params.pop("p"),
                             p_start=params.pop("p_start"))
    except KeyError as exc:
        raise ChannelError(f"process {name!r} missing parameter {exc}") from None
    raise ChannelError(f"unknown process {name!r}")


def process_to_spec(process: ErrorProcess) -> str:
    if isinstance(process, IidPacket):
        return f"iid-packet:p={process.p_loss!r}"
    if isinstance(process, IidBit):
        return f"iid-bit:p={process.p_bit!r}"
    if isinstance(process, GilbertElliott):
        return (f"gilbert-elliott:p_gb={process.p_gb!r},p_bg={process.p_bg!r},"
                f"loss_good={process.loss_good!r},loss_bad={process.loss_bad!r}")
    if isinstance(process, NbCluster):
        return f"nb-cluster:r={process.r!r},p={process.p!r},p_start={process.p_start!r}"
    raise ChannelError(f"unknown error process {process!r}")


@dataclass(frozen=True)
class PerDistanceTable:
    """Measured (distance, baud) -> PER anchors with log-linear lookup."""

    distances_m: np.ndarray
    bauds: np.ndarray
    pers: np.ndarray

    def __post_init__(self):
        if np.any(self.distances_m <= 0):
            raise ChannelError("distances must be positive")
        if np.any((self.pers < 0) | (self.pers > 1)):
            raise ChannelError("per values must be in [0, 1]")
        keys = set(zip(self.distances_m.tolist(), self.bauds.tolist()))
        if len(keys) != self.distances_m.size:
            raise ChannelError("(distance, baud) pairs must be unique")

    @classmethod
    def from_rows(cls, rows) -> "PerDistanceTable":
        rows = sorted(rows, key=lambda r: (r[1], r[0]))
        if not rows:
            raise ChannelError("table needs at least one row")
        d, b, p = zip(*rows)
        return cls(distances_m=np.asarray(d, dtype=float),
                   bauds=np.asarray(b, dtype=int),
                   pers=np.asarray(p, dtype=float))

    @classmethod
    def from_csv(cls, path) -> "PerDistanceTable":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            expected = {"distance_m", "baud", "per"}
            if reader.fieldnames is None or set(reader.fieldnames) != expected:
                raise ChannelError(
                    f"{path}: header must be distance_m,baud,per, got {reader.fieldnames}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    rows.append((float(row["distance_m"]), int(float(row["baud"])),
                                 float(row["per"])))
                except (TypeError, ValueError) as exc:
                    raise ChannelError(f"{path}:{lineno}: bad row: {exc}") from None
        return cls.from_rows(rows)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["distance_m", "baud", "per"])
            for d, b, p in zip(self.distances_m, self.bauds, self.pers):
                writer.writerow([repr(float(d)), int(b), repr(float(p))])

    @classmethod
    def bundled(cls) -> "PerDistanceTable":
        return cls.from_csv(_data_path("per_distance.csv"))

    @classmethod
    def bundled_tilted(cls) -> "PerDistanceTable":
        """Anchors for the lamp reclined a few degrees toward long range."""
        return cls.from_csv(_data_path("per_distance_tilted.csv"))


def _data_path(name: str):
    return importlib.resources.files("vlcrelay") / "data" / name


def per_at(table: PerDistanceTable, distance_m: float, baud: int) -> float:
    """PER at a distance, log-linear in PER between bracketing anchors.

    Interpolated values are floored at PER_FLOOR, the smallest rate the
    underlying measurements could resolve.
    """
    mask = table.bauds == baud
    if not mask.any():
        raise UnknownBaud(baud, set(table.bauds.tolist()))
    d = table.distances_m[mask]
    p = np.maximum(table.pers[mask], PER_FLOOR)
    lo, hi = d.min(), d.max()
    if not lo <= distance_m <= hi:
        raise OutOfRange(distance_m, lo, hi)
    logp = np.interp(distance_m, d, np.log10(p))
    return max(float(10.0 ** logp), PER_FLOOR)
