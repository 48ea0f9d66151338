"""Road-safety arithmetic: reaction, braking, and stopping distances.

A braking actor travels v * t_reaction before the brakes bite, then
v^2 / (2 mu g) to standstill.  The comparison table pits a human driver,
an RF link at its standardized worst-case latency, and the optical relay
link (reaction time derived from the cluster-latency model at a 99%
delivery target) against each other over the same scenarios.
"""

from __future__ import annotations

import csv
import importlib.resources
from dataclasses import dataclass

from .clusters import LatencyParams, ModelTable, latency_from_clusters, quantile

G_DEFAULT = 9.8  # m/s^2; pins braking distances to the published precision
MU_DEFAULT = 0.7  # dry asphalt, good tires
T_REACTION_HUMAN_S = 1.37  # fastest measured driver reaction
T_REACTION_RF_S = 0.100  # standardized worst-case RF road-safety latency
SAFETY_BAUD = 57000  # long-range delivery favors the slower, reliable rate
SAFETY_TARGET = 0.99


class SafetyError(ValueError):
    """Invalid safety-scenario input."""


class NegativeLatency(SafetyError):
    pass


def kmh_to_ms(v_kmh: float) -> float:
    return v_kmh / 3.6


def ms_to_kmh(v_ms: float) -> float:
    return v_ms * 3.6


@dataclass(frozen=True)
class SafetyScenario:
    """One actor approaching a braking point."""

    v_kmh: float
    t_reaction_s: float
    mu: float = MU_DEFAULT
    g: float = G_DEFAULT

    def __post_init__(self):
        if self.v_kmh < 0:
            raise SafetyError(f"speed must be >= 0, got {self.v_kmh}")
        if self.mu <= 0 or self.g <= 0:
            raise SafetyError("mu and g must be positive")
        if self.t_reaction_s < 0:
            raise SafetyError(f"t_reaction must be >= 0, got {self.t_reaction_s}")

    @property
    def v_ms(self) -> float:
        return kmh_to_ms(self.v_kmh)


def brake_distance(v_ms: float, mu: float = MU_DEFAULT, g: float = G_DEFAULT) -> float:
    """Braking distance v^2 / (2 mu g) in meters."""
    if mu <= 0 or g <= 0:
        raise SafetyError("mu and g must be positive")
    if v_ms < 0:
        raise SafetyError(f"speed must be >= 0, got {v_ms}")
    return v_ms * v_ms / (2.0 * mu * g)


def reaction_distance(v_ms: float, t_reaction_s: float) -> float:
    """Distance covered before braking starts: v * t."""
    if v_ms < 0 or t_reaction_s < 0:
        raise SafetyError("speed and reaction time must be >= 0")
    return v_ms * t_reaction_s


def stop_distance(scenario: SafetyScenario) -> float:
    """Total stopping distance: reaction plus braking."""
    return (reaction_distance(scenario.v_ms, scenario.t_reaction_s)
            + brake_distance(scenario.v_ms, scenario.mu, scenario.g))


def vlc_reaction_latency(adr_latency_s: float, pt_s: float) -> float:
    """First correct reception lands one packet time before the relay ends."""
    if adr_latency_s < pt_s:
        raise NegativeLatency(
            f"relay latency {adr_latency_s} s shorter than packet time {pt_s} s")
    return adr_latency_s - pt_s


def relay_latency_at(per: float, target: float = SAFETY_TARGET,
                     baud: int = SAFETY_BAUD, ipd_s: float = 0.0,
                     table: ModelTable | None = None) -> float:
    """End-to-end relay latency at a delivery target for a given PER.

    PERs below the model table span carry no resolvable clustering at this
    target, so they map to the zero-extra-packet floor.
    """
    table = table or ModelTable.bundled()
    params = LatencyParams.from_baud(baud, ipd_s=ipd_s)
    if per < table.per_min:
        n = 0
    else:
        n = quantile(table.model_at(per), target)
    return latency_from_clusters(n, params)


@dataclass(frozen=True)
class ComparisonRow:
    v_kmh: float
    distance_m: float
    per: float
    vlc_reaction_latency_s: float
    vlc_relay_latency_s: float
    brake_m: float
    reaction_vlc_m: float
    reaction_rf_m: float
    reaction_human_m: float
    stop_vlc_m: float
    stop_rf_m: float
    stop_human_m: float


def comparison_table(rows, mu: float = MU_DEFAULT, g: float = G_DEFAULT,
                     t_human_s: float = T_REACTION_HUMAN_S,
                     t_rf_s: float = T_REACTION_RF_S,
                     baud: int = SAFETY_BAUD, target: float = SAFETY_TARGET,
                     table: ModelTable | None = None,
                     vlc_reaction_s: float | None = None) -> list[ComparisonRow]:
    """Actor comparison over (speed km/h, distance m, per) scenarios.

    The optical actor's reaction time comes from the latency model unless
    ``vlc_reaction_s`` overrides it.
    """
    rows = list(rows)
    if not rows:
        raise SafetyError("comparison_table needs at least one scenario row")
    table = table or ModelTable.bundled()
    pt_s = 64.0 / baud
    out = []
    for v_kmh, distance_m, per in rows:
        relay_s = relay_latency_at(per, target=target, baud=baud, table=table)
        reaction_s = (vlc_reaction_s if vlc_reaction_s is not None
                      else vlc_reaction_latency(relay_s, pt_s))
        v = kmh_to_ms(v_kmh)
        brake = brake_distance(v, mu, g)
        r_vlc = reaction_distance(v, reaction_s)
        r_rf = reaction_distance(v, t_rf_s)
        r_human = reaction_distance(v, t_human_s)
        out.append(ComparisonRow(
            v_kmh=float(v_kmh), distance_m=float(distance_m), per=float(per),
            vlc_reaction_latency_s=reaction_s, vlc_relay_latency_s=relay_s,
            brake_m=brake,
            reaction_vlc_m=r_vlc, reaction_rf_m=r_rf, reaction_human_m=r_human,
            stop_vlc_m=brake + r_vlc, stop_rf_m=brake + r_rf,
            stop_human_m=brake + r_human,
        ))
    return out


def bundled_scenarios() -> list[tuple[float, float, float]]:
    """Reference (speed, distance, per) rows shipped with the package."""
    path = importlib.resources.files("vlcrelay") / "data" / "safety_scenarios.csv"
    return read_scenarios_csv(path)


def read_scenarios_csv(path) -> list[tuple[float, float, float]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"v_kmh", "distance_m", "per"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise SafetyError(
                f"{path}: header must be v_kmh,distance_m,per, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((float(row["v_kmh"]), float(row["distance_m"]),
                             float(row["per"])))
            except (TypeError, ValueError) as exc:
                raise SafetyError(f"{path}:{lineno}: bad row: {exc}") from None
    if not rows:
        raise SafetyError(f"{path}: no scenario rows")
    return rows
