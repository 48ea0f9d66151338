"""Loss-cluster statistics, discrete model fits, and latency prediction.

Consecutive channel losses cluster, and the cluster-size law is what turns
a packet error rate into a latency bound: a relayed packet that follows a
run of n losses lands exactly n transmit periods later than the minimum.
The pipeline here extracts the per-transmission run-length law (zeros
included), fits negative-binomial / Poisson / binomial candidates by
maximum likelihood, picks the best by worst-case CDF error, and maps
quantiles of the winner to statistically-averaged latency (SAL) figures.
"""

from __future__ import annotations

import csv
import importlib.resources
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln, xlogy

MIN_LOSSES = 10  # below this the run-length sample has no inferential value
DEFAULT_TARGETS = (0.9, 0.95, 0.99, 0.999)
_QUANTILE_CAP = 10**7


class ClusterStatsError(ValueError):
    """Base class for statistics failures."""


class InsufficientErrors(ClusterStatsError):
    def __init__(self, n_lost: int):
        super().__init__(f"only {n_lost} losses recorded; need >= {MIN_LOSSES}")
        self.n_lost = n_lost


class InsufficientErrorsWarning(UserWarning):
    pass


class FitDiverged(ClusterStatsError):
    pass


class OutOfRange(ClusterStatsError):
    def __init__(self, per: float, lo: float, hi: float):
        super().__init__(f"per {per} outside model table span [{lo}, {hi}]")
        self.per = per


def loss_run_lengths(received: np.ndarray) -> np.ndarray:
    """Lengths of the maximal runs of consecutive losses."""
    lost = ~np.asarray(received, dtype=bool)
    if not lost.any():
        return np.zeros(0, dtype=np.int64)
    padded = np.concatenate(([False], lost, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return edges[1::2] - edges[0::2]


@dataclass(frozen=True)
class ClusterDistribution:
    """Empirical run-length law over per-transmission observation windows.

    ``counts`` holds cluster sizes >= 1; every received packet (plus a
    virtual window when the trace opens with a loss) contributes one
    observation window, so the zero-loss mass is implied by the totals.
    """

    counts: dict[int, int]
    n_slots: int
    n_opportunities: int
    insufficient: bool

    @property
    def n_runs(self) -> int:
        return sum(self.counts.values())

    @property
    def n_lost(self) -> int:
        return sum(k * c for k, c in self.counts.items())

    @property
    def n_zero(self) -> int:
        return self.n_opportunities - self.n_runs

    @property
    def max_cluster(self) -> int:
        return max(self.counts) if self.counts else 0

    @property
    def mean(self) -> float:
        return self.n_lost / self.n_opportunities

    def values_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct run lengths (zeros included) and their multiplicities."""
        ks = np.array([0] + sorted(self.counts), dtype=np.int64)
        ws = np.array([self.n_zero] + [self.counts[k] for k in sorted(self.counts)],
                      dtype=np.int64)
        return ks, ws

    def pmf_grid(self) -> np.ndarray:
        """Per-transmission law on 0..max_cluster."""
        grid = np.zeros(self.max_cluster + 1)
        grid[0] = self.n_zero
        for k, c in self.counts.items():
            grid[k] = c
        return grid / self.n_opportunities

    def cdf(self, k) -> np.ndarray:
        cum = np.cumsum(self.pmf_grid())
        k = np.asarray(k, dtype=np.int64)
        return np.where(k >= cum.size - 1, 1.0, cum[np.minimum(k, cum.size - 1)])

    def quantile(self, target: float) -> int:
        return _quantile_from_cdf(self.cdf, target)


def extract_clusters(trace_or_received) -> ClusterDistribution:
    """Count maximal loss runs in a trace (blocked packets are not losses).

    Emits InsufficientErrorsWarning when fewer than 10 losses were seen;
    the distribution is still returned, flagged as insufficient.
    """
    received = np.asarray(getattr(trace_or_received, "received", trace_or_received),
                          dtype=bool)
    if received.size == 0:
        raise ClusterStatsError("empty trace")
    runs = loss_run_lengths(received)
    sizes, reps = (np.unique(runs, return_counts=True) if runs.size
                   else (np.zeros(0, np.int64), np.zeros(0, np.int64)))
    counts = {int(k): int(c) for k, c in zip(sizes, reps)}
    n_rx = int(received.sum())
    n_opportunities = n_rx + (0 if received[0] else 1)
    n_lost = int((~received).sum())
    insufficient = n_lost < MIN_LOSSES
    if insufficient:
        warnings.warn(
            f"only {n_lost} losses in {received.size} packets; "
            f"run-length statistics are not significant",
            InsufficientErrorsWarning,
            stacklevel=2,
        )
    return ClusterDistribution(counts=counts, n_slots=int(received.size),
                               n_opportunities=n_opportunities,
                               insufficient=insufficient)


class Family(str, Enum):
    NEG_BINOMIAL = "negbinomial"
    POISSON = "poisson"
    BINOMIAL = "binomial"

    @property
    def n_params(self) -> int:
        return 1 if self is Family.POISSON else 2


def nb_pmf(k, r: float, p: float) -> np.ndarray:
    """P(K=k) = Gamma(k+r) / (k! Gamma(r)) * p^r * (1-p)^k, any real r > 0."""
    if r <= 0:
        raise ClusterStatsError(f"r must be > 0, got {r}")
    if not 0.0 < p < 1.0:
        raise ClusterStatsError(f"p must be in (0, 1), got {p}")
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k != np.floor(k)):
        raise ClusterStatsError("k must be a nonnegative integer")
    k = k.astype(np.int64)
    logpmf = (gammaln(k + r) - gammaln(r) - gammaln(k + 1)
              + r * math.log(p) + k * math.log1p(-p))
    return np.exp(logpmf)


def poisson_pmf(k, lam: float) -> np.ndarray:
    if lam < 0:
        raise ClusterStatsError(f"lambda must be >= 0, got {lam}")
    k = np.asarray(k, dtype=np.int64)
    if lam == 0.0:
        return (k == 0).astype(float)
    return np.exp(xlogy(k, lam) - lam - gammaln(k + 1))


def binom_pmf(k, n: int, p: float) -> np.ndarray:
    if n < 1:
        raise ClusterStatsError(f"n must be >= 1, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ClusterStatsError(f"p must be in [0, 1], got {p}")
    k = np.asarray(k, dtype=np.int64)
    inside = (k >= 0) & (k <= n)
    kk = np.clip(k, 0, n)
    logpmf = (gammaln(n + 1) - gammaln(kk + 1) - gammaln(n - kk + 1)
              + xlogy(kk, p) + xlogy(n - kk, 1.0 - p))
    return np.where(inside, np.exp(logpmf), 0.0)


@dataclass(frozen=True)
class FitResult:
    """A fitted (or table-supplied) cluster-law model."""

    family: Family
    params: tuple[float, ...]
    max_cdf_error: float = math.nan
    cdf_error: np.ndarray | None = field(default=None, repr=False)

    def pmf(self, k) -> np.ndarray:
        if self.family is Family.NEG_BINOMIAL:
            return nb_pmf(k, *self.params)
        if self.family is Family.POISSON:
            return poisson_pmf(k, *self.params)
        return binom_pmf(k, int(self.params[0]), self.params[1])

    def cdf(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=np.int64)
        kmax = int(k.max()) if k.size else 0
        cum = np.cumsum(self.pmf(np.arange(kmax + 1)))
        return cum[k]

    @property
    def mean(self) -> float:
        if self.family is Family.NEG_BINOMIAL:
            r, p = self.params
            return r * (1.0 - p) / p
        if self.family is Family.POISSON:
            return self.params[0]
        n, p = self.params
        return n * p

    def describe(self) -> str:
        if self.family is Family.NEG_BINOMIAL:
            return f"negbinomial(r={self.params[0]:.6g}, p={self.params[1]:.6g})"
        if self.family is Family.POISSON:
            return f"poisson(lambda={self.params[0]:.6g})"
        return f"binomial(n={int(self.params[0])}, p={self.params[1]:.6g})"


def _fit_nb_mle(values: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    n = weights.sum()
    mean = float((values * weights).sum() / n)
    if mean <= 0:
        raise FitDiverged("negative-binomial fit needs a positive mean")

    def nll(logr: float) -> float:
        r = math.exp(logr)
        p = r / (r + mean)
        ll = weights @ (gammaln(values + r) - gammaln(r) - gammaln(values + 1)
                        + r * math.log(p) + values * math.log1p(-p))
        return -float(ll)

    res = minimize_scalar(nll, bounds=(math.log(1e-8), math.log(1e8)),
                          method="bounded", options={"xatol": 1e-12})
    if not res.success or not math.isfinite(res.fun):
        raise FitDiverged(f"profile likelihood failed: {res.message}")
    r = math.exp(res.x)
    return r, r / (r + mean)


def fit(dist: ClusterDistribution, family: Family,
        allow_insufficient: bool = False) -> FitResult:
    """Maximum-likelihood fit of one family to the per-transmission law."""
    family = Family(family)
    if dist.n_lost < MIN_LOSSES and not allow_insufficient:
        raise InsufficientErrors(dist.n_lost)
    values, weights = dist.values_weights()
    values = values.astype(float)
    weights = weights.astype(float)
    mean = dist.mean

    if family is Family.POISSON:
        params: tuple[float, ...] = (mean,)
    elif family is Family.NEG_BINOMIAL:
        params = _fit_nb_mle(values, weights)
    else:
        n = max(1, dist.max_cluster)
        params = (float(n), mean / n)

    model = FitResult(family=family, params=params)
    ks = np.arange(dist.max_cluster + 1)
    err = np.cumsum(dist.pmf_grid()) - model.cdf(ks)
    return FitResult(family=family, params=params,
                     max_cdf_error=float(np.max(np.abs(err))), cdf_error=err)


def select_best(fits, tie_tol: float = 1e-4) -> FitResult:
    """Smallest worst-case CDF error wins; near-ties go to fewer parameters."""
    fits = list(fits)
    if not fits:
        raise ClusterStatsError("select_best needs at least one fit")
    best_err = min(f.max_cdf_error for f in fits)
    contenders = [f for f in fits if f.max_cdf_error <= best_err + tie_tol]
    return min(contenders, key=lambda f: (f.family.n_params, f.max_cdf_error))


def _quantile_from_cdf(cdf, target: float) -> int:
    if not 0.0 < target < 1.0:
        raise ClusterStatsError(f"target probability must be in (0, 1), got {target}")
    hi = 16
    while True:
        grid = np.arange(hi + 1)
        values = np.asarray(cdf(grid), dtype=float)
        if values[-1] >= target:
            break
        if hi >= _QUANTILE_CAP:
            raise ClusterStatsError(f"quantile({target}) beyond {_QUANTILE_CAP}")
        hi *= 2
    return int(np.searchsorted(values, target, side="left"))


def quantile(model, target_prob: float) -> int:
    """Smallest k with CDF(k) >= target_prob (works on fits and empirics)."""
    return _quantile_from_cdf(model.cdf, target_prob)


@dataclass(frozen=True)
class LatencyParams:
    """Timing constants for the cluster-to-latency map."""

    l0_s: float
    ipd_s: float
    pt_s: float

    def __post_init__(self):
        if self.l0_s < 0 or self.ipd_s < 0 or self.pt_s < 0:
            raise ClusterStatsError("latency parameters must be >= 0")

    @classmethod
    def from_baud(cls, baud: int, ipd_s: float = 0.0, t_proc_s: float = 10e-6,
                  guard_s: float = 28.5e-6) -> "LatencyParams":
        pt = 64.0 / baud
        return cls(l0_s=2 * pt + t_proc_s + guard_s, ipd_s=ipd_s, pt_s=pt)


def latency_from_clusters(n_lost: int, params: LatencyParams) -> float:
    """Latency after a run of n_lost losses: l0 + n_lost * (ipd + pt)."""
    if n_lost < 0:
        raise ClusterStatsError(f"n_lost must be >= 0, got {n_lost}")
    return params.l0_s + n_lost * (params.ipd_s + params.pt_s)


def prediction_error(model, empirical, targets=DEFAULT_TARGETS) -> np.ndarray:
    """Per-target quantile gap, model minus empirical, in packets."""
    return np.array([quantile(model, t) - quantile(empirical, t) for t in targets],
                    dtype=np.int64)


@dataclass(frozen=True)
class ModelTable:
    """PER-indexed cluster-law models with log-PER parameter interpolation."""

    pers: np.ndarray
    models: tuple[FitResult, ...]

    def __post_init__(self):
        if self.pers.size == 0:
            raise ClusterStatsError("model table needs at least one row")
        if np.any(np.diff(self.pers) <= 0):
            raise ClusterStatsError("model table PERs must be strictly increasing")

    @property
    def per_min(self) -> float:
        return float(self.pers[0])

    @property
    def per_max(self) -> float:
        return float(self.pers[-1])

    @classmethod
    def from_rows(cls, rows) -> "ModelTable":
        rows = sorted(rows, key=lambda r: r[0])
        pers = np.array([r[0] for r in rows], dtype=float)
        models = tuple(FitResult(family=Family(r[1]), params=tuple(r[2])) for r in rows)
        return cls(pers=pers, models=models)

    @classmethod
    def from_csv(cls, path) -> "ModelTable":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            expected = {"per", "family", "param1", "param2"}
            if reader.fieldnames is None or set(reader.fieldnames) != expected:
                raise ClusterStatsError(
                    f"{path}: header must be per,family,param1,param2, "
                    f"got {reader.fieldnames}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    family = Family(row["family"].strip())
                    params = [float(row["param1"])]
                    if row["param2"]:
                        params.append(float(row["param2"]))
                    rows.append((float(row["per"]), family, params))
                except (KeyError, ValueError) as exc:
                    raise ClusterStatsError(f"{path}:{lineno}: bad row: {exc}") from None
        return cls.from_rows(rows)

    @classmethod
    def bundled(cls) -> "ModelTable":
        path = importlib.resources.files("vlcrelay") / "data" / "cluster_models.csv"
        return cls.from_csv(path)

    def model_at(self, per: float) -> FitResult:
        """Model for a PER, interpolating parameters between bracketing rows.

        Same-family brackets interpolate each parameter geometrically in
        log(PER); across a family boundary the per-transmission mean is
        interpolated instead and a Poisson law carries it.
        """
        if per < self.per_min or per > self.per_max:
            # tolerate grid endpoints reconstructed with float round-off
            if math.isclose(per, self.per_min, rel_tol=1e-9):
                per = self.per_min
            elif math.isclose(per, self.per_max, rel_tol=1e-9):
                per = self.per_max
            else:
                raise OutOfRange(per, self.per_min, self.per_max)
        idx = int(np.searchsorted(self.pers, per))
        if idx < self.pers.size and np.isclose(per, self.pers[idx], rtol=1e-9):
            return self.models[idx]
        lo, hi = self.models[idx - 1], self.models[idx]
        w = ((math.log(per) - math.log(self.pers[idx - 1]))
             / (math.log(self.pers[idx]) - math.log(self.pers[idx - 1])))

        def geo(a: float, b: float) -> float:
            return math.exp((1.0 - w) * math.log(a) + w * math.log(b))

        if lo.family is hi.family and lo.family is not Family.BINOMIAL:
            params = tuple(geo(a, b) for a, b in zip(lo.params, hi.params))
            return FitResult(family=lo.family, params=params)
        return FitResult(family=Family.POISSON, params=(geo(lo.mean, hi.mean),))


@dataclass(frozen=True)
class SalPoint:
    per: float
    target: float
    packets: int
    latency_s: float


def sal_curve(per_grid, targets, table: ModelTable,
              params: LatencyParams) -> list[SalPoint]:
    """Statistically-averaged latency over a PER x target-probability grid."""
    points = []
    for per in per_grid:
        model = table.model_at(float(per))
        for target in targets:
            n = quantile(model, float(target))
            points.append(SalPoint(per=float(per), target=float(target), packets=n,
                                   latency_s=latency_from_clusters(n, params)))
    return points
