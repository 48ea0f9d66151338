"""Command-line surface tying the toolkit into reproducible workflows.

Subcommands: simulate, analyze, sal, safety, ingest-per-table.  Every
command is a pure function of its inputs, flags, and seed; reruns write
byte-identical files.  Exit codes: 0 success, 2 configuration error,
3 I/O or format error, 4 analysis on a statistically thin loss sample.

Options may come from a flat ``key = value`` config file (``--config``);
explicit flags override file values.  ``VLCRELAY_OUT`` names the default
output directory for files whose path is not given explicitly.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import channel as _channel
from . import clusters as _clusters
from . import safety as _safety
from . import sim as _sim
from .node import ConfigError, LinkConfig, Mode, estimate_ber_upper

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_THIN_SAMPLE = 4

_CONFIG_KEYS = {
    "baud", "mode", "ipd_us", "beacon_interval_us", "t_proc_us", "guard_us",
    "per", "process", "distance_m", "tilted", "n", "seed", "seeds", "jobs",
    "out", "summary",
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _out_dir() -> Path:
    return Path(os.environ.get("VLCRELAY_OUT", "."))


def _default_out(name: str) -> Path:
    directory = _out_dir()
    directory.mkdir(parents=True, exist_ok=True)
    return directory / name


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` file; blank lines and ``#`` comments ignored."""
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(EXIT_CONFIG, f"{path}:{lineno}: expected key = value")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise CliError(EXIT_CONFIG, f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def _merge_config(args: argparse.Namespace, parser: argparse.ArgumentParser):
    """Fill unset flags from the config file; flags win."""
    if not args.config:
        return
    file_values = read_config_file(args.config)
    translate = {
        "baud": ("baud", int), "mode": ("mode", str),
        "ipd_us": ("ipd_us", float), "beacon_interval_us": ("beacon_interval_us", float),
        "t_proc_us": ("t_proc_us", float), "guard_us": ("guard_us", float),
        "per": ("per", float), "process": ("process", str),
        "distance_m": ("distance_m", float), "tilted": ("tilted", _parse_bool),
        "n": ("n", int), "seed": ("seeds", lambda s: [int(s)]),
        "seeds": ("seeds", lambda s: [int(x) for x in s.split(",")]),
        "jobs": ("jobs", int), "out": ("out", str), "summary": ("summary", str),
    }
    for key, value in file_values.items():
        dest, conv = translate[key]
        if getattr(args, dest, None) is None:
            try:
                setattr(args, dest, conv(value))
            except ValueError as exc:
                raise CliError(EXIT_CONFIG, f"config key {key}: {exc}") from None


def _parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _format_float(x: float) -> str:
    return repr(float(x))


def _build_link_config(args: argparse.Namespace) -> LinkConfig:
    try:
        return LinkConfig(
            baud=args.baud if args.baud is not None else 230000,
            mode=Mode(args.mode if args.mode is not None else "broadcast"),
            ipd_s=(args.ipd_us if args.ipd_us is not None else 0.0) / 1e6,
            beacon_interval_s=(args.beacon_interval_us
                               if args.beacon_interval_us is not None else 1e5) / 1e6,
            t_proc_s=(args.t_proc_us if args.t_proc_us is not None else 10.0) / 1e6,
            guard_s=(args.guard_us if args.guard_us is not None else 28.5) / 1e6,
        )
    except (ConfigError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def _build_process(args: argparse.Namespace) -> _channel.ErrorProcess:
    given = [name for name, val in
             (("per", args.per), ("process", args.process), ("distance_m", args.distance_m))
             if val is not None]
    if len(given) > 1:
        raise CliError(EXIT_CONFIG, f"give only one of per/process/distance_m, got {given}")
    try:
        if args.process is not None:
            return _channel.process_from_spec(args.process)
        if args.distance_m is not None:
            baud = args.baud if args.baud is not None else 230000
            table = (_channel.PerDistanceTable.bundled_tilted() if args.tilted
                     else _channel.PerDistanceTable.bundled())
            return _channel.IidPacket(p_loss=_channel.per_at(table, args.distance_m, baud))
        per = args.per if args.per is not None else 0.0
        if not 0.0 <= per <= 1.0:
            raise CliError(EXIT_CONFIG, f"per must be in [0, 1], got {per}")
        return _channel.IidPacket(p_loss=per)
    except _channel.ChannelError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def _summary_lines(seed: int, summary: _sim.Summary) -> list[str]:
    lat_min = summary.min_latency_s * 1e6
    lat_mean = summary.mean_latency_s * 1e6
    return [
        f"seed={seed}",
        f"per={_format_float(summary.per)}",
        f"ber_upper={_format_float(estimate_ber_upper(summary.per))}",
        f"n_tx={summary.n_tx}",
        f"n_received={summary.n_received}",
        f"n_relayed={summary.n_relayed}",
        f"n_blocked={summary.n_blocked}",
        f"min_latency_us={_format_float(lat_min)}",
        f"mean_latency_us={_format_float(lat_mean)}",
        f"max_cluster={summary.max_cluster}",
    ]


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _build_link_config(args)
    process = _build_process(args)
    n = args.n if args.n is not None else 10000
    if n < 1:
        raise CliError(EXIT_CONFIG, f"n must be >= 1, got {n}")
    seeds = args.seeds if args.seeds else [0]
    jobs = args.jobs if args.jobs is not None else 1
    if jobs < 1:
        raise CliError(EXIT_CONFIG, f"jobs must be >= 1, got {jobs}")

    out = Path(args.out) if args.out else _default_out("trace.csv")

    def trace_path(seed: int) -> Path:
        if len(seeds) == 1:
            return out
        return out.with_name(f"{out.stem}_seed{seed}{out.suffix}")

    def one(seed: int) -> tuple[int, _sim.Summary]:
        trace = _sim.run(config, process, n, seed)
        _sim.write_trace_csv(trace, trace_path(seed))
        return seed, _sim.summarize(trace)

    try:
        if jobs > 1 and len(seeds) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(one, seeds))
        else:
            results = [one(seed) for seed in seeds]
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None

    results.sort(key=lambda item: item[0])
    lines: list[str] = []
    for seed, summary in results:
        lines.extend(_summary_lines(seed, summary))
        lines.append("")
    text = "\n".join(lines).rstrip("\n") + "\n"
    print(text, end="")
    if args.summary:
        try:
            Path(args.summary).write_text(text)
        except OSError as exc:
            raise CliError(EXIT_IO, str(exc)) from None
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    try:
        trace = _sim.read_trace_csv(args.trace)
    except _sim.TraceFormatError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {args.trace}: {exc}") from None

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", _clusters.InsufficientErrorsWarning)
        dist = _clusters.extract_clusters(trace)

    targets = _parse_targets(args.targets)
    clusters_out = Path(args.clusters_out) if args.clusters_out else _default_out("clusters.csv")
    report_out = Path(args.report_out) if args.report_out else _default_out("report.txt")

    grid = np.arange(dist.max_cluster + 1)
    pmf = dist.pmf_grid()
    cdf = np.cumsum(pmf)
    counts = [dist.n_zero] + [dist.counts.get(int(k), 0) for k in grid[1:]]
    try:
        with open(clusters_out, "w", newline="\n") as fh:
            fh.write("k,count,pmf,cdf\n")
            for k, c, q, s in zip(grid, counts, pmf, cdf):
                fh.write(f"{int(k)},{int(c)},{_format_float(q)},{_format_float(s)}\n")
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None

    lines = [
        f"trace={args.trace}",
        f"n_packets={dist.n_slots}",
        f"n_lost={dist.n_lost}",
        f"n_runs={dist.n_runs}",
        f"max_cluster={dist.max_cluster}",
        f"n_windows={dist.n_opportunities}",
    ]
    for t in targets:
        lines.append(f"empirical_quantile_{t}={dist.quantile(t)}")

    if dist.insufficient:
        lines.append(f"warning=only {dist.n_lost} losses; need >= "
                     f"{_clusters.MIN_LOSSES} for model fits")
        code = EXIT_THIN_SAMPLE
    else:
        fits = []
        for family in _clusters.Family:
            try:
                fits.append(_clusters.fit(dist, family))
            except _clusters.FitDiverged as exc:
                lines.append(f"fit_{family.value}=diverged ({exc})")
        for f in fits:
            lines.append(f"fit_{f.family.value}={f.describe()} "
                         f"max_cdf_error={_format_float(f.max_cdf_error)}")
        best = _clusters.select_best(fits)
        lines.append(f"best={best.family.value}")
        for t in targets:
            lines.append(f"model_quantile_{t}={_clusters.quantile(best, t)}")
        code = EXIT_OK

    text = "\n".join(lines) + "\n"
    print(text, end="")
    try:
        report_out.write_text(text)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    return code


def _parse_targets(spec: str | None) -> list[float]:
    if not spec:
        return list(_clusters.DEFAULT_TARGETS)
    try:
        targets = [float(x) for x in spec.split(",") if x.strip()]
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"targets: {exc}") from None
    if not targets or not all(0.0 < t < 1.0 for t in targets):
        raise CliError(EXIT_CONFIG, f"targets must be probabilities in (0, 1), got {spec}")
    return targets


def cmd_sal(args: argparse.Namespace) -> int:
    try:
        table = (_clusters.ModelTable.from_csv(args.models) if args.models
                 else _clusters.ModelTable.bundled())
    except _clusters.ClusterStatsError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None

    targets = _parse_targets(args.targets)
    baud = args.baud if args.baud is not None else 230000
    ipd_s = (args.ipd_us if args.ipd_us is not None else 0.0) / 1e6
    if baud <= 0:
        raise CliError(EXIT_CONFIG, f"baud must be positive, got {baud}")
    params = _clusters.LatencyParams.from_baud(baud, ipd_s=ipd_s)

    if args.per_grid:
        try:
            grid = [float(x) for x in args.per_grid.split(",") if x.strip()]
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, f"per-grid: {exc}") from None
    else:
        grid = [float(p) for p in table.pers]

    try:
        points = _clusters.sal_curve(grid, targets, table, params)
    except _clusters.OutOfRange as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None

    out = Path(args.out) if args.out else _default_out("sal.csv")
    lines = ["per,target,packets,latency_us"]
    for pt in points:
        lines.append(f"{_format_float(pt.per)},{_format_float(pt.target)},"
                     f"{pt.packets},{_format_float(pt.latency_s * 1e6)}")
    text = "\n".join(lines) + "\n"
    try:
        out.write_text(text)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    print(text, end="")
    return EXIT_OK


def cmd_safety(args: argparse.Namespace) -> int:
    try:
        rows = (_safety.read_scenarios_csv(args.scenarios) if args.scenarios
                else _safety.bundled_scenarios())
    except _safety.SafetyError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None

    kwargs = {}
    if args.mu is not None:
        kwargs["mu"] = args.mu
    if args.g is not None:
        kwargs["g"] = args.g
    if args.baud is not None:
        kwargs["baud"] = args.baud
    if args.target is not None:
        kwargs["target"] = args.target
    if args.vlc_reaction_ms is not None:
        kwargs["vlc_reaction_s"] = args.vlc_reaction_ms / 1e3
    try:
        table = _safety.comparison_table(rows, **kwargs)
    except _safety.SafetyError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None

    out = Path(args.out) if args.out else _default_out("safety.csv")
    header = ("v_kmh,distance_m,per,vlc_reaction_latency_ms,vlc_relay_latency_ms,"
              "brake_m,reaction_vlc_m,reaction_rf_m,reaction_human_m,"
              "stop_vlc_m,stop_rf_m,stop_human_m")
    lines = [header]
    for r in table:
        lines.append(",".join([
            _format_float(r.v_kmh), _format_float(r.distance_m), _format_float(r.per),
            _format_float(r.vlc_reaction_latency_s * 1e3),
            _format_float(r.vlc_relay_latency_s * 1e3),
            _format_float(r.brake_m),
            _format_float(r.reaction_vlc_m), _format_float(r.reaction_rf_m),
            _format_float(r.reaction_human_m),
            _format_float(r.stop_vlc_m), _format_float(r.stop_rf_m),
            _format_float(r.stop_human_m),
        ]))
    text = "\n".join(lines) + "\n"
    try:
        out.write_text(text)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None

    print(f"{'v':>5} {'D':>6} {'per':>9} {'brake':>8} "
          f"{'r_vlc':>8} {'r_rf':>8} {'r_hum':>8} {'s_vlc':>8} {'s_rf':>8} {'s_hum':>8}")
    for r in table:
        print(f"{r.v_kmh:5.0f} {r.distance_m:6.1f} {r.per:9.2g} {r.brake_m:8.2f} "
              f"{r.reaction_vlc_m:8.2f} {r.reaction_rf_m:8.2f} {r.reaction_human_m:8.2f} "
              f"{r.stop_vlc_m:8.2f} {r.stop_rf_m:8.2f} {r.stop_human_m:8.2f}")
    return EXIT_OK


def cmd_ingest_per_table(args: argparse.Namespace) -> int:
    try:
        table = _channel.PerDistanceTable.from_csv(args.table)
    except _channel.ChannelError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    print(f"rows={table.distances_m.size}")
    print(f"bauds={sorted(set(int(b) for b in table.bauds))}")
    if args.out:
        try:
            table.to_csv(args.out)
        except OSError as exc:
            raise CliError(EXIT_IO, str(exc)) from None
    if args.distance_m is not None:
        if args.baud is None:
            raise CliError(EXIT_CONFIG, "--baud is required with --distance-m")
        try:
            per = _channel.per_at(table, args.distance_m, args.baud)
        except _channel.ChannelError as exc:
            raise CliError(EXIT_CONFIG, str(exc)) from None
        print(f"per={_format_float(per)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlcrelay",
        description="Simulate and analyze a visible-light decode-and-relay link.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a link simulation to a trace CSV")
    sim.add_argument("--config", help="flat key = value config file")
    sim.add_argument("--baud", type=int)
    sim.add_argument("--mode", choices=[m.value for m in Mode])
    sim.add_argument("--ipd-us", dest="ipd_us", type=float)
    sim.add_argument("--beacon-interval-us", dest="beacon_interval_us", type=float)
    sim.add_argument("--t-proc-us", dest="t_proc_us", type=float)
    sim.add_argument("--guard-us", dest="guard_us", type=float)
    sim.add_argument("--per", type=float, help="iid packet-loss probability")
    sim.add_argument("--process", help="error process spec, e.g. gilbert-elliott:p_gb=...")
    sim.add_argument("--distance-m", dest="distance_m", type=float,
                     help="derive PER from the bundled distance table")
    sim.add_argument("--tilted", action="store_const", const=True, default=None,
                     help="use the tilted-lamp distance table")
    sim.add_argument("--n", type=int, help="number of packets (default 10000)")
    sim.add_argument("--seed", dest="seeds", type=int, action="append",
                     help="rng seed; repeat for a multi-seed batch")
    sim.add_argument("--jobs", type=int, help="concurrent seeds (default 1)")
    sim.add_argument("--out", help="trace CSV path")
    sim.add_argument("--summary", help="also write the summary to this path")
    sim.set_defaults(func=cmd_simulate, config=None)

    ana = sub.add_parser("analyze", help="cluster statistics and model fits for a trace")
    ana.add_argument("trace", help="trace CSV from simulate")
    ana.add_argument("--targets", help="comma-separated target probabilities")
    ana.add_argument("--clusters-out", dest="clusters_out")
    ana.add_argument("--report-out", dest="report_out")
    ana.set_defaults(func=cmd_analyze)

    sal = sub.add_parser("sal", help="latency-at-target curve over a PER grid")
    sal.add_argument("--models", help="model table CSV (default: bundled)")
    sal.add_argument("--targets", help="comma-separated target probabilities")
    sal.add_argument("--per-grid", dest="per_grid", help="comma-separated PER values")
    sal.add_argument("--baud", type=int)
    sal.add_argument("--ipd-us", dest="ipd_us", type=float)
    sal.add_argument("--out")
    sal.set_defaults(func=cmd_sal)

    saf = sub.add_parser("safety", help="stopping-distance actor comparison")
    saf.add_argument("scenarios", nargs="?", help="scenario CSV (default: bundled)")
    saf.add_argument("--mu", type=float)
    saf.add_argument("--g", type=float)
    saf.add_argument("--baud", type=int)
    saf.add_argument("--target", type=float)
    saf.add_argument("--vlc-reaction-ms", dest="vlc_reaction_ms", type=float)
    saf.add_argument("--out")
    saf.set_defaults(func=cmd_safety)

    ing = sub.add_parser("ingest-per-table", help="validate a PER-vs-distance CSV")
    ing.add_argument("table", help="CSV with header distance_m,baud,per")
    ing.add_argument("--out", help="write the normalized table here")
    ing.add_argument("--distance-m", dest="distance_m", type=float)
    ing.add_argument("--baud", type=int)
    ing.set_defaults(func=cmd_ingest_per_table)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    if getattr(args, "config", None):
        try:
            _merge_config(args, parser)
        except CliError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return exc.code
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
