"""Campaign runner CLI.

Reads a flat key=value config file (every SimConfig field plus the campaign
axes), sweeps the (architecture x TTT policy x CRT period x UDP interarrival)
grid with seeded Monte Carlo repetitions, and writes `runs.csv` and
`campaign.csv` (plus optional per-run artifacts).  Output bytes are
independent of worker count: results are ordered by (cell, run index).
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .engine import ConfigError, SimConfig
from .metrics import (aggregate_campaign, campaign_csv, runs_csv,
                      throughput_series_csv)
from .simrun import prepare_run, simulate_run

_BOOL_FIELDS: set[str] = set()
_STR_FIELDS = {"architecture", "ttt_mode", "scenario"}
_INT_FIELDS = {
    "enb_array_elements", "ue_array_elements", "enb_directions",
    "ue_directions", "n_buildings", "rlc_buffer_bytes", "udp_payload_bytes",
    "receiver_parallelism", "seed", "n_bearers",
    "rrc_switch_bytes_per_bearer", "rrc_reconf_bytes", "rrc_reconf_hh_bytes",
    "rrc_complete_bytes", "x2_control_bytes", "rt_report_bytes",
    "doppler_paths",
}

CAMPAIGN_KEYS = {
    "architectures", "ttt_modes", "parallelism", "t_udp_us", "repetitions",
    "base_seed", "scenario", "emit_throughput_series", "log_events",
}


@dataclass
class CampaignSpec:
    """Resolved sweep description: base config plus the grid axes."""

    base: SimConfig = field(default_factory=SimConfig)
    architectures: tuple[str, ...] = ("dc", "hh")
    ttt_modes: tuple[str, ...] = ("fixed", "dynamic")
    parallelism: tuple[int, ...] = (16, 2, 1)
    t_udp_us: tuple[float, ...] = (20.0, 80.0)
    repetitions: int = 20
    base_seed: int = 1
    scenario: str = "default"
    emit_throughput_series: bool = False
    log_events: bool = False

    def cells(self) -> list[SimConfig]:
        out = []
        for arch in self.architectures:
            for ttt in self.ttt_modes:
                for l in self.parallelism:
                    for t_udp in self.t_udp_us:
                        out.append(self.base.replace(
                            architecture=arch, ttt_mode=ttt,
                            receiver_parallelism=l,
                            udp_interarrival_s=t_udp * 1e-6,
                            scenario=self.scenario))
        return out


def corner_defaults(spec: CampaignSpec) -> CampaignSpec:
    """The corner comparison runs DC only, fixed vs dynamic, at 20 us."""
    spec.architectures = ("dc",)
    spec.t_udp_us = (20.0,)
    return spec


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _STR_FIELDS:
        return raw
    if key in _INT_FIELDS:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"field {key!r} expects an integer: {exc}") from exc
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"field {key!r} expects a number: {exc}") from exc


def _parse_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def parse_config(path: str | Path | None = None,
                 overrides: dict[str, str] | None = None) -> CampaignSpec:
    """Build a CampaignSpec from a key=value file plus CLI overrides.

    Unknown keys and out-of-range values raise ConfigError naming the key.
    """
    entries: dict[str, str] = {}
    if path is not None:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    if overrides:
        entries.update(overrides)

    spec = CampaignSpec()
    config_kwargs: dict[str, object] = {}
    sim_fields = set(SimConfig.field_names())
    for key, value in entries.items():
        if key in CAMPAIGN_KEYS:
            if key == "architectures":
                spec.architectures = tuple(_parse_list(value))
            elif key == "ttt_modes":
                spec.ttt_modes = tuple(_parse_list(value))
            elif key == "parallelism":
                spec.parallelism = tuple(int(v) for v in _parse_list(value))
            elif key == "t_udp_us":
                spec.t_udp_us = tuple(float(v) for v in _parse_list(value))
            elif key == "repetitions":
                spec.repetitions = int(value)
            elif key == "base_seed":
                spec.base_seed = int(value)
            elif key == "scenario":
                spec.scenario = value
            elif key == "emit_throughput_series":
                spec.emit_throughput_series = value.lower() in ("1", "true", "yes")
            elif key == "log_events":
                spec.log_events = value.lower() in ("1", "true", "yes")
        elif key in sim_fields:
            config_kwargs[key] = _parse_value(key, value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if spec.scenario not in ("default", "corner"):
        raise ConfigError(f"scenario must be 'default' or 'corner', got {spec.scenario!r}")
    if spec.repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    if spec.scenario == "corner" and "architectures" not in entries:
        corner_defaults(spec)
        if "t_udp_us" in entries:
            spec.t_udp_us = tuple(float(v) for v in _parse_list(entries["t_udp_us"]))
    try:
        spec.base = SimConfig(**config_kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return spec


def _run_cell_job(args) -> tuple[int, int, dict, np.ndarray | None, list | None]:
    (cell_index, run_index, config, want_series, want_log) = args
    result = simulate_run(config, run_index, collect_log=want_log)
    series = result.throughput_bps if want_series else None
    return cell_index, run_index, result.summary, series, result.event_log


def run_campaign(spec: CampaignSpec, out_dir: str | Path, jobs: int = 1) -> Path:
    """Run every (cell, repetition), then write deterministic CSV outputs."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc

    cells = spec.cells()
    jobs_args = []
    for cell_index, cell in enumerate(cells):
        for run_index in range(spec.repetitions):
            config = cell.replace(seed=spec.base_seed + run_index)
            jobs_args.append((cell_index, run_index, config,
                              spec.emit_throughput_series, spec.log_events))

    results: dict[tuple[int, int], tuple] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for cell_index, run_index, summary, series, log in pool.map(
                    _run_cell_job, jobs_args, chunksize=1):
                results[(cell_index, run_index)] = (summary, series, log)
    else:
        for args in jobs_args:
            cell_index, run_index, summary, series, log = _run_cell_job(args)
            results[(cell_index, run_index)] = (summary, series, log)

    ordered = [results[key] for key in sorted(results)]
    summaries = [item[0] for item in ordered]
    (out / "runs.csv").write_text(runs_csv(summaries))
    (out / "campaign.csv").write_text(campaign_csv(aggregate_campaign(summaries)))
    if spec.emit_throughput_series:
        series_by_run = {}
        for summary, series, _ in ordered:
            key = (summary.scenario, summary.architecture, summary.ttt_mode,
                   summary.crt_period_ms, summary.t_udp_us, summary.run_index)
            series_by_run[key] = series
        (out / "throughput_series.csv").write_text(
            throughput_series_csv(series_by_run))
    if spec.log_events:
        lines = ["time_s,event,source,target,detail"]
        for summary, _, log in ordered:
            tag = (f"{summary.architecture}/{summary.ttt_mode}/"
                   f"{summary.crt_period_ms}ms/{summary.t_udp_us}us/"
                   f"run{summary.run_index}")
            for t, kind, source, target, detail in log or []:
                lines.append(f"{t!r},{tag}:{kind},{source},{target},{detail}")
        (out / "events.csv").write_text("\n".join(lines) + "\n")
    return out


def emit_example_trace(config: SimConfig, link_id: int, out_path: str | Path) -> int:
    """Dump one link's (true, raw, filtered) SINR at the CRT cadence."""
    _, traces, series = prepare_run(config)
    if link_id not in traces.link_ids:
        raise ConfigError(
            f"unknown mmWave cell id {link_id}; choose from {traces.link_ids}")
    i = traces.link_ids.index(link_id)
    lines = ["t_s,gamma_db,gamma_hat_db,gamma_bar_db"]
    for n in range(1, series.n_crts + 1):
        t_s = series.times_ns[n] / 1e9
        lines.append(f"{t_s!r},{series.true_db[i, n]!r},"
                     f"{series.raw_db[i, n]!r},{series.filtered_db[i, n]!r}")
    Path(out_path).write_text("\n".join(lines) + "\n")
    return series.n_crts


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="simulate",
        description="Dual-connectivity mmWave handover simulation campaign")
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel worker processes")
    parser.add_argument("--seed", type=int, help="campaign base seed")
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--trace-link", type=int, dest="trace_link",
                        help="emit a SINR trace CSV for this mmWave cell id")
    parser.add_argument("--scenario", choices=["default", "corner"],
                        help="scenario layout override")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    args = parser.parse_args(argv)

    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            parser.error(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.scenario:
        overrides["scenario"] = args.scenario

    try:
        spec = parse_config(args.config, overrides)
        if args.seed is not None:
            spec.base_seed = args.seed
        if args.trace_link is not None:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            config = spec.base.replace(seed=spec.base_seed,
                                       scenario=spec.scenario)
            path = out / f"sinr_trace_enb{args.trace_link}.csv"
            rows = emit_example_trace(config, args.trace_link, path)
            print(f"wrote {rows} samples to {path}")
            return 0
        out = run_campaign(spec, args.out, jobs=max(1, args.jobs))
        print(f"campaign complete: {out/'runs.csv'}")
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - unexpected failure path
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
