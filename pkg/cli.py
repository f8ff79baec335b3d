#!/usr/bin/env python3
"""
sybilscope command line

    python cli.py churn --input archive/ --out results/
    python cli.py uptime --input consensuses-2015-10.tar.xz --out results/
    python cli.py fingerprints --input archive/ --top 20 --out results/
    python cli.py neighbors --input archive/ --seed AccessNow000 --out results/
    python cli.py synth --spec settings/synth_example.yaml --out synthetic/
    python cli.py run --modules churn,uptime,fingerprints --input archive/ --out results/

Exit status: 0 clean, 2 alerts raised, 1 fatal error.
"""
import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Set

import pandas as pd
from pydantic import ValidationError

import churn
import fingerprints
import neighbors
import plots
import synth
import uptime
from config import Config, configure_logging
from dirdata import filter_consensus, latest_descriptors, select_range
from document_storage import DocumentStorage, LoadedArchive, iso, load_documents
from errors import ConfigError, NoInput, SybilscopeError
from models import Consensus, FilterSpec, FingerprintHistory, Flag, Module, RouterDescriptor, RunConfig

logger = logging.getLogger(__name__)

EXIT_CLEAN = 0
EXIT_FATAL = 1
EXIT_ALERT = 2
ALL_FLAGS = "all"
ANALYSES = [Module.CHURN, Module.UPTIME, Module.FINGERPRINTS, Module.NEIGHBORS]


@dataclass
class ModuleResult:
    """What one analysis module produced over the shared stream"""
    module: Module
    alerted: bool = False
    flagged: Set[str] = field(default_factory=set)
    artifacts: List[Path] = field(default_factory=list)
    report: List[str] = field(default_factory=list)
    # pyplot is not thread-safe, so figures are drawn after the modules finish
    plots: List[Callable[[], Path]] = field(default_factory=list)


@dataclass
class Stream:
    consensuses: List[Consensus]
    descriptors: Dict[str, RouterDescriptor]
    loaded: LoadedArchive


def _require_consensuses(stream: Stream, module: Module) -> List[Consensus]:
    if not stream.consensuses:
        raise NoInput(f"{module.value} needs at least one consensus in the selected range")
    return stream.consensuses


def run_churn(config: RunConfig, stream: Stream, storage: DocumentStorage) -> ModuleResult:
    result = ModuleResult(Module.CHURN)
    consensuses = _require_consensuses(stream, Module.CHURN)
    window = config.windows[0]
    series_map = churn.churn_series(consensuses, config.flags)

    raised = []
    for series in series_map.values():
        raised.extend(churn.alerts(series, config.threshold, window))
    result.artifacts.append(storage.save_frame(churn.churn_frame(series_map, config.threshold, window), "churn.csv"))
    result.artifacts.append(storage.save_frame(churn.alerts_frame(raised), "churn_alerts.csv"))
    result.artifacts.append(storage.save_frame(churn.churn_summary(series_map), "churn_summary.csv"))

    by_time = {c.valid_after: i for i, c in enumerate(consensuses)}
    for alert in raised:
        index = by_time[alert.timestamp]
        before, after = consensuses[index - 1].fingerprints(alert.flag), consensuses[index].fingerprints(alert.flag)
        result.flagged |= (after - before) if alert.direction == churn.NEW else (before - after)

    # the first consensus only primes the history
    history = FingerprintHistory(seen=set(consensuses[0].fingerprints()))
    rows = [{"timestamp": iso(consensuses[0].valid_after), "new_fingerprints": "", "alert": 0}]
    fresh_alerts = 0
    for consensus in consensuses[1:]:
        fresh = consensus.fingerprints() - history.seen
        count, alert = churn.new_fingerprint_alert(history, consensus, config.new_fingerprint_threshold)
        rows.append({"timestamp": iso(consensus.valid_after), "new_fingerprints": count, "alert": int(alert)})
        if alert:
            fresh_alerts += 1
            result.flagged |= fresh
    frame = pd.DataFrame(rows, columns=["timestamp", "new_fingerprints", "alert"])
    result.artifacts.append(storage.save_frame(frame, "new_fingerprints.csv"))

    if config.sweep_thresholds:
        sweeps = []
        for flag, series in series_map.items():
            sweep = churn.sweep_alerts(series, config.sweep_thresholds, config.windows)
            sweep.insert(0, "flag", flag.value if flag else "")
            sweeps.append(sweep)
        sweep_frame = pd.concat(sweeps, ignore_index=True)
        result.artifacts.append(storage.save_frame(sweep_frame, "churn_sweep.csv"))
        if config.plot:
            overall = sweep_frame[sweep_frame["flag"] == sweep_frame["flag"].iloc[0]]
            result.plots.append(lambda: plots.plot_sweep(overall, storage.path("churn_sweep.png")))
    if config.plot:
        result.plots.append(lambda: plots.plot_churn(series_map, config.threshold, storage.path("churn.png")))

    result.alerted = bool(raised) or fresh_alerts > 0
    result.report.append(f"churn: {len(consensuses)} consensuses, {len(raised)} churn alerts at window {window}, "
                         f"{fresh_alerts} new-fingerprint alerts (median {churn.median_new_fingerprints(history):g} new per consensus)")
    return result


def run_uptime(config: RunConfig, stream: Stream, storage: DocumentStorage) -> ModuleResult:
    result = ModuleResult(Module.UPTIME)
    matrix = uptime.build_matrix(_require_consensuses(stream, Module.UPTIME))
    order = uptime.cluster_order(matrix)
    result.artifacts.extend(uptime.write_images(storage, matrix, order, config.image_width))

    # relays online in every consensus share an all-black column; only
    # identical patterns with gaps are treated as suspicious
    for start, stop in order.identical_runs:
        column = matrix.cells[:, order.permutation[start]]
        if not column.all():
            result.flagged.update(matrix.relays[order.permutation[p]] for p in range(start, stop))
    result.report.append(f"uptime: {matrix.shape[1]} relays over {matrix.shape[0]} consensuses, "
                         f"{len(order.identical_runs)} identical runs")
    return result


def run_fingerprints(config: RunConfig, stream: Stream, storage: DocumentStorage) -> ModuleResult:
    result = ModuleResult(Module.FINGERPRINTS)
    records = fingerprints.track(_require_consensuses(stream, Module.FINGERPRINTS))
    ranked = fingerprints.rank(records)
    top = ranked[:config.top_n]
    result.artifacts.append(storage.save_frame(fingerprints.records_frame(ranked), "fingerprints.csv"))
    for record in top:
        if record.count > 1:
            result.flagged.update(record.fingerprints)
    result.report.append(f"fingerprints: {len(records)} addresses, top {len(top)} changers")
    result.report.append(fingerprints.format_table(top))
    if config.plot:
        result.plots.append(lambda: plots.plot_fingerprint_ranks(ranked, storage.path("fingerprints.png")))
    return result


def _ground_truth(source: str, stream: Stream) -> Dict[str, List[str]]:
    if source == "families":
        return {str(i): sorted(family) for i, family in enumerate(neighbors.mutual_families(stream.descriptors))}
    frame = pd.read_csv(source, dtype=str)
    if not {"group_id", "fingerprint"} <= set(frame.columns):
        raise ConfigError(f"{source}: expected group_id and fingerprint columns")
    return {name: sorted(rows["fingerprint"]) for name, rows in frame.groupby("group_id", sort=True)}


def run_neighbors(config: RunConfig, stream: Stream, storage: DocumentStorage) -> ModuleResult:
    result = ModuleResult(Module.NEIGHBORS)
    consensus = _require_consensuses(stream, Module.NEIGHBORS)[-1]
    index = neighbors.NeighborIndex(consensus, stream.descriptors, workers=config.workers)

    if config.seed is not None:
        seed = neighbors.resolve_seed(consensus, config.seed)
        ranking = index.nearest(seed, config.neighbor_top_n)
        result.artifacts.append(storage.save_frame(neighbors.ranking_frame(ranking), "neighbors.csv"))
        result.flagged.add(seed)
        result.flagged.update(ranking.fingerprints())
        result.report.append(f"neighbors of {seed} in consensus {iso(consensus.valid_after)}")
        result.report.append(neighbors.format_ranking(ranking))

    if config.accuracy is not None:
        groups = {}
        for name, members in _ground_truth(config.accuracy, stream).items():
            present = [fp for fp in members if fp in consensus]
            if len(present) >= 2:
                groups[name] = present
            else:
                logger.info("group %s has %d members in the consensus; skipping", name, len(present))
        frame = neighbors.accuracy_frame(index.ranker(), groups, consensus)
        result.artifacts.append(storage.save_frame(frame, "neighbors_accuracy.csv"))
        if frame.empty:
            result.report.append("neighbors: no ground-truth group with two members in the consensus")
        else:
            result.report.append(f"neighbors: {len(groups)} groups, {len(frame)} searches, "
                                 f"mean accuracy {frame['accuracy'].mean():.3f}, "
                                 f"{100 * (frame['accuracy'] == 1.0).mean():.1f}% perfect")
        if config.plot:
            values = frame["accuracy"].tolist()
            result.plots.append(lambda: plots.plot_accuracy_ecdf(values, storage.path("neighbors_accuracy.png")))
    return result


RUNNERS = {
    Module.CHURN: run_churn,
    Module.UPTIME: run_uptime,
    Module.FINGERPRINTS: run_fingerprints,
    Module.NEIGHBORS: run_neighbors,
}


def suspects_frame(results: Sequence[ModuleResult]) -> pd.DataFrame:
    """Relays flagged by at least two modules"""
    flagged_by: Dict[str, List[str]] = {}
    for result in results:
        for fingerprint in result.flagged:
            flagged_by.setdefault(fingerprint, []).append(result.module.value)
    rows = [{"fingerprint": fp, "modules": ";".join(modules), "count": len(modules)}
            for fp, modules in sorted(flagged_by.items()) if len(modules) >= 2]
    frame = pd.DataFrame(rows, columns=["fingerprint", "modules", "count"])
    return frame.sort_values(["count", "fingerprint"], ascending=[False, True], kind="stable").reset_index(drop=True)


def run_synth(config: RunConfig) -> int:
    baseline, sybils = synth.load_spec(config.synth_spec)
    stream = synth.generate(baseline, sybils)
    paths = synth.write_stream(stream, config.output_dir)
    print(f"✅ wrote {len(stream.consensuses)} consensuses, {len(stream.descriptors)} descriptors "
          f"and {len(stream.ledger)} ground-truth groups ({len(paths)} files) to {config.output_dir}")
    return EXIT_CLEAN


def load_stream(config: RunConfig) -> Stream:
    loaded = load_documents(config.inputs, workers=config.workers)
    selected = select_range(loaded.consensuses, config.date_from, config.date_to)
    filtered = [filter_consensus(c, config.filter) for c in selected]
    return Stream(consensuses=filtered, descriptors=latest_descriptors(loaded.descriptors), loaded=loaded)


def run(config: RunConfig) -> int:
    """Run the selected modules and write their artifacts; returns the exit status"""
    if Module.SYNTH in config.modules:
        return run_synth(config)

    stream = load_stream(config)
    storage = DocumentStorage(config.output_dir)
    modules = [m for m in ANALYSES if m in config.modules]

    if len(modules) > 1:
        with ThreadPoolExecutor(max_workers=len(modules)) as pool:
            futures = [pool.submit(RUNNERS[m], config, stream, storage) for m in modules]
            results = [future.result() for future in futures]
    else:
        results = [RUNNERS[modules[0]](config, stream, storage)]

    for result in results:
        for draw in result.plots:
            result.artifacts.append(draw())
        for line in result.report:
            print(line)
    if len(results) > 1:
        suspects = suspects_frame(results)
        storage.save_frame(suspects, "suspects.csv")
        print(f"suspects: {len(suspects)} relays flagged by two or more modules")

    print(f"read {stream.loaded.read} documents, skipped {stream.loaded.skipped} unreadable; "
          f"{len(stream.consensuses)} consensuses analysed")
    alerted = any(result.alerted for result in results)
    if alerted:
        print("⚠️  alerts raised")
    return EXIT_ALERT if alerted else EXIT_CLEAN


def _parse_moment(text: str, end_of_day: bool = False) -> datetime:
    try:
        moment = datetime.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a date or timestamp: {text!r}") from None
    if end_of_day and len(text) == 10:
        moment = datetime.combine(moment.date(), time(23, 59, 59))
    return moment


def _int_list(text: str) -> List[int]:
    return [int(item) for item in text.split(",") if item.strip()]


def _float_list(text: str) -> List[float]:
    return [float(item) for item in text.split(",") if item.strip()]


def _flag_list(text: str) -> List[Optional[Flag]]:
    flags = []
    for item in (token.strip() for token in text.split(",")):
        if item.lower() == ALL_FLAGS:
            flags.append(None)
        elif Flag.parse(item) is not None:
            flags.append(Flag(item))
        else:
            raise argparse.ArgumentTypeError(f"unknown flag {item!r}")
    return flags


def _module_list(text: str) -> List[Module]:
    try:
        return [Module(item.strip()) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", action="append", type=Path, default=[], help="Consensus/descriptor file, directory or tarball (repeatable)")
    common.add_argument("--from", dest="date_from", type=_parse_moment, help="Earliest valid-after, inclusive")
    common.add_argument("--to", dest="date_to", type=lambda t: _parse_moment(t, end_of_day=True), help="Latest valid-after, inclusive (a bare date covers the whole day)")
    common.add_argument("--filter-nickname", help="Keep relays with this nickname")
    common.add_argument("--filter-nickname-substring", action="store_true", help="Match --filter-nickname as a substring")
    common.add_argument("--filter-flag", type=Flag, help="Keep relays carrying this flag")
    common.add_argument("--filter-orport", type=int, help="Keep relays with this OR port")
    common.add_argument("--filter-dirport", type=int, help="Keep relays with this directory port")
    common.add_argument("--filter-address", help="Keep relays in this CIDR block or address prefix")
    common.add_argument("--filter-version", help="Keep relays running this Tor version")
    common.add_argument("--out", type=Path, default=Path(Config.OUTPUT_DIR), help=f"Output directory (default: {Config.OUTPUT_DIR})")
    common.add_argument("--workers", type=int, default=Config.WORKERS, help=f"Worker threads (default: {Config.WORKERS})")
    common.add_argument("--plot", action="store_true", help="Also write PNG figures")
    return common


def _add_churn_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--threshold", type=float, default=Config.CHURN_THRESHOLD, help=f"Alert threshold (default: {Config.CHURN_THRESHOLD})")
    parser.add_argument("--window", type=_int_list, default=Config.CHURN_WINDOWS, help="Moving-average windows, comma-separated; the first one drives alerts")
    parser.add_argument("--sweep", nargs="?", const=",".join(map(str, Config.SWEEP_THRESHOLDS)), type=_float_list, default=[], help="Count alerts over these thresholds for every window")
    parser.add_argument("--flags", type=_flag_list, default=[None], help="Flags to analyse separately, e.g. all,Guard,Exit,HSDir")
    parser.add_argument("--new-fingerprint-threshold", type=int, default=Config.NEW_FINGERPRINT_THRESHOLD, help="Alert when this many never-seen fingerprints appear at once")


def _add_uptime_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--width", type=int, default=Config.UPTIME_IMAGE_WIDTH, help=f"Maximum image width in columns (default: {Config.UPTIME_IMAGE_WIDTH})")


def _add_fingerprint_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--top", type=int, default=Config.FINGERPRINT_TOP_N, help=f"Number of top changers to print (default: {Config.FINGERPRINT_TOP_N})")


def _add_neighbor_options(parser: argparse.ArgumentParser, *count_flags: str) -> None:
    parser.add_argument("--seed", help="Seed relay fingerprint or nickname")
    parser.add_argument(*count_flags, dest="neighbor_top", type=int, default=Config.NEIGHBOR_TOP_N, help=f"Neighbors to return (default: {Config.NEIGHBOR_TOP_N})")
    parser.add_argument("--accuracy", help="Score rankings against 'families' or a ground_truth.csv")


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's exit 2"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(description="Detect Sybil relay groups in Tor directory archives")
    common = _common_options()
    commands = parser.add_subparsers(dest="command", required=True)

    _add_churn_options(commands.add_parser("churn", parents=[common], help="Joining/leaving churn and alerts"))
    _add_uptime_options(commands.add_parser("uptime", parents=[common], help="Clustered uptime images"))
    _add_fingerprint_options(commands.add_parser("fingerprints", parents=[common], help="Fingerprint changes per address"))
    _add_neighbor_options(commands.add_parser("neighbors", parents=[common], help="Nearest neighbors of a seed relay"),
                          "--top", "--neighbors")
    synth_parser = commands.add_parser("synth", parents=[common], help="Generate a synthetic stream")
    synth_parser.add_argument("--spec", type=Path, required=True, help="Flat key-value YAML spec")

    run_parser = commands.add_parser("run", parents=[common], help="Several modules over one stream")
    run_parser.add_argument("--modules", type=_module_list, required=True, help="Comma-separated: churn,uptime,fingerprints,neighbors")
    _add_churn_options(run_parser)
    _add_uptime_options(run_parser)
    _add_fingerprint_options(run_parser)
    _add_neighbor_options(run_parser, "--neighbors")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    modules = args.modules if args.command == "run" else [Module(args.command)]
    fields = {
        "inputs": args.input,
        "date_from": args.date_from,
        "date_to": args.date_to,
        "filter": FilterSpec(
            nickname=args.filter_nickname,
            nickname_substring=args.filter_nickname_substring,
            flag=args.filter_flag,
            or_port=args.filter_orport,
            dir_port=args.filter_dirport,
            address_prefix=args.filter_address,
            version=args.filter_version,
        ),
        "modules": modules,
        "output_dir": args.out,
        "plot": args.plot,
        "workers": args.workers,
    }
    optional = {
        "threshold": "threshold",
        "windows": "window",
        "sweep_thresholds": "sweep",
        "flags": "flags",
        "new_fingerprint_threshold": "new_fingerprint_threshold",
        "image_width": "width",
        "top_n": "top",
        "neighbor_top_n": "neighbor_top",
        "seed": "seed",
        "accuracy": "accuracy",
        "synth_spec": "spec",
    }
    for name, attribute in optional.items():
        value = getattr(args, attribute, None)
        if value is not None:
            fields[name] = value
    try:
        return RunConfig(**fields)
    except ValidationError as exc:
        error = exc.errors()[0]
        location = ".".join(str(part) for part in error["loc"]) or "options"
        raise ConfigError(f"{location}: {error['msg']}") from None


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        Config.validate()
        configure_logging()
        args = build_parser().parse_args(argv)
        return run(config_from_args(args))
    except SybilscopeError as exc:
        logger.error("%s", exc)
        return EXIT_FATAL
    except (OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
