"""Command-line front end: ``run``, ``compare`` and ``thermal``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .coordinator import (FLOW_LOG_HEADER, ProfileCache, run_comm_only, run_cosim, run_decoupled)
from .errors import ConfigError, CosimError
from .hardware import load_config
from .power import PowerTrace
from .thermal import (build_thermal_model, steady_state_solve, transient_solve, write_heatmap_csv,
                      write_thermal_csv)
from .workload import DnnModel, generate_workload, load_library
from .zoo import builtin_library

EXIT_CONFIG = 2
EXIT_UNMAPPABLE = 3
EMIT_CHOICES = ("report", "flows", "power", "thermal", "debug-trace")

log = logging.getLogger("chiplet_cosim")


@dataclass
class RunManifest:
    config_path: str
    workload: dict
    mode: str = "cosim"
    pipelined: bool = True
    seed: int = 0
    out: Path = Path("out")
    emit: tuple = ("report",)
    weight_stationary: bool = False
    mapper: str = "nearest-neighbor"
    meta: dict = field(default_factory=dict)


def load_workload_doc(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"workload file not found: {p}", "workload")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", "workload") from None
    if not isinstance(doc, dict):
        raise ConfigError("workload document must be a JSON object", "workload")
    if isinstance(doc.get("library"), str):
        lib_path = Path(doc["library"])
        if not lib_path.is_absolute():
            lib_path = p.parent / lib_path
        doc["library"] = str(lib_path)
    return doc


def build_workload(doc: dict, seed: int, inferences=None) -> list:
    """Models described by a workload document.

    Keys: ``models`` (explicit list of names) or ``count`` + ``mix``;
    ``inferences``; ``scale`` for the built-in models; ``library`` (path or
    inline mapping) for additional models.
    """
    library = dict(builtin_library(float(doc.get("scale", 1.0)), int(doc.get("bytes_per_value", 1))))
    if "library" in doc:
        library.update(load_library(doc["library"]))
    n_inf = inferences if inferences is not None else int(doc.get("inferences", 1))
    if n_inf < 1:
        raise ConfigError("inferences must be positive", "inferences")
    if "models" in doc:
        names = doc["models"]
        unknown = sorted({n for n in names if n not in library})
        if unknown:
            raise ConfigError(f"unknown models {unknown}", "workload.models")
        return [DnnModel(i, name, library[name], n_inf, i) for i, name in enumerate(names)]
    if "mix" not in doc:
        raise ConfigError("workload needs 'models' or 'count' and 'mix'", "workload")
    return generate_workload(int(doc.get("count", 1)), doc["mix"], n_inf, seed, library)


def _meta(manifest: RunManifest, config) -> dict:
    return {"seed": manifest.seed, "config_hash": config.digest(), "version": __version__, **manifest.meta}


def _comment_header(fh, meta):
    for key, value in sorted(meta.items()):
        fh.write(f"# {key}={value}\n")


def write_report(path, report) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")


def write_flow_log(path, report, meta) -> None:
    with open(path, "w", newline="") as fh:
        _comment_header(fh, meta)
        w = csv.writer(fh)
        w.writerow(FLOW_LOG_HEADER)
        w.writerows(report.flow_rows())


def write_event_trace(path, report, meta) -> None:
    with open(path, "w", newline="") as fh:
        _comment_header(fh, meta)
        w = csv.writer(fh)
        w.writerow(("time_ns", "kind", "detail"))
        w.writerows(report.event_trace or [])


def write_thermal_outputs(out: Path, config, trace, meta, downsample=None, all_nodes=False):
    model = build_thermal_model(config)
    for c in trace.chiplets:
        if c not in model.injection:
            raise ConfigError(f"power trace chiplet {c} is not in the config", "trace")
    steady = steady_state_solve(model, trace.average())
    write_heatmap_csv(out / "heatmap_steady.csv", model, steady, meta)
    if downsample is None:
        downsample = max(1, trace.n_bins // 1000)
    history = transient_solve(model, trace, downsample=downsample)
    write_heatmap_csv(out / "heatmap_final.csv", model, history.final, meta)
    nodes = None if all_nodes else [n for idx in model.injection.values() for n in idx]
    write_thermal_csv(out / "thermal.csv", history, sorted(nodes) if nodes else nodes, meta)
    return model, steady, history


def execute(manifest: RunManifest, config=None, workload=None):
    config = config or load_config(manifest.config_path)
    if workload is None:
        workload = build_workload(manifest.workload, manifest.seed)
    meta = _meta(manifest, config)
    kwargs = dict(weight_stationary=manifest.weight_stationary, mapper=manifest.mapper, meta=meta)
    if manifest.mode == "cosim":
        report = run_cosim(config, workload, "pipelined" if manifest.pipelined else "non_pipelined",
                           trace_events="debug-trace" in manifest.emit, **kwargs)
    elif manifest.mode == "decoupled":
        report = run_decoupled(config, workload, **kwargs)
    elif manifest.mode == "comm-only":
        report = run_comm_only(config, workload, **kwargs)
    else:
        raise ConfigError(f"unknown mode {manifest.mode!r}", "mode")
    return config, report


def cmd_run(manifest: RunManifest) -> int:
    t0 = time.perf_counter()
    config, report = execute(manifest)
    out = Path(manifest.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(manifest, config)
    emit = set(manifest.emit)
    if "report" in emit:
        write_report(out / "report.json", report)
    if "flows" in emit:
        write_flow_log(out / "flows.csv", report, meta)
    if "debug-trace" in emit and manifest.mode == "cosim":
        write_event_trace(out / "events.csv", report, meta)
    if emit & {"power", "thermal"}:
        if manifest.mode != "cosim":
            raise ConfigError("power and thermal outputs need --mode cosim", "emit")
        trace = report.power_trace()
        trace.meta.update(meta)
        if "power" in emit:
            trace.write_csv(out / "power.csv")
        if "thermal" in emit:
            write_thermal_outputs(out, config, trace, meta)
    (out / "runtime.json").write_text(json.dumps({"wall_s": time.perf_counter() - t0, **meta}, sort_keys=True)
                                      + "\n")
    if report.skipped:
        for m in report.skipped:
            print(f"model {m['id']} ({m['name']}) needs {m['weight_bytes']} B and can never be mapped",
                  file=sys.stderr)
        return EXIT_UNMAPPABLE
    return 0


COMPARE_HEADER = ("inferences", "model", "instances", "cosim_ns", "decoupled_ns", "comm_only_ns",
                  "underest_decoupled", "underest_comm_only", "cosim_inference_ns", "decoupled_inference_ns",
                  "comm_only_inference_ns", "underest_decoupled_inference", "underest_comm_only_inference")


def compare(manifest: RunManifest, sweep, config=None) -> list:
    """Cosim and both baselines per sweep point; baselines reuse the cosim mappings."""
    config = config or load_config(manifest.config_path)
    meta = _meta(manifest, config)
    cache = ProfileCache(config, manifest.mapper)
    rows = []
    for n in sweep:
        workload = build_workload(manifest.workload, manifest.seed, inferences=n)
        kwargs = dict(weight_stationary=manifest.weight_stationary, mapper=manifest.mapper, meta=meta)
        cosim = run_cosim(config, workload, "pipelined" if manifest.pipelined else "non_pipelined", **kwargs)
        dec = run_decoupled(config, workload, cache=cache, placements=cosim.placements, **kwargs)
        com = run_comm_only(config, workload, cache=cache, placements=cosim.placements, **kwargs)
        span = [r.by_name("latency_ns") for r in (cosim, dec, com)]
        per_inf = [r.by_name("mean_inference_latency_ns") for r in (cosim, dec, com)]
        counts = {}
        for m in cosim.windowed_models():
            counts[m["name"]] = counts.get(m["name"], 0) + 1
        for name in sorted(span[0]):
            c, d, o = (s[name] for s in span)
            ci, di, oi = (s[name] for s in per_inf)
            rows.append((n, name, counts[name], c, d, o, _under(c, d), _under(c, o), ci, di, oi,
                         _under(ci, di), _under(ci, oi)))
    return rows


def _under(cosim, baseline):
    return cosim / baseline - 1 if baseline else 0.0


def cmd_compare(manifest: RunManifest, sweep) -> int:
    config = load_config(manifest.config_path)
    rows = compare(manifest, sweep, config)
    out = Path(manifest.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="") as fh:
        _comment_header(fh, _meta(manifest, config))
        w = csv.writer(fh)
        w.writerow(COMPARE_HEADER)
        w.writerows(rows)
    for row in rows:
        print(f"n={row[0]:<3} {row[1]:<10} cosim/decoupled={row[8] / row[9]:.3f} "
              f"cosim/comm-only={row[8] / row[10]:.3f}")
    return 0


def cmd_thermal(config_path, trace_path, out, downsample=None, all_nodes=False) -> int:
    config = load_config(config_path)
    if not Path(trace_path).exists():
        raise ConfigError(f"power trace not found: {trace_path}", "trace")
    trace = PowerTrace.read_csv(trace_path)
    ids = {c.id for c in config.chiplets}
    if set(trace.chiplets) != ids:
        raise ConfigError(f"power trace covers chiplets {sorted(set(trace.chiplets) ^ ids)[:8]} "
                          "that do not match the config", "trace")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {k: v for k, v in trace.meta.items() if k != "bin_width_us"}
    meta.update({"config_hash": config.digest(), "version": __version__})
    model, steady, history = write_thermal_outputs(out, config, trace, meta, downsample, all_nodes)
    hottest = max(model.injection, key=lambda c: steady.rise[model.injection[c]].max())
    print(f"steady peak {steady.kelvin.max():.3f} K on chiplet {hottest}; "
          f"transient peak {history.rise.max() + history.ambient:.3f} K")
    return 0


def _parser():
    p = argparse.ArgumentParser(prog="chiplet-cosim", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--workload", required=True)
        sp.add_argument("--pipelined", choices=("on", "off"), default="on")
        sp.add_argument("--seed", type=int, default=None, help="overrides the workload's seed")
        sp.add_argument("--out", default="out")
        sp.add_argument("--weight-stationary", action="store_true",
                        help="load weights from the io chiplets before the first inference")
        sp.add_argument("--mapper", default="nearest-neighbor")

    run = sub.add_parser("run", help="simulate one workload")
    common(run)
    run.add_argument("--mode", choices=("cosim", "comm-only", "decoupled"), default="cosim")
    run.add_argument("--inferences", type=int, default=None)
    run.add_argument("--emit", default="report",
                     help="comma-separated subset of " + ",".join(EMIT_CHOICES))

    cmp_ = sub.add_parser("compare", help="cosim against both baselines over an inference sweep")
    common(cmp_)
    cmp_.add_argument("--sweep", default="1,3,5,10,20")

    th = sub.add_parser("thermal", help="steady and transient temperatures from a power trace")
    th.add_argument("--config", required=True)
    th.add_argument("--trace", required=True)
    th.add_argument("--out", default="out")
    th.add_argument("--downsample", type=int, default=None)
    th.add_argument("--all-nodes", action="store_true")
    return p


def _manifest(args, inferences=None) -> RunManifest:
    doc = load_workload_doc(args.workload)
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    if inferences is not None:
        doc["inferences"] = inferences
    return RunManifest(args.config, doc, getattr(args, "mode", "cosim"), args.pipelined == "on", seed,
                       Path(args.out), weight_stationary=args.weight_stationary, mapper=args.mapper)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            manifest = _manifest(args, args.inferences)
            emit = tuple(e.strip() for e in args.emit.split(",") if e.strip())
            bad = sorted(set(emit) - set(EMIT_CHOICES))
            if bad:
                raise ConfigError(f"unknown outputs {bad}", "emit")
            manifest.emit = emit
            return cmd_run(manifest)
        if args.command == "compare":
            try:
                sweep = [int(v) for v in args.sweep.split(",")]
            except ValueError:
                raise ConfigError(f"expected comma-separated integers, got {args.sweep!r}", "sweep") from None
            return cmd_compare(_manifest(args), sweep)
        return cmd_thermal(args.config, args.trace, args.out, args.downsample, args.all_nodes)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CosimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
