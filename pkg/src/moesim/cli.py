"""Command-line front end.

Exit codes: 0 success, 1 validation outside tolerance, 2 configuration
error, 3 infeasible workload, 4 internal error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from itertools import product
from pathlib import Path

import numpy as np

from . import pipeline, profiler, stage1, stage2
from .core import (
    ConfigError,
    InfeasibleWorkloadError,
    KVCacheConfig,
    Scenario,
    apply_overrides,
    build_scenario,
    kv_bytes_per_token,
    parse_document,
    parse_quantity,
)

log = logging.getLogger("moesim")

EXIT_OK, EXIT_TOLERANCE, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 1, 2, 3, 4

SWEEP_COLUMNS = (
    "capacity_tokens",
    "block_size",
    "K",
    "p",
    "g",
    "q",
    "t1",
    "t2",
    "t",
    "regime",
    "utilization",
)
SWEEP_KEYS = {"kv_capacity": "capacity_tokens", "K": "K", "p": "p", "g": "g", "block_size": "block_size"}
_BYTE_SUFFIXES = ("b", "kb", "mb", "gb", "tb", "kib", "mib", "gib", "tib")


@dataclass
class RunManifest:
    subcommand: str
    scenario_path: Path
    output_dir: Path | None = None
    seed: int = 0
    overrides: list = field(default_factory=list)


def find_scenario(name) -> Path:
    """Resolve a path, falling back to the bundled scenarios directory."""
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("moesim") / "scenarios" / path.name
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"scenario: file not found: {name}")


def load_manifest_scenario(m: RunManifest) -> Scenario:
    path = find_scenario(m.scenario_path)
    doc = parse_document(path.read_text())
    apply_overrides(doc, m.overrides)
    wl = doc.get("workload")
    # every random draw follows the manifest seed unless the file pins one
    if isinstance(wl, dict):
        if isinstance(wl.get("distribution"), dict):
            wl["distribution"].setdefault("seed", m.seed)
        elif "preset" in wl:
            wl.setdefault("seed", m.seed)
    return build_scenario(doc, base_dir=path.parent)


def sim_options(sc: Scenario, seed: int, contention: bool | None = None) -> pipeline.SimOptions:
    opts = pipeline.SimOptions(seed=seed)
    if contention is not None:
        opts.contention = contention
    else:
        opts.contention = bool(sc.option("simulation.contention", False))
    packet = sc.option("simulation.packet_bytes")
    if packet is not None:
        opts.packet_bytes = parse_quantity(packet, "simulation.packet_bytes")
        if opts.packet_bytes <= 0:
            raise ConfigError("simulation.packet_bytes: must be positive")
    grid = sc.option("simulation.profiler_grid")
    if grid is not None:
        opts.profiler_grid = tuple(int(x) for x in grid)
    noise = sc.option("simulation.profiler_noise")
    if noise is not None:
        opts.profiler_noise = float(noise)
    n_real = sc.option("scheduler.n_real")
    if n_real is not None:
        opts.n_real = int(parse_quantity(n_real, "scheduler.n_real"))
    max_it = sc.option("simulation.max_iterations")
    if max_it is not None:
        opts.max_iterations = int(max_it)
    return opts


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    if x is None:
        return ""
    return str(x)


def _write(m: RunManifest, name: str, text: str) -> None:
    if m.output_dir is None:
        return
    m.output_dir.mkdir(parents=True, exist_ok=True)
    (m.output_dir / name).write_text(text)


def _kv_doc(report: dict) -> str:
    return "".join(f"{k}: {_fmt(v)}\n" for k, v in report.items())


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


# -- subcommands ----------------------------------------------------------

def cmd_predict(m: RunManifest, args) -> int:
    sc = load_manifest_scenario(m)
    p, g, K = sc.workload.mean_prompt(), sc.workload.mean_gen(), sc.workload.batch_size
    if args.stage == "stage1":
        rep = stage1.stage1_report(sc.hardware, sc.model, sc.kv_cache.capacity_tokens, p, g)
        text = _kv_doc(rep.as_dict())
        _write(m, "stage1.txt", text)
        if args.grid_p and args.grid_g:
            ps, gs = _int_list(args.grid_p), _int_list(args.grid_g)
            grid = stage1.utilization_surface(
                sc.hardware, sc.model, sc.kv_cache.capacity_tokens, None, ps, gs
            )
            rows = [(pp, gg, float(grid[i, j])) for i, pp in enumerate(ps) for j, gg in enumerate(gs)]
            _write(m, "utilization_surface.csv", _csv(("p", "g", "utilization"), rows))
    else:
        t_gpu = None
        if args.t_gpu == "profiler":
            n_real, _ = pipeline.resolve_n_real(sc.hardware, sc.model, sim_options(sc, m.seed))
            t_gpu = n_real / stage1.weight_transfer_time(sc.hardware, sc.model)
        rep = stage2.predict(sc.hardware, sc.model, sc.kv_cache, p, g, K, t_gpu)
        text = _kv_doc(rep.as_dict())
        _write(m, "stage2.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(m: RunManifest, args) -> int:
    sc = load_manifest_scenario(m)
    contention = True if args.contention else (False if args.no_contention else None)
    res = pipeline.simulate_run(sc.workload, sc.hardware, sc.model, sc.kv_cache, sim_options(sc, m.seed, contention))
    _write(m, "trace.csv", res.trace.to_csv())
    summary = json.dumps(res.summary, indent=2, sort_keys=True) + "\n"
    _write(m, "summary.json", summary)
    sys.stdout.write(summary)
    return EXIT_OK


def parse_vary(spec: str) -> tuple[str, list]:
    """``key=a:b:n`` (n evenly spaced points) or ``key=v1,v2,...``."""
    if "=" not in spec:
        raise ConfigError(f"--vary {spec!r}: expected key=values")
    key, _, values = spec.partition("=")
    key = key.strip()
    if key not in SWEEP_KEYS:
        raise ConfigError(f"--vary {key}: unknown key (choose from {sorted(SWEEP_KEYS)})")
    parts = values.split(":")
    if len(parts) == 3:
        lo, hi = parts[0], parts[1]
        n = int(parts[2])
        if n < 1:
            raise ConfigError(f"--vary {key}: point count must be >= 1")
        raw = [(lo, hi, n)]
    else:
        raw = [v.strip() for v in values.split(",") if v.strip()]
        if not raw:
            raise ConfigError(f"--vary {key}: no values")
    return key, raw


def _has_byte_suffix(text) -> bool:
    return isinstance(text, str) and text.strip().lower().rstrip("s/").endswith(_BYTE_SUFFIXES)


def _sweep_values(key: str, raw, model) -> list:
    def conv(v):
        x = parse_quantity(v, f"--vary {key}")
        if key == "kv_capacity" and _has_byte_suffix(v):
            x = x / kv_bytes_per_token(model)
        return x

    if isinstance(raw[0], tuple):
        lo, hi, n = raw[0]
        vals = np.linspace(conv(lo), conv(hi), n)
    else:
        vals = [conv(v) for v in raw]
    if key in ("kv_capacity", "K", "block_size", "p", "g"):
        return [int(round(v)) for v in vals]
    return list(vals)


def _sweep_point(args):
    hw, model, cap, b, K, p, g = args
    try:
        rep = stage2.predict(hw, model, KVCacheConfig(cap, b), p, g, K)
    except (InfeasibleWorkloadError, ConfigError):
        return (cap, b, K, p, g, None, None, None, None, "Infeasible", None)
    return (cap, b, K, p, g, rep.q, rep.t1, rep.t2, rep.predicted_throughput, rep.regime.value,
            rep.predicted_utilization)


def cmd_sweep(m: RunManifest, args) -> int:
    sc = load_manifest_scenario(m)
    axes = {
        "kv_capacity": [sc.kv_cache.capacity_tokens],
        "block_size": [sc.kv_cache.block_size],
        "K": [sc.workload.batch_size],
        "p": [int(round(sc.workload.mean_prompt()))],
        "g": [int(round(sc.workload.mean_gen()))],
    }
    for spec in args.vary or []:
        key, raw = parse_vary(spec)
        axes[key] = _sweep_values(key, raw, sc.model)
    points = [
        (sc.hardware, sc.model, cap, b, K, p, g)
        for cap, b, K, p, g in product(axes["kv_capacity"], axes["block_size"], axes["K"], axes["p"], axes["g"])
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(_sweep_point, points, chunksize=16))
    else:
        rows = [_sweep_point(pt) for pt in points]
    # deterministic order regardless of completion order
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3], r[4]))
    text = _csv(SWEEP_COLUMNS, rows)
    _write(m, "sweep.csv", text)
    if m.output_dir is None:
        sys.stdout.write(text)
    else:
        log.info("wrote %d sweep rows to %s", len(rows), m.output_dir / "sweep.csv")
    return EXIT_OK


def _read_samples(path) -> list[tuple[float, float]]:
    samples = []
    with open(path) as fh:
        for i, row in enumerate(csv.DictReader(fh), start=2):
            try:
                samples.append((float(row["tokens"]), float(row["gpu_seconds"])))
            except (KeyError, TypeError, ValueError):
                raise ConfigError(f"samples: {path}:{i}: expected tokens,gpu_seconds") from None
    return samples


def cmd_profile_fit(m: RunManifest, args) -> int:
    sc = load_manifest_scenario(m)
    opts = sim_options(sc, m.seed)
    if args.samples:
        samples = _read_samples(args.samples)
    else:
        samples = profiler.synthesize_profile_samples(
            sc.hardware, sc.model, opts.profiler_grid, opts.profiler_noise, m.seed
        )
    try:
        fit = profiler.profiler_fit(samples, profiler.per_layer_weight_io(sc.hardware, sc.model))
    except profiler.ProfilerFitError as exc:
        raise ConfigError(f"samples: {exc}") from None
    _write(m, "profile_samples.csv", _csv(("tokens", "gpu_seconds"), samples))
    text = _kv_doc(dict(fit.__dict__))
    _write(m, "profile_fit.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_validate(m: RunManifest, args) -> int:
    sc = load_manifest_scenario(m)
    # the analytic model has no memory contention, so neither does the run
    opts = sim_options(sc, m.seed, contention=False)
    res = pipeline.simulate_run(sc.workload, sc.hardware, sc.model, sc.kv_cache, opts)
    t_gpu = res.summary["n_real"] / stage1.weight_transfer_time(sc.hardware, sc.model)
    wl = sc.workload
    pred = stage2.predict(sc.hardware, sc.model, sc.kv_cache, wl.mean_prompt(), wl.mean_gen(), wl.batch_size, t_gpu)
    sim = res.summary["throughput_tok_s"]
    rel = abs(sim - pred.predicted_throughput) / pred.predicted_throughput
    report = {
        "simulated_tok_s": sim,
        "predicted_tok_s": pred.predicted_throughput,
        "regime": pred.regime.value,
        "relative_error": rel,
        "tolerance": args.tolerance,
        "within_tolerance": rel <= args.tolerance,
    }
    text = _kv_doc(report)
    _write(m, "validate.txt", text)
    _write(m, "trace.csv", res.trace.to_csv())
    sys.stdout.write(text)
    return EXIT_OK if rel <= args.tolerance else EXIT_TOLERANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moesim", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING", help="logging level (default: WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", required=True, help="scenario file (YAML); bundled names also accepted")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a scenario value (repeatable)")
        sp.add_argument("--seed", type=int, default=0, help="seed for every random draw (default: 0)")
        sp.add_argument("--output-dir", type=Path, default=None, help="directory for reports and CSVs")

    sp = sub.add_parser("predict", help="analytic throughput prediction")
    sp.add_argument("stage", choices=("stage1", "stage2"))
    common(sp)
    sp.add_argument("--grid-p", help="stage1: comma list of prompt lengths for the utilization grid")
    sp.add_argument("--grid-g", help="stage1: comma list of generation lengths for the utilization grid")
    sp.add_argument("--t-gpu", choices=("flops", "profiler"), default="flops",
                    help="stage2: GPU ceiling from FLOP count or from the profiler's n_real")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("simulate", help="run the scheduler and pipeline simulator")
    common(sp)
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--contention", action="store_true", help="force the memory contention model on")
    grp.add_argument("--no-contention", action="store_true", help="force the memory contention model off")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="Stage 2 predictions over a parameter grid")
    common(sp)
    sp.add_argument("--vary", action="append", metavar="KEY=A:B:N|V1,V2",
                    help=f"axis to sweep; keys: {', '.join(SWEEP_KEYS)}")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("profile-fit", help="fit the GEMM-time line and derive n_real")
    common(sp)
    sp.add_argument("--samples", help="CSV with tokens,gpu_seconds (default: synthesize)")
    sp.set_defaults(func=cmd_profile_fit)

    sp = sub.add_parser("validate", help="compare simulated and predicted throughput")
    common(sp)
    sp.add_argument("--tolerance", type=float, default=0.10, help="relative tolerance (default: 0.10)")
    sp.set_defaults(func=cmd_validate)
    return parser


def run(manifest: RunManifest, args) -> int:
    try:
        return args.func(manifest, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleWorkloadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    subcommand = args.command if args.command != "predict" else f"predict-{args.stage}"
    manifest = RunManifest(subcommand, Path(args.scenario), args.output_dir, args.seed, list(args.overrides))
    return run(manifest, args)


if __name__ == "__main__":
    sys.exit(main())
