"""Command-line entry point: ``tendency-lab``.

Commands: ``simulate``, ``infer``, ``diagnose``, ``recover`` and ``presets``.
Settings come from defaults, then an optional JSON run config
(``--config``), then flags, each layer overriding the previous one.

Exit codes: 0 success; 1 ``recover`` found overlapping w2 intervals;
2 invalid configuration; 3 unreadable or malformed input; 4 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import shlex
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import __version__, kernels
from ._io import atomic_write
from .datagen import (
    DatasetError,
    GeneratorConfig,
    MapConfig,
    dumps_dataset,
    generate_dataset,
    load_dataset,
)
from .decision_model import PRESETS, Theta, resolve_theta
from .diagnostics import (
    DiagnosticsError,
    recovery_report,
    recovery_to_json,
    recovery_to_text,
    summarize,
    summary_to_json,
    summary_to_text,
    write_plots,
)
from .gridworld import MapError
from .posterior import PriorSpec
from .sampler import (
    ChainFileError,
    SamplerConfig,
    SamplerError,
    chains_to_csv,
    read_chains_csv,
    run_inference,
)

logger = logging.getLogger("tendency_lab")

EXIT_OK, EXIT_OVERLAP, EXIT_CONFIG, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2, 3, 4
PROG = "tendency-lab"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _config_error(path: str, message: str) -> CliError:
    return CliError(EXIT_CONFIG, f"config error at {path}: {message}")


# -- run configuration ------------------------------------------------------


def default_config() -> dict:
    return {
        "generator": GeneratorConfig().to_dict(),
        "theta_truth": "rock_agnostic",
        "prior": PriorSpec().to_dict(),
        "sampler": SamplerConfig().to_dict(),
        "paths": {"dataset": None, "chains": None, "out": None},
    }


@dataclass(frozen=True)
class RunConfig:
    generator: GeneratorConfig
    theta_truth: str | Theta | None
    prior: PriorSpec
    sampler: SamplerConfig
    paths: Mapping[str, str | None]

    @property
    def theta(self) -> Theta:
        if self.theta_truth is None:
            raise _config_error("theta_truth", "a generating theta is required")
        return resolve_theta(self.theta_truth)

    def to_dict(self) -> dict:
        truth = self.theta_truth
        return {
            "generator": self.generator.to_dict(),
            "theta_truth": truth.to_dict() if isinstance(truth, Theta) else truth,
            "prior": self.prior.to_dict(),
            "sampler": self.sampler.to_dict(),
            "paths": dict(self.paths),
        }

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of everything except file locations."""
        data = self.to_dict()
        del data["paths"]
        return hashlib.sha256(canonical_json(data).encode()).hexdigest()


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def _merge(base: dict, update: Mapping, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise _config_error(where, "unknown field")
        if isinstance(base[key], dict) and key != "density":
            if not isinstance(value, Mapping):
                raise _config_error(where, "expected an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _set_path(data: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = data
    for i, key in enumerate(keys[:-1]):
        if not isinstance(node.get(key), dict):
            raise _config_error(".".join(keys[: i + 1]), "unknown field")
        node = node[key]
    if keys[-1] not in node:
        raise _config_error(dotted, "unknown field")
    node[keys[-1]] = value


def _build(cls, data: Mapping, path: str, **nested):
    kwargs = {k: v for k, v in data.items() if k not in nested}
    for key, value in kwargs.items():
        if isinstance(value, list):
            kwargs[key] = tuple(value)
    kwargs.update(nested)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise _config_error(path, str(exc)) from None
    except ValueError as exc:
        raise _config_error(f"{path}.{_field_of(str(exc), data)}", str(exc)) from None


def _field_of(message: str, data: Mapping) -> str:
    # validators start their messages with the field name
    for key in data:
        if message.startswith(f"{key} "):
            return key
    return "*"


def _check_types(data: Mapping, defaults: Mapping, path: str) -> None:
    for key, value in data.items():
        ref = defaults.get(key)
        where = f"{path}.{key}"
        if isinstance(ref, bool) or ref is None or isinstance(ref, dict):
            continue
        if isinstance(ref, (int, float)) and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise _config_error(where, f"expected a number, got {value!r}")
        if isinstance(ref, int) and not isinstance(ref, bool) and isinstance(value, float):
            if not value.is_integer():
                raise _config_error(where, f"expected an integer, got {value!r}")
        if isinstance(ref, str) and not isinstance(value, str):
            raise _config_error(where, f"expected a string, got {value!r}")
        if isinstance(ref, list) and not (isinstance(value, list) and len(value) == len(ref)):
            raise _config_error(where, f"expected a list of {len(ref)} numbers")


def _as_int_fields(data: dict, defaults: Mapping) -> dict:
    out = dict(data)
    for key, ref in defaults.items():
        if isinstance(ref, int) and not isinstance(ref, bool) and isinstance(out.get(key), float):
            out[key] = int(out[key])
    return out


def parse_run_config(raw: Mapping) -> RunConfig:
    """Validate a fully merged config dictionary; errors name the offending field."""
    defaults = default_config()
    gen = dict(raw["generator"])
    _check_types(gen, defaults["generator"], "generator")
    gen = _as_int_fields(gen, defaults["generator"])
    map_data = gen.pop("map")
    if not isinstance(map_data, Mapping):
        raise _config_error("generator.map", "expected an object")
    _check_types(map_data, defaults["generator"]["map"], "generator.map")
    map_cfg = _build(MapConfig, _as_int_fields(dict(map_data), defaults["generator"]["map"]), "generator.map")
    generator = _build(GeneratorConfig, gen, "generator", map=map_cfg)

    truth = raw["theta_truth"]
    try:
        if isinstance(truth, Mapping):
            truth = Theta.from_dict(truth)
        elif isinstance(truth, str):
            resolve_theta(truth)
        elif truth is not None:
            raise ValueError("expected a preset name, file path, object or null")
    except (ValueError, OSError) as exc:
        raise _config_error("theta_truth", str(exc)) from None

    _check_types(raw["prior"], defaults["prior"], "prior")
    prior = _build(PriorSpec, {k: float(v) for k, v in raw["prior"].items()}, "prior")
    _check_types(raw["sampler"], defaults["sampler"], "sampler")
    sampler = _build(SamplerConfig, _as_int_fields(dict(raw["sampler"]), defaults["sampler"]), "sampler")

    paths = dict(raw["paths"])
    for key, value in paths.items():
        if value is not None and not isinstance(value, str):
            raise _config_error(f"paths.{key}", "expected a string or null")
    return RunConfig(generator, truth, prior, sampler, paths)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args: argparse.Namespace) -> tuple[RunConfig, bool]:
    """Merge defaults, the config file and flags.

    Returns the validated config and whether ``theta_truth`` was set
    explicitly (by the file or a flag).
    """
    data = default_config()
    explicit_truth = False
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise CliError(EXIT_CONFIG, f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, Mapping):
            raise _config_error("<root>", "expected a JSON object")
        data = _merge(data, loaded)
        explicit_truth = "theta_truth" in loaded

    overrides: list[tuple[str, Any]] = []
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(EXIT_CONFIG, f"--set expects KEY=VALUE, got {item!r}")
        overrides.append((key.strip(), _parse_value(value)))
    seed = getattr(args, "seed", None)
    if seed is not None:
        overrides += [("generator.seed", seed), ("sampler.seed", seed)]
    for flag, dotted in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append((dotted, value))
    for dotted, value in overrides:
        _set_path(data, dotted, value)
        explicit_truth |= dotted == "theta_truth"
    return parse_run_config(data), explicit_truth


FLAG_FIELDS = {
    "n": "generator.n",
    "mode": "generator.mode",
    "count_scope": "generator.count_scope",
    "preset": "theta_truth",
    "theta": "theta_truth",
    "truth": "theta_truth",
    "chains": "sampler.chains",
    "iters": "sampler.iterations",
    "burnin": "sampler.burn_in",
    "target_accept": "sampler.target_accept",
    "max_tree_depth": "sampler.max_tree_depth",
    "algorithm": "sampler.algorithm",
    "metric": "sampler.metric",
    "dataset": "paths.dataset",
    "chains_file": "paths.chains",
    "out": "paths.out",
}


# -- helpers ----------------------------------------------------------------


def _sidecar(path: Path, kind: str) -> Path:
    return path.with_name(f"{path.stem}.{kind}.json")


def _dump(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _replay(command: str, config_path: Path, env: str = "") -> str:
    parts = [PROG, command, "--config", str(config_path)]
    return (env + " " if env else "") + shlex.join(parts)


def _base_metadata(command: str, cfg: RunConfig) -> dict:
    return {
        "command": command,
        "tool": PROG,
        "version": __version__,
        "config_hash": cfg.config_hash(),
        "generator_seed": cfg.generator.seed,
        "sampler_seed": cfg.sampler.seed,
    }


def _write_config(cfg: RunConfig, path: Path) -> Path:
    atomic_write(path, _dump(cfg.to_dict()))
    return path


def _echo(args, text: str) -> None:
    if not getattr(args, "quiet", False):
        sys.stdout.write(text)


# -- commands ---------------------------------------------------------------


def simulate(cfg: RunConfig, out: Path) -> dict:
    """Generate a dataset to ``out`` with its config and metadata sidecars."""
    theta = cfg.theta
    try:
        dataset = generate_dataset(theta, cfg.generator)
    except MapError as exc:
        raise CliError(EXIT_RUNTIME, f"simulation failed: {exc}") from None
    text = dumps_dataset(dataset)
    cfg = _with_paths(cfg, out=str(out))
    config_path = _write_config(cfg, _sidecar(out, "config"))
    meta = _base_metadata("simulate", cfg)
    meta.update({
        "seed": cfg.generator.seed,
        "theta_truth": theta.to_dict(),
        "preset": cfg.theta_truth if isinstance(cfg.theta_truth, str) and cfg.theta_truth in PRESETS else None,
        "n_records": len(dataset),
        "move_rate": sum(r.decision.move for r in dataset) / len(dataset),
        "dataset_sha256": _sha256(text),
        "replay": _replay("simulate", config_path),
    })
    atomic_write(out, text)
    atomic_write(_sidecar(out, "meta"), _dump(meta))
    return meta


def infer(cfg: RunConfig, dataset_path: Path, out: Path):
    """Sample the posterior for a dataset file; writes chains CSV and sidecars."""
    try:
        dataset = load_dataset(dataset_path)
    except DatasetError as exc:
        raise CliError(EXIT_INPUT, f"malformed dataset {dataset_path}: {exc}") from None
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read dataset {dataset_path}: {exc}") from None
    if len(dataset) == 0:
        raise CliError(EXIT_INPUT, f"dataset {dataset_path} has no records")
    start = time.perf_counter()
    try:
        chains = run_inference(dataset, cfg.prior, cfg.sampler)
    except SamplerError as exc:
        raise CliError(EXIT_RUNTIME, f"sampler failed: {exc}") from None
    wall = time.perf_counter() - start
    backend = kernels.BACKEND
    cfg = _with_paths(cfg, dataset=str(dataset_path), out=str(out))
    config_path = _write_config(cfg, _sidecar(out, "config"))
    meta = _base_metadata("infer", cfg)
    meta.update({
        "seed": cfg.sampler.seed,
        "backend": backend,
        "dataset": str(dataset_path),
        "dataset_sha256": _sha256(Path(dataset_path).read_text()),
        "n_records": len(dataset),
        "draws_per_chain": chains.n_draws,
        "divergences": chains.n_divergent,
        "step_sizes": [m["step_size"] for m in chains.chain_meta],
        "chains": chains.chain_meta,
        "replay": _replay("infer", config_path, env=f"TENDENCY_LAB_BACKEND={backend}"),
        "timing_file": _sidecar(out, "timing").name,
    })
    atomic_write(out, chains_to_csv(chains))
    atomic_write(_sidecar(out, "meta"), _dump(meta))
    # wall time lives in its own file so the other outputs stay byte-reproducible
    atomic_write(_sidecar(out, "timing"), _dump({"wall_time_s": round(wall, 3)}))
    logger.info("inference finished in %.1f s, %d divergent transitions", wall, chains.n_divergent)
    return chains, meta


def diagnose(cfg: RunConfig, chains_path: Path, out_dir: Path, truth: Theta | None, plots: bool, args=None):
    try:
        chains = read_chains_csv(chains_path)
    except ChainFileError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    try:
        summary = summarize(chains)
    except DiagnosticsError as exc:
        raise CliError(EXIT_INPUT, f"{chains_path}: {exc}") from None
    for s in summary:
        if s.sd == 0:
            print(f"warning: {s.name} is constant across all draws (sd 0)", file=sys.stderr)
    cfg = _with_paths(cfg, chains=str(chains_path), out=str(out_dir))
    if truth is None:
        cfg = RunConfig(cfg.generator, None, cfg.prior, cfg.sampler, cfg.paths)
    config_path = _write_config(cfg, out_dir / "config.json")
    meta = _base_metadata("diagnose", cfg)
    meta.update({
        "chains": str(chains_path),
        "chains_sha256": _sha256(Path(chains_path).read_text()),
        "truth": truth.to_dict() if truth is not None else None,
        "replay": _replay("diagnose", config_path) + (" --plots" if plots else ""),
    })
    atomic_write(out_dir / "meta.json", _dump(meta))
    atomic_write(out_dir / "summary.json", summary_to_json(summary))
    atomic_write(out_dir / "summary.txt", summary_to_text(summary))
    if args is not None:
        _echo(args, summary_to_text(summary))
    report = None
    if truth is not None:
        report = recovery_report(summary, truth)
        atomic_write(out_dir / "recovery.json", recovery_to_json(report))
        atomic_write(out_dir / "recovery.txt", recovery_to_text(report))
        if args is not None:
            _echo(args, "\n" + recovery_to_text(report))
    if plots:
        try:
            write_plots(chains, out_dir / "plots")
        except ImportError:
            print("warning: matplotlib is not installed; skipping plots", file=sys.stderr)
    return summary, report


def _with_paths(cfg: RunConfig, **paths) -> RunConfig:
    merged = dict(cfg.paths)
    merged.update(paths)
    return RunConfig(cfg.generator, cfg.theta_truth, cfg.prior, cfg.sampler, merged)


def recover(cfg: RunConfig, out_dir: Path, plots: bool, args=None) -> tuple[bool, dict]:
    """Simulate, infer and diagnose both presets; report whether w2 intervals separate."""
    intervals = {}
    for name in ("rock_agnostic", "rock_averse"):
        run_dir = out_dir / name
        run_cfg = RunConfig(cfg.generator, name, cfg.prior, cfg.sampler, dict(cfg.paths))
        logger.info("%s: simulating %d records", name, cfg.generator.n)
        simulate(run_cfg, run_dir / "data.jsonl")
        logger.info("%s: sampling", name)
        infer(run_cfg, run_dir / "data.jsonl", run_dir / "chains.csv")
        summary, report = diagnose(run_cfg, run_dir / "chains.csv", run_dir, PRESETS[name], plots)
        w2 = next(s for s in summary if s.name == "w2")
        intervals[name] = {"mean": w2.mean, "hdi3": w2.hdi3, "hdi97": w2.hdi97}
        if args is not None:
            _echo(args, f"\n[{name}]\n" + recovery_to_text(report))

    a, b = intervals["rock_agnostic"], intervals["rock_averse"]
    disjoint = a["hdi97"] < b["hdi3"] or b["hdi97"] < a["hdi3"]
    verdict = (
        "w2 94% HDIs are disjoint: the posteriors distinguish the two tendencies"
        if disjoint
        else "w2 94% HDIs overlap: the data do not distinguish the two tendencies "
        f"(N={cfg.generator.n}; more records are needed)"
    )
    comparison = {"parameter": "w2", "intervals": intervals, "disjoint": disjoint, "verdict": verdict}
    cfg = _with_paths(cfg, out=str(out_dir))
    config_path = _write_config(cfg, out_dir / "config.json")
    comparison["replay"] = _replay("recover", config_path, env=f"TENDENCY_LAB_BACKEND={kernels.BACKEND}")
    atomic_write(out_dir / "comparison.json", _dump(comparison))
    lines = [f"{k:>13}: w2 mean {v['mean']:.4f}  hdi [{v['hdi3']:.4f}, {v['hdi97']:.4f}]" for k, v in intervals.items()]
    atomic_write(out_dir / "comparison.txt", "\n".join(lines + [verdict]) + "\n")
    return disjoint, comparison


# -- argument parsing -------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for data and chains")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS,
                        help="print the resolved config and exit without writing")
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                        help="override any config field, e.g. generator.obstacle_prob=0.2")
    return common


def _generator_flags(p):
    p.add_argument("--n", type=int, help="number of records")
    p.add_argument("--mode", choices=("direct", "map"))
    p.add_argument("--count-scope", choices=("global", "direction"))


def _sampler_flags(p):
    p.add_argument("--chains", type=int)
    p.add_argument("--iters", type=int, help="iterations per chain, burn-in included")
    p.add_argument("--burnin", type=int)
    p.add_argument("--target-accept", type=float)
    p.add_argument("--max-tree-depth", type=int)
    p.add_argument("--algorithm", choices=("nuts", "random_walk"))
    p.add_argument("--metric", choices=("dense", "diag"))


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog=PROG, parents=[common], description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    truth = p.add_mutually_exclusive_group()
    truth.add_argument("--preset", choices=sorted(PRESETS))
    truth.add_argument("--theta", help="JSON file with w1..w4, delta1, delta2")
    _generator_flags(p)

    p = sub.add_parser("infer", parents=[common], help="sample the posterior for a dataset")
    p.add_argument("dataset", nargs="?", help="JSON-lines dataset (default: paths.dataset)")
    _sampler_flags(p)

    p = sub.add_parser("diagnose", parents=[common], help="summarise a chains CSV")
    p.add_argument("chains_file", nargs="?", metavar="chains", help="chains CSV (default: paths.chains)")
    p.add_argument("--truth", help="preset name or theta JSON to compare against")
    p.add_argument("--plots", action="store_true", help="write trace/autocorrelation SVGs")

    p = sub.add_parser("recover", parents=[common], help="end-to-end recovery of both presets")
    _generator_flags(p)
    _sampler_flags(p)
    p.add_argument("--plots", action="store_true")

    p = sub.add_parser("presets", parents=[common], help="list or show parameter presets")
    p.add_argument("action", nargs="?", choices=("list", "show"), default="list")
    p.add_argument("name", nargs="?", choices=sorted(PRESETS))
    return parser


def _run(args: argparse.Namespace) -> int:
    if args.command == "presets":
        if args.action == "list":
            _echo(args, "\n".join(PRESETS) + "\n")
        else:
            names = [args.name] if args.name else list(PRESETS)
            _echo(args, _dump({n: PRESETS[n].to_dict() for n in names}))
        return EXIT_OK

    cfg, explicit_truth = resolve_config(args)
    if getattr(args, "dry_run", False):
        sys.stdout.write(_dump(cfg.to_dict()))
        return EXIT_OK

    out = cfg.paths.get("out")
    if args.command == "simulate":
        meta = simulate(cfg, Path(out or "data.jsonl"))
        _echo(args, f"wrote {meta['n_records']} records to {out or 'data.jsonl'}\n")
    elif args.command == "infer":
        if not cfg.paths.get("dataset"):
            raise CliError(EXIT_CONFIG, "config error at paths.dataset: no dataset given")
        out_path = Path(out or "chains.csv")
        chains, meta = infer(cfg, Path(cfg.paths["dataset"]), out_path)
        _echo(args, f"wrote {chains.n_chains * chains.n_draws} draws to {out_path} "
                    f"({meta['divergences']} divergent)\n")
    elif args.command == "diagnose":
        if not cfg.paths.get("chains"):
            raise CliError(EXIT_CONFIG, "config error at paths.chains: no chains file given")
        chains_path = Path(cfg.paths["chains"])
        out_dir = Path(out) if out else chains_path.parent / "diagnostics"
        truth = cfg.theta if explicit_truth and cfg.theta_truth is not None else None
        diagnose(cfg, chains_path, out_dir, truth, args.plots, args)
    elif args.command == "recover":
        disjoint, comparison = recover(cfg, Path(out or "recovery"), args.plots, args)
        _echo(args, "\n" + comparison["verdict"] + "\n")
        if not disjoint:
            print(comparison["verdict"], file=sys.stderr)
            return EXIT_OVERLAP
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which matches the config exit code
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
        format="%(message)s",
        stream=sys.stderr,
    )
    try:
        return _run(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
