"""Command line front end.

Subcommands: ``fit`` (one dataset, one model), ``simulate`` (a regime study),
``backestimate`` (leave-one-out refits, optionally fitting a recall
calibration), and ``rerun`` (reproduce a recorded run from its manifest).

Every run writes a ``manifest.json`` beside its outputs with fully resolved
parameters and input hashes; rerunning from the manifest reproduces every
output byte for byte (the manifest itself carries wall-clock metadata and is
excluded).  Output directories are locked while a command runs and nothing is
written outside ``--out``.

Exit codes: 0 success, 1 study completed with failed dataset fits, 2 usage or
validation errors (messages name the offending file/line/key), 3 sampler
failures.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import ModelSpec
from .engine import ChainConfig, default_iterations, fit_model, pooled_draws
from .errors import NonFiniteDensity, NsumError, PilotDegenerate
from .harness import back_estimate, run_study
from .io import (
    CLI_MODEL_NAMES,
    RunManifest,
    calibration_from_json,
    dataset_from_config,
    load_json,
    model_spec_from_config,
    read_responses_csv,
    regime_from_config,
    write_draws_csv,
    write_json,
)
from .numerics import RandomStream
from .postprocess import (
    check_recall_applicability,
    effective_sample_size,
    gelman_rubin,
    recall_adjust_draws,
    summarize,
)

_LOCK_NAME = ".nsum.lock"
_RECALL_STREAM = 900_000  # stream id for the recall adjustment noise

_SAMPLER_ERRORS = (NonFiniteDensity, PilotDegenerate)


class _OutputDir:
    """Creates --out, holds its lock file for the duration of a command."""

    def __init__(self, out: str):
        self.path = Path(out)
        self.lock = self.path / _LOCK_NAME

    def __enter__(self) -> Path:
        self.path.mkdir(parents=True, exist_ok=True)
        try:
            self.lock.touch(exist_ok=False)
        except FileExistsError:
            raise NsumError(
                f"output directory {self.path} is locked by another run "
                f"(remove {self.lock} if that run is dead)"
            ) from None
        return self.path

    def __exit__(self, *exc):
        self.lock.unlink(missing_ok=True)
        return False


def _add_chain_flags(p: argparse.ArgumentParser, default_chains: int) -> None:
    p.add_argument("--iterations", type=int, default=None, help="chain length (model-specific default)")
    p.add_argument("--burn-in", type=int, default=None, help="discarded sweeps (default 10%%)")
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--pilot-iterations", type=int, default=1000)
    p.add_argument("--chains", type=int, default=default_chains)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nsum",
        description="Hidden-population size estimation from 'How many X do you know?' surveys.",
    )
    parser.add_argument("--version", action="version", version=f"nsum {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one model to one dataset")
    p_fit.add_argument("--data", required=True, help="responses CSV (header of group labels)")
    p_fit.add_argument("--config", required=True, help="dataset/prior config JSON")
    p_fit.add_argument("--model", required=True, choices=sorted(CLI_MODEL_NAMES))
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--recall-calibration", default=None, help="calibration JSON to apply post hoc")
    p_fit.add_argument("--jacobian", choices=["exact", "paper"], default=None)
    _add_chain_flags(p_fit, default_chains=2)

    p_sim = sub.add_parser("simulate", help="run a simulation study")
    p_sim.add_argument("--regime", required=True, help="regime config JSON")
    p_sim.add_argument("--models", required=True, help="comma-separated model names")
    p_sim.add_argument("--n-datasets", type=int, default=None, help="override the regime's count")
    p_sim.add_argument("--out", required=True)
    _add_chain_flags(p_sim, default_chains=1)

    p_back = sub.add_parser("backestimate", help="leave-one-out refits of the known groups")
    p_back.add_argument("--data", required=True)
    p_back.add_argument("--config", required=True)
    p_back.add_argument("--model", required=True, choices=sorted(CLI_MODEL_NAMES))
    p_back.add_argument("--out", required=True)
    p_back.add_argument("--fit-recall", action="store_true", help="fit a recall calibration from the refits")
    _add_chain_flags(p_back, default_chains=1)

    p_rerun = sub.add_parser("rerun", help="reproduce a recorded run from its manifest")
    p_rerun.add_argument("--manifest", required=True)
    p_rerun.add_argument("--out", required=True)
    return parser


def _chain_config(args, kind: str) -> ChainConfig:
    iterations = args.iterations if args.iterations is not None else default_iterations(kind)
    return ChainConfig(
        n_iterations=iterations,
        burn_in=args.burn_in,
        thin=args.thin,
        pilot_iterations=args.pilot_iterations,
        n_chains=args.chains,
        seed=args.seed,
    )


def _resolved_chain_params(config: ChainConfig) -> dict:
    return {
        "iterations": config.n_iterations,
        "burn_in": config.resolved_burn_in,
        "thin": config.thin,
        "pilot_iterations": config.pilot_iterations,
        "chains": config.n_chains,
    }


def _psrf_table(chains, names) -> Optional[dict]:
    if len(chains) < 2:
        return None
    out = {}
    for name in names:
        arrays = [c.params[name] for c in chains if name in c.params]
        if len(arrays) < 2:
            continue
        try:
            out[name] = gelman_rubin(arrays)
        except NsumError:
            out[name] = None
    return out


def _summary_payload(dataset, spec: ModelSpec, config: ChainConfig, chains) -> dict:
    size = pooled_draws(chains, "N_K")
    payload = {
        "model": spec.kind,
        "jacobian_mode": spec.jacobian_mode if spec.kind == "transmission" else None,
        "seed": config.seed,
        **_resolved_chain_params(config),
        "acceptance_rates": {
            f"chain_{c}": {k: round(v, 6) for k, v in ch.acceptance_rates().items()}
            for c, ch in enumerate(chains)
        },
        "size": summarize(size).to_dict(),
        "prevalence": summarize(
            size, transform="prevalence", total_population=dataset.total_population
        ).to_dict(),
        "psrf": _psrf_table(chains, ["N_K", "mu", "sigma", "tau"]),
        "ess": {"N_K": float(sum(effective_sample_size(c.params["N_K"]) for c in chains))},
    }
    tau = chains[0].tau_draws()
    if tau is not None:
        payload["tau"] = summarize(pooled_draws(chains, "tau")).to_dict()
    return payload


def _run_fit(data_path, config_path, model_name, out_dir, args_dict, manifest: RunManifest) -> int:
    kind = CLI_MODEL_NAMES[model_name]
    labels, responses = read_responses_csv(data_path)
    raw_config = load_json(config_path)
    dataset = dataset_from_config(labels, responses, raw_config)
    spec = model_spec_from_config(raw_config, kind, args_dict.get("jacobian"))
    config = ChainConfig(
        n_iterations=args_dict["iterations"],
        burn_in=args_dict["burn_in"],
        thin=args_dict["thin"],
        pilot_iterations=args_dict["pilot_iterations"],
        n_chains=args_dict["chains"],
        seed=args_dict["seed"],
    )
    chains = fit_model(dataset, spec, config)
    for c, ch in enumerate(chains):
        name = f"draws_chain{c:02d}.csv"
        write_draws_csv(out_dir / name, ch)
        manifest.outputs.append(name)

    payload = _summary_payload(dataset, spec, config, chains)
    cal_path = args_dict.get("recall_calibration")
    if cal_path:
        cal = calibration_from_json(cal_path)
        size = pooled_draws(chains, "N_K")
        suspect = check_recall_applicability(dataset, float(size.mean()))
        if suspect:
            print(
                "WARNING: recall adjustment extrapolates beyond the largest known group; "
                "treat the adjusted estimate with suspicion",
                file=sys.stderr,
            )
        adj_log = recall_adjust_draws(
            np.log(size), cal, RandomStream(config.seed, _RECALL_STREAM)
        )
        adj = np.exp(adj_log)
        payload["recall"] = {
            "calibration": cal.to_dict(),
            "size": summarize(adj).to_dict(),
            "prevalence": summarize(
                adj, transform="prevalence", total_population=dataset.total_population
            ).to_dict(),
            "extrapolation_warning": suspect,
        }
    else:
        payload["recall"] = None

    write_json(out_dir / "summary.json", payload)
    manifest.outputs.append("summary.json")
    return 0


def cmd_fit(args) -> int:
    manifest = RunManifest(
        command="fit",
        seed=args.seed,
        parameters={
            "model": args.model,
            "iterations": args.iterations
            if args.iterations is not None
            else default_iterations(CLI_MODEL_NAMES[args.model]),
            "burn_in": args.burn_in,
            "thin": args.thin,
            "pilot_iterations": args.pilot_iterations,
            "chains": args.chains,
            "seed": args.seed,
            "jacobian": args.jacobian,
            "recall_calibration": str(Path(args.recall_calibration).resolve())
            if args.recall_calibration
            else None,
        },
    )
    manifest.record_input("data", args.data)
    manifest.record_input("config", args.config)
    if args.recall_calibration:
        manifest.record_input("recall_calibration", args.recall_calibration)
    started = time.monotonic()
    with _OutputDir(args.out) as out_dir:
        status = _run_fit(
            args.data,
            args.config,
            args.model,
            out_dir,
            dict(manifest.parameters),
            manifest,
        )
        manifest.duration_seconds = round(time.monotonic() - started, 3)
        write_json(out_dir / "manifest.json", manifest.to_dict())
    return status


def _run_simulate(regime_path, model_names, n_datasets, out_dir, params, manifest) -> int:
    regime = regime_from_config(load_json(regime_path))
    if n_datasets is not None:
        from dataclasses import replace

        regime = replace(regime, n_datasets=n_datasets)
    if regime.n_datasets < 1:
        raise NsumError("n-datasets must be positive")
    specs = []
    for name in model_names:
        kind = CLI_MODEL_NAMES[name]
        prior = regime.tau_prior if kind in ("transmission", "combined") else None
        if kind in ("transmission", "combined") and prior is None:
            raise NsumError(f"model {name!r} needs tau_prior in the regime config")
        specs.append(ModelSpec(kind=kind, transmission_prior=prior))
    config = ChainConfig(
        n_iterations=params["iterations"],
        burn_in=params["burn_in"],
        thin=params["thin"],
        pilot_iterations=params["pilot_iterations"],
        n_chains=params["chains"],
        seed=params["seed"],
    )
    reports = run_study(regime, specs, config)

    header = ["metric"] + list(reports.keys())
    rows = []
    for metric in ("mae", "mae_se", "coverage80", "coverage95"):
        row = [metric]
        for rep in reports.values():
            v = getattr(rep, metric)
            row.append("" if v is None else f"{v:.6g}")
        rows.append(row)
    table = "\n".join(",".join(r) for r in [header, *rows]) + "\n"
    (out_dir / "mae_table.csv").write_text(table)
    manifest.outputs.append("mae_table.csv")

    flat = ["model,dataset,truth,estimate,lo80,hi80,lo95,hi95,hit80,hit95,error"]
    for label, rep in reports.items():
        for r in rep.records:
            flat.append(
                ",".join(
                    [
                        label,
                        str(r.index),
                        f"{r.truth:.17g}",
                        "" if r.estimate is None else f"{r.estimate:.17g}",
                        "" if r.ci80 is None else f"{r.ci80[0]:.17g}",
                        "" if r.ci80 is None else f"{r.ci80[1]:.17g}",
                        "" if r.ci95 is None else f"{r.ci95[0]:.17g}",
                        "" if r.ci95 is None else f"{r.ci95[1]:.17g}",
                        "" if r.hit80 is None else str(int(r.hit80)),
                        "" if r.hit95 is None else str(int(r.hit95)),
                        (r.error or "").replace(",", ";"),
                    ]
                )
            )
    (out_dir / "study_table.csv").write_text("\n".join(flat) + "\n")
    manifest.outputs.append("study_table.csv")

    any_failed = False
    for name, kind in ((nm, CLI_MODEL_NAMES[nm]) for nm in model_names):
        rep = reports[kind]
        write_json(out_dir / f"study_{kind}.json", rep.to_dict())
        manifest.outputs.append(f"study_{kind}.json")
        any_failed = any_failed or rep.n_failed > 0
    return 1 if any_failed else 0


def cmd_simulate(args) -> int:
    model_names = [m.strip() for m in args.models.split(",") if m.strip()]
    if not model_names:
        raise NsumError("--models must list at least one model")
    for name in model_names:
        if name not in CLI_MODEL_NAMES:
            raise NsumError(f"unknown model {name!r}; choose from {sorted(CLI_MODEL_NAMES)}")
    if args.iterations is None:
        raise NsumError("simulate requires --iterations (no single model default applies)")
    if args.n_datasets is not None and args.n_datasets < 1:
        raise NsumError("--n-datasets must be positive")
    manifest = RunManifest(
        command="simulate",
        seed=args.seed,
        parameters={
            "models": model_names,
            "n_datasets": args.n_datasets,
            "iterations": args.iterations,
            "burn_in": args.burn_in,
            "thin": args.thin,
            "pilot_iterations": args.pilot_iterations,
            "chains": args.chains,
            "seed": args.seed,
        },
    )
    manifest.record_input("regime", args.regime)
    started = time.monotonic()
    with _OutputDir(args.out) as out_dir:
        status = _run_simulate(
            args.regime, model_names, args.n_datasets, out_dir, manifest.parameters, manifest
        )
        manifest.duration_seconds = round(time.monotonic() - started, 3)
        write_json(out_dir / "manifest.json", manifest.to_dict())
    return status


def _run_backestimate(data_path, config_path, model_name, fit_recall, out_dir, params, manifest) -> int:
    kind = CLI_MODEL_NAMES[model_name]
    labels, responses = read_responses_csv(data_path)
    raw_config = load_json(config_path)
    dataset = dataset_from_config(labels, responses, raw_config)
    spec = model_spec_from_config(raw_config, kind, None)
    config = ChainConfig(
        n_iterations=params["iterations"],
        burn_in=params["burn_in"],
        thin=params["thin"],
        pilot_iterations=params["pilot_iterations"],
        n_chains=params["chains"],
        seed=params["seed"],
    )
    result = back_estimate(dataset, spec, config)
    write_json(out_dir / "backestimates.json", result.to_dict())
    manifest.outputs.append("backestimates.json")
    if fit_recall:
        from .postprocess import fit_recall_calibration

        cal = fit_recall_calibration(result.calibration_points())
        write_json(out_dir / "recall_calibration.json", cal.to_dict())
        manifest.outputs.append("recall_calibration.json")
    return 0


def cmd_backestimate(args) -> int:
    if args.iterations is None:
        raise NsumError("backestimate requires --iterations")
    manifest = RunManifest(
        command="backestimate",
        seed=args.seed,
        parameters={
            "model": args.model,
            "fit_recall": bool(args.fit_recall),
            "iterations": args.iterations,
            "burn_in": args.burn_in,
            "thin": args.thin,
            "pilot_iterations": args.pilot_iterations,
            "chains": args.chains,
            "seed": args.seed,
        },
    )
    manifest.record_input("data", args.data)
    manifest.record_input("config", args.config)
    started = time.monotonic()
    with _OutputDir(args.out) as out_dir:
        status = _run_backestimate(
            args.data,
            args.config,
            args.model,
            args.fit_recall,
            out_dir,
            manifest.parameters,
            manifest,
        )
        manifest.duration_seconds = round(time.monotonic() - started, 3)
        write_json(out_dir / "manifest.json", manifest.to_dict())
    return status


def cmd_rerun(args) -> int:
    manifest = RunManifest.from_dict(load_json(args.manifest))
    manifest.verify_inputs()
    params = manifest.parameters
    inputs = {role: entry["path"] for role, entry in manifest.inputs.items()}
    replay = RunManifest(
        command=manifest.command, seed=manifest.seed, parameters=dict(params), inputs=dict(manifest.inputs)
    )
    started = time.monotonic()
    with _OutputDir(args.out) as out_dir:
        if manifest.command == "fit":
            status = _run_fit(
                inputs["data"], inputs["config"], params["model"], out_dir, params, replay
            )
        elif manifest.command == "simulate":
            status = _run_simulate(
                inputs["regime"], params["models"], params["n_datasets"], out_dir, params, replay
            )
        elif manifest.command == "backestimate":
            status = _run_backestimate(
                inputs["data"],
                inputs["config"],
                params["model"],
                params["fit_recall"],
                out_dir,
                params,
                replay,
            )
        else:
            raise NsumError(f"manifest command {manifest.command!r} cannot be rerun")
        replay.duration_seconds = round(time.monotonic() - started, 3)
        write_json(out_dir / "manifest.json", replay.to_dict())
    return status


_DISPATCH = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "backestimate": cmd_backestimate,
    "rerun": cmd_rerun,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except _SAMPLER_ERRORS as exc:
        print(f"nsum: sampler failure: {exc}", file=sys.stderr)
        return 3
    except NsumError as exc:
        print(f"nsum: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
