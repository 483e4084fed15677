"""File formats: responses CSV, JSON configs, draws CSV, reports, manifests.

Formats (all versioned with the package):

* responses CSV: header row of group labels, then one row of nonnegative
  integer counts per respondent.
* fit config JSON keys: ``known_sizes`` (map label -> size),
  ``total_population``, ``unknown`` (label), optional ``mu_range``,
  ``sigma_range``, ``transmission_prior`` ({"m", "rho"}, required for the
  transmission and combined models), ``jacobian_mode``.  Unknown keys are
  rejected so a misspelled prior field cannot silently fall back to a
  default.
* regime config JSON keys: ``kind``, ``truth_size``, ``total_population``,
  ``degree_mu``, ``degree_sigma``, optional ``known_sizes`` (list) or
  ``known_groups`` ({"count", "min_prevalence", "max_prevalence"}),
  ``n_respondents``, ``n_datasets``, ``rho`` (barrier; scalar or list),
  ``tau`` and ``tau_prior`` (transmission).
* recall calibration JSON: {"a", "b", "sigma_eps"}.
* draws CSV: one column per stored parameter, one row per stored iteration,
  written with repr-exact "%.17g" floats so identical seeds give identical
  bytes.
* summary/report/manifest JSON: sorted keys, 2-space indent.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import BetaMR, ModelSpec, SurveyDataset, validate_dataset
from .engine import PosteriorDraws
from .errors import InvalidConfig, NsumError, ShapeMismatch
from .harness import SimRegime, default_known_sizes
from .postprocess import RecallCalibration

__all__ = [
    "read_responses_csv",
    "load_json",
    "dataset_from_config",
    "model_spec_from_config",
    "regime_from_config",
    "calibration_from_json",
    "write_json",
    "write_draws_csv",
    "sha256_file",
    "RunManifest",
]

CLI_MODEL_NAMES = {
    "degree": "random_degree",
    "barrier": "barrier",
    "transmission": "transmission",
    "combined": "combined",
}

_FIT_KEYS_REQUIRED = {"known_sizes", "total_population", "unknown"}
_FIT_KEYS_ALLOWED = _FIT_KEYS_REQUIRED | {
    "mu_range",
    "sigma_range",
    "transmission_prior",
    "jacobian_mode",
}
_PRIOR_KEYS = {"m", "rho"}
_REGIME_KEYS_REQUIRED = {"kind", "truth_size", "total_population", "degree_mu", "degree_sigma"}
_REGIME_KEYS_ALLOWED = _REGIME_KEYS_REQUIRED | {
    "known_sizes",
    "known_groups",
    "n_respondents",
    "n_datasets",
    "rho",
    "tau",
    "tau_prior",
}
_KNOWN_GROUP_KEYS = {"count", "min_prevalence", "max_prevalence"}
_CAL_KEYS = {"a", "b", "sigma_eps"}

_DEFAULT_BARRIER_RHO = 0.08  # documented placeholder dispersion, not an estimate


def _check_keys(obj: dict, allowed: set, required: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise InvalidConfig(f"{where} must be a JSON object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise InvalidConfig(
            f"unknown key {unknown[0]!r} in {where}; allowed keys: {sorted(allowed)}"
        )
    missing = sorted(required - set(obj))
    if missing:
        raise InvalidConfig(f"missing key {missing[0]!r} in {where}")


def read_responses_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a responses file: header of labels, integer count rows."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if len(rows) < 2:
        raise ShapeMismatch(f"{path}: need a header row and at least one respondent row")
    labels = [cell.strip() for cell in rows[0]]
    width = len(labels)
    data = np.empty((len(rows) - 1, width), dtype=np.int64)
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ShapeMismatch(f"{path}, line {r}: expected {width} columns, got {len(row)}")
        for c, cell in enumerate(row):
            try:
                data[r - 2, c] = int(cell.strip())
            except ValueError:
                raise ShapeMismatch(
                    f"{path}, line {r}, column {c + 1}: {cell.strip()!r} is not an integer"
                ) from None
    return labels, data


def load_json(path) -> dict:
    path = Path(path)
    try:
        with path.open() as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: invalid JSON ({exc})") from None


def _prior_from_config(obj, where: str) -> BetaMR:
    _check_keys(obj, _PRIOR_KEYS, _PRIOR_KEYS, where)
    return BetaMR(m=float(obj["m"]), rho=float(obj["rho"]))


def dataset_from_config(labels: list[str], responses: np.ndarray, config: dict) -> SurveyDataset:
    """Assemble a validated dataset from a parsed responses table and config."""
    _check_keys(config, _FIT_KEYS_ALLOWED, _FIT_KEYS_REQUIRED, "fit config")
    unknown_label = str(config["unknown"])
    if unknown_label not in labels:
        raise InvalidConfig(f"unknown group {unknown_label!r} not found among columns {labels}")
    unknown_index = labels.index(unknown_label)
    size_map = config["known_sizes"]
    if not isinstance(size_map, dict):
        raise InvalidConfig("known_sizes must map group label -> size")
    for lab in size_map:
        if lab not in labels:
            raise InvalidConfig(f"known_sizes entry {lab!r} does not match any column")
    if unknown_label in size_map:
        raise InvalidConfig(f"unknown group {unknown_label!r} must not appear in known_sizes")
    sizes = []
    for j, lab in enumerate(labels):
        if j == unknown_index:
            continue
        if lab not in size_map:
            raise InvalidConfig(f"column {lab!r} has no entry in known_sizes")
        sizes.append(int(size_map[lab]))
    return validate_dataset(
        responses, sizes, int(config["total_population"]), labels, unknown_index
    )


def model_spec_from_config(
    config: dict, kind: str, jacobian_override: Optional[str] = None
) -> ModelSpec:
    """Build the model spec for a fit; the --jacobian flag wins over config."""
    _check_keys(config, _FIT_KEYS_ALLOWED, _FIT_KEYS_REQUIRED, "fit config")
    prior = None
    if "transmission_prior" in config:
        prior = _prior_from_config(config["transmission_prior"], "transmission_prior")
    if kind in ("transmission", "combined") and prior is None:
        raise InvalidConfig(f"model {kind!r} requires transmission_prior in the config")
    if kind not in ("transmission", "combined"):
        prior = None
    jacobian = jacobian_override or config.get("jacobian_mode", "exact")
    kwargs = {}
    if "mu_range" in config:
        kwargs["mu_range"] = tuple(float(v) for v in config["mu_range"])
    if "sigma_range" in config:
        kwargs["sigma_range"] = tuple(float(v) for v in config["sigma_range"])
    return ModelSpec(
        kind=kind, transmission_prior=prior, jacobian_mode=jacobian, **kwargs
    )


def regime_from_config(config: dict) -> SimRegime:
    """Build a simulation regime from its JSON form."""
    _check_keys(config, _REGIME_KEYS_ALLOWED, _REGIME_KEYS_REQUIRED, "regime config")
    if "known_sizes" in config and "known_groups" in config:
        raise InvalidConfig("give either known_sizes or known_groups, not both")
    total = int(config["total_population"])
    if "known_sizes" in config:
        sizes = tuple(int(s) for s in config["known_sizes"])
    elif "known_groups" in config:
        kg = config["known_groups"]
        _check_keys(kg, _KNOWN_GROUP_KEYS, set(), "known_groups")
        sizes = default_known_sizes(
            total,
            n_groups=int(kg.get("count", 20)),
            lo_prevalence=float(kg.get("min_prevalence", 0.0005)),
            hi_prevalence=float(kg.get("max_prevalence", 0.03)),
        )
    else:
        sizes = default_known_sizes(total)
    kind = str(config["kind"])
    rho = None
    if kind == "barrier":
        raw = config.get("rho", _DEFAULT_BARRIER_RHO)
        if isinstance(raw, (int, float)):
            rho = tuple([float(raw)] * (len(sizes) + 1))
        else:
            rho = tuple(float(v) for v in raw)
    elif "rho" in config:
        raise InvalidConfig(f"{kind} regime takes no rho")
    tau = None
    tau_prior = None
    if kind == "transmission":
        if "tau" not in config or "tau_prior" not in config:
            raise InvalidConfig("transmission regime needs tau and tau_prior")
        tau = float(config["tau"])
        tau_prior = _prior_from_config(config["tau_prior"], "tau_prior")
    elif "tau" in config or "tau_prior" in config:
        raise InvalidConfig(f"{kind} regime takes no tau settings")
    return SimRegime(
        kind=kind,
        truth_size=float(config["truth_size"]),
        total_population=total,
        known_sizes=sizes,
        degree_mu=float(config["degree_mu"]),
        degree_sigma=float(config["degree_sigma"]),
        n_respondents=int(config.get("n_respondents", 500)),
        n_datasets=int(config.get("n_datasets", 100)),
        rho=rho,
        tau=tau,
        tau_prior=tau_prior,
    )


def calibration_from_json(path) -> RecallCalibration:
    obj = load_json(path)
    _check_keys(obj, _CAL_KEYS, _CAL_KEYS, "recall calibration")
    return RecallCalibration(
        a=float(obj["a"]), b=float(obj["b"]), sigma_eps=float(obj["sigma_eps"])
    )


def write_json(path, obj) -> None:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_draws_csv(path, draws: PosteriorDraws) -> None:
    """One column per stored scalar parameter and degree coordinate.

    Full propensity traces (3-D) are not written here; request them via
    ``store_q_traces`` and save the arrays directly if needed.
    """
    names: list[str] = []
    cols: list[np.ndarray] = []
    for name, arr in draws.params.items():
        if arr.ndim == 1:
            names.append(name)
            cols.append(arr)
        elif arr.ndim == 2:
            width = arr.shape[1]
            digits = max(len(str(width - 1)), 1)
            for j in range(width):
                names.append(f"{name}_{j:0{digits}d}")
            cols.append(arr)
    mat = np.column_stack([c.reshape(c.shape[0], -1) for c in cols])
    np.savetxt(path, mat, fmt="%.17g", delimiter=",", header=",".join(names), comments="")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to reproduce a run byte for byte.

    ``parameters`` stores fully resolved values (defaults expanded), and each
    input file is recorded with its content hash so a rerun can refuse to
    proceed against changed inputs.  Wall-clock duration is metadata only and
    is excluded from reproducibility comparisons.
    """

    command: str
    seed: int
    parameters: dict
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    version: str = __version__
    duration_seconds: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "version": self.version,
            "seed": self.seed,
            "parameters": self.parameters,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "duration_seconds": self.duration_seconds,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RunManifest":
        try:
            return cls(
                command=obj["command"],
                seed=obj["seed"],
                parameters=obj["parameters"],
                inputs=obj.get("inputs", {}),
                outputs=obj.get("outputs", []),
                version=obj.get("version", "unknown"),
                duration_seconds=obj.get("duration_seconds"),
            )
        except KeyError as exc:
            raise InvalidConfig(f"manifest is missing key {exc}") from None

    def record_input(self, role: str, path) -> None:
        self.inputs[role] = {"path": str(Path(path).resolve()), "sha256": sha256_file(path)}

    def verify_inputs(self) -> None:
        for role, entry in self.inputs.items():
            p = Path(entry["path"])
            if not p.exists():
                raise InvalidConfig(f"manifest input {role!r} missing at {p}")
            if sha256_file(p) != entry["sha256"]:
                raise InvalidConfig(
                    f"manifest input {role!r} at {p} has changed since the recorded run"
                )
