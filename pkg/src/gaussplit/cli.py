"""Command-line front end.

Every command reads an optional JSON or TOML config file, applies
``--set key=value`` overrides (dotted keys reach into tables), validates the
result and writes outputs that embed the full config and library version.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .casestudy import ClusterExperiment, run_cluster_experiment, validate_clusters
from .decompose import foldset_from_parts, foldset_to_dict, general_decompose, plan_from_spec, reconstruct
from .fisher import ParamModel, fisher_fission, tune_sigma_prime
from .gp import gp_decompose, kernel_from_dict
from .inference import OptimizationError, SimConfig, simulate, split_matrix, summarize, write_rows_csv
from .linalg import CovarianceError, Isotropic, as_cov, cov_from_dict, read_matrix_csv, write_matrix_csv

log = logging.getLogger("gaussplit")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SEED_ENV = "GAUSSPLIT_SEED"


class ConfigError(Exception):
    pass


class NumericalFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "decompose": {"input": None, "plan": {"kind": "thinning", "eps": [0.5, 0.5]}, "sigma_prime": 1.0,
                  "index_set": None, "kernel_prime": None},
    "reconstruct": {"plan_file": None},
    "simulate": {"preset": "desk", "a": 10, "b": 50, "rho": 0.9, "omega": [0.0], "q1": [0.6, 0.71, 0.8],
                 "methods": ["a", "b", "c"], "replicates": 400, "centered": False},
    "validate-clusters": {"data": None, "x1": None, "x2": None, "q1": 0.5 ** 0.25, "innovation": "unit",
                          "linkage": "average", "sizes": [4, 4, 4], "within": 0.8, "rho": 0.5, "b": 60,
                          "replicates": 100},
    "fisher-report": {"mu": None, "Sigma": None, "covariance_model": "diagonal", "q1": None, "gamma": None,
                      "sigma_prime": 1.0, "include_diagonal": False},
}

PRESETS = {
    "desk": {"a": 10, "b": 50, "replicates": 400},
    # full-size null experiment; hours of CPU, not run in CI
    "full": {"a": 25, "b": 100, "replicates": 1000},
}

COMMON = ("seed", "out", "workers")


@dataclass
class RunConfig:
    command: str
    params: Dict[str, Any]
    seed: int
    out: Path
    workers: int = 1
    source: Optional[str] = None
    overrides: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"command": self.command, "seed": self.seed, "workers": self.workers, "out": str(self.out),
                "params": self.params, "source": self.source, "overrides": self.overrides}

    def provenance(self) -> List[str]:
        return [f"gaussplit {__version__}", "config: " + json.dumps(self.to_dict(), sort_keys=True, default=str)]

    def __getitem__(self, key):
        return self.params[key]


def load_config_file(path: str) -> dict:
    p = Path(path)
    try:
        text = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if p.suffix.lower() == ".toml":
            return tomllib.loads(text.decode())
        return json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def _parse_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {part} is not a table")
    node[parts[-1]] = _parse_value(value)


def _as_list(x) -> list:
    return list(x) if isinstance(x, (list, tuple)) else [x]


def build_config(command: str, args: argparse.Namespace) -> RunConfig:
    raw = load_config_file(args.config) if args.config else {}
    # a config file may hold sections for several commands
    if command in raw and isinstance(raw[command], dict):
        raw = {**{k: v for k, v in raw.items() if k not in DEFAULTS}, **raw[command]}
    else:
        raw = {k: v for k, v in raw.items() if k not in DEFAULTS}
    for s in args.set or []:
        apply_override(raw, s)
    params = copy.deepcopy(DEFAULTS[command])
    if command == "simulate" and "preset" in raw:
        if raw["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {raw['preset']!r}; choose from {sorted(PRESETS)}")
        params.update(PRESETS[raw["preset"]])
    common = {k: raw.pop(k) for k in COMMON if k in raw}
    unknown = sorted(set(raw) - set(params))
    if unknown:
        raise ConfigError(f"unknown {command} config keys: {', '.join(unknown)}")
    params.update(raw)

    seed = args.seed if args.seed is not None else common.get("seed")
    if seed is None:
        env = os.environ.get(SEED_ENV)
        try:
            seed = int(env) if env is not None else 0
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    workers = args.workers if args.workers is not None else common.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be a positive integer")
    out = Path(args.out if args.out is not None else common.get("out", "gaussplit-out"))
    cfg = RunConfig(command, params, seed, out, workers, args.config, list(args.set or []))
    VALIDATORS[command](cfg)
    return cfg


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _validate_decompose(cfg: RunConfig) -> None:
    _require(cfg["input"] is not None, "decompose needs 'input' (CSV with one observation per row)")
    _require(isinstance(cfg["plan"], dict), "'plan' must be a table such as {kind='thinning', eps=[0.5, 0.5]}")
    sp = cfg["sigma_prime"]
    _require(isinstance(sp, (int, float, dict, list)), "'sigma_prime' must be a variance, matrix or covariance table")
    if cfg["index_set"] is not None:
        _require(isinstance(cfg["kernel_prime"], dict), "process decomposition needs a 'kernel_prime' table")


def _validate_reconstruct(cfg: RunConfig) -> None:
    _require(cfg["plan_file"] is not None, "reconstruct needs 'plan_file' (the plan.json written by decompose)")


def _validate_simulate(cfg: RunConfig) -> None:
    cfg.params["omega"] = [float(w) for w in _as_list(cfg["omega"])]
    cfg.params["q1"] = [float(q) for q in _as_list(cfg["q1"])]
    cfg.params["methods"] = [str(m) for m in _as_list(cfg["methods"])]
    for w in cfg["omega"]:
        for q in cfg["q1"]:
            _sim_config(cfg, w, q)


def _sim_config(cfg: RunConfig, omega: float, q1: float) -> SimConfig:
    try:
        return SimConfig(a=int(cfg["a"]), b=int(cfg["b"]), rho=float(cfg["rho"]), omega=omega, q1=q1,
                         methods=tuple(cfg["methods"]), replicates=int(cfg["replicates"]), seed=cfg.seed,
                         centered=bool(cfg["centered"]))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _validate_clusters(cfg: RunConfig) -> None:
    q1 = cfg["q1"]
    _require(isinstance(q1, (int, float)) and 0 < q1 < 1, "q1 must lie in (0, 1)")
    have_split = cfg["x1"] is not None or cfg["x2"] is not None
    _require(not (have_split and cfg["data"] is not None), "give either 'data' or 'x1'/'x2', not both")
    if have_split:
        _require(cfg["x1"] is not None and cfg["x2"] is not None, "'x1' and 'x2' must be given together")
    if cfg["data"] is None and not have_split:
        _experiment(cfg)


def _experiment(cfg: RunConfig) -> ClusterExperiment:
    try:
        return ClusterExperiment(sizes=tuple(cfg["sizes"]), within=float(cfg["within"]), rho=float(cfg["rho"]),
                                 b=int(cfg["b"]), q1=float(cfg["q1"]), replicates=int(cfg["replicates"]),
                                 seed=cfg.seed, innovation=cfg["innovation"], linkage=cfg["linkage"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


COV_MODELS = ("isotropic", "diagonal", "compound_symmetry", "dense")


def _validate_fisher(cfg: RunConfig) -> None:
    _require(cfg["Sigma"] is not None, "fisher-report needs 'Sigma'")
    _require(cfg["covariance_model"] in COV_MODELS, f"covariance_model must be one of {COV_MODELS}")
    _require((cfg["q1"] is None) != (cfg["gamma"] is None), "give exactly one of 'q1' or 'gamma'")


VALIDATORS = {
    "decompose": _validate_decompose,
    "reconstruct": _validate_reconstruct,
    "simulate": _validate_simulate,
    "validate-clusters": _validate_clusters,
    "fisher-report": _validate_fisher,
}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _write_json(path: Path, payload: dict, cfg: RunConfig) -> None:
    body = {"version": __version__, "config": cfg.to_dict(), **payload}
    path.write_text(json.dumps(body, indent=2, sort_keys=False, default=float) + "\n")


def _read_input(path) -> np.ndarray:
    try:
        return read_matrix_csv(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _sigma_prime(spec, p: int):
    if isinstance(spec, (int, float)):
        return Isotropic(float(spec), p)
    if isinstance(spec, dict):
        return cov_from_dict(spec)
    return as_cov(np.asarray(spec, dtype=float))


def cmd_decompose(cfg: RunConfig) -> dict:
    X = _read_input(cfg["input"])
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg["index_set"] is not None:
        return _decompose_process(cfg, X)
    n, p = X.shape
    try:
        plan = plan_from_spec(cfg["plan"], n, seed=cfg.seed)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad plan spec {cfg['plan']!r}: {exc}") from exc
    fs = general_decompose(X, plan, _sigma_prime(cfg["sigma_prime"], p), seed=cfg.seed)
    files = []
    for k, fold in enumerate(fs.folds, start=1):
        name = f"fold_{k}.csv"
        write_matrix_csv(cfg.out / name, fold, comments=cfg.provenance() + [f"fold {k} of {fs.K}"])
        files.append(name)
    meta = {**foldset_to_dict(fs), "files": files}
    _write_json(cfg.out / "plan.json", meta, cfg)
    return {"folds": files, "plan": str(cfg.out / "plan.json")}


def _decompose_process(cfg: RunConfig, X: np.ndarray) -> dict:
    T = np.asarray(cfg["index_set"], dtype=float)
    try:
        kern = kernel_from_dict(cfg["kernel_prime"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad kernel_prime {cfg['kernel_prime']!r}: {exc}") from exc
    plan = plan_from_spec(cfg["plan"], 1, seed=cfg.seed)
    g = gp_decompose(X.ravel(), T, plan, kern, seed=cfg.seed)
    Tm = T.reshape(len(T), -1)
    tcols = ["t"] if Tm.shape[1] == 1 else [f"t{i + 1}" for i in range(Tm.shape[1])]
    header = tcols + [f"fold_{k + 1}" for k in range(g.folds.shape[0])]
    write_matrix_csv(cfg.out / "folds.csv", np.hstack([Tm, g.folds.T]), header=header, comments=cfg.provenance())
    meta = {**foldset_to_dict(g.foldset), "files": ["folds.csv"], "index_columns": len(tcols)}
    _write_json(cfg.out / "plan.json", meta, cfg)
    return {"folds": ["folds.csv"], "plan": str(cfg.out / "plan.json")}


def cmd_reconstruct(cfg: RunConfig) -> dict:
    plan_path = Path(cfg["plan_file"])
    try:
        meta = json.loads(plan_path.read_text())
        files = meta["files"]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load plan file {plan_path}: {exc}") from exc
    base = plan_path.parent
    if "index_columns" in meta:
        M = _read_input(base / files[0])
        folds = [M[:, meta["index_columns"] + k][None, :] for k in range(M.shape[1] - meta["index_columns"])]
    else:
        folds = [_read_input(base / f) for f in files]
    try:
        fs = foldset_from_parts(folds, meta)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"fold files do not match the plan: {exc}") from exc
    X = reconstruct(fs)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(cfg.out / "reconstructed.csv", X, comments=cfg.provenance())
    return {"reconstructed": str(cfg.out / "reconstructed.csv")}


def cmd_simulate(cfg: RunConfig) -> dict:
    cfg.out.mkdir(parents=True, exist_ok=True)
    rows, cells = [], []
    for q1 in cfg["q1"]:
        for omega in cfg["omega"]:
            sc = _sim_config(cfg, omega, q1)
            log.info("simulating q1=%g omega=%g (%d replicates)", q1, omega, sc.replicates)
            part = simulate(sc, workers=cfg.workers)
            rows.extend(part)
            cells.append({"q1": q1, "omega": omega, "methods": summarize(part)})
    write_rows_csv(cfg.out / "replicates.csv", rows, comments=cfg.provenance())
    failures = sum(1 for r in rows if not r["converged"])
    _write_json(cfg.out / "summary.json", {"failures": failures, "cells": cells}, cfg)
    if failures:
        raise NumericalFailure(f"{failures} replicate(s) failed to converge; see {cfg.out / 'replicates.csv'}")
    return {"cells": len(cells), "rows": len(rows)}


def cmd_validate_clusters(cfg: RunConfig) -> dict:
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg["data"] is None and cfg["x1"] is None:
        exp = _experiment(cfg)
        rows = run_cluster_experiment(exp, workers=cfg.workers)
        write_rows_csv(cfg.out / "replicates.csv", rows, comments=cfg.provenance(),
                       columns=("replicate", "seed", "h_hat", "rho_hat", "flagged"))
        counts = {str(h): sum(r["h_hat"] == h for r in rows) for h in range(1, exp.a + 1)}
        truth = len(exp.sizes)
        summary = {"replicates": len(rows), "truth_h": truth, "h_hat_counts": counts,
                   "recovery_rate": counts[str(truth)] / len(rows),
                   "mean_rho_hat": float(np.mean([r["rho_hat"] for r in rows]))}
        _write_json(cfg.out / "summary.json", summary, cfg)
        return summary
    q1 = float(cfg["q1"])
    if cfg["data"] is not None:
        X1, X2 = split_matrix(_read_input(cfg["data"]), q1, cfg.seed)
    else:
        X1, X2 = _read_input(cfg["x1"]), _read_input(cfg["x2"])
        if X1.shape != X2.shape:
            raise ConfigError(f"x1 is {X1.shape} but x2 is {X2.shape}")
    a, b = X1.shape
    res = validate_clusters(X1, X2, q1, a, b, cfg["innovation"], cfg["linkage"])
    c = res.curve
    write_matrix_csv(cfg.out / "curve.csv", np.column_stack([c.h, c.cll]), header=["h", "cll"],
                     comments=cfg.provenance())
    labels = res.path.assignments[res.h_hat]
    write_matrix_csv(cfg.out / "clusters.csv", np.column_stack([np.arange(a), labels]), header=["row", "cluster"],
                     comments=cfg.provenance())
    summary = {**res.summary(), "curve": c.to_dict(), "Delta_hat": res.Delta_hat.tolist()}
    _write_json(cfg.out / "summary.json", summary, cfg)
    return {"h_hat": res.h_hat, "flagged": list(c.flagged)}


def _param_model(cfg: RunConfig) -> ParamModel:
    S = np.asarray(cfg["Sigma"], dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ConfigError("'Sigma' must be a square matrix")
    p = S.shape[0]
    mu = np.zeros(p) if cfg["mu"] is None else np.asarray(cfg["mu"], dtype=float)
    if mu.shape != (p,):
        raise ConfigError(f"'mu' must have length {p}")
    kind = cfg["covariance_model"]
    iu = np.triu_indices(p)
    if kind == "isotropic":
        phi, Sof = [S[0, 0]], lambda f: f[0] * np.eye(p)
    elif kind == "diagonal":
        phi, Sof = np.diag(S), lambda f: np.diag(f)
    elif kind == "compound_symmetry":
        # phi = (variance - covariance, covariance) keeps the cross trace nonzero at S = I
        off = S[0, 1] if p > 1 else 0.0
        phi = [S[0, 0] - off, off]
        Sof = lambda f: f[0] * np.eye(p) + f[1] * np.ones((p, p))
    else:
        phi = S[iu]

        def Sof(f):
            M = np.zeros((p, p))
            M[iu] = f
            return M + np.triu(M, 1).T

    if not np.allclose(Sof(np.asarray(phi, dtype=float)), S):
        raise ConfigError(f"'Sigma' does not have {kind} structure")
    # exact derivatives: Sigma is linear in phi
    dS = [Sof(e) for e in np.eye(len(phi))]
    return ParamModel(mu, phi, lambda t: t, Sof, dmu=lambda t: np.eye(p), dSigma=lambda f: dS)


def cmd_fisher_report(cfg: RunConfig) -> dict:
    pm = _param_model(cfg)
    tuned = None
    if cfg["gamma"] is not None:
        tr = tune_sigma_prime(float(cfg["gamma"]), pm.Sigma(), pm, include_diagonal=bool(cfg["include_diagonal"]))
        q1, SigmaP = tr.q1, Isotropic(tr.sigma_prime ** 2, pm.p)
        tuned = {"gamma": float(cfg["gamma"]), "q1": tr.q1, "sigma_prime": tr.sigma_prime,
                 "objective": tr.objective, "iterations": tr.iterations, "converged": tr.converged}
    else:
        q1, SigmaP = float(cfg["q1"]), _sigma_prime(cfg["sigma_prime"], pm.p)
    rep = fisher_fission(pm, q1, SigmaP)
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_json(cfg.out / "fisher.json", {"report": rep.to_dict(), "tuned": tuned}, cfg)
    table = rep.table()
    (cfg.out / "fisher.txt").write_text("\n".join("# " + c for c in cfg.provenance()) + "\n" + table + "\n")
    print(table)
    return {"q1": q1}


COMMANDS = {
    "decompose": cmd_decompose,
    "reconstruct": cmd_reconstruct,
    "simulate": cmd_simulate,
    "validate-clusters": cmd_validate_clusters,
    "fisher-report": cmd_fisher_report,
}

HELP = {
    "decompose": "split the rows of a CSV matrix (or a process on an index set) into folds",
    "reconstruct": "recover the data from fold CSVs and plan.json",
    "simulate": "selective-inference Monte Carlo (null or power sweep)",
    "validate-clusters": "choose a cluster count by conditional log-likelihood",
    "fisher-report": "Fisher information carried by each fold",
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaussplit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gaussplit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in HELP.items():
        sp = sub.add_parser(name, help=helptext, description=helptext)
        sp.add_argument("-c", "--config", help="JSON or TOML config file")
        sp.add_argument("-s", "--set", action="append", metavar="KEY=VALUE",
                        help="override a config value (JSON literal or bare string); repeatable")
        sp.add_argument("--seed", type=int, help=f"random seed (default: config, then ${SEED_ENV}, then 0)")
        sp.add_argument("-o", "--out", help="output directory (default: gaussplit-out)")
        sp.add_argument("-j", "--workers", type=int, help="worker processes for Monte Carlo commands")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args.command, args)
        result = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"gaussplit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, CovarianceError, OptimizationError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"gaussplit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining validation errors raised by the library
        print(f"gaussplit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("done: %s", result)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
