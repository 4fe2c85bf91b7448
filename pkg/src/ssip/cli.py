"""Command-line front end: ``fit``, ``crc``, ``replicate`` and ``graph-check``.

Settings come from an optional ``key = value`` file (``--config``) and are
overridden by explicit flags. Every run writes ``manifest.json`` with the
config hash and input digests; on failure ``error.json`` is written (when
the output directory is usable), the same record goes to stderr, and the
exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .chain import RunSettings, SamplerError, config_hash
from .crc import build_design, estimate_unseen, estimate_unseen_total, table_to_regions
from .gaussian import GaussianHyper, fit_gaussian_ssip
from .graph import GraphError
from .io import (InputError, chain_dump_rows, load_graph, read_capture_csv, read_config,
                 read_gaussian_csv, read_groups, read_nb_csv, sha256_file, write_csv, write_json)
from .negbin import NbConfig, fit_nb_ssip
from .prior import ConfigError, SsipConfig
from .simulate import CRC_STUDY, run_crc_study, run_gaussian_study

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_SAMPLER = 4

# name -> (type, default); shared by config files and flags
SETTINGS = {
    "iterations": (int, 1000),
    "burn_in": (int, None),
    "thin": (int, 1),
    "seed": (int, 0),
    "chains": (int, 1),
    "rho": (float, 0.9),
    "rho_update": (str, "off"),
    "rho_step": (float, 0.05),
    "mu0": (float, 0.0),
    "s0": (float, 100.0),
    "a_t": (float, 2.0),
    "b_t": (float, 1.0),
    "a": (float, 2.0),
    "b": (float, 1.0),
    "intercept": ("bool", True),
    "pooled_sigma2": ("bool", False),
    "h": (float, 1.0),
    "car_intercept": ("bool", False),
    "temporal": ("bool", None),
    "ar_coef": (float, 0.9),
    "ar_update": ("bool", False),
    "engine": (str, "gaussian"),
    "graph": (str, None),
    "data": (str, None),
    "histories": (str, None),
    "groups": (str, None),
    "K": (int, None),
    "max_order": (int, None),
    "out": (str, None),
    "dump_chain": ("bool", False),
    "study": (str, None),
    "seeds": (str, None),
}


def _to_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _convert(name: str, value):
    kind = SETTINGS[name][0]
    if value is None:
        return None
    try:
        if kind == "bool":
            return _to_bool(value)
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {value!r}") from exc


def resolve_settings(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then flags (flags win)."""
    cfg = {k: d for k, (_, d) in SETTINGS.items()}
    if getattr(args, "config", None):
        if not Path(args.config).is_file():
            raise InputError(f"config file not found: {args.config}")
        for key, value in read_config(args.config).items():
            if key not in SETTINGS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = _convert(key, value)
    for key in SETTINGS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = _convert(key, v)
    return cfg


def _require(cfg: dict, *names) -> None:
    missing = [n for n in names if cfg.get(n) in (None, "")]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join(missing))
    for n in ("data", "histories", "groups", "graph"):
        v = cfg.get(n)
        if v and not (n == "graph" and v.startswith("grid:")) and not Path(v).is_file():
            raise InputError(f"{n} file not found: {v}")


def _run_settings(cfg) -> RunSettings:
    return RunSettings(cfg["iterations"], cfg["burn_in"], cfg["thin"], cfg["seed"], cfg["chains"])


def _ssip(cfg) -> SsipConfig:
    return SsipConfig(rho=cfg["rho"], rho_update=cfg["rho_update"], rho_step=cfg["rho_step"])


def _hyper(cfg) -> GaussianHyper:
    return GaussianHyper(cfg["mu0"], cfg["s0"], cfg["a_t"], cfg["b_t"], cfg["a"], cfg["b"])


def _out_dir(cfg) -> Path:
    _require(cfg, "out")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, command: str, cfg: dict, inputs: dict, outputs: list[str], extra=None):
    digest = {k: sha256_file(v) for k, v in inputs.items() if v}
    record = {
        "command": command,
        "version": __version__,
        "settings": cfg,
        "config_hash": _hash_for(command, cfg, inputs),
        "inputs": {k: {"path": str(v), "sha256": digest[k]} for k, v in inputs.items() if v},
        "outputs": outputs,
    }
    if extra:
        record.update(extra)
    return record


def _hash_for(command, cfg, inputs) -> str:
    # the output location does not influence results
    digest = {k: sha256_file(v) for k, v in inputs.items() if v}
    settings = {k: v for k, v in cfg.items() if k != "out"}
    return config_hash({"command": command, "settings": settings, "inputs": digest})


# commands -------------------------------------------------------------------------

def cmd_fit(cfg: dict) -> dict:
    _require(cfg, "data", "graph", "out")
    if cfg["engine"] not in ("gaussian", "nb"):
        raise ConfigError("engine must be 'gaussian' or 'nb'")
    graph = load_graph(cfg["graph"])
    inputs = {"data": cfg["data"], "graph": None if cfg["graph"].startswith("grid:") else cfg["graph"]}
    out = _out_dir(cfg)
    chash = _hash_for("fit", cfg, inputs)
    run = _run_settings(cfg)
    t0 = time.perf_counter()
    if cfg["engine"] == "gaussian":
        regions, covs = read_gaussian_csv(cfg["data"], graph.n_regions)
        tlabels = []
        chain = fit_gaussian_ssip(regions, graph, _hyper(cfg), _ssip(cfg), run,
                                  intercept=cfg["intercept"], pooled_sigma2=cfg["pooled_sigma2"])
    else:
        regions, covs, tlabels = read_nb_csv(cfg["data"], graph.n_regions)
        temporal = bool(tlabels) and len(tlabels) > 1 if cfg["temporal"] is None else cfg["temporal"]
        nb = NbConfig(h=cfg["h"], car_intercept=cfg["car_intercept"], temporal=temporal,
                      ar_coef=cfg["ar_coef"], ar_update=cfg["ar_update"])
        chain = fit_nb_ssip(regions, graph, _hyper(cfg), _ssip(cfg), nb, run,
                            intercept=cfg["intercept"])
    elapsed = time.perf_counter() - t0

    written = []
    rows = chain.summary_rows([str(i) for i in range(graph.n_regions)], covs)
    for r in rows:
        r["config_hash"] = chash
    cols = ["region_id", "covariate", "inclusion_prob", "beta_mean", "beta_lo95", "beta_hi95",
            "config_hash"]
    write_csv(out / "summary.csv", rows, cols)
    written.append("summary.csv")

    incl = chain.inclusion_prob()
    wide = [dict({"region_id": i, "config_hash": chash}, **dict(zip(covs, incl[i])))
            for i in range(graph.n_regions)]
    write_csv(out / "inclusion.csv", wide, ["region_id"] + covs + ["config_hash"])
    written.append("inclusion.csv")

    if cfg["engine"] == "nb":
        eff = []
        if "alpha" in chain and cfg["car_intercept"]:
            a = chain.flat("alpha")
            for i in range(graph.n_regions):
                eff.append(_effect_row("alpha", str(i), a[:, i], chash))
        if "zeta_t" in chain and chain["zeta_t"].shape[-1]:
            z = chain.flat("zeta_t")
            for k, t in enumerate(tlabels):
                eff.append(_effect_row("zeta_t", str(t), z[:, k], chash))
        write_csv(out / "effects.csv", eff, ["effect", "label", "mean", "lo95", "hi95", "config_hash"])
        written.append("effects.csv")

    if cfg["dump_chain"]:
        drows, dcols = chain_dump_rows(chain)
        for r in drows:
            r["config_hash"] = chash
        write_csv(out / "chain.csv", drows, dcols + ["config_hash"])
        written.append("chain.csv")

    manifest = _manifest(out, "fit", cfg, inputs, written,
                         {"chain_meta": {k: v for k, v in chain.meta.items() if k != "sweep_seconds"},
                          "elapsed_seconds": round(elapsed, 3)})
    write_json(out / "manifest.json", manifest)
    return manifest


def _effect_row(effect, label, draws, chash) -> dict:
    lo, hi = np.quantile(draws, [0.025, 0.975])
    return {"effect": effect, "label": label, "mean": float(draws.mean()), "lo95": float(lo),
            "hi95": float(hi), "config_hash": chash}


def cmd_crc(cfg: dict) -> dict:
    _require(cfg, "histories", "graph", "max_order", "out")
    graph = load_graph(cfg["graph"])
    inputs = {"histories": cfg["histories"], "groups": cfg["groups"],
              "graph": None if cfg["graph"].startswith("grid:") else cfg["graph"]}
    out = _out_dir(cfg)
    chash = _hash_for("crc", cfg, inputs)
    table = read_capture_csv(cfg["histories"], graph.n_regions, cfg["K"])
    if cfg["K"] is not None and cfg["K"] != table.K:
        raise InputError(f"K={cfg['K']} but patterns have {table.K} lists")
    design = build_design(table.K, cfg["max_order"])
    regions, rlabels, tlabels = table_to_regions(table, design)
    temporal = len(tlabels) > 1 if cfg["temporal"] is None else cfg["temporal"]
    nb = NbConfig(h=cfg["h"], car_intercept=cfg["car_intercept"], temporal=temporal,
                  ar_coef=cfg["ar_coef"], ar_update=cfg["ar_update"])
    forced = np.tile(design.forced, (graph.n_regions, 1))
    chain = fit_nb_ssip(regions, graph, _hyper(cfg), _ssip(cfg), nb, _run_settings(cfg),
                        forced_mask=forced)
    rng = np.random.default_rng(cfg["seed"])
    sparse = table.sparse_strata()
    where = {s: k for k, s in enumerate(table.strata)}
    tidx = (lambda k: k) if temporal else (lambda k: None)
    rows = []
    for r in rlabels:
        for k, t in enumerate(tlabels):
            e = estimate_unseen(chain, r, tidx(k), rng)
            rows.append({"region_id": r, "time": t, "mean": e["mean"], "median": e["median"],
                         "lo95": e["ci_low"], "hi95": e["ci_high"],
                         "flag_sparse": bool(sparse[where[(r, t)]]), "config_hash": chash})
    cols = ["region_id", "time", "mean", "median", "lo95", "hi95", "flag_sparse", "config_hash"]
    write_csv(out / "estimates.csv", rows, cols)
    written = ["estimates.csv"]

    if cfg["groups"]:
        groups = read_groups(cfg["groups"])
        unknown = sorted(set(groups) - set(rlabels))
        if unknown:
            raise InputError(f"groups file names regions not in the graph: {unknown}")
        names = list(dict.fromkeys(groups.values()))
        grows = []
        for gname in names:
            members = [r for r, g in groups.items() if g == gname]
            for k, t in enumerate(tlabels):
                e = estimate_unseen_total(chain, members, tidx(k), rng)
                flag = all(sparse[where[(r, t)]] for r in members)
                grows.append({"group": gname, "time": t, "mean": e["mean"], "median": e["median"],
                              "lo95": e["ci_low"], "hi95": e["ci_high"], "flag_sparse": flag,
                              "config_hash": chash})
        write_csv(out / "group_estimates.csv", grows, ["group"] + cols[1:])
        written.append("group_estimates.csv")

    manifest = _manifest(out, "crc", cfg, inputs, written, {
        "design": {"K": design.K, "max_order": design.max_order, "n_columns": design.n_columns,
                   "n_unforced": design.n_unforced, "columns": design.columns},
        "chain_meta": {k: v for k, v in chain.meta.items() if k != "sweep_seconds"},
    })
    write_json(out / "manifest.json", manifest)
    return manifest


def parse_seeds(spec) -> list[int]:
    """``"0-19"``, ``"1,4,9"`` or a mix; an empty spec is an error."""
    seeds = []
    for part in str(spec or "").split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            seeds += list(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError("no seeds given")
    return seeds


def cmd_replicate(cfg: dict) -> dict:
    _require(cfg, "study", "out")
    if cfg["study"] not in ("gaussian", "crc"):
        raise ConfigError("study must be 'gaussian' or 'crc'")
    seeds = parse_seeds(cfg["seeds"])
    out = _out_dir(cfg)
    chash = _hash_for("replicate", cfg, {})
    table, long_rows = [], []
    for seed in seeds:
        row = {"seed": seed, "status": "ok"}
        try:
            if cfg["study"] == "gaussian":
                res = run_gaussian_study(seed, cfg["iterations"], cfg["rho"])
                row.update({k: res[k] for k in ("ssip_mse", "independent_mse", "aic_mse")})
            else:
                res = run_crc_study(seed, {"iterations": cfg["iterations"]})
                for method in ("ssip", "independent", "aic"):
                    for k, v in res[method]["metrics"].items():
                        row[f"{method}_{k}"] = v
                    for cell, e in enumerate(res[method]["estimates"]):
                        for q in ("median", "ci_low", "ci_high"):
                            long_rows.append({"stratum": f"seed{seed}/cell{cell}",
                                              "quantity": f"{method}_{q}", "value": e[q]})
                for cell, v in enumerate(res["truth"]):
                    long_rows.append({"stratum": f"seed{seed}/cell{cell}", "quantity": "truth",
                                      "value": int(v)})
        except (SamplerError, FloatingPointError, ValueError) as exc:
            row["status"] = f"failed: {exc}"
        table.append(row)
    if cfg["study"] == "gaussian":
        metric_cols = ["ssip_mse", "independent_mse", "aic_mse"]
    else:
        metric_cols = [f"{m}_{k}" for m in ("ssip", "independent", "aic")
                       for k in ("coverage", "rmse", "mean_median_abs_diff", "correlation")]
    cols = ["seed"] + metric_cols + ["status", "config_hash"]
    for r in table:
        r["config_hash"] = chash
        for c in metric_cols:
            r.setdefault(c, "")
        if cfg["study"] == "gaussian" and r["status"] == "ok":
            for c in metric_cols:
                long_rows.append({"stratum": f"seed{r['seed']}", "quantity": c, "value": r[c]})
    write_csv(out / "table.csv", table, cols)
    for r in long_rows:
        r["config_hash"] = chash
    write_csv(out / "long.csv", long_rows, ["stratum", "quantity", "value", "config_hash"])

    ok = [r for r in table if r["status"] == "ok"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        medians = {c: float(np.median([r[c] for r in ok])) if ok else None for c in metric_cols}
    summary = {"medians": medians, "n_seeds": len(seeds), "n_failed": len(table) - len(ok)}
    if cfg["study"] == "gaussian" and ok:
        summary["ssip_beats_aic_fraction"] = float(np.mean([r["ssip_mse"] < r["aic_mse"] for r in ok]))
    if cfg["study"] == "crc":
        summary["study_settings"] = CRC_STUDY | {"iterations": cfg["iterations"]}
    manifest = _manifest(out, "replicate", cfg, {}, ["table.csv", "long.csv"], {"report": summary})
    write_json(out / "manifest.json", manifest)
    return manifest


def cmd_graph_check(cfg: dict) -> dict:
    _require(cfg, "graph")
    g = load_graph(cfg["graph"])
    report = {"status": "ok", "n_regions": g.n_regions, "n_edges": g.n_edges,
              "n_components": g.n_components(), "min_degree": int(g.degrees.min()),
              "max_degree": int(g.degrees.max())}
    print(json.dumps(report, sort_keys=True))
    return report


# argument parsing -----------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file (flags override it)")
    p.add_argument("--out", help="output directory")
    g = p.add_argument_group("run")
    for name in ("iterations", "burn_in", "thin", "seed", "chains"):
        g.add_argument("--" + name.replace("_", "-"), dest=name)
    g = p.add_argument_group("prior")
    for name in ("rho", "rho_update", "rho_step", "mu0", "s0", "a_t", "b_t", "a", "b"):
        g.add_argument("--" + name.replace("_", "-"), dest=name)


def _add_bool(p, name, help_text=None):
    p.add_argument("--" + name.replace("_", "-"), dest=name, action="store_const", const="true",
                   help=help_text)
    p.add_argument("--no-" + name.replace("_", "-"), dest=name, action="store_const", const="false")


def _add_nb(p) -> None:
    p.add_argument("--h", dest="h", help="negative-binomial dispersion (fixed)")
    p.add_argument("--ar-coef", dest="ar_coef")
    _add_bool(p, "car_intercept", "CAR prior on regional intercepts")
    _add_bool(p, "temporal", "AR(1) time effect (default: on when several times are present)")
    _add_bool(p, "ar_update", "Metropolis update of the AR coefficient")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssip", description="Spatially smoothed inclusion "
                                     "probabilities for areal regression and capture-recapture.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the Gaussian or negative-binomial SSIP model")
    _add_common(p)
    p.add_argument("--data", help="CSV: region_id, [time,] y, x1..xp")
    p.add_argument("--graph", help="edge-list file or grid:RxC")
    p.add_argument("--engine", choices=("gaussian", "nb"))
    _add_bool(p, "intercept", "force the intercept column (default on)")
    _add_bool(p, "pooled_sigma2", "one error variance shared by all regions")
    _add_bool(p, "dump_chain", "write every stored draw to chain.csv")
    _add_nb(p)

    p = sub.add_parser("crc", help="capture-recapture unseen-count estimates")
    _add_common(p)
    p.add_argument("--histories", help="CSV: region_id, time, pattern")
    p.add_argument("--graph", help="edge-list file or grid:RxC")
    p.add_argument("--K", dest="K", help="number of lists (checked against the patterns)")
    p.add_argument("--max-order", dest="max_order", help="highest interaction order")
    p.add_argument("--groups", help="CSV: region_id, group (aggregated estimates)")
    _add_nb(p)

    p = sub.add_parser("replicate", help="rerun a simulation study over seeds")
    _add_common(p)
    p.add_argument("--study", choices=("gaussian", "crc"))
    p.add_argument("--seeds", help="e.g. 0-19 or 1,5,7")

    p = sub.add_parser("graph-check", help="validate an adjacency file")
    p.add_argument("graph", help="edge-list file or grid:RxC")
    return parser


COMMANDS = {"fit": cmd_fit, "crc": cmd_crc, "replicate": cmd_replicate, "graph-check": cmd_graph_check}


def _error(exc: BaseException, code: int, out: str | None) -> int:
    record = {"status": "error", "error_type": type(exc).__name__, "message": str(exc),
              "exit_code": code}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            write_json(Path(out) / "error.json", record)
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cfg = None
    try:
        cfg = resolve_settings(args)
        COMMANDS[args.command](cfg)
    except (ConfigError, InputError, GraphError, ValueError, KeyError, OSError) as exc:
        code = EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_INPUT
        return _error(exc, code, (cfg or {}).get("out"))
    except (SamplerError, FloatingPointError) as exc:
        return _error(exc, EXIT_SAMPLER, (cfg or {}).get("out"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
