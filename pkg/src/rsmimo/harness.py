"""Campaign runner: config file -> random setups -> power allocation -> CSV/JSON.

Every setup ``i`` draws from ``np.random.SeedSequence([master_seed, i])`` so a
single setup can be replayed without running the ones before it.
"""

import configparser
import csv
import dataclasses
import json
import os
import subprocess
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import powalloc
from .chanstat import (PILOT_MODES, PilotAssignment, estimation_statistics, sample_channels,
                       verify_estimate_dependence)
from .geometry import (CORRELATION_MODELS, TOPOLOGIES, correlations_for_setup, generate_topology,
                       large_scale_fading)
from .params import ConfigurationError, FrameBudgetWarning, SystemParameters
from .se_eval import (closed_form_coefficients, coefficient_errors, evaluate,
                      monte_carlo_coefficients)

CSV_HEADER = ("setup", "scheme", "pilot_mode", "topology", "M", "K", "sum_se", "min_se", "se_c",
              "ue_index", "se_ue", "rho_c", "wallclock_ms")

_PHYSICAL = tuple(f.name for f in dataclasses.fields(SystemParameters))


@dataclass(frozen=True)
class ExperimentConfig:
    """One campaign. Units are part of the key names; powers are in dBm."""

    M: int = 100
    K: int = 4
    topology: str = "circular"
    sector_width_deg: float = 360.0
    sector_center_deg: float = 0.0
    correlation_model: str = "gaussian_scattering"
    pilot_mode: str = "shared_single_pilot"
    schemes: Tuple[str, ...] = ("rs_maxmin_sca", "nors_sca")
    n_setups: int = 50
    n_mc_samples: int = 20000
    master_seed: int = 0
    output_dir: str = "results"
    workers: int = 1
    validate: bool = False
    radius_m: float = 125.0
    side_m: float = 250.0
    n_clusters: int = 10
    angular_std_deg: float = 15.0
    angle_spread_deg: float = 40.0
    grid_delta: float = 0.05
    sca_eps: float = 1e-4
    bisection_tol: float = 1e-8
    gamma_db: float = -148.1
    eta: float = 3.76
    shadow_var_db2: float = 16.0
    tau: int = 200
    tau_p: int = 20
    tau_d: int = 190
    rho_ul_dbm: float = 10.0
    rho_dl_dbm: float = 20.0
    sigma2_ul_dbm: float = -94.0
    sigma2_dl_dbm: float = -94.0

    def __post_init__(self):
        if self.M < 1 or self.K < 1:
            raise ConfigurationError("M and K must be positive")
        if self.topology not in TOPOLOGIES:
            raise ConfigurationError(f"unknown topology {self.topology!r}")
        if self.correlation_model not in CORRELATION_MODELS:
            raise ConfigurationError(f"unknown correlation model {self.correlation_model!r}")
        if self.pilot_mode not in PILOT_MODES:
            raise ConfigurationError(f"unknown pilot mode {self.pilot_mode!r}")
        if not 0 < self.sector_width_deg <= 360:
            raise ConfigurationError("sector_width_deg must lie in (0, 360]")
        if not self.schemes:
            raise ConfigurationError("no schemes configured")
        for s in self.schemes:
            if s not in powalloc.SCHEMES:
                raise ConfigurationError(f"unknown scheme {s!r}; choose from {sorted(powalloc.SCHEMES)}")
        if self.n_setups < 1 or self.workers < 1 or self.n_mc_samples < 1:
            raise ConfigurationError("n_setups, workers and n_mc_samples must be positive")
        self.system  # validates the physical block

    @property
    def system(self) -> SystemParameters:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FrameBudgetWarning)
            return SystemParameters(**{k: getattr(self, k) for k in _PHYSICAL})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schemes"] = list(self.schemes)
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _coerce(name, raw):
    fld = {f.name: f for f in dataclasses.fields(ExperimentConfig)}.get(name)
    if fld is None:
        raise ConfigurationError(f"unknown config key {name!r}")
    default = fld.default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(s.strip() for s in raw.split(",") if s.strip())
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse flat ``key = value`` lines (``#`` comments allowed)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[campaign]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unreadable config: {exc}") from None
    values = {k: _coerce(k, v) for k, v in cp["campaign"].items()}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), **overrides)


def format_config(config: ExperimentConfig) -> str:
    lines = []
    for k, v in config.to_dict().items():
        if isinstance(v, list):
            v = ",".join(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


@dataclass
class ResultRecord:
    setup: int
    scheme: str
    pilot_mode: str
    topology: str
    M: int
    K: int
    se_ue: np.ndarray
    se_c: float
    sum_se: float
    min_se: float
    rho_c: float
    rho: np.ndarray
    iterations: Optional[int]
    wallclock_ms: float
    seed: Tuple[int, int]
    mc_max_rel_error: Optional[float] = None
    info: dict = field(default_factory=dict, repr=False)


class SetupFailure(RuntimeError):
    """A setup raised; ``seed`` replays it via ``SeedSequence(seed)``."""

    def __init__(self, index, seed, cause):
        super().__init__(f"setup {index} (seed {list(seed)}) failed: "
                         f"{type(cause).__name__}: {cause}")
        self.index = index
        self.seed = tuple(seed)
        self.cause = cause


def setup_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(index)])


@dataclass
class Setup:
    correlations: object
    stats: object
    coefficients: object
    weights: object


def build_setup(config: ExperimentConfig, index: int) -> Setup:
    """Geometry, correlation, estimation statistics and SINR coefficients for setup ``index``."""
    p = config.system
    rng = np.random.default_rng(setup_seed(config.master_seed, index))
    geo = generate_topology(config.topology, config.K, np.deg2rad(config.sector_width_deg), rng,
                            radius_m=config.radius_m, side_m=config.side_m,
                            center_angle=np.deg2rad(config.sector_center_deg))
    ls = large_scale_fading(geo, p, rng)
    cor = correlations_for_setup(ls, geo, config.M, config.correlation_model, config.n_clusters,
                                 np.deg2rad(config.angular_std_deg), rng,
                                 angle_spread=np.deg2rad(config.angle_spread_deg))
    pilot = PilotAssignment(config.pilot_mode, p.tau_p, p.rho_ul, p.sigma2_ul, config.K)
    stats = estimation_statistics(cor, pilot)
    coeffs, weights, _ = closed_form_coefficients(stats, p.sigma2_dl, p.prelog)
    return Setup(cor, stats, coeffs, weights)


def _scheme_kwargs(config: ExperimentConfig, name: str) -> dict:
    if name == "rs_maxsum_grid":
        return {"delta": config.grid_delta}
    if name == "nors_bisection":
        return {"tolerance": config.bisection_tol}
    if name.endswith("_sca"):
        return {"eps": config.sca_eps}
    return {}


def validation_errors(config: ExperimentConfig, setup: Setup, index: int) -> dict:
    """Closed-form vs Monte Carlo coefficient errors for one setup."""
    rng = np.random.default_rng(setup_seed(config.master_seed, index).spawn(1)[0])
    p = config.system
    mc = monte_carlo_coefficients(setup.correlations, setup.stats, setup.weights,
                                  config.n_mc_samples, rng, p.sigma2_dl, p.prelog)
    return coefficient_errors(setup.coefficients, mc)


def run_setup(config: ExperimentConfig, index: int) -> List[ResultRecord]:
    seed = (int(config.master_seed), int(index))
    try:
        setup = build_setup(config, index)
        mc_err = None
        if config.validate:
            mc_err = max(validation_errors(config, setup, index).values())
        rho_dl = config.system.rho_dl
        out = []
        for name in config.schemes:
            t0 = time.perf_counter()
            alloc = powalloc.run_scheme(name, setup.coefficients, rho_dl,
                                        **_scheme_kwargs(config, name))
            ms = 1e3 * (time.perf_counter() - t0)
            res = evaluate(setup.coefficients, alloc)
            it = alloc.info.get("iterations")
            out.append(ResultRecord(index, name, config.pilot_mode, config.topology, config.M,
                                    config.K, res.se_total, res.se_c, res.sum_se, res.min_se,
                                    alloc.rho_c, alloc.rho, None if it is None else int(it),
                                    ms, seed, mc_err, alloc.info))
        return out
    except Exception as exc:
        raise SetupFailure(index, seed, exc) from exc


def _run_setup_star(args):
    return run_setup(*args)


def records_to_rows(records: Sequence[ResultRecord]) -> List[dict]:
    """One row per (record, UE), in CSV column order."""
    rows = []
    for r in records:
        for k, se in enumerate(r.se_ue):
            rows.append({"setup": int(r.setup), "scheme": r.scheme, "pilot_mode": r.pilot_mode,
                         "topology": r.topology, "M": int(r.M), "K": int(r.K),
                         "sum_se": float(r.sum_se), "min_se": float(r.min_se),
                         "se_c": float(r.se_c), "ue_index": k, "se_ue": float(se),
                         "rho_c": float(r.rho_c), "wallclock_ms": float(r.wallclock_ms)})
    return rows


def aggregate_rows(rows: Sequence[dict], rho_dl: float) -> dict:
    """Group means and RS-over-NoRS gains from flat rows.

    Works identically on in-memory rows and rows parsed back from CSV,
    because the CSV stores floats with ``repr``.
    """
    groups: Dict[Tuple, Dict[int, list]] = {}
    for row in rows:
        key = (row["scheme"], row["pilot_mode"], row["topology"], int(row["M"]), int(row["K"]))
        groups.setdefault(key, {}).setdefault(int(row["setup"]), []).append(row)
    summary = {}
    for key in sorted(groups):
        setups = groups[key]
        order = sorted(setups)
        first = [setups[s][0] for s in order]
        sum_se = np.array([float(r["sum_se"]) for r in first])
        min_se = np.array([float(r["min_se"]) for r in first])
        se_c = np.array([float(r["se_c"]) for r in first])
        rho_c = np.array([float(r["rho_c"]) for r in first])
        se_ue = np.array([float(r["se_ue"]) for s in order for r in setups[s]])
        share = np.divide(se_c, sum_se, out=np.zeros_like(se_c), where=sum_se > 0)
        summary["|".join(map(str, key))] = {
            "scheme": key[0], "pilot_mode": key[1], "topology": key[2], "M": key[3], "K": key[4],
            "n_setups": len(order),
            "mean_sum_se": float(sum_se.mean()),
            "mean_min_se": float(min_se.mean()),
            "mean_se_per_ue": float(se_ue.mean()),
            "mean_se_c": float(se_c.mean()),
            "mean_common_se_share": float(share.mean()),
            "mean_common_fraction": float((rho_c / rho_dl).mean()),
            "mean_wallclock_ms": float(np.mean([float(r["wallclock_ms"]) for r in first])),
        }
    gains = {}
    for name, g in summary.items():
        base = powalloc.BASELINE.get(g["scheme"])
        if base is None:
            continue
        bkey = "|".join(map(str, (base,) + tuple(name.split("|")[1:])))
        if bkey not in summary:
            continue
        b = summary[bkey]

        def rel(metric):
            rs = g[metric]
            return float((rs - b[metric]) / rs) if rs != 0 else float("nan")

        entry = {"rs": g["scheme"], "nors": base, "pilot_mode": g["pilot_mode"],
                 "topology": g["topology"], "M": g["M"], "K": g["K"],
                 "gain_min_se": rel("mean_min_se"), "gain_sum_se": rel("mean_sum_se"),
                 "gain_se_per_ue": rel("mean_se_per_ue")}
        entry["gain"] = entry["gain_min_se"] if g["scheme"] == "rs_maxmin_sca" else entry["gain_sum_se"]
        gains[name] = entry
    return {"groups": summary, "gains": gains}


@dataclass
class CampaignResult:
    config: ExperimentConfig
    records: List[ResultRecord]
    aggregates: dict


def run_campaign(config: ExperimentConfig, progress=None) -> CampaignResult:
    """Run every configured scheme on ``n_setups`` setups.

    Records come back ordered by setup index, then by scheme order in the
    config, whatever the worker count. The first failing setup aborts the
    campaign with a :class:`SetupFailure` carrying its seed.
    """
    jobs = [(config, i) for i in range(config.n_setups)]
    records: List[ResultRecord] = []
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as ex:
            for i, recs in enumerate(ex.map(_run_setup_star, jobs)):
                records.extend(recs)
                if progress:
                    progress(i)
    else:
        for i, job in enumerate(jobs):
            records.extend(_run_setup_star(job))
            if progress:
                progress(i)
    return CampaignResult(config, records, aggregate_rows(records_to_rows(records), config.system.rho_dl))


def version_string() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__
    return __version__


def write_csv(path, records: Sequence[ResultRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for row in records_to_rows(records):
            w.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in CSV_HEADER)])


def read_csv_rows(path) -> List[dict]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {rd.fieldnames}")
        rows = []
        for r in rd:
            rows.append({"setup": int(r["setup"]), "scheme": r["scheme"],
                         "pilot_mode": r["pilot_mode"], "topology": r["topology"],
                         "M": int(r["M"]), "K": int(r["K"]), "ue_index": int(r["ue_index"]),
                         **{c: float(r[c]) for c in ("sum_se", "min_se", "se_c", "se_ue",
                                                     "rho_c", "wallclock_ms")}})
        return rows


def emit_outputs(result: CampaignResult, out_dir, stem: str = "campaign") -> Dict[str, str]:
    """Write ``<stem>.csv`` and ``<stem>.json`` into ``out_dir``; returns their paths."""
    if not result.records:
        raise ValueError("nothing to emit")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, stem + ".csv")
    json_path = os.path.join(out_dir, stem + ".json")
    write_csv(csv_path, result.records)
    extra = {}
    errs = [r.mc_max_rel_error for r in result.records if r.mc_max_rel_error is not None]
    if errs:
        extra["mc_max_rel_error"] = float(max(errs))
    payload = {"version": version_string(), "config": result.config.to_dict(),
               "aggregates": result.aggregates, **extra}
    with open(json_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return {"csv": csv_path, "json": json_path}


def sweep(config: ExperimentConfig, param: str, values: Sequence, progress=None) -> Dict[str, CampaignResult]:
    """One campaign per value of ``param``; setups share seeds across values."""
    if param not in {f.name for f in dataclasses.fields(ExperimentConfig)}:
        raise ConfigurationError(f"unknown sweep parameter {param!r}")
    out = {}
    for v in values:
        cfg = config.replace(**{param: _coerce(param, str(v))})
        out[f"{param}={v}"] = run_campaign(cfg, progress)
    return out


def validate_campaign(config: ExperimentConfig, tolerance: float = 0.03,
                      dependence_tol: float = 1e-8) -> dict:
    """Closed-form coefficients against Monte Carlo for every setup, plus the estimate-dependence check."""
    report = {"tolerance": tolerance, "n_mc_samples": config.n_mc_samples, "setups": []}
    worst = 0.0
    worst_dep = 0.0
    for i in range(config.n_setups):
        try:
            s = build_setup(config, i)
            errs = validation_errors(config, s, i)
            entry = {"setup": i, "errors": errs}
            if s.stats.mode == "shared_single_pilot":
                rng = np.random.default_rng(setup_seed(config.master_seed, i).spawn(2)[1])
                smp = sample_channels(s.correlations, s.stats, rng, 64, precision="extended")
                dep = verify_estimate_dependence(smp, s.correlations, s.stats)
                entry["dependence_residual"] = dep.residual
                entry["dependence_skipped_pairs"] = len(dep.skipped_pairs)
                worst_dep = max(worst_dep, dep.residual)
        except Exception as exc:
            raise SetupFailure(i, (config.master_seed, i), exc) from exc
        worst = max(worst, max(errs.values()))
        report["setups"].append(entry)
    report["max_rel_error"] = worst
    report["max_dependence_residual"] = worst_dep
    report["passed"] = bool(worst <= tolerance and worst_dep < dependence_tol)
    return report
