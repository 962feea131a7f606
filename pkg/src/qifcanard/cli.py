"""Command-line front end: run configurations, run directories and figure data.

Every experiment is described by a :class:`RunConfig`. Its canonical JSON
(key-sorted, compact, ASCII) is hashed with SHA-256 and the run directory is
named ``<experiment>-<hash[:12]>`` under ``--out`` (default
``$QIFCANARD_OUT`` or ``./runs``). A run writes ``config.json``,
``manifest.json`` and its CSV/JSON outputs; every CSV starts with a
``# config_hash=...`` comment line and numbers are written with 17
significant digits.

Exit codes: 0 success, 2 numerical failure, 3 configuration error, 4 run
directory locked by another invocation.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qifcanard import kernels
from qifcanard.meanfield import (IntegrationError, MeanFieldModel, forced_initial_state, integrate,
                                 sheet_state)
from qifcanard.network import (NetworkIntegrationError, OutputCapExceeded, build_dense, build_sparse,
                               format_float, initial_state, integrate_network, rate_estimate,
                               write_spike_csv, write_trajectory_csv)
from qifcanard.params import STREAMS, ForcingParams, GeneralMfParams, QifParams, SparseParams
from qifcanard.slowfast import (FoldSearchError, NoExcitableStructure, SingularityError,
                                classify_folded_singularity, scenario_classify, singular_canards)
from qifcanard.sweep import (BracketError, MeanFieldSweep, NetworkSweep, SheetUnavailable,
                             SingleCellSweep, TrajectoryTooShort, branch_trace, burst_rate_floor,
                             evaluation_window,
                             route_classify, threshold_bisect)

__all__ = ["RunConfig", "ConfigError", "parse_config", "run", "emit_figure_data", "main"]

EXPERIMENTS = ("simulate-network", "simulate-meanfield", "analyze-manifold", "sweep",
               "classify-scenario", "sparse-demo")
FIGURES = ("manifold-orbit", "branch", "raster")
OUT_ENV = "QIFCANARD_OUT"
EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG, EXIT_LOCKED = 0, 2, 3, 4
NUMERICAL_ERRORS = (IntegrationError, NetworkIntegrationError, OutputCapExceeded, BracketError,
                    FoldSearchError, NoExcitableStructure, SingularityError, SheetUnavailable,
                    TrajectoryTooShort, FloatingPointError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and its domain."""


class RunLocked(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# schema

@dataclass(frozen=True)
class Field:
    default: object
    kind: type
    domain: str = "any"
    check: object = None
    choices: tuple | None = None
    optional: bool = False
    help: str = ""

    def coerce(self, key, value):
        if value is None:
            if self.optional:
                return None
            raise ConfigError(f"{key}: required, expected {self.describe()}")
        if self.kind is bool:
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
                return value.lower() in ("true", "1", "yes")
            raise ConfigError(f"{key}: got {value!r}, expected a boolean")
        if self.kind is str:
            if not isinstance(value, str):
                raise ConfigError(f"{key}: got {value!r}, expected {self.describe()}")
            out = value
        elif self.kind is int:
            if isinstance(value, bool):
                raise ConfigError(f"{key}: got {value!r}, expected an integer")
            try:
                f = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: got {value!r}, expected an integer") from None
            if not math.isfinite(f) or f != int(f):
                raise ConfigError(f"{key}: got {value!r}, expected an integer")
            out = int(f)
        else:
            if isinstance(value, bool):
                raise ConfigError(f"{key}: got {value!r}, expected a number")
            try:
                out = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: got {value!r}, expected a number") from None
            if not math.isfinite(out):
                raise ConfigError(f"{key}: got {value!r}, expected a finite number")
        if self.choices is not None and out not in self.choices:
            raise ConfigError(f"{key}: got {out!r}, expected one of {list(self.choices)}")
        if self.check is not None and not self.check(out):
            raise ConfigError(f"{key}: got {out!r}, expected {self.domain}")
        return out

    def describe(self):
        if self.choices is not None:
            return f"one of {list(self.choices)}"
        return f"{self.kind.__name__} {self.domain}".strip()


def _num(default, domain="any", check=None, optional=False, help=""):
    return Field(default, float, domain, check, optional=optional, help=help)


def _pos(default, help="", optional=False):
    return Field(default, float, "> 0", lambda x: x > 0, optional=optional, help=help)


def _nonneg(default, help=""):
    return Field(default, float, ">= 0", lambda x: x >= 0, help=help)


def _int(default, lo=1, help=""):
    return Field(default, int, f">= {lo}", lambda x: x >= lo, help=help)


def _choice(default, choices, help=""):
    return Field(default, str, choices=tuple(choices), help=help)


def _flag(default, help=""):
    return Field(default, bool, help=help)


_MF_CORE = {
    "delta": _pos(1.0, "current heterogeneity (HWHM)"),
    "J": _num(15.0, help="synaptic coupling"),
    "tau_s": _pos(0.02, "synaptic time constant"),
    "eta_bar": _num(-15.1, help="centre of the forcing / current distribution"),
    "Gamma": _nonneg(0.0, "coupling heterogeneity"),
    "g": _num(0.0, help="electrical coupling"),
    "a": _pos(1.0, "spike asymmetry"),
    "eps": _pos(0.05, "forcing frequency"),
}

SCHEMAS = {
    "simulate-meanfield": {
        **_MF_CORE,
        "A": _nonneg(0.0, "forcing amplitude"),
        "start": _choice("down", ("down", "up"), "initial sheet at K = eta_bar"),
        "periods": _pos(2.0, "integration time in forcing periods"),
        "method": _choice("rk4", ("rk4", "heun", "rkf45")),
        "record_every": _int(10),
    },
    "simulate-network": {
        "kind": _choice("dense", ("dense", "sparse")),
        "N": _int(1000),
        "J": _num(15.0),
        "tau_s": _pos(0.02),
        "eta_bar": _num(-15.1),
        "delta": _nonneg(1.0),
        "V_t": _pos(100.0, "threshold; the reset is -V_t"),
        "A": _nonneg(0.0),
        "eps": _pos(0.05),
        "t_end": _pos(10.0),
        "s0": _nonneg(0.0, "initial gate value"),
        "eta_mode": _choice("quantile", ("quantile", "iid")),
        "method": _choice("heun", ("heun", "euler")),
        "hold": _flag(False, "clamp at reset for 2/V_t and emit the spike mid-hold"),
        "record_every": _int(10),
        "raster_dt": _pos(0.15),
        "keep_spikes": _flag(True),
        "max_spikes": _int(5_000_000),
        "M": _int(100, help="expected in-degree (sparse)"),
        "delta_gamma": _nonneg(0.3, "degree heterogeneity (sparse)"),
        "degree_mode": _choice("reject", ("reject", "zero")),
        "allow_self": _flag(True),
    },
    "analyze-manifold": {
        **{k: v for k, v in _MF_CORE.items() if k not in ("tau_s", "eps")},
        "K_lo": _num(None, optional=True),
        "K_hi": _num(None, optional=True),
        "n_samples": _int(400, 2),
        "canards": _flag(True, "trace singular canards at folded saddles"),
        "arclength": _pos(None, optional=True),
    },
    "sweep": {
        **_MF_CORE,
        "system": _choice("meanfield", ("meanfield", "single-cell")),
        "start": _choice("down", ("down", "up")),
        "A_lo": _nonneg(0.0),
        "A_hi": _nonneg(15.0),
        "mode": _choice("both", ("branch", "bisect", "both")),
        "tol": _pos(1e-10),
        "relative": _flag(False),
        "n_coarse": _int(41, 2),
        "refine_depth": _int(6, 0),
        "measure": _choice("inv_snorm", ("inv_snorm", "delta_r")),
        "transient_periods": _nonneg(1.0),
        "theta_threshold": _choice("pi", ("pi", "pi/2"), "single-cell firing crossing"),
    },
    "classify-scenario": {
        **_MF_CORE,
        "routes": _flag(True, "trace down- and up-start branches"),
        "A_max": _pos(10.0),
        "n_coarse": _int(41, 2),
        "refine_depth": _int(4, 0),
        "measure": _choice("delta_r", ("inv_snorm", "delta_r")),
    },
    "sparse-demo": {
        "N": _int(10_000),
        "M": _int(1_000),
        "J": _num(1.0),
        "tau_s": _pos(0.015),
        "delta_gamma": _nonneg(0.3),
        "eta_bar": _num(-0.5),
        "delta": _pos(1e-4),
        "V_t": _pos(100.0),
        "eps": _pos(0.1),
        "A_scaled": _nonneg(16.5, "forcing amplitude times sqrt(M)"),
        "eta_mode": _choice("quantile", ("quantile", "iid")),
        "degree_mode": _choice("reject", ("reject", "zero")),
        "allow_self": _flag(True),
        "periods": _pos(1.0, "length of the run in forcing periods"),
        "record_every": _int(10),
        "raster_dt": _pos(0.15),
        "bisect": _flag(False, "also bisect the burst threshold"),
        "A_scaled_lo": _nonneg(15.5),
        "A_scaled_hi": _nonneg(16.5),
        "tol": _pos(1e-8, "relative bracket width"),
    },
}

GLOBAL = {
    "seed": Field(0, int, ">= 0", lambda x: x >= 0),
    "convention": _choice("pi2", ("pi2", "printed")),
    "jump_convention": _choice("meanfield", ("meanfield", "literal")),
    "dt": _pos(None, optional=True),
}
# these only affect where and how verbosely a run reports, not its content
UNHASHED = ("out", "quiet")


@dataclass
class RunConfig:
    experiment: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    convention: str = "pi2"
    jump_convention: str = "meanfield"
    dt: float | None = None
    out: str | None = None
    quiet: bool = False

    def to_dict(self, hashed_only=False) -> dict:
        d = {"experiment": self.experiment, "params": dict(self.params), "seed": self.seed,
             "convention": self.convention, "jump_convention": self.jump_convention, "dt": self.dt}
        if not hashed_only:
            d["out"] = self.out
            d["quiet"] = self.quiet
        return d

    def canonical(self) -> str:
        """Key-sorted compact JSON of everything that determines the outputs."""
        return canonical_json(self.to_dict(hashed_only=True))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("ascii")).hexdigest()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=True, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text) -> RunConfig:
        return parse_config(json.loads(text))

    def run_dir(self, root=None) -> Path:
        root = Path(root or self.out or os.environ.get(OUT_ENV) or "runs")
        return root / f"{self.experiment}-{self.hash[:12]}"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def parse_config(source=None, overrides=None, experiment=None) -> RunConfig:
    """Validate a configuration and fill in defaults.

    Parameters
    ----------
    source : str, Path, dict or None
        Path to a JSON file or an already-loaded mapping with keys
        ``experiment``, ``params`` and optionally the global settings.
    overrides : dict, optional
        Values taking precedence; global keys go to the top level, all
        others into ``params``. ``None`` values are ignored.
    experiment : str, optional
        Experiment kind when ``source`` does not name one.

    Raises
    ------
    ConfigError
        Unknown key, wrong type or value outside its domain.
    """
    if source is None:
        doc = {}
    elif isinstance(source, dict):
        doc = json.loads(json.dumps(source))
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    allowed_top = {"experiment", "params", *GLOBAL, *UNHASHED}
    for key in doc:
        if key not in allowed_top:
            raise ConfigError(f"unknown key {key!r}; expected one of {sorted(allowed_top)}")
    exp = doc.get("experiment", experiment)
    if experiment is not None and exp != experiment:
        raise ConfigError(f"experiment: config names {exp!r} but {experiment!r} was requested")
    if exp not in SCHEMAS:
        raise ConfigError(f"experiment: got {exp!r}, expected one of {list(EXPERIMENTS)}")
    schema = SCHEMAS[exp]
    given = doc.get("params", {}) or {}
    if not isinstance(given, dict):
        raise ConfigError("params: expected a JSON object")
    top = {k: doc[k] for k in doc if k in GLOBAL or k in UNHASHED}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in GLOBAL or key in UNHASHED:
            top[key] = value
        elif key in schema:
            given[key] = value
        else:
            raise ConfigError(f"unknown parameter {key!r} for {exp}; expected one of {sorted(schema)}")
    for key in given:
        if key not in schema:
            raise ConfigError(f"unknown parameter {key!r} for {exp}; expected one of {sorted(schema)}")
    params = {key: f.coerce(key, given.get(key, f.default)) for key, f in schema.items()}
    g = {key: f.coerce(key, top.get(key, f.default)) for key, f in GLOBAL.items()}
    out = top.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError(f"out: got {out!r}, expected a path string")
    quiet = Field(False, bool).coerce("quiet", top.get("quiet", False))
    _cross_check(exp, params)
    return RunConfig(exp, params, g["seed"], g["convention"], g["jump_convention"], g["dt"], out, quiet)


def _cross_check(exp, p):
    if exp == "sweep" and p["A_hi"] <= p["A_lo"]:
        raise ConfigError(f"A_hi: got {p['A_hi']}, expected a value above A_lo={p['A_lo']}")
    if exp == "analyze-manifold" and None not in (p["K_lo"], p["K_hi"]) and p["K_hi"] <= p["K_lo"]:
        raise ConfigError(f"K_hi: got {p['K_hi']}, expected a value above K_lo={p['K_lo']}")
    sparse = exp == "sparse-demo" or (exp == "simulate-network" and p["kind"] == "sparse")
    if sparse and p["M"] > p["N"]:
        raise ConfigError(f"M: got {p['M']}, expected at most N={p['N']}")
    if exp == "sparse-demo" and p["A_scaled_hi"] <= p["A_scaled_lo"]:
        raise ConfigError("A_scaled_hi: expected a value above A_scaled_lo")


# ---------------------------------------------------------------------------
# output helpers

def write_csv(path, header, rows, config_hash):
    """CSV with a ``# config_hash=`` comment line; floats at 17 digits."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(x) for x in row])


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format_float(x)
    return str(x)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2, ensure_ascii=True)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    return x


def read_csv(path):
    """Rows of a CSV written by :func:`write_csv` (comment line skipped)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]


# ---------------------------------------------------------------------------
# experiments

class _Ctx:
    def __init__(self, cfg: RunConfig, rundir: Path):
        self.cfg = cfg
        self.p = cfg.params
        self.dir = rundir
        self.hash = cfg.hash
        self.outputs = []
        self.info = {}

    def csv(self, name, header, rows):
        write_csv(self.dir / name, header, rows, self.hash)
        self.outputs.append(name)

    def json(self, name, obj):
        write_json(self.dir / name, obj)
        self.outputs.append(name)

    def log(self, msg):
        if not self.cfg.quiet:
            print(msg, file=sys.stderr)


def _mf_model(cfg: RunConfig, A=0.0):
    p = cfg.params
    gp = GeneralMfParams(delta=p["delta"], J=p["J"], tau_s=p.get("tau_s", 0.02), eta_bar=p["eta_bar"],
                         Gamma=p["Gamma"], g=p["g"], a=p["a"])
    fp = ForcingParams(A=A, eps=p.get("eps", 0.05), eta_bar=p["eta_bar"])
    return MeanFieldModel(gp, fp, cfg.convention)


def _mf_rows(traj):
    return np.column_stack([traj.t, traj.y]).tolist()


def _exp_simulate_meanfield(ctx: _Ctx):
    p = ctx.p
    model = _mf_model(ctx.cfg, p["A"])
    geom = model.geometry()
    y0 = forced_initial_state(model, geom, p["start"])
    T = p["periods"] * model.forcing.period
    dt = ctx.cfg.dt or model.default_dt()
    traj = integrate(model, y0, (0.0, T), dt=dt, method=p["method"], record_every=p["record_every"])
    ctx.csv("trajectory.csv", ["t", "r", "v", "s", "K", "Q"], _mf_rows(traj))
    ctx.json("geometry.json", geom.to_json(p["eta_bar"]))
    ctx.info["dt"] = dt


def _exp_simulate_network(ctx: _Ctx):
    p, cfg = ctx.p, ctx.cfg
    fp = ForcingParams(A=p["A"], eps=p["eps"], eta_bar=p["eta_bar"])
    if p["kind"] == "dense":
        qp = QifParams(N=p["N"], J=p["J"], tau_s=p["tau_s"], eta_bar=p["eta_bar"], delta=p["delta"],
                       V_t=p["V_t"], seed=cfg.seed)
        system = build_dense(qp, fp, p["eta_mode"], cfg.jump_convention, p["method"], p["hold"])
    else:
        sp = SparseParams(N=p["N"], M=p["M"], delta_gamma=p["delta_gamma"], J=p["J"], tau_s=p["tau_s"],
                          eta_bar=p["eta_bar"], delta=p["delta"], V_t=p["V_t"], seed=cfg.seed,
                          forcing=fp)
        system = build_sparse(sp, eta_mode=p["eta_mode"], jump_convention=cfg.jump_convention,
                              method=p["method"], hold=p["hold"], degree_mode=p["degree_mode"],
                              allow_self=p["allow_self"])
    dt = cfg.dt or p["tau_s"] / 10
    state = initial_state(system, s0=p["s0"], seed=cfg.seed)
    traj, raster = integrate_network(system, state, (0.0, p["t_end"]), dt, record_every=p["record_every"],
                                     keep_spikes=p["keep_spikes"], max_spikes=p["max_spikes"],
                                     raster_dt=p["raster_dt"])
    comment = f"config_hash={ctx.hash}"
    write_trajectory_csv(ctx.dir / "trajectory.csv", traj, comment)
    ctx.outputs.append("trajectory.csv")
    if p["keep_spikes"]:
        write_spike_csv(ctx.dir / "spikes.csv", state.spike_log, comment)
        ctx.outputs.append("spikes.csv")
    _raster_csv(ctx, "rate.csv", raster)
    ctx.info.update(dt=dt, eta_mode=p["eta_mode"], spikes=int(traj.step_counts.sum()))


def _raster_csv(ctx, name, raster):
    rows = zip(raster.edges[:-1], raster.edges[1:], raster.counts, raster.rate)
    ctx.csv(name, ["t_lo", "t_hi", "count", "rate"], rows)


def _default_K_range(geom, eta_bar):
    if len(geom.folds) == 2:
        span = geom.eta_minus - geom.eta_plus
        return geom.eta_plus - span, geom.eta_minus + span
    return eta_bar - 5.0, eta_bar + 5.0


def _write_manifold(ctx, geom, eta_bar, K_range, n, canards=True, arclength=None):
    smp = geom.sample(K_range, n)
    ctx.csv("S0.csv", ["v", "r", "s", "K", "sheet"],
            zip(smp["v"], smp["r"], smp["s"], smp["K"], smp["sheet"]))
    doc = geom.to_json(eta_bar)
    doc["K_range"] = list(K_range)
    ctx.json("geometry.json", doc)
    if not canards:
        return
    rows = []
    for f in geom.folds:
        fs = classify_folded_singularity(f, eta_bar, geom)
        if fs.cls != "FoldedSaddle":
            continue
        sc = singular_canards(fs, eta_bar, geom, arclength=arclength)
        for name, arr in (("true", sc.true), ("faux", sc.faux)):
            rows.extend((f.location, name, *row) for row in arr.tolist())
    ctx.csv("singular_canards.csv", ["fold", "curve", "v", "K", "Q"], rows)


def _exp_analyze_manifold(ctx: _Ctx):
    p = ctx.p
    model = _mf_model(ctx.cfg)
    geom = model.geometry()
    K_range = _default_K_range(geom, p["eta_bar"])
    K_range = (p["K_lo"] if p["K_lo"] is not None else K_range[0],
               p["K_hi"] if p["K_hi"] is not None else K_range[1])
    _write_manifold(ctx, geom, p["eta_bar"], K_range, p["n_samples"], p["canards"], p["arclength"])


def _sweep_system(cfg: RunConfig, start=None):
    p = cfg.params
    start = start or p["start"]
    if p["system"] == "meanfield":
        return MeanFieldSweep(_mf_model(cfg), start, p["measure"], dt=cfg.dt,
                              transient_periods=p["transient_periods"])
    thr = math.pi if p["theta_threshold"] == "pi" else 0.5 * math.pi
    kappa = None if cfg.jump_convention == "meanfield" else 1.0
    return SingleCellSweep(p["eta_bar"], p["J"], p["tau_s"], p["eps"], start, p["measure"],
                           dt=cfg.dt or 2e-3, kappa=kappa, theta_threshold=thr,
                           transient_periods=p["transient_periods"])


def _branch_rows(branch):
    return sorted(branch.to_rows(), key=lambda r: r[0])


def _exp_sweep(ctx: _Ctx):
    p = ctx.p
    system = _sweep_system(ctx.cfg)
    samples = None
    lo, hi = p["A_lo"], p["A_hi"]
    if p["mode"] in ("branch", "both"):
        br = branch_trace(system, (lo, hi), p["n_coarse"], p["refine_depth"])
        ctx.csv("branch.csv", ["A", "measure", "fate", "canard_time"], _branch_rows(br))
        ctx.info["refinement"] = br.refinement
        flips = [(a, b) for a, b in zip(br.samples, br.samples[1:]) if a.fate.burst != b.fate.burst]
        if p["mode"] == "both":
            if not flips:
                raise BracketError(f"no burst transition on the branch over [{lo}, {hi}]")
            a, b = flips[0]
            lo, hi, samples = a.A, b.A, (a, b)
    if p["mode"] in ("bisect", "both"):
        res = threshold_bisect(system, lo, hi, p["tol"], relative=p["relative"], samples=samples)
        ctx.json("threshold.json", res.to_json())


def _exp_classify_scenario(ctx: _Ctx):
    p = ctx.p
    model = _mf_model(ctx.cfg)
    geom = model.geometry()
    rep = scenario_classify(p["eta_bar"], geom)
    doc = {"case": rep.case, "boundary": rep.boundary, "geometry": geom.to_json(p["eta_bar"])}
    if p["routes"] and rep.case is not None:
        branches = {}
        for start in ("down", "up"):
            try:
                sw = MeanFieldSweep(model, start, p["measure"], dt=ctx.cfg.dt, geometry=geom)
            except SheetUnavailable:
                branches[start] = None
                continue
            br = branch_trace(sw, (0.0, p["A_max"]), p["n_coarse"], p["refine_depth"])
            branches[start] = br
            ctx.csv(f"branch_{start}.csv", ["A", "measure", "fate", "canard_time"], _branch_rows(br))
        routes = route_classify(branches, rep.case)
        doc["routes"] = {"branch_kinds": routes.branch_kinds, "continuous": routes.continuous,
                         "interrupted": routes.interrupted, "anomalies": routes.anomalies}
    ctx.json("scenario.json", doc)


def _exp_sparse_demo(ctx: _Ctx):
    p, cfg = ctx.p, ctx.cfg
    fp = ForcingParams(A=0.0, eps=p["eps"], eta_bar=p["eta_bar"])
    sp = SparseParams(N=p["N"], M=p["M"], delta_gamma=p["delta_gamma"], J=p["J"], tau_s=p["tau_s"],
                      eta_bar=p["eta_bar"], delta=p["delta"], V_t=p["V_t"], seed=cfg.seed, forcing=fp)
    system = build_sparse(sp, eta_mode=p["eta_mode"], jump_convention=cfg.jump_convention,
                          degree_mode=p["degree_mode"], allow_self=p["allow_self"])
    model = MeanFieldModel.sparse(sp, cfg.convention)
    geom = model.geometry()
    dt = cfg.dt or p["tau_s"] / 15
    A = p["A_scaled"] / sp.sqrt_M
    sweep = NetworkSweep(system, p["eta_bar"], dt, "down", amp_scale=sp.sqrt_M, seed=cfg.seed,
                         geometry=geom, fate_mode="rate", warm_start=True, r_floor=burst_rate_floor(geom),
                         tau_dwell=p["raster_dt"], record_every=p["record_every"], rate_bin=p["raster_dt"])
    sysA = system.with_amplitude(p["A_scaled"])
    t0 = sweep_window_start(sweep)
    state = sweep.initial(sysA, A, t0)
    T = p["periods"] * 2.0 * math.pi / p["eps"]
    traj, raster = integrate_network(sysA, state, (t0, t0 + T), dt, record_every=p["record_every"],
                                     keep_spikes=True, raster_dt=p["raster_dt"])
    comment = f"config_hash={ctx.hash}"
    write_trajectory_csv(ctx.dir / "trajectory.csv", traj, comment)
    write_spike_csv(ctx.dir / "spikes.csv", state.spike_log, comment)
    ctx.outputs += ["trajectory.csv", "spikes.csv"]
    _raster_csv(ctx, "rate.csv", raster)
    mf_model = model.with_forcing(ForcingParams(A=A, eps=p["eps"], eta_bar=p["eta_bar"]))
    K0 = p["eta_bar"] + A * math.sin(p["eps"] * t0)
    y0 = sheet_state(geom, K0, "down", Q=A * math.cos(p["eps"] * t0))
    mf_dt = min(1e-3, p["tau_s"] / 20)
    mf = integrate(mf_model, y0, (t0, t0 + T), dt=mf_dt, record_every=max(1, int(round(dt * p["record_every"] / mf_dt))))
    ctx.csv("meanfield.csv", ["t", "r", "v", "s", "K", "Q"], _mf_rows(mf))
    ctx.json("geometry.json", geom.to_json(p["eta_bar"]))
    ctx.info.update(dt=dt, eta_mode=p["eta_mode"], degree_mode=p["degree_mode"],
                    r_floor=sweep.r_floor, spikes=len(state.spike_log))
    if p["bisect"]:
        res = threshold_bisect(sweep, p["A_scaled_lo"] / sp.sqrt_M, p["A_scaled_hi"] / sp.sqrt_M,
                               p["tol"], relative=True)
        doc = res.to_json()
        doc["A_star_scaled"] = res.A_star * sp.sqrt_M
        ctx.json("threshold.json", doc)


def sweep_window_start(sweep: NetworkSweep):
    return evaluation_window(sweep.system.eps, sweep.start, sweep.transient_periods)[0]


EXPERIMENT_RUNNERS = {
    "simulate-meanfield": _exp_simulate_meanfield,
    "simulate-network": _exp_simulate_network,
    "analyze-manifold": _exp_analyze_manifold,
    "sweep": _exp_sweep,
    "classify-scenario": _exp_classify_scenario,
    "sparse-demo": _exp_sparse_demo,
}


# ---------------------------------------------------------------------------
# run directories

def _versions():
    import scipy

    from qifcanard import __version__
    return {"qifcanard": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "kernel_backend": kernels.BACKEND}


def _seed_streams(seed):
    return {label: {"entropy": [int(seed), zlib.crc32(label.encode("utf-8"))]} for label in STREAMS}


class _Lock:
    def __init__(self, path: Path):
        self.path = path

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLocked(f"run directory {self.path.parent} is locked by another invocation "
                            f"(remove {self.path.name} if no run is active)") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def run(config: RunConfig, root=None) -> tuple[Path, int]:
    """Execute ``config`` in its run directory; returns ``(directory, exit code)``."""
    rundir = config.run_dir(root)
    rundir.mkdir(parents=True, exist_ok=True)
    with _Lock(rundir / ".lock"):
        (rundir / "config.json").write_text(config.to_json())
        ctx = _Ctx(config, rundir)
        started = time.time()
        status, code, error = "ok", EXIT_OK, None
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                EXPERIMENT_RUNNERS[config.experiment](ctx)
        except NUMERICAL_ERRORS as exc:
            status, code = "numerical-failure", EXIT_NUMERICAL
            error = {"type": type(exc).__name__, "message": str(exc)}
            for attr in ("t", "index"):
                if getattr(exc, attr, None) is not None:
                    error[attr] = getattr(exc, attr)
            ctx.log(f"numerical failure: {type(exc).__name__}: {exc}")
        manifest = {
            "experiment": config.experiment,
            "config_hash": config.hash,
            "status": status,
            "exit_code": code,
            "error": error,
            "outputs": sorted(ctx.outputs),
            "versions": _versions(),
            "seed": config.seed,
            "seed_streams": _seed_streams(config.seed),
            "wall_time_s": time.time() - started,
            "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
            "info": ctx.info,
        }
        write_json(rundir / "manifest.json", manifest)
    return rundir, code


# ---------------------------------------------------------------------------
# figure data

def _load_run(path):
    path = Path(path)
    cfg_path = path / "config.json"
    if not cfg_path.is_file():
        raise FileNotFoundError(f"{path} is not a run directory (no config.json)")
    cfg = RunConfig.from_json(cfg_path.read_text())
    return path, cfg


def emit_figure_data(run_dirs, figure, out_dir, raster_dt=0.15) -> list:
    """Reshape run outputs into plot-ready CSVs in ``out_dir``.

    Figures
    -------
    ``manifold-orbit``
        Needs an ``analyze-manifold`` run and an orbit run
        (``simulate-meanfield`` or ``simulate-network``); writes ``S0.csv``,
        ``orbit.csv`` (``t,v,K``) and ``singular_canards.csv``.
    ``branch``
        Needs a ``sweep`` run; writes ``branch.csv`` sorted by A.
    ``raster``
        Needs a network run with a spike log; writes ``raster.csv`` and
        ``rate_hist.csv`` binned at ``raster_dt``.

    Raises
    ------
    FileNotFoundError
        Required runs or files are missing; the message lists them.
    """
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; expected one of {list(FIGURES)}")
    runs = [_load_run(d) for d in run_dirs]
    by_kind = {}
    for path, cfg in runs:
        by_kind.setdefault(cfg.experiment, (path, cfg))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def need(kinds, what):
        for k in kinds:
            if k in by_kind:
                return by_kind[k]
        raise FileNotFoundError(f"figure {figure!r} needs a {what} run ({' or '.join(kinds)}); "
                                f"got {sorted(by_kind) or 'none'}")

    def cite(path):
        return _read_hash(path)

    if figure == "manifold-orbit":
        mpath, _ = need(("analyze-manifold",), "manifold")
        opath, ocfg = need(("simulate-meanfield", "simulate-network", "sparse-demo"), "orbit")
        for name in ("S0.csv", "singular_canards.csv"):
            src = mpath / name
            if not src.is_file():
                raise FileNotFoundError(f"{src} missing; rerun analyze-manifold with canards enabled")
            header, rows = read_csv(src)
            write_csv(out / name, header, rows, cite(src))
            written.append(name)
        src = opath / "trajectory.csv"
        header, rows = read_csv(src)
        t = np.array([float(r[0]) for r in rows])
        if ocfg.experiment == "simulate-meanfield":
            v = [float(r[header.index("v")]) for r in rows]
            K = [float(r[header.index("K")]) for r in rows]
        else:
            p = ocfg.params
            amp = p.get("A", p.get("A_scaled", 0.0) / math.sqrt(p.get("M", 1)))
            v = [float(r[header.index("v_mean_winsorized")]) for r in rows]
            K = (p["eta_bar"] + amp * np.sin(p["eps"] * t)).tolist()
        write_csv(out / "orbit.csv", ["t", "v", "K"], zip(t.tolist(), v, K), cite(src))
        written.append("orbit.csv")
    elif figure == "branch":
        spath, _ = need(("sweep",), "sweep")
        src = spath / "branch.csv"
        if not src.is_file():
            raise FileNotFoundError(f"{src} missing; the sweep run needs mode 'branch' or 'both'")
        header, rows = read_csv(src)
        rows.sort(key=lambda r: float(r[0]))
        write_csv(out / "branch.csv", header, rows, cite(src))
        written.append("branch.csv")
    else:
        npath, ncfg = need(("simulate-network", "sparse-demo"), "network")
        src = npath / "spikes.csv"
        if not src.is_file():
            raise FileNotFoundError(f"{src} missing; rerun the network with keep_spikes enabled")
        header, rows = read_csv(src)
        write_csv(out / "raster.csv", header, rows, cite(src))
        times = np.array([float(r[0]) for r in rows])
        tr_header, tr_rows = read_csv(npath / "trajectory.csv")
        span = (float(tr_rows[0][0]), float(tr_rows[-1][0])) if tr_rows else None
        rs = rate_estimate(times, raster_dt, ncfg.params["N"], span)
        write_csv(out / "rate_hist.csv", ["t_lo", "t_hi", "count", "rate"],
                  zip(rs.edges[:-1], rs.edges[1:], rs.counts, rs.rate), cite(src))
        written += ["raster.csv", "rate_hist.csv"]
    return written


def _read_hash(path):
    with open(path) as fh:
        first = fh.readline().strip()
    return first.split("=", 1)[1] if first.startswith("# config_hash=") else "unknown"


# ---------------------------------------------------------------------------
# argparse front end

def _add_globals(ap, suppress):
    d = argparse.SUPPRESS if suppress else None
    ap.add_argument("--seed", type=int, default=d, help="top-level seed (default 0)")
    ap.add_argument("--out", default=d, help=f"output root (default ${OUT_ENV} or ./runs)")
    ap.add_argument("--convention", choices=("pi2", "printed"), default=d,
                    help="rate term of the voltage equation: pi^2 r^2 or pi r^2")
    ap.add_argument("--jump-convention", dest="jump_convention", choices=("meanfield", "literal"),
                    default=d, help="synaptic jump per spike: 1/tau_s scaling or the bare increment")
    ap.add_argument("--dt", type=float, default=d, help="time step (default per experiment)")
    ap.add_argument("--quiet", action="store_true", default=d, help="do not echo the config")


class _Parser(argparse.ArgumentParser):
    """Argument errors are configuration errors (exit code 3)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="qifcanard", description=__doc__.split("\n")[0])
    _add_globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)
    for exp in EXPERIMENTS:
        sp = sub.add_parser(exp, help=f"run the {exp} experiment")
        _add_globals(sp, suppress=True)
        sp.add_argument("--config", help="JSON config file; flags override its values")
        for key, f in SCHEMAS[exp].items():
            kw = {"dest": f"p_{key}", "default": None, "help": f"{f.help} [{f.describe()}, default {f.default}]"}
            if f.kind is bool:
                kw["type"] = lambda s: Field(False, bool).coerce("flag", s)
                kw["metavar"] = "{true,false}"
            elif f.choices:
                kw["choices"] = f.choices
            else:
                kw["type"] = str
            sp.add_argument(f"--{key.replace('_', '-')}", **kw)
    em = sub.add_parser("emit-figure-data", help="reshape run outputs into plot-ready CSVs")
    _add_globals(em, suppress=True)
    em.add_argument("figure", choices=FIGURES)
    em.add_argument("runs", nargs="+", help="run directories")
    em.add_argument("--dest", required=True, help="directory for the CSV bundle")
    em.add_argument("--raster-dt", type=float, default=0.15)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    ns = vars(args)
    if args.command == "emit-figure-data":
        try:
            files = emit_figure_data(args.runs, args.figure, args.dest, args.raster_dt)
        except (FileNotFoundError, ConfigError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if not ns.get("quiet"):
            print("\n".join(str(Path(args.dest) / f) for f in files))
        return EXIT_OK
    overrides = {k[2:]: v for k, v in ns.items() if k.startswith("p_") and v is not None}
    for key in ("seed", "out", "convention", "jump_convention", "dt", "quiet"):
        if ns.get(key) is not None:
            overrides[key] = ns[key]
    try:
        cfg = parse_config(args.config, overrides, experiment=args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not cfg.quiet:
        print(cfg.to_json(), end="", file=sys.stderr)
    try:
        rundir, code = run(cfg)
    except RunLocked as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOCKED
    if not cfg.quiet:
        print(str(rundir))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
