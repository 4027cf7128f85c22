"""Config-driven runs: parse a flat TOML file, dispatch, persist results.

Every run writes into one directory: the mode's CSV/JSON outputs plus
``manifest.json`` with the config hash, package version, wall-clock time and
SHA-256 of each output.  Outputs other than the manifest are byte-for-byte
reproducible from the same config and seed.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from . import dynamics as dyn
from . import farsighted as fs
from . import signals as sig
from . import stage_game as sg
from ._backend import BACKEND
from .beliefs import deterrence_price_curve, posterior_bounds

MODES = ("validate-signals", "solve-stage", "sweep-mu", "simulate", "monte-carlo", "farsighted-threshold")
PRESETS = {"dichotomy": "monte-carlo", "stage-sweep": "sweep-mu"}
SEEDED = ("simulate", "monte-carlo")
DEFAULT_FAMILIES = ("Tent", "UniformBelief", "BetaUnbounded")


class ConfigError(ValueError):
    pass


class PropertyViolation(AssertionError):
    pass


@dataclass
class ExperimentConfig:
    """Flat run description; every key maps one-to-one onto a TOML key."""

    mode: str = ""
    preset: str = ""
    family: str = "UniformBelief"
    families: list = field(default_factory=list)
    lo: float = 0.3
    kappa: float = 1.0
    density_path: str = ""
    knots: int = sig.DEFAULT_KNOTS
    mu: float = 0.5
    mu0: float = 0.5
    mu_values: list = field(default_factory=list)
    mu_start: float = 0.05
    mu_stop: float = 0.95
    mu_step: float = 0.05
    runs: int = 1000
    T_max: int = dyn.T_MAX
    eps_learn: float = dyn.EPS_LEARN
    state: str = "sampled"
    probe: int = dyn.FREEZE_PROBE
    grid_size: int = 201
    regret_tol: float = 1e-4
    sale_tol: float = 1e-6
    fp_iters: int = 20_000
    phases: list = field(default_factory=list)  # empty: every solver phase in the default order
    resolution: float = 1e-3
    delta: float = 0.5
    tol: float = 1e-3
    seed: int = -1
    out_dir: str = "runs/latest"
    workers: int = 1
    trajectory_runs: int = 100
    martingale_buckets: int = 20

    # -- validation --------------------------------------------------------

    def validate(self, lines: dict | None = None):
        lines = lines or {}

        def bad(key, msg):
            where = f" (line {lines[key]})" if key in lines else ""
            raise ConfigError(f"{key}{where}: {msg}")

        if self.preset:
            if self.preset not in PRESETS:
                bad("preset", f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
            want = PRESETS[self.preset]
            if self.mode and self.mode != want:
                bad("mode", f"preset {self.preset!r} runs in mode {want!r}, not {self.mode!r}")
            self.mode = want
        if self.mode not in MODES:
            bad("mode", f"unknown mode {self.mode!r}; choose from {list(MODES)}")
        for name in [self.family, *self.families]:
            try:
                sig.Family(name)
            except ValueError:
                bad("families" if name != self.family else "family", f"unknown family {name!r}")
        positive = ("regret_tol", "sale_tol", "eps_learn", "tol", "resolution", "mu_step", "knots",
                    "grid_size", "fp_iters", "T_max", "runs", "workers", "martingale_buckets")
        for key in positive:
            if not getattr(self, key) > 0:
                bad(key, "must be positive")
        if self.grid_size < 2:
            bad("grid_size", "must be at least 2")
        if not 0.0 < self.lo < 0.5:
            bad("lo", "must lie in (0, 1/2)")
        if self.kappa < 0:
            bad("kappa", "must be non-negative")
        for key in ("mu", "mu0", "mu_start", "mu_stop"):
            if not 0.0 < getattr(self, key) < 1.0:
                bad(key, "must lie in (0, 1)")
        for m in self.mu_values:
            if not 0.0 < m < 1.0:
                bad("mu_values", f"{m} is not in (0, 1)")
        if self.eps_learn >= 0.5:
            bad("eps_learn", "must be below 1/2")
        if not 0.0 < self.delta < 1.0:
            bad("delta", "must lie in (0, 1)")
        known = sg.SolverOptions().phases
        for ph in self.phases:
            if ph not in known:
                bad("phases", f"unknown solver phase {ph!r}; choose from {list(known)}")
        if self.state not in ("sampled", "0", "1"):
            bad("state", "must be 'sampled', 0 or 1")
        if self.probe < 0:
            bad("probe", "must be non-negative")
        if self.mode in SEEDED and self.seed < 0:
            bad("seed", f"mode {self.mode!r} needs a non-negative seed")
        if self.family == "Custom" and not self.density_path:
            bad("density_path", "Custom family needs a density table")
        return self

    # -- (de)serialisation ---------------------------------------------------

    def to_toml(self) -> str:
        out = []
        for f in dataclasses.fields(self):
            out.append(f"{f.name} = {_toml_value(getattr(self, f.name))}")
        return "\n".join(out) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_toml().encode()).hexdigest()

    def solver_options(self) -> sg.SolverOptions:
        opts = sg.SolverOptions(grid_size=self.grid_size, regret_tol=self.regret_tol,
                                sale_tol=self.sale_tol, fp_iters=self.fp_iters)
        if self.phases:
            opts = dataclasses.replace(opts, phases=tuple(self.phases))
        return opts

    def dynamics_config(self) -> dyn.DynamicsConfig:
        return dyn.DynamicsConfig(
            mu0=self.mu0, T_max=self.T_max, eps=self.eps_learn,
            state=None if self.state == "sampled" else int(self.state),
            probe=self.probe, resolution=self.resolution, solver=self.solver_options(),
        )

    def family_list(self) -> list:
        if self.families:
            return list(self.families)
        if self.preset:
            return list(DEFAULT_FAMILIES)
        return [self.family]

    def mu_grid(self) -> list:
        if self.mu_values:
            return [float(m) for m in self.mu_values]
        n = int(math.floor((self.mu_stop - self.mu_start) / self.mu_step + 1e-9)) + 1
        return [round(self.mu_start + i * self.mu_step, 12) for i in range(n)]

    def structure(self, family: str | None = None) -> sig.SignalStructure:
        name = family or self.family
        tag = sig.Family(name)
        if tag is sig.Family.BETA:
            return sig.make_family(tag, knots=self.knots)
        if tag is sig.Family.CUSTOM:
            return sig.make_family(tag, knots=self.knots, path=self.density_path)
        if tag is sig.Family.POWER:
            return sig.make_family(tag, knots=self.knots, lo=self.lo, kappa=self.kappa)
        return sig.make_family(tag, knots=self.knots, lo=self.lo)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return _toml_string(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _toml_string(s: str) -> str:
    out = []
    for ch in s:
        if ch in '"\\':
            out.append("\\" + ch)
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return '"' + "".join(out) + '"'


def _key_lines(text: str) -> dict:
    lines = {}
    for i, line in enumerate(text.splitlines(), 1):
        key = line.split("=", 1)[0].strip()
        if "=" in line and key and not key.startswith("#"):
            lines.setdefault(key, i)
    return lines


def loads_config(text: str, mode: str | None = None, seed: int | None = None) -> ExperimentConfig:
    """Parse and validate a config.

    ``mode`` fills in a missing ``mode`` key; ``seed`` overrides the file's.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    lines = _key_lines(text)
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for key, value in raw.items():
        where = f" (line {lines[key]})" if key in lines else ""
        if key not in fields:
            raise ConfigError(f"{key}{where}: unknown key")
        default = getattr(ExperimentConfig(), key)
        if key == "state" and isinstance(value, int) and not isinstance(value, bool):
            value = str(value)
        if isinstance(default, bool) or isinstance(value, bool):
            raise ConfigError(f"{key}{where}: booleans are not used by this schema")
        if isinstance(default, float) and isinstance(value, int):
            value = float(value)
        if isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(f"{key}{where}: expected an array")
            if key == "mu_values":
                value = [float(x) if isinstance(x, (int, float)) else x for x in value]
                if not all(isinstance(x, float) for x in value):
                    raise ConfigError(f"{key}{where}: expected numbers")
            elif not all(isinstance(x, str) for x in value):
                raise ConfigError(f"{key}{where}: expected strings")
        elif not isinstance(value, type(default)):
            raise ConfigError(f"{key}{where}: expected {type(default).__name__}, got {type(value).__name__}")
        kwargs[key] = value
    if mode and not kwargs.get("mode") and not kwargs.get("preset"):
        kwargs["mode"] = mode
    if seed is not None:
        kwargs["seed"] = int(seed)
    return ExperimentConfig(**kwargs).validate(lines)


def load_config(path, mode: str | None = None, seed: int | None = None) -> ExperimentConfig:
    """Read a TOML config, or the config embedded in a run manifest."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if path.suffix == ".json":
        try:
            text = json.loads(text)["config"]
        except (ValueError, KeyError, TypeError):
            raise ConfigError(f"{path}: not a run manifest with an embedded config") from None
    return loads_config(text, mode, seed)


# -- output helpers --------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def json_bytes(obj) -> bytes:
    return (json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n").encode()


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue().encode()


def atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


TRAJECTORY_HEADER = ("run", "t", "mu", "tau0", "tau1", "action", "v0", "v1")
RUNS_HEADER = ("run", "state", "outcome", "length", "terminal_mu", "onset", "hitting_time")


def trajectory_rows(records):
    for tr in records:
        for t in range(tr.length):
            yield (tr.run, t, tr.mu[t], tr.tau0[t], tr.tau1[t], int(tr.action[t]), tr.v0[t], tr.v1[t])


def run_rows(records):
    for tr in records:
        onset = "" if tr.onset is None else tr.onset
        hit = tr.hitting_time
        yield (tr.run, tr.state, tr.outcome.value, tr.length, tr.terminal_mu, onset, "" if hit is None else hit)


def read_trajectories(path) -> dict:
    """Parse a trajectories CSV back into per-run column arrays."""
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            r = out.setdefault(int(row["run"]), {k: [] for k in TRAJECTORY_HEADER[1:]})
            r["t"].append(int(row["t"]))
            r["action"].append(int(row["action"]))
            for k in ("mu", "tau0", "tau1", "v0", "v1"):
                r[k].append(float(row[k]))
    return {k: {c: np.array(v) for c, v in cols.items()} for k, cols in out.items()}


def outcome_counts_from_runs_csv(path) -> dict:
    counts: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            counts[row["outcome"]] = counts.get(row["outcome"], 0) + 1
    return counts


# -- mode handlers ---------------------------------------------------------------

@dataclass
class ModeResult:
    files: dict  # name -> bytes (summary.json excluded)
    summary: dict
    violations: list


def _validate_signals(cfg: ExperimentConfig) -> ModeResult:
    out, violations = {}, []
    for name in cfg.family_list():
        s = cfg.structure(name)
        rep = sig.validate(s)
        cls = sig.classify(s)
        out[name] = {
            "residuals": rep.residuals,
            "passed": rep.passed,
            "errors": rep.errors,
            "kind": cls.kind.value,
            "endpoint_densities": list(cls.endpoint_densities),
            "limit_estimate_stable": cls.stable,
        }
        if not rep.passed:
            violations.append(f"{name}: validation failed on {rep.failures}")
        if not cls.stable:
            violations.append(f"{name}: endpoint limit estimate did not stabilise")
    return ModeResult({}, {"families": out}, violations)


def _stage_checks(eq: sg.StageEquilibrium, s, opts) -> list:
    bad = []
    if eq.max_regret > opts.regret_tol:
        bad.append(f"mu={eq.mu}: regret {eq.max_regret:.3g} above {opts.regret_tol}")
    if eq.classification is sg.Classification.DETERRENCE_BY_0:
        h = 2.0 * posterior_bounds(eq.mu, s).lo - 1.0
        if abs(eq.payoffs[0] - h) > eq.grid_step:
            bad.append(f"mu={eq.mu}: deterrence payoff {eq.payoffs[0]} vs price {h}")
    if eq.classification is sg.Classification.DETERRENCE_BY_1:
        h = 1.0 - 2.0 * posterior_bounds(eq.mu, s).hi
        if abs(eq.payoffs[1] - h) > eq.grid_step:
            bad.append(f"mu={eq.mu}: deterrence payoff {eq.payoffs[1]} vs price {h}")
    return bad


def _solve_stage(cfg: ExperimentConfig) -> ModeResult:
    s = cfg.structure()
    opts = cfg.solver_options()
    eq = sg.solve_stage(cfg.mu, s, opts)
    rec = {"family": cfg.family, "grid_size": opts.grid_size, **eq.to_record()}
    return ModeResult({}, rec, _stage_checks(eq, s, opts))


SWEEP_HEADER = ("family", "mu", "classification", "phase", "pi0", "pi1", "sale0", "sale1", "exit",
                "mean_tau0", "mean_tau1", "max_regret", "deterrence_price")


def sweep_family(name: str, cfg: ExperimentConfig, mus=None):
    s = cfg.structure(name)
    opts = cfg.solver_options()
    mus = cfg.mu_grid() if mus is None else mus
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            eqs = list(ex.map(lambda m: sg.solve_stage(m, s, opts), mus))
    else:
        eqs = [sg.solve_stage(m, s, opts) for m in mus]
    return s, eqs


def _sweep(cfg: ExperimentConfig) -> ModeResult:
    rows, summary, violations = [], {}, []
    opts = cfg.solver_options()
    for name in cfg.family_list():
        s, eqs = sweep_family(name, cfg)
        kind = sig.classify(s).kind
        counts: dict = {}
        for eq in eqs:
            h = deterrence_price_curve(eq.mu, s) if s.bounded else float("nan")
            rows.append((name, eq.mu, eq.classification.value, eq.phase, eq.payoffs[0], eq.payoffs[1],
                         eq.sale_prob0, eq.sale_prob1, eq.exit_prob, eq.phi0.mean(), eq.phi1.mean(),
                         eq.max_regret, h))
            counts[eq.classification.value] = counts.get(eq.classification.value, 0) + 1
            violations += [f"{name}: {v}" for v in _stage_checks(eq, s, opts)]
        entry = {"kind": kind.value, "classification_counts": counts}
        if kind is sig.SignalKind.BOUNDED_NON_VANISHING:
            try:
                hi = sg.find_threshold_mu(s, "high", opts, cfg.tol)
                lo = sg.find_threshold_mu(s, "low", opts, cfg.tol)
                entry["threshold_high"] = {"mu_bar": hi.mu_bar, "bracket": list(hi.bracket)}
                entry["threshold_low"] = {"mu_bar": lo.mu_bar, "bracket": list(lo.bracket)}
                for eq in eqs:
                    if eq.mu > hi.mu_bar and eq.classification is not sg.Classification.DETERRENCE_BY_0:
                        violations.append(f"{name}: no deterrence at mu={eq.mu} above {hi.mu_bar}")
                    if eq.mu < lo.mu_bar and eq.classification is not sg.Classification.DETERRENCE_BY_1:
                        violations.append(f"{name}: no deterrence at mu={eq.mu} below {lo.mu_bar}")
            except sg.ThresholdError as exc:
                entry["threshold_error"] = str(exc)
                violations.append(f"{name}: {exc}")
        elif counts.get("NonDeterrence", 0) != len(eqs):
            violations.append(f"{name}: deterrence found for a {kind.value} family")
        summary[name] = entry
    return ModeResult({"sweep.csv": csv_bytes(SWEEP_HEADER, rows)}, {"families": summary}, violations)


def _trajectory_checks(records, s) -> list:
    bad = []
    for tr in records:
        if tr.detailed and tr.length and not np.array_equal(dyn.replay(tr, s), tr.mu):
            bad.append(f"run {tr.run}: replayed beliefs differ from the record")
        if tr.onset is not None and not np.all(tr.mu[tr.onset:] == tr.mu[tr.onset]):
            bad.append(f"run {tr.run}: belief moved after deterrence onset")
    return bad


def _simulate(cfg: ExperimentConfig) -> ModeResult:
    s = cfg.structure()
    tr = dyn.simulate(s, cfg.dynamics_config(), seed=cfg.seed, run=0)
    summary = {
        "family": cfg.family,
        "seed": cfg.seed,
        "state": tr.state,
        "outcome": tr.outcome.value,
        "length": tr.length,
        "terminal_mu": tr.terminal_mu,
        "deterrence_onset": tr.onset,
        "hitting_time": tr.hitting_time,
        "status": tr.status,
    }
    files = {"trajectories.csv": csv_bytes(TRAJECTORY_HEADER, trajectory_rows([tr]))}
    return ModeResult(files, summary, _trajectory_checks([tr], s))


COMPARISON_HEADER = ("family", "kind", "runs", "learned_correct", "learned_wrong", "herd", "herd_inferior",
                     "undecided", "deterrence_terminations", "correctness_state0", "correctness_state1",
                     "martingale_passed")


def _monte_carlo_family(cfg: ExperimentConfig, name: str):
    s = cfg.structure(name)
    dcfg = cfg.dynamics_config()
    table = dyn.make_table(s, dcfg)
    summary, records = dyn.monte_carlo(s, dcfg, cfg.runs, cfg.seed, workers=cfg.workers, table=table,
                                       detail_runs=cfg.trajectory_runs)
    summary_dict = summary.to_dict()
    curves = dyn.purchase_correctness(records, cfg.T_max, table)
    keep = records if cfg.trajectory_runs < 0 else records[: cfg.trajectory_runs]
    kind = sig.classify(s).kind
    violations = [f"{name}: {v}" for v in _trajectory_checks(records, s)]
    if not summary.martingale.passed:
        violations.append(f"{name}: martingale test failed")
    if summary.learned_wrong_pvalue < 1e-3:
        violations.append(f"{name}: {summary.learned_wrong} wrong-vertex runs, far above the martingale bound "
                          f"{summary.learned_wrong_bound:.2f} (p={summary.learned_wrong_pvalue:.1e})")
    if kind is not sig.SignalKind.BOUNDED_NON_VANISHING and summary.deterrence_terminations:
        violations.append(f"{name}: {summary.deterrence_terminations} deterrence terminations")
    files = {
        "trajectories.csv": csv_bytes(TRAJECTORY_HEADER, trajectory_rows(keep)),
        "runs.csv": csv_bytes(RUNS_HEADER, run_rows(records)),
        "correctness.csv": csv_bytes(("t", "state0", "state1"),
                                     ((t, curves[0][t], curves[1][t]) for t in range(cfg.T_max))),
    }
    summary_dict.update({"family": name, "kind": kind.value, "seed": cfg.seed,
                         "trajectory_runs_written": len(keep)})
    row = (name, kind.value, summary.runs, summary.learned_correct, summary.learned_wrong, summary.herd,
           summary.herd_inferior, summary.outcome_counts["Undecided"] / max(summary.runs, 1),
           summary.deterrence_terminations, summary.correctness_final["0"], summary.correctness_final["1"],
           int(summary.martingale.passed))
    return files, summary_dict, violations, row


def _monte_carlo(cfg: ExperimentConfig) -> ModeResult:
    names = cfg.family_list()
    if len(names) == 1 and not cfg.preset:
        files, summary, violations, _ = _monte_carlo_family(cfg, names[0])
        return ModeResult(files, summary, violations)
    files, summary, violations, rows = {}, {}, [], []
    for name in names:
        f, sdict, v, row = _monte_carlo_family(cfg, name)
        files.update({f"{name}/{k}": data for k, data in f.items()})
        summary[name] = sdict
        violations += v
        rows.append(row)
    files["comparison.csv"] = csv_bytes(COMPARISON_HEADER, rows)
    return ModeResult(files, {"families": summary}, violations)


def _farsighted(cfg: ExperimentConfig) -> ModeResult:
    s = cfg.structure()
    fcfg = fs.FarsightedConfig(cfg.delta, s, grid_size=cfg.grid_size)
    res = fs.find_mu_prime(fcfg, cfg.tol)
    out = {"family": cfg.family, **res.to_dict()}
    violations = []
    if res.mu_prime >= 1.0 - cfg.tol:
        violations.append(f"mu' = {res.mu_prime} not below 1 - tol")
    return ModeResult({}, out, violations)


HANDLERS = {
    "validate-signals": _validate_signals,
    "solve-stage": _solve_stage,
    "sweep-mu": _sweep,
    "simulate": _simulate,
    "monte-carlo": _monte_carlo,
    "farsighted-threshold": _farsighted,
}


@dataclass
class RunManifest:
    config_hash: str
    version: str
    backend: str
    mode: str
    seed: int
    wall_clock_seconds: float
    files: dict
    config: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunOutcome:
    manifest: RunManifest
    summary: dict
    violations: list
    out_dir: Path


def run(cfg: ExperimentConfig, out_dir=None) -> RunOutcome:
    """Execute ``cfg`` and write its outputs into ``out_dir`` (default ``cfg.out_dir``)."""
    cfg.validate()
    out = Path(out_dir or cfg.out_dir)
    start = time.perf_counter()
    res = HANDLERS[cfg.mode](cfg)
    summary = {"mode": cfg.mode, "preset": cfg.preset or None, "config_hash": cfg.hash(),
               "result": res.summary, "property_violations": res.violations}
    files = dict(res.files)
    files["summary.json"] = json_bytes(summary)
    checksums = {}
    for name in sorted(files):
        atomic_write(out / name, files[name])
        checksums[name] = hashlib.sha256(files[name]).hexdigest()
    manifest = RunManifest(
        config_hash=cfg.hash(),
        version=__version__,
        backend=BACKEND,
        mode=cfg.mode,
        seed=cfg.seed,
        wall_clock_seconds=round(time.perf_counter() - start, 3),
        files=checksums,
        config=cfg.to_toml(),
    )
    atomic_write(out / "manifest.json", json_bytes(manifest.to_dict()))
    return RunOutcome(manifest, summary, res.violations, out)


def verify_manifest(path) -> list:
    """Names of files whose current checksum differs from the manifest."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    bad = []
    for name, digest in manifest["files"].items():
        f = path.parent / name
        if not f.exists() or hashlib.sha256(f.read_bytes()).hexdigest() != digest:
            bad.append(name)
    return bad
