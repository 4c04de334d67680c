"""Config parsing, run dispatch and series-file output.

Config files are flat YAML mappings (``key: value``), schema version 1::

    config_version: 1          # optional, must be 1
    mode: pp                   # optional when given on the command line
    g_rf: 28
    lambda_a: 1.0e-3
    lambda_b: 1.0e-3
    n0: 1000
    tau_end: 0.145
    dt: 1.0e-4
    n_traj: 2000
    master_seed: 7

Unknown keys are errors. See ``KEYS`` for every accepted key and
``README.md`` for their meaning.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import secrets
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .core_model import OBSERVABLE_NAMES, ModelParams, TimeGrid, initial_state
from .errors import ConfigError, ParameterError, SuperchemError
from .fock_oracle import MAX_SECTOR, evolve_coherent
from .meanfield import DEFAULT_GUARD_FACTOR, integrate_mf
from .positive_p import simulate_ensemble
from .raman_reduction import RamanParams, reduce

CONFIG_VERSION = 1
FORMAT_VERSION = 1
MODES = ("mf", "pp", "exact", "compare", "reduce")
FORMATS = ("csv", "json")

_MODEL_KEYS = {"g_rf", "lambda_a", "lambda_b", "delta", "gamma_decay", "gamma_pa",
               "n0", "tau_end", "dt", "sample_stride", "guard_factor"}
_ENSEMBLE_KEYS = {"n_traj", "master_seed", "random_seed", "n_workers", "extrapolate"}
_COMMON_KEYS = {"config_version", "mode", "output", "format"}
KEYS = {
    "mf": _COMMON_KEYS | _MODEL_KEYS,
    "pp": _COMMON_KEYS | _MODEL_KEYS | _ENSEMBLE_KEYS,
    "compare": _COMMON_KEYS | _MODEL_KEYS | _ENSEMBLE_KEYS,
    "exact": _COMMON_KEYS | _MODEL_KEYS | {"epsilon_tail", "max_sector"},
    "reduce": _COMMON_KEYS | {"gamma_pa", "omega", "delta", "lambda_a", "lambda_g", "g_rf"},
}
REQUIRED = {
    "mf": {"g_rf", "n0", "tau_end", "dt"},
    "pp": {"g_rf", "n0", "tau_end", "dt"},
    "compare": {"g_rf", "n0", "tau_end", "dt"},
    "exact": {"g_rf", "n0", "tau_end", "dt"},
    "reduce": {"gamma_pa", "omega", "delta"},
}
DEFAULTS = {
    "lambda_a": 0.0,
    "lambda_b": 0.0,
    "delta": 0.0,
    "gamma_decay": 0.0,
    "gamma_pa": 1.0,
    "sample_stride": 1,
    "guard_factor": DEFAULT_GUARD_FACTOR,
    "n_traj": 10_000,
    "n_workers": 1,
    "random_seed": False,
    "extrapolate": False,
    "epsilon_tail": 1e-8,
    "max_sector": MAX_SECTOR,
    "lambda_g": 0.0,
    "format": "csv",
    "output": None,
}
_INT_KEYS = {"sample_stride", "n_traj", "n_workers", "master_seed", "max_sector", "config_version"}
_BOOL_KEYS = {"random_seed", "extrapolate"}
_STR_KEYS = {"mode", "output", "format"}

BASE_COLUMNS = ("tau",) + OBSERVABLE_NAMES


@dataclass
class RunSpec:
    mode: str
    params: object  # ModelParams, or RamanParams for reduce
    n0: float | None = None
    grid: TimeGrid | None = None
    n_traj: int | None = None
    master_seed: int | None = None
    n_workers: int = 1
    random_seed: bool = False
    extrapolate: bool = False
    epsilon_tail: float | None = None
    max_sector: int = MAX_SECTOR
    guard_factor: float = DEFAULT_GUARD_FACTOR
    output: str | None = None
    format: str = "csv"

    def echo(self) -> dict:
        """Everything that determines the numbers in the output.

        Worker count and output path are left out: they cannot change the
        result, and including them would break byte-identical reruns.
        """
        out = {"mode": self.mode, "params": _params_dict(self.params)}
        if self.mode == "reduce":
            return out
        out.update(
            n0=self.n0,
            tau_end=self.grid.tau_end,
            dt=self.grid.dt,
            sample_stride=self.grid.sample_stride,
            guard_factor=self.guard_factor,
        )
        if self.mode in ("pp", "compare"):
            out.update(
                n_traj=self.n_traj,
                master_seed=self.master_seed,
                random_seed=self.random_seed,
                extrapolate=self.extrapolate,
            )
        if self.mode == "exact":
            out.update(epsilon_tail=self.epsilon_tail, max_sector=self.max_sector)
        return out


def _params_dict(p):
    return {k: getattr(p, k) for k in p.__dataclass_fields__}


def _load_flat_mapping(text: str) -> dict:
    """YAML mapping of scalars -> {key: (value, line)}."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if root is None:
        return {}
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("config must be a flat key: value mapping")
    loader = yaml.SafeLoader("")
    out = {}
    for key_node, value_node in root.value:
        line = key_node.start_mark.line + 1
        key = key_node.value
        if not isinstance(value_node, yaml.ScalarNode):
            raise ConfigError(f"line {line}: value of {key!r} must be a scalar")
        if key in out:
            raise ConfigError(f"line {line}: duplicate key {key!r}")
        out[key] = (loader.construct_object(value_node), line)
    return out


def _coerce(key, value, line):
    where = f"line {line}: {key!r}"
    if key in _STR_KEYS:
        if value is None and key == "output":
            return None
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(value, str):
        # YAML 1.1 reads exponents without a sign (1e13, 2.0e3) as strings.
        try:
            value = int(value) if key in _INT_KEYS else float(value)
        except ValueError:
            pass
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    if key in _INT_KEYS:
        if isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"{where} must be an integer, got {value!r}")
            value = int(value)
        return value
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{where} must be finite, got {value!r}")
    return value


def parse_config(text: str, mode: str | None = None, *, random_seed: bool = False) -> RunSpec:
    """Validate a config and build a :class:`RunSpec`.

    ``mode`` (from the command line) overrides a missing ``mode`` key and
    must agree with a present one. ``random_seed=True`` is the command-line
    form of the ``random_seed`` key.
    """
    raw = _load_flat_mapping(text)
    if "mode" in raw:
        cfg_mode = raw["mode"][0]
        if mode is not None and cfg_mode != mode:
            raise ConfigError(f"line {raw['mode'][1]}: 'mode' is {cfg_mode!r} but the command asks for {mode!r}")
        mode = cfg_mode
    if mode is None:
        raise ConfigError("missing required key 'mode'")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    allowed = KEYS[mode]
    for key, (_, line) in raw.items():
        if key not in allowed:
            raise ConfigError(f"line {line}: unknown key {key!r} for mode {mode!r}")
    cfg = dict(DEFAULTS)
    for key, (value, line) in raw.items():
        cfg[key] = _coerce(key, value, line)
    missing = sorted(REQUIRED[mode] - raw.keys())
    if missing:
        raise ConfigError(f"missing required key {missing[0]!r} for mode {mode!r}")
    if cfg.get("config_version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {cfg['config_version']!r}; this tool reads {CONFIG_VERSION}")
    if cfg["format"] not in FORMATS:
        raise ConfigError(f"'format' must be one of {FORMATS}, got {cfg['format']!r}")

    try:
        if mode == "reduce":
            params = RamanParams(
                gamma_pa=cfg["gamma_pa"], omega=cfg["omega"], delta=cfg["delta"],
                lambda_a=cfg["lambda_a"], lambda_g=cfg["lambda_g"],
                g_rf=cfg.get("g_rf", 0.0),
            )
            return RunSpec(mode, params, output=cfg["output"], format=cfg["format"])
        params = ModelParams(
            g_rf=cfg["g_rf"], lambda_a=cfg["lambda_a"], lambda_b=cfg["lambda_b"],
            delta=cfg["delta"], gamma_decay=cfg["gamma_decay"], gamma_pa=cfg["gamma_pa"],
        )
        grid = TimeGrid(cfg["tau_end"], cfg["dt"], cfg["sample_stride"])
        if cfg["n0"] < 0:
            raise ParameterError("'n0' must be non-negative")
        if cfg["guard_factor"] <= 0:
            raise ParameterError("'guard_factor' must be positive")
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None

    spec = RunSpec(mode, params, n0=cfg["n0"], grid=grid, guard_factor=cfg["guard_factor"],
                   output=cfg["output"], format=cfg["format"])
    if mode in ("pp", "compare"):
        use_random = random_seed or cfg["random_seed"]
        if "master_seed" in raw and use_random:
            raise ConfigError(f"line {raw['master_seed'][1]}: 'master_seed' conflicts with random_seed")
        if "master_seed" not in raw and not use_random:
            raise ConfigError("missing required key 'master_seed' (or pass --random-seed)")
        if cfg["n_traj"] < 2:
            raise ConfigError("'n_traj' must be at least 2")
        if cfg["n_workers"] < 1:
            raise ConfigError("'n_workers' must be at least 1")
        seed = cfg["master_seed"] if not use_random else secrets.randbits(63)
        if not 0 <= seed < 2**64:
            raise ConfigError("'master_seed' must be a non-negative 64-bit integer")
        spec.n_traj = cfg["n_traj"]
        spec.master_seed = seed
        spec.random_seed = bool(use_random)
        spec.n_workers = cfg["n_workers"]
        spec.extrapolate = cfg["extrapolate"]
    if mode == "exact":
        if not 0 < cfg["epsilon_tail"] < 1:
            raise ConfigError("'epsilon_tail' must lie in (0, 1)")
        spec.epsilon_tail = cfg["epsilon_tail"]
        spec.max_sector = cfg["max_sector"]
    return spec


@dataclass
class SeriesFile:
    metadata: dict
    columns: tuple
    rows: np.ndarray = field(repr=False)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]


def _fmt(x) -> str:
    return "%.17g" % x


def dumps_csv(series: SeriesFile) -> str:
    buf = io.StringIO()
    buf.write(f"# superchem series file\n")
    buf.write(f"# format_version: {FORMAT_VERSION}\n")
    for key, value in series.metadata.items():
        buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    buf.write(",".join(series.columns) + "\n")
    for row in series.rows:
        buf.write(",".join(_fmt(x) for x in row) + "\n")
    return buf.getvalue()


def dumps_json(series: SeriesFile) -> str:
    def num(x):
        return _fmt(x) if math.isfinite(x) else "null"

    rows = ",\n    ".join("[" + ", ".join(num(x) for x in row) + "]" for row in series.rows)
    return (
        "{\n"
        f'  "format_version": {FORMAT_VERSION},\n'
        f'  "metadata": {json.dumps(series.metadata, sort_keys=True)},\n'
        f'  "columns": {json.dumps(list(series.columns))},\n'
        f'  "rows": [\n    {rows}\n  ]\n'
        "}\n"
    )


def loads_series(text: str) -> SeriesFile:
    """Parse either serialization back into a :class:`SeriesFile`."""
    if text.lstrip().startswith("{"):
        doc = json.loads(text, parse_int=float)
        rows = np.array([[np.nan if v is None else v for v in r] for r in doc["rows"]], dtype=float)
        return SeriesFile(doc["metadata"], tuple(doc["columns"]), rows.reshape(-1, len(doc["columns"])))
    metadata = {}
    lines = text.splitlines()
    i = 0
    while lines[i].startswith("#"):
        body = lines[i][1:].strip()
        if ": " in body:
            key, value = body.split(": ", 1)
            if key != "format_version":
                metadata[key] = json.loads(value)
        i += 1
    columns = tuple(lines[i].split(","))
    rows = np.array([[float(x) for x in line.split(",")] for line in lines[i + 1 :] if line], dtype=float)
    return SeriesFile(metadata, columns, rows.reshape(-1, len(columns)))


def _base_metadata(spec: RunSpec) -> dict:
    return {"tool": "superchem", "tool_version": __version__, "run": spec.echo()}


def _pp_columns():
    return BASE_COLUMNS + tuple(f"{n}_se" for n in OBSERVABLE_NAMES) + ("n_surviving",)


def first_local_minimum(values: np.ndarray) -> int | None:
    """Index of the first interior local minimum after the series starts rising."""
    v = np.asarray(values)
    for i in range(1, len(v) - 1):
        if v[i] < v[i - 1] and v[i] <= v[i + 1]:
            return i
    return None


def plateau_interval(taus, values, frac: float = 0.1):
    """Longest stretch where ``|d values / d tau|`` stays below ``frac`` of its earlier peak.

    The peak is the running maximum of the growth rate up to each point.
    Returns ``(length, tau_start, tau_end)``; length 0 when there is none.
    """
    taus = np.asarray(taus, dtype=float)
    rate = np.gradient(np.asarray(values, dtype=float), taus)
    peak = np.maximum.accumulate(rate)
    flat = np.append((peak > 0) & (np.abs(rate) < frac * peak), False)
    best, start = (0.0, None, None), None
    for i, f in enumerate(flat):
        if f and start is None:
            start = i
        elif not f and start is not None:
            if taus[i - 1] - taus[start] > best[0]:
                best = (float(taus[i - 1] - taus[start]), float(taus[start]), float(taus[i - 1]))
            start = None
    return best


def _ensemble(spec: RunSpec):
    return simulate_ensemble(
        initial_state(spec.n0), spec.params, spec.grid, spec.n_traj, spec.master_seed,
        spec.n_workers, guard_factor=spec.guard_factor, extrapolate=spec.extrapolate,
    )


def _ensemble_metadata(stats) -> dict:
    return {
        "n_trajectories": stats.n_trajectories,
        "n_diverged": stats.n_diverged,
        "divergence_fraction": stats.divergence_fraction,
        "unreliable": stats.unreliable,
        "master_seed": stats.master_seed,
        "extrapolated": stats.extrapolated,
    }


def run(spec: RunSpec) -> list[SeriesFile] | dict:
    """Execute a run. Returns series files, or the reduction summary for ``reduce``."""
    if spec.mode == "reduce":
        rep = reduce(spec.params)
        return {
            "chi": rep.chi,
            "lambda_a_eff": rep.lambda_a_eff,
            "lambda_b_eff": rep.lambda_b_eff,
            "g_rf": rep.g_rf,
            "eta": rep.eta,
            "scaled_g": rep.scaled_g,
            "delta_over_omega": rep.delta_over_omega,
            "delta_over_gamma": rep.delta_over_gamma,
            "valid": rep.valid,
            "rf_over_ceiling": rep.rf_over_ceiling,
            "warnings": rep.warnings,
        }

    meta = _base_metadata(spec)
    if spec.mode == "mf":
        traj = integrate_mf(initial_state(spec.n0), spec.params, spec.grid, guard_factor=spec.guard_factor)
        return [SeriesFile(meta, BASE_COLUMNS, traj.table())]

    if spec.mode == "exact":
        ev = evolve_coherent(spec.params, spec.n0, spec.epsilon_tail, spec.grid, spec.max_sector)
        meta.update(n_max=ev.n_max, dropped_mass=ev.dropped_mass)
        return [SeriesFile(meta, BASE_COLUMNS, ev.table())]

    stats = _ensemble(spec)
    pp_rows = np.column_stack([stats.taus, stats.mean, stats.stderr, stats.n_surviving])
    meta.update(_ensemble_metadata(stats))
    if spec.mode == "pp":
        return [SeriesFile(meta, _pp_columns(), pp_rows)]

    traj = integrate_mf(initial_state(spec.n0), spec.params, spec.grid, guard_factor=spec.guard_factor)
    mf = traj.table()
    meta.update(compare_summary(mf, stats))
    columns = (
        ("tau",)
        + tuple(f"mf_{n}" for n in OBSERVABLE_NAMES)
        + tuple(f"pp_{n}" for n in OBSERVABLE_NAMES)
        + tuple(f"pp_{n}_se" for n in OBSERVABLE_NAMES)
        + ("n_surviving", "dnb_over_se")
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (stats.mean[:, 2] - mf[:, 3]) / stats.stderr[:, 2]
    rows = np.column_stack([stats.taus, mf[:, 1:], stats.mean, stats.stderr, stats.n_surviving, z])
    return [SeriesFile(meta, columns, rows)]


def compare_summary(mf: np.ndarray, stats) -> dict:
    """Pointwise MF-vs-ensemble distances in units of the ensemble stderr.

    Split at the first local minimum of the mean-field output-atom number;
    differences are measured as ``|pp - mf| / stderr`` for n1, n2 and nb.
    Points with zero stderr count as zero distance when the means agree
    exactly.
    """
    diff = np.abs(stats.mean[:, :3] - mf[:, 1:4])
    se = stats.stderr[:, :3]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(diff == 0, 0.0, diff / se)
    z = np.where(np.isnan(z), np.inf, z)
    i_min = first_local_minimum(mf[:, 2])
    split = len(z) if i_min is None else i_min + 1
    before = z[:split]
    after = z[split:]
    return {
        "tau_n2_min": None if i_min is None else float(mf[i_min, 0]),
        "max_abs_dnb": float(diff[:, 2].max()),
        "max_dnb_over_se": _finite_or_none(z[:, 2].max()),
        "max_z_before_min": {n: _finite_or_none(before[:, k].max()) for k, n in enumerate(("n1", "n2", "nb"))},
        "max_z_after_min": (
            {n: _finite_or_none(after[:, k].max()) for k, n in enumerate(("n1", "n2", "nb"))} if len(after) else None
        ),
    }


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def write_series(series: SeriesFile, fmt: str, path: str | None) -> str:
    text = dumps_csv(series) if fmt == "csv" else dumps_json(series)
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
    return text


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="superchem", description="Atom-molecule superchemistry simulator")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True, help="flat YAML run configuration")
    ap.add_argument("--output", help="output file (default: config 'output', else stdout)")
    ap.add_argument("--format", choices=FORMATS, help="series serialization (default: config 'format', else csv)")
    ap.add_argument("--workers", type=int, help="parallel workers for pp/compare (does not change results)")
    ap.add_argument("--random-seed", action="store_true", help="draw a fresh master seed and record it")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"superchem: cannot read config: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    try:
        spec = parse_config(text, args.mode, random_seed=args.random_seed)
        if args.output is not None:
            spec.output = args.output
        if args.format is not None:
            spec.format = args.format
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be at least 1")
            spec.n_workers = args.workers
        if spec.random_seed:
            print(f"superchem: master_seed = {spec.master_seed}", file=sys.stderr)
        result = run(spec)
    except SuperchemError as exc:
        print(f"superchem: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    if isinstance(result, dict):
        text = json.dumps(result, indent=2, sort_keys=True) + "\n"
        if spec.output:
            Path(spec.output).write_text(text)
        sys.stdout.write(text)
        return 0
    for series in result:
        write_series(series, spec.format, spec.output)
    if result and result[0].metadata.get("unreliable"):
        print("superchem: warning: divergence fraction above 1%; results unreliable", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
