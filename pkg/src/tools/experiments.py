"""Experiment registry, replicate runner and report emission"""
import hashlib
import json
import logging
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from src import __version__
from src.burgers import burgers_trajectory, ofos_gap
from src.config import ExperimentConfig, dump_config
from src.environment import (
    EnvironmentSample,
    EnvironmentSetup,
    ObservableSet,
    convergence_table,
    environment_sample,
    gap_decrease_p_value,
    invariance_table,
)
from src.fokker_planck import derivative_identity_errors, g_explicit, l1_distance, l1_forgetting, solve_g
from src.models import (
    CovarianceSpec,
    DensityField,
    DomainError,
    InsufficientSamplesError,
    PersistenceError,
    TorusGrid,
)
from src.polymer import midpoint_density, midpoint_log_derivative_residual, mixing_gap, sample_polymer_paths
from src.stats import Aggregate, ks_against_density, mean_ci, rate_fit
from src.tools.persistence import (
    read_field_binary,
    read_manifest,
    sha256,
    write_field_binary,
    write_field_csv,
    write_field_triples,
    write_manifest,
    write_table,
)
from src.tools.report_tool import ReportTool, ecdf_plot, line_plot
from src.torus_noise import NoiseRealization, sample_noise
from src.white_noise_law import WhiteSetup, bridge_increments, compare_laws, winding_mean_batch

logger = logging.getLogger(__name__)

# Spacing of the saved Burgers snapshots
FIELD_INTERVAL = 0.1
# Significance of the per-experiment acceptance checks
SIGNIFICANCE = 0.05
KS_THRESHOLD = 0.01
# Largest allowed ratio of the mean L1 distance at the longest horizon to the shortest
FORGETTING_RATIO = 0.2
# Accepted range of residual(dx) / residual(dx / 2)
REFINEMENT_RANGE = (1.6, 2.4)
WHITE_CHUNK = 32


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


# ============================================================================
# Records
# ============================================================================

@dataclass
class Replicate:
    """Scalar outputs of one replicate plus optional profiles to persist"""
    row: dict[str, Any]
    fields: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


@dataclass
class Plot:
    kind: str
    name: str
    data: dict[str, Any]
    labels: dict[str, Any] = field(default_factory=dict)


@dataclass
class Summary:
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    plots: list[Plot] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass
class ExperimentRecord:
    """Configuration snapshot, per-rep rows sorted by rep, and their aggregates"""
    config: ExperimentConfig
    rows: list[dict[str, Any]]
    aggregates: dict[str, Aggregate]
    wall_clock: float
    version: str = __version__
    summary: Summary = field(default_factory=Summary)
    fields: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.config.name

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def to_dict(self) -> dict[str, Any]:
        return {
            "experiment": self.name,
            "version": self.version,
            "wall_clock": self.wall_clock,
            "config": self.config.to_dict(),
            "rows": self.rows,
            "aggregates": {name: value.to_dict() for name, value in self.aggregates.items()},
            "flags": self.summary.flags,
            "extra": self.summary.extra,
        }


def aggregate_rows(rows: list[dict[str, Any]]) -> dict[str, Aggregate]:
    """Mean, standard error and interval for every numeric column except identifiers."""
    frame = pd.DataFrame(rows)
    aggregates = {}
    for column in frame.columns:
        if column in ("rep", "seed") or not pd.api.types.is_numeric_dtype(frame[column]):
            continue
        if pd.api.types.is_bool_dtype(frame[column]):
            continue
        aggregates[column] = mean_ci(frame[column].to_numpy(dtype=np.float64))
    return aggregates


# ============================================================================
# Replicates
# ============================================================================

def _noise(config: ExperimentConfig, t_start: float, t_end: float, seed: int) -> NoiseRealization:
    return sample_noise(config.noise.covariance(), config.grid_for(t_start, t_end), seed)


def _seed(config: ExperimentConfig, rep: int) -> int:
    return config.seed_base + rep


def _burgers_rep(config: ExperimentConfig, rep: int) -> Replicate:
    run = config.run
    noise = _noise(config, -run.T, 0.0, _seed(config, rep))
    row: dict[str, Any] = {"rep": rep, "seed": _seed(config, rep)}
    fields = {}
    for theta in run.thetas:
        path = burgers_trajectory(noise, theta, run.T)
        drift = max(
            np.max(np.abs(path.u_pre.mean(axis=1) - theta)),
            np.max(np.abs(path.u_post.mean(axis=1) - theta)),
        )
        row[f"mean_error_theta{theta:g}"] = float(drift)
        row[f"u00_theta{theta:g}"] = float(path.u_pre[-1, 0])
        row[f"u00_4_theta{theta:g}"] = float(path.u_pre[-1, 0] ** 4)
        stride = max(1, round(FIELD_INTERVAL / path.dt))
        fields[f"u_theta{theta:g}_rep{rep}"] = (path.times[::-stride][::-1], path.u_pre[::-stride][::-1])
    return Replicate(row, fields)


def _ofos_rep(config: ExperimentConfig, rep: int) -> Replicate:
    run = config.run
    T2 = run.T_proxy
    noise = _noise(config, -T2, 0.0, _seed(config, rep))
    theta = run.thetas[0]
    row: dict[str, Any] = {"rep": rep, "seed": _seed(config, rep)}
    for T1 in run.horizons:
        row[f"gap_T{T1:g}"] = ofos_gap(noise, theta, T1, T2)
    return Replicate(row)


def _identity_rep(config: ExperimentConfig, rep: int) -> Replicate:
    run = config.run
    noise = _noise(config, -run.T, 0.0, _seed(config, rep))
    errors = derivative_identity_errors(noise, run.thetas[0], run.eps, run.T)
    row: dict[str, Any] = {"rep": rep, "seed": _seed(config, rep)}
    for eps, error in errors.items():
        row[f"error_eps{eps:g}"] = error
    values = [errors[eps] for eps in run.eps]
    if len(values) >= 2 and values[1] > 0:
        row["ratio"] = values[0] / values[1]
    return Replicate(row)


def _gtilde_rep(config: ExperimentConfig, rep: int) -> Replicate:
    run = config.run
    noise = _noise(config, -run.T_proxy, 0.0, _seed(config, rep))
    theta = run.thetas[0]
    explicit = g_explicit(noise, theta, run.s_max, run.T_proxy)
    direct = solve_g(noise, theta, run.T_proxy).field
    row = {
        "rep": rep,
        "seed": _seed(config, rep),
        "l1_to_solve_g": l1_distance(explicit.field, direct),
        "mass": explicit.mass,
        "tail_estimate": explicit.tail_estimate,
        "tail_warning": explicit.tail_warning,
    }
    fields = {f"gtilde_rep{rep}": (np.array([0.0]), explicit.field.values[None, :])}
    return Replicate(row, fields)


def _midpoint_times(config: ExperimentConfig) -> tuple[float, ...]:
    """``run.s_list``, or ``T/4, T/2, T`` snapped to the time grid."""
    run = config.run
    if run.s_list:
        return run.s_list
    dt = config.grid.dt
    return tuple(dict.fromkeys(max(1, round(fraction * run.T / dt)) * dt for fraction in (0.25, 0.5, 1.0)))


def _midpoint_rep(config: ExperimentConfig, rep: int) -> Replicate:
    """KS of the sampled polymer against the mid-point density at every ``s``, and the
    log-derivative residual at the first ``s`` on the grid and on its refinement."""
    run = config.run
    seed = _seed(config, rep)
    noise = _noise(config, -run.T, 0.0, seed)
    theta = run.thetas[0]
    s_values = _midpoint_times(config)
    paths = sample_polymer_paths(noise, theta, run.x, run.T, run.n_paths, seed, record_times=list(s_values))
    row: dict[str, Any] = {"rep": rep, "seed": seed}
    fields = {}
    for s in s_values:
        density = midpoint_density(noise, theta, run.x, s, run.T)
        ks = ks_against_density(paths.wrapped(s), density.field)
        row[f"ks_statistic_s{s:g}"] = ks.statistic
        row[f"ks_p_value_s{s:g}"] = ks.p_value
        row[f"rounding_error_s{s:g}"] = density.rounding_error
        fields[f"midpoint_s{s:g}_rep{rep}"] = (np.array([0.0]), density.field.values[None, :])
    # The forcing is drawn per Fourier mode, so the refined grid sees the same realization
    fine_grid = TorusGrid(2 * config.grid.n_space, -run.T, 0.0, config.grid.dt)
    fine = sample_noise(config.noise.covariance(), fine_grid, seed)
    coarse_residual = midpoint_log_derivative_residual(noise, theta, run.x, s_values[0], run.T)
    fine_residual = midpoint_log_derivative_residual(fine, theta, run.x, s_values[0], run.T)
    row["residual"] = coarse_residual
    row["residual_refined"] = fine_residual
    row["residual_ratio"] = coarse_residual / fine_residual if fine_residual > 0 else float("nan")
    return Replicate(row, fields)


def _mixing_rep(config: ExperimentConfig, rep: int) -> Replicate:
    run = config.run
    T2 = run.T_proxy
    noise = _noise(config, -T2, 0.0, _seed(config, rep))
    row: dict[str, Any] = {"rep": rep, "seed": _seed(config, rep)}
    for T1 in run.horizons:
        row[f"gap_T{T1:g}"] = mixing_gap(noise, run.thetas[0], run.x, run.s, T1, T2)
    return Replicate(row)


def _forgetting_rep(config: ExperimentConfig, rep: int) -> Replicate:
    run = config.run
    noise = _noise(config, -max(run.horizons), 0.0, _seed(config, rep))
    grid = noise.grid
    other = DensityField(grid, 0.0, 1.0 + 0.5 * np.cos(2.0 * np.pi * grid.x))
    distances = l1_forgetting(noise, run.thetas[0], run.horizons, other)
    row: dict[str, Any] = {"rep": rep, "seed": _seed(config, rep)}
    for T, distance in distances.items():
        row[f"gap_T{T:g}"] = distance
    return Replicate(row)


def _environment_setup(config: ExperimentConfig) -> EnvironmentSetup:
    return EnvironmentSetup(
        n_space=config.grid.n_space,
        dt=config.grid.dt,
        covariance=config.noise.covariance(),
        T_g=config.run.T,
        T_warm=config.run.T_warm,
        n_paths=config.run.n_paths,
        seed_base=config.seed_base,
    )


def _env_key(name: str, t: float) -> str:
    return f"{name}@t{t:g}"


def _envtest_rep(config: ExperimentConfig, rep: int) -> Replicate:
    run = config.run
    observables = ObservableSet.select(run.observables)
    sample = environment_sample(_environment_setup(config), run.thetas[0], observables, run.t_list, _seed(config, rep))
    row: dict[str, Any] = {"rep": rep, "seed": sample.seed, "weight": sample.weight, "clipped": sample.clipped}
    for (name, t), value in sample.values.items():
        row[_env_key(name, t)] = value
    return Replicate(row)


def _white_setup(config: ExperimentConfig) -> WhiteSetup:
    n = config.grid.n_space
    dt = min(config.grid.dt, 0.25 / n**2)
    return WhiteSetup(n_space=n, dt=dt, amplitude=config.noise.amplitude, seed_base=config.seed_base)


def _whitelaw_batch(config: ExperimentConfig, reps: Sequence[int]) -> list[Replicate]:
    """Winding increments for several replicates evolved together as columns of one field."""
    run = config.run
    setup = _white_setup(config)
    spec = CovarianceSpec(is_white=True, white_amplitude=setup.amplitude)
    grid = setup.grid(run.T)
    noises = [sample_noise(spec, grid, _seed(config, rep)) for rep in reps]
    psi = winding_mean_batch(noises, run.thetas[0], run.T)
    indices = {x: grid.space_index_of(x) for x in run.x_list}
    replicates = []
    for column, (rep, noise) in enumerate(zip(reps, noises)):
        row: dict[str, Any] = {"rep": rep, "seed": noise.seed}
        for x, index in indices.items():
            row[f"inc_x{x:g}"] = float(x + psi[index, column] - psi[0, column])
        replicates.append(Replicate(row))
    return replicates


def _whitelaw_rep(config: ExperimentConfig, rep: int) -> Replicate:
    return _whitelaw_batch(config, [rep])[0]


# ============================================================================
# Summaries
# ============================================================================

def _gap_columns(config: ExperimentConfig, rows: list[dict[str, Any]]) -> tuple[np.ndarray, np.ndarray]:
    times, gaps = [], []
    for row in rows:
        for T in config.run.horizons:
            value = row[f"gap_T{T:g}"]
            if value > 0:
                times.append(T)
                gaps.append(value)
    return np.array(times), np.array(gaps)


def _rate_summary(config: ExperimentConfig, rows: list[dict[str, Any]], label: str) -> Summary:
    """Pooled log-gap regression against the horizon and the mean-gap curve."""
    times, gaps = _gap_columns(config, rows)
    summary = Summary()
    if len(set(times.tolist())) < 2:
        summary.flags.append("fewer than two horizons with positive gaps; no rate fitted")
        return summary
    fit = rate_fit(times, gaps, seed=config.seed_base)
    summary.extra["rate_fit"] = fit.to_dict()
    if not (fit.excludes_zero and fit.slope < 0):
        summary.flags.append(f"{label}: decay rate CI [{fit.ci_low:.3g}, {fit.ci_high:.3g}] does not exclude 0")
    horizons = np.array(config.run.horizons)
    means = [np.mean([row[f"gap_T{T:g}"] for row in rows]) for T in horizons]
    summary.tables["rate_fit"] = pd.DataFrame([fit.to_dict()])
    summary.plots.append(
        Plot("line", f"{config.name}_gaps", {"x": horizons, "series": {"mean gap": np.array(means)}},
             {"xlabel": "T", "ylabel": label, "log_y": True})
    )
    return summary


def _forgetting_summary(config: ExperimentConfig, rows: list[dict[str, Any]]) -> Summary:
    """Rate summary plus the ratio of mean L1 distances at the longest and shortest horizons."""
    summary = _rate_summary(config, rows, label="L1 distance")
    shortest, longest = min(config.run.horizons), max(config.run.horizons)
    if shortest == longest:
        return summary
    early = float(np.mean([row[f"gap_T{shortest:g}"] for row in rows]))
    late = float(np.mean([row[f"gap_T{longest:g}"] for row in rows]))
    ratio = late / early if early > 0 else float("nan")
    summary.extra["forgetting_ratio"] = {"T_short": shortest, "T_long": longest, "ratio": ratio}
    if not ratio < FORGETTING_RATIO:
        summary.flags.append(
            f"mean L1 distance at T={longest:g} is {ratio:.3g} of its value at T={shortest:g} "
            f"(required below {FORGETTING_RATIO:g})"
        )
    return summary


def _midpoint_summary(config: ExperimentConfig, rows: list[dict[str, Any]]) -> Summary:
    """KS rejections per ``s`` and the residual refinement ratio of every replicate."""
    summary = Summary()
    table = []
    for s in _midpoint_times(config):
        p_values = np.array([row[f"ks_p_value_s{s:g}"] for row in rows])
        rejected = int(np.sum(p_values <= KS_THRESHOLD))
        table.append({"s": s, "min_p_value": float(p_values.min()), "rejected": rejected, "reps": len(rows)})
        if rejected:
            summary.flags.append(f"{rejected} replicates with KS p-value at or below {KS_THRESHOLD:g} at s={s:g}")
    summary.tables["ks"] = pd.DataFrame(table)
    low, high = REFINEMENT_RANGE
    outside = [row["rep"] for row in rows if not low <= row["residual_ratio"] <= high]
    if outside:
        summary.flags.append(
            f"{len(outside)} replicates whose log-derivative residual ratio under refinement lies "
            f"outside [{low:g}, {high:g}]"
        )
    return summary


def _default_summary(config: ExperimentConfig, rows: list[dict[str, Any]]) -> Summary:
    return Summary()


def _identity_summary(config: ExperimentConfig, rows: list[dict[str, Any]]) -> Summary:
    summary = Summary()
    ratios = [row["ratio"] for row in rows if "ratio" in row]
    outside = [ratio for ratio in ratios if not 1.5 <= ratio <= 2.5]
    if outside:
        summary.flags.append(f"{len(outside)} Richardson ratios outside [1.5, 2.5]")
    return summary


def _gtilde_summary(config: ExperimentConfig, rows: list[dict[str, Any]]) -> Summary:
    summary = Summary()
    warned = sum(bool(row["tail_warning"]) for row in rows)
    if warned:
        summary.flags.append(f"{warned} replicates with quadrature tail estimate above 0.05")
    return summary


def _samples_from_rows(config: ExperimentConfig, rows: list[dict[str, Any]]) -> list[EnvironmentSample]:
    times = [0.0, *config.run.t_list]
    return [
        EnvironmentSample(
            seed=row["seed"],
            weight=row["weight"],
            values={(name, t): row[_env_key(name, t)] for name in config.run.observables for t in times},
            clipped=row["clipped"],
        )
        for row in rows
    ]


def _envtest_summary(config: ExperimentConfig, rows: list[dict[str, Any]]) -> Summary:
    observables = ObservableSet.select(config.run.observables)
    samples = _samples_from_rows(config, rows)
    invariance = invariance_table(samples, observables, config.run.t_list)
    convergence = convergence_table(samples, observables, config.run.t_list)
    summary = Summary(tables={"invariance": invariance.to_frame(), "convergence": convergence.to_frame()})
    summary.extra["effective_sample_size"] = invariance.effective_sample_size
    if invariance.weights_degenerate:
        summary.flags.append(f"importance weights degenerate (ESS={invariance.effective_sample_size:.1f})")
    t_list = sorted(config.run.t_list)
    p_values = {}
    for name in observables.names:
        intervals = [invariance.estimate(name, t) for t in t_list]
        # Intervals on a line overlap pairwise exactly when the largest low end is below the smallest high end
        if max(row["ci_low"] for row in intervals) > min(row["ci_high"] for row in intervals):
            times = ", ".join(f"{t:g}" for t in t_list)
            summary.flags.append(f"{name}: weighted 95% intervals at t={times} do not overlap")
        if len(t_list) >= 2:
            p_values[name] = gap_decrease_p_value(samples, name, t_list[0], t_list[-1])
            if p_values[name] >= SIGNIFICANCE:
                summary.flags.append(
                    f"{name}: gap decrease from t={t_list[0]:g} to t={t_list[-1]:g} not significant "
                    f"(sign test p={p_values[name]:.3g})"
                )
    summary.extra["gap_decrease_p_value"] = p_values
    for name in observables.names:
        frame = convergence.to_frame()
        selected = frame[frame["observable"] == name]
        summary.plots.append(
            Plot(
                "line",
                f"{config.name}_{name}_gap",
                {"x": selected["t"].to_numpy(), "series": {"gap": selected["gap"].to_numpy()}},
                {"xlabel": "t", "ylabel": f"|E_P F(omega_t) - E_Q F| for {name}"},
            )
        )
    return summary


def _mean_identity(environment: dict[float, np.ndarray]) -> tuple[pd.DataFrame, list[str]]:
    """Ensemble mean of ``x + psi(x) - psi(0)`` against ``x``, flagged beyond 3 standard errors."""
    table, flags = [], []
    for x, values in environment.items():
        aggregate = mean_ci(values)
        within = aggregate.contains(x)
        table.append({"x": x, **aggregate.to_dict(), "deviation": aggregate.mean - x, "within_3se": within})
        if not within:
            flags.append(f"mean increment at x={x:g} is {aggregate.mean:.4g}, more than 3 SE from {x:g}")
    return pd.DataFrame(table), flags


def _whitelaw_summary(config: ExperimentConfig, rows: list[dict[str, Any]]) -> Summary:
    run = config.run
    environment = {x: np.array([row[f"inc_x{x:g}"] for row in rows]) for x in run.x_list}
    summary = Summary()
    bridges = bridge_increments(run.x_list, run.n_bridge, config.grid.n_space, config.seed_base)
    try:
        identity, flags = _mean_identity(environment)
        summary.tables["mean_identity"] = identity
        summary.flags.extend(flags)
        comparison = compare_laws(environment, bridges, run.x_list, seed=config.seed_base)
    except InsufficientSamplesError as e:
        summary.flags.append(str(e))
        return summary
    summary.tables["ks"] = comparison.to_frame()
    if not comparison.passed:
        summary.flags.append("Bonferroni-corrected KS p-value at or below 0.01")
    for x in run.x_list:
        summary.plots.append(
            Plot("ecdf", f"{config.name}_ecdf_x{x:g}", {"samples": {"winding": environment[x], "bridge": bridges[x]}},
                 {"xlabel": f"x + psi(x) - psi(0) at x={x:g}"})
        )
    return summary


@dataclass(frozen=True)
class Experiment:
    name: str
    description: str
    replicate: Callable[[ExperimentConfig, int], Replicate]
    summarize: Callable[[ExperimentConfig, list[dict[str, Any]]], Summary] = _default_summary
    # Evaluates several replicates at once; replicates are grouped in chunks of chunk_size
    batch: Callable[[ExperimentConfig, Sequence[int]], list[Replicate]] | None = None
    chunk_size: int = 1

    def run_chunk(self, config: ExperimentConfig, reps: Sequence[int]) -> list[Replicate]:
        if self.batch is not None:
            return self.batch(config, reps)
        return [self.replicate(config, rep) for rep in reps]


REGISTRY: dict[str, Experiment] = {
    experiment.name: experiment
    for experiment in (
        Experiment("burgers", "Mean conservation and u(0,0) moments", _burgers_rep),
        Experiment("ofos", "One-force-one-solution gap versus horizon", _ofos_rep,
                   partial(_rate_summary, label="sup-norm gap")),
        Experiment("identity", "Difference quotient of u against g", _identity_rep, _identity_summary),
        Experiment("gtilde", "Explicit formula for the stationary g against solve_g", _gtilde_rep, _gtilde_summary),
        Experiment("midpoint", "Mid-point density against the polymer SDE", _midpoint_rep, _midpoint_summary),
        Experiment("mixing", "Mid-point density mixing in the horizon", _mixing_rep,
                   partial(_rate_summary, label="L1 gap")),
        Experiment("forgetting", "Fokker-Planck forgetting of initial data", _forgetting_rep, _forgetting_summary),
        Experiment("envtest", "Environment seen from the particle", _envtest_rep, _envtest_summary),
        Experiment("whitelaw", "White-noise winding increments against the bridge law", _whitelaw_rep,
                   _whitelaw_summary, batch=_whitelaw_batch, chunk_size=WHITE_CHUNK),
    )
}


# ============================================================================
# Runner
# ============================================================================

def get_experiment(name: str) -> Experiment:
    if name not in REGISTRY:
        raise DomainError(f"Unknown experiment '{name}'. Available: {', '.join(sorted(REGISTRY))}")
    return REGISTRY[name]


class Checkpoint:
    """
    Per-replicate dumps of one configuration: ``rep{r}.json`` for the row and one
    BJSF1 file per field, all hashed in the directory manifest.

    The directory key hashes the configuration without ``reps`` and ``out_dir``,
    so a rerun with more replicates reuses the finished ones.
    """

    def __init__(self, root: str | Path, config: ExperimentConfig):
        key_config = config.with_updates("experiment", reps=1, out_dir="")
        key = hashlib.sha256(dump_config(key_config).encode("utf-8")).hexdigest()[:12]
        self.directory = Path(root) / f"{config.name}-{key}"

    def save(self, replicate: Replicate) -> list[Path]:
        rep = replicate.row["rep"]
        self.directory.mkdir(parents=True, exist_ok=True)
        paths = [
            write_field_binary(self.directory / f"rep{rep}_{name}.bjsf", times, values)
            for name, (times, values) in replicate.fields.items()
        ]
        record = self.directory / f"rep{rep}.json"
        payload = {"row": replicate.row, "fields": list(replicate.fields)}
        try:
            record.write_text(json.dumps(payload, default=_json_default), encoding="utf-8")
        except OSError as e:
            raise PersistenceError(record, f"cannot write checkpoint: {e}") from e
        paths.append(record)
        write_manifest(self.directory, paths)
        return paths

    def load(self, rep: int) -> Replicate | None:
        """The saved replicate, or None when it is missing or fails its hash check."""
        record = self.directory / f"rep{rep}.json"
        if not record.exists():
            return None
        try:
            artifacts = read_manifest(self.directory)["artifacts"]
            payload = json.loads(record.read_text(encoding="utf-8"))
            paths = [record] + [self.directory / f"rep{rep}_{name}.bjsf" for name in payload["fields"]]
            for path in paths:
                if path.name not in artifacts or sha256(path) != artifacts[path.name]["sha256"]:
                    raise PersistenceError(path, "missing from manifest or hash mismatch")
            fields = {name: read_field_binary(path) for name, path in zip(payload["fields"], paths[1:])}
        except (PersistenceError, OSError, KeyError, json.JSONDecodeError) as e:
            logger.warning(f"Ignoring checkpoint of rep {rep}: {e}")
            return None
        return Replicate(payload["row"], fields)


def _chunks(reps: Sequence[int], size: int) -> list[list[int]]:
    return [list(reps[i:i + size]) for i in range(0, len(reps), size)]


def _collect(chunk_results: list[Replicate], results: list[Replicate], checkpoint: Checkpoint | None) -> None:
    for result in chunk_results:
        if checkpoint is not None:
            checkpoint.save(result)
        results.append(result)


def run_experiment(
    config: ExperimentConfig,
    threads: int = 1,
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
) -> ExperimentRecord:
    """
    Run every replicate of an experiment and aggregate the results.

    Replicate ``rep`` uses seed ``seed_base + rep``; rows are sorted by rep so the
    output does not depend on worker scheduling. With a checkpoint directory every
    finished replicate is dumped as it arrives; ``resume`` reloads the dumps whose
    hashes match the manifest and runs only the remaining replicates.

    Args:
        config: Validated experiment configuration
        threads: Worker processes (1 runs in-process)
        checkpoint_dir: Root of the replicate dumps, or None to keep nothing
        resume: Reuse verified dumps under ``checkpoint_dir``

    Returns:
        The experiment record
    """
    experiment = get_experiment(config.name)
    checkpoint = Checkpoint(checkpoint_dir, config) if checkpoint_dir is not None else None
    results: list[Replicate] = []
    if checkpoint is not None and resume:
        for rep in range(config.experiment.reps):
            restored = checkpoint.load(rep)
            if restored is not None:
                results.append(restored)
        if results:
            logger.info(f"Resuming {config.name}: {len(results)} replicate(s) restored from {checkpoint.directory}")
    done = {result.row["rep"] for result in results}
    chunks = [
        [rep for rep in chunk if rep not in done]
        for chunk in _chunks(range(config.experiment.reps), experiment.chunk_size)
    ]
    chunks = [chunk for chunk in chunks if chunk]
    worker = partial(experiment.run_chunk, config)
    logger.info(f"Running {config.name}: {sum(map(len, chunks))} replicates on {threads} worker(s)")
    started = time.perf_counter()
    if threads > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as executor:
            finished = executor.map(worker, chunks)
            for chunk_results in finished:
                _collect(chunk_results, results, checkpoint)
    else:
        for chunk in chunks:
            _collect(worker(chunk), results, checkpoint)
    wall_clock = time.perf_counter() - started
    results.sort(key=lambda result: result.row["rep"])
    rows = [result.row for result in results]
    fields = {name: value for result in results for name, value in result.fields.items()}
    summary = experiment.summarize(config, rows)
    for flag in summary.flags:
        logger.warning(f"{config.name}: {flag}")
    logger.info(f"{config.name} finished in {wall_clock:.1f}s")
    return ExperimentRecord(
        config=config,
        rows=rows,
        aggregates=aggregate_rows(rows),
        wall_clock=wall_clock,
        summary=summary,
        fields=fields,
    )


def _report_data(record: ExperimentRecord, artifacts: list[Path]) -> dict[str, Any]:
    return {
        "experiment": record.name,
        "version": record.version,
        "wall_clock": record.wall_clock,
        "n_reps": len(record.rows),
        "seed_base": record.config.seed_base,
        "aggregates": [{"name": name, **aggregate.to_dict()} for name, aggregate in record.aggregates.items()],
        "flags": record.summary.flags,
        "artifacts": [{"name": path.name} for path in artifacts],
        "config_text": dump_config(record.config).strip(),
    }


def emit_report(record: ExperimentRecord, out_dir: str | Path, template_path: str | Path) -> list[Path]:
    """
    Write per-rep and aggregate CSVs, extra tables, SVG plots, the markdown
    report and the manifest. Every profile goes to ``fields/`` three ways: the
    wide ``time, x_0, ...`` CSV, a BJSF1 dump and ``_txv.csv`` triples.

    Returns:
        Paths of all written artifacts
    """
    out_dir = Path(out_dir)
    name = record.name
    artifacts = [write_table(out_dir / f"{name}_reps.csv", record.frame())]
    aggregates = pd.DataFrame([{"name": key, **value.to_dict()} for key, value in record.aggregates.items()])
    artifacts.append(write_table(out_dir / f"{name}_aggregates.csv", aggregates))
    for table_name, frame in record.summary.tables.items():
        artifacts.append(write_table(out_dir / f"{name}_{table_name}.csv", frame))
    for field_name, (times, values) in record.fields.items():
        x = np.arange(values.shape[-1]) / values.shape[-1]
        artifacts.append(write_field_csv(out_dir / "fields" / f"{field_name}.csv", times, values))
        artifacts.append(write_field_binary(out_dir / "fields" / f"{field_name}.bjsf", times, values))
        artifacts.append(write_field_triples(out_dir / "fields" / f"{field_name}_txv.csv", times, values, x))
    for plot in record.summary.plots:
        path = out_dir / f"{plot.name}.svg"
        if plot.kind == "line":
            artifacts.append(line_plot(path, plot.data["x"], plot.data["series"], **plot.labels))
        else:
            artifacts.append(ecdf_plot(path, plot.data["samples"], **plot.labels))
    record_path = out_dir / f"{name}_record.json"
    payload = {**record.to_dict(), "artifacts": [path.relative_to(out_dir).as_posix() for path in artifacts]}
    record_path.write_text(json.dumps(payload, indent=2, default=_json_default), encoding="utf-8")
    artifacts.append(record_path)
    report = ReportTool(str(template_path), str(out_dir)).render_and_save(_report_data(record, artifacts))
    artifacts.append(report)
    write_manifest(out_dir, artifacts, {name: {"version": record.version, "wall_clock": record.wall_clock}})
    return artifacts


def render_saved_report(out_dir: str | Path, name: str, template_path: str | Path) -> Path:
    """Re-render the markdown report of a finished run from its record JSON."""
    out_dir = Path(out_dir)
    try:
        data = json.loads((out_dir / f"{name}_record.json").read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise PersistenceError(out_dir / f"{name}_record.json", f"corrupt record: {e}") from e
    config = ExperimentConfig.model_validate(data["config"])
    record = ExperimentRecord(
        config=config,
        rows=data["rows"],
        aggregates={key: Aggregate(**value) for key, value in data["aggregates"].items()},
        wall_clock=data["wall_clock"],
        version=data["version"],
        summary=Summary(flags=data["flags"], extra=data["extra"]),
    )
    artifacts = [out_dir / artifact for artifact in data["artifacts"]] + [out_dir / f"{name}_record.json"]
    return ReportTool(str(template_path), str(out_dir)).render_and_save(_report_data(record, artifacts))
