"""
Experiment harness: replicated runs, CSV traces, summaries, scaling fits
and the lower-bound trade-off sweep.

Replication i of an experiment runs with seed `seed + i`; everything it
touches is owned by that replication, so outputs depend only on the seeds.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from django.conf import settings
from scipy import stats

from .core import Instance, draw_context, env_step, make_rng, validate_instance
from .corral import CorralConfig, run_corral
from .efbo import EfboConfig, run_efbo
from .envs import GeneratorKind, GeneratorSpec, LowerBoundParams, Strategy, make_instance, make_lower_bound
from .estimators import EstimatorConfig, EstimatorKind
from .exceptions import ArgumentError, CbusError, ConfigError
from .exp4 import run_exp4
from .oracle import GroundTruth, regret_step, solve_cbus
from .trajectory import Trajectory, TrajectoryRecorder

logger = logging.getLogger(__name__)

SUMMARY_METRICS = ('cum_reg_r', 'cum_reg_c', 'total_z', 'total_reveals')
Runner = Callable[[np.random.Generator, GroundTruth], Trajectory]


def lab_defaults() -> dict[str, Any]:
    return dict(getattr(settings, 'CBUS_DEFAULTS', {}))


def lab_threads() -> int:
    return max(1, int(getattr(settings, 'CBUS_THREADS', 1)))


@dataclass(frozen=True)
class ExperimentConfig:
    instance: Union[GeneratorSpec, Instance]
    algo: Mapping[str, Any]
    T: int
    replications: int = 1
    seed: int = 0
    out: Optional[Path] = None
    # generator spec kept for checks that need its parameters (tau, nu)
    generator: Optional[GeneratorSpec] = None

    def __post_init__(self):
        if self.T < 8:
            raise ConfigError(f"T must be >= 8, got {self.T}")
        if self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if 'algo' not in self.algo:
            raise ConfigError("algorithm spec needs an 'algo' field")

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any], base_dir: Optional[Path] = None) -> 'ExperimentConfig':
        payload = dict(payload)
        known = {'instance', 'algo', 'T', 'replications', 'seed', 'out', 'name'}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown experiment fields: {sorted(unknown)}")
        for key in ('instance', 'algo', 'T'):
            if key not in payload:
                raise ConfigError(f"experiment config is missing '{key}'")

        source = payload['instance']
        generator = None
        if isinstance(source, str):
            path = Path(source)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            instance = load_instance_file(path)
        elif isinstance(source, Mapping) and 'contexts' in source:
            instance = _parse_instance(source)
        elif isinstance(source, Mapping):
            generator = _parse_generator(source)
            instance = generator
        else:
            raise ConfigError("'instance' must be a generator spec, an inline instance or a file path")

        algo = payload['algo']
        if isinstance(algo, str):
            algo = {'algo': algo}
        out = payload.get('out')
        if out is not None:
            out = Path(out)
            if base_dir is not None and not out.is_absolute():
                out = base_dir / out
        try:
            return cls(instance=instance, algo=dict(algo), T=int(payload['T']),
                       replications=int(payload.get('replications', 1)), seed=int(payload.get('seed', 0)),
                       out=out, generator=generator)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> 'ExperimentConfig':
        path = Path(path)
        return cls.from_dict(read_json(path), base_dir=path.parent)


def read_json(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def _parse_instance(payload: Mapping[str, Any]) -> Instance:
    try:
        return Instance.from_dict(dict(payload))
    except CbusError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid instance: {exc}") from exc


def _parse_generator(payload: Mapping[str, Any]) -> GeneratorSpec:
    try:
        return GeneratorSpec.from_dict(dict(payload))
    except ArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def load_instance_file(path: Union[str, Path]) -> Instance:
    return _parse_instance(read_json(Path(path)))


def resolve_instance(source: Union[GeneratorSpec, Instance]) -> Instance:
    instance = make_instance(source) if isinstance(source, GeneratorSpec) else source
    violations = validate_instance(instance)
    if violations:
        listed = '; '.join(f"{v.invariant}{list(v.indices)}" for v in violations[:10])
        raise ConfigError(f"instance violates {len(violations)} invariants: {listed}")
    return instance


def run_fixed_policy(instance: Instance, policy: int, T: int, rng: np.random.Generator,
                     truth: Optional[GroundTruth] = None) -> Trajectory:
    """Play one policy every round; no supervision is requested."""
    if not 0 <= policy < instance.n_policies:
        raise ArgumentError(f"policy {policy} out of range [0, {instance.n_policies})")
    truth = truth or solve_cbus(instance)
    Q = np.zeros(instance.n_policies)
    Q[policy] = 1.0
    reg_r, reg_c = regret_step(truth, Q)
    actions = instance.policies.actions[policy]
    recorder = TrajectoryRecorder(T)
    for _ in range(T):
        x = draw_context(instance, rng)
        feedback = env_step(instance, x, int(actions[x]), False, rng)
        recorder.record(feedback, reg_r, reg_c, n_surviving=instance.n_policies)
    return recorder.finish()


def build_runner(algo: Mapping[str, Any], instance: Instance, T: int,
                 defaults: Optional[Mapping[str, Any]] = None) -> Runner:
    """Parse an algorithm spec up front so configuration errors surface before any run starts."""
    defaults = lab_defaults() if defaults is None else defaults
    payload = dict(algo)
    name = payload.get('algo')
    if name == 'efbo':
        config = EfboConfig.from_dict(payload, T, instance.n_actions)
        return lambda rng, truth: run_efbo(instance, config, T, rng, truth)
    if name == 'corral':
        corral_config = CorralConfig.from_dict(payload, defaults)
        return lambda rng, truth: run_corral(instance, corral_config, T, rng, truth)
    if name == 'exp4':
        payload.pop('algo')
        estimator = payload.pop('estimator', {})
        if isinstance(estimator, str):
            estimator = {'estimator': estimator}
        mu = float(payload.pop('mu', 1.0))
        eta0 = payload.pop('eta0', None)
        if payload:
            raise ConfigError(f"unknown exp4 fields: {sorted(payload)}")
        estimator_config = EstimatorConfig.from_dict(estimator, defaults)
        return lambda rng, truth: run_exp4(instance, T, rng, mu=mu, eta0=eta0,
                                           estimator_config=estimator_config, truth=truth)
    if name == 'fixed':
        policy = int(payload.get('policy', 0))
        if not 0 <= policy < instance.n_policies:
            raise ConfigError(f"fixed policy {policy} out of range [0, {instance.n_policies})")
        return lambda rng, truth: run_fixed_policy(instance, policy, T, rng, truth)
    raise ConfigError(f"unknown algorithm {name!r}; expected efbo, corral, exp4 or fixed")


def run_replications(runner: Runner, truth: GroundTruth, seeds: Sequence[int],
                     threads: Optional[int] = None) -> list[Trajectory]:
    """Results come back in seed order whatever the scheduling."""
    workers = min(threads or lab_threads(), lab_threads(), len(seeds))
    if threads and threads > lab_threads():
        logger.warning(f"Requested {threads} threads; capped at CBUS_THREADS={lab_threads()}")
    if workers <= 1:
        return [runner(make_rng(seed), truth) for seed in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda seed: runner(make_rng(seed), truth), seeds))


@dataclass
class ExperimentResult:
    out_dir: Path
    csv_paths: list[Path]
    summary: dict[str, Any]
    trajectories: list[Trajectory] = field(repr=False)
    instance: Instance = field(repr=False)
    truth: GroundTruth = field(repr=False)


def _prepare_output(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
        marker = out / '.write_test'
        marker.write_text('')
        marker.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    return out


def run_experiment(config: ExperimentConfig, threads: Optional[int] = None,
                   out: Optional[Path] = None) -> ExperimentResult:
    out_dir = out or config.out
    if out_dir is None:
        raise ConfigError("experiment config has no output path")
    out_dir = _prepare_output(Path(out_dir))
    instance = resolve_instance(config.instance)
    runner = build_runner(config.algo, instance, config.T)
    truth = solve_cbus(instance)
    seeds = [config.seed + i for i in range(config.replications)]

    logger.info(f"Starting experiment: algo={config.algo['algo']}, T={config.T}, "
                f"replications={config.replications}, out={out_dir}")
    started = time.monotonic()
    trajectories = run_replications(runner, truth, seeds, threads)

    float_format = lab_defaults().get('float_format', '%.17g')
    csv_paths = [trajectory.to_csv(out_dir / f"rep_{i:03d}.csv", float_format=float_format)
                 for i, trajectory in enumerate(trajectories)]
    (out_dir / 'instance.json').write_text(instance.to_json())
    summary = summarize_trajectories(csv_paths)
    summary.update({'algo': config.algo['algo'], 'T': config.T, 'seed': config.seed,
                    'pi_star': truth.pi_star, 'epsilon': instance.epsilon})
    (out_dir / 'summary.json').write_text(json.dumps(summary, indent=2, sort_keys=True))
    logger.info(f"Experiment finished in {time.monotonic() - started:.2f}s; wrote {len(csv_paths)} "
                f"trajectories and summary.json to {out_dir}")
    return ExperimentResult(out_dir=out_dir, csv_paths=csv_paths, summary=summary,
                            trajectories=trajectories, instance=instance, truth=truth)


def confidence_interval(values: Sequence[float], level: float = 0.95) -> dict[str, Optional[float]]:
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    if values.shape[0] < 2:
        return {'mean': mean, 'half_width': None, 'low': None, 'high': None}
    sem = float(values.std(ddof=1) / math.sqrt(values.shape[0]))
    half = float(stats.t.ppf(0.5 + level / 2, values.shape[0] - 1) * sem)
    return {'mean': mean, 'half_width': half, 'low': mean - half, 'high': mean + half}


def summarize_trajectories(paths: Sequence[Union[str, Path]]) -> dict[str, Any]:
    """Mean and 95% t-interval of the final metrics; reads only the CSVs."""
    if not paths:
        raise ArgumentError("no trajectories to summarize")
    finals: dict[str, list[float]] = {name: [] for name in SUMMARY_METRICS}
    rows = []
    for path in paths:
        trajectory = Trajectory.read_csv(path)
        rows.append(len(trajectory))
        finals['cum_reg_r'].append(trajectory.final_reg_r)
        finals['cum_reg_c'].append(trajectory.final_reg_c)
        finals['total_z'].append(trajectory.total_z)
        finals['total_reveals'].append(trajectory.total_reveals)
    return {
        'replications': len(paths),
        'rows': rows,
        'files': [Path(p).name for p in paths],
        'metrics': {name: confidence_interval(values) for name, values in finals.items()},
    }


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r_squared: float

    def to_dict(self) -> dict[str, float]:
        return {'slope': self.slope, 'intercept': self.intercept, 'r_squared': self.r_squared}


def fit_scaling_exponent(points: Sequence[tuple[float, float]]) -> ScalingFit:
    """Least squares of log(regret) on log(T)."""
    if len(points) < 3:
        raise ArgumentError(f"need at least 3 points, got {len(points)}")
    horizons = np.array([p[0] for p in points], dtype=float)
    values = np.array([p[1] for p in points], dtype=float)
    if np.any(horizons <= 0) or np.any(values <= 0):
        raise ArgumentError("scaling fit needs positive horizons and regrets")
    fit = stats.linregress(np.log(horizons), np.log(values))
    return ScalingFit(slope=float(fit.slope), intercept=float(fit.intercept),
                      r_squared=float(fit.rvalue ** 2))


def curve_points(trajectory: Trajectory, column: str = 'cum_reg_r') -> list[tuple[float, float]]:
    """(t, value) at powers of two and at the last round."""
    frame = trajectory.frame
    T = len(frame)
    marks = sorted({2 ** k for k in range(int(math.log2(T)) + 1)} | {T})
    return [(float(t), float(frame[column].iloc[t - 1])) for t in marks]


def acceptance_checks(config: ExperimentConfig, result: ExperimentResult) -> list[str]:
    """Shape checks plus the constraint-regret bound of the configured algorithm; returns failures."""
    failures = []
    T = config.T
    for path, trajectory in zip(result.csv_paths, result.trajectories):
        frame = trajectory.frame
        if len(frame) != T:
            failures.append(f"{path.name}: {len(frame)} rows, expected {T}")
        for column, inst in (('cum_reg_r', 'inst_reg_r'), ('cum_reg_c', 'inst_reg_c')):
            drift = np.max(np.abs(frame[column].to_numpy() - np.cumsum(frame[inst].to_numpy())))
            if drift > 1e-9:
                failures.append(f"{path.name}: {column} drifts {drift:.3g} from the prefix sum")

    instance = result.instance
    n_policies = instance.n_policies
    eps = instance.epsilon
    per_round_c = result.summary['metrics']['cum_reg_c']['mean'] / T
    algo = config.algo['algo']
    bound = None
    if algo == 'efbo':
        T0 = EfboConfig.from_dict(config.algo, T, instance.n_actions).T0
        bound = eps + 4 * math.sqrt(math.log(T0 * n_policies) / T0)
    elif algo == 'corral':
        estimator = CorralConfig.from_dict(config.algo, lab_defaults()).estimator
        if estimator.kind is EstimatorKind.ACTIVE:
            bound = 3 * eps + 8 * math.sqrt(math.log(T * n_policies) / T)
            spec = config.generator
            if spec is not None and spec.kind is GeneratorKind.MASSART and spec.tau > 0:
                cap = 80 * math.log(T * n_policies / estimator.delta_conf) / spec.tau ** 2
                for path, trajectory in zip(result.csv_paths, result.trajectories):
                    if trajectory.total_z > cap:
                        failures.append(f"{path.name}: {trajectory.total_z} queries exceed {cap:.1f}")
        else:
            bound = 1.25 * (eps + 4 * estimator.nu + 8 * math.sqrt(2 * math.log(T * n_policies) / T))
    if bound is not None and per_round_c > bound:
        failures.append(f"per-round constraint regret {per_round_c:.4g} exceeds {bound:.4g}")
    return failures


@dataclass
class SweepResult:
    table: pd.DataFrame
    fits: dict[str, Optional[dict[str, float]]]


def run_sweep(config: ExperimentConfig, horizons: Sequence[int], threads: Optional[int] = None,
              out: Optional[Path] = None) -> SweepResult:
    """Run the experiment at every horizon and fit log-log exponents of the mean final regrets."""
    out_dir = Path(out or config.out or '.')
    rows = []
    for T in sorted(horizons):
        run_config = ExperimentConfig(instance=config.instance, algo=config.algo, T=T,
                                      replications=config.replications, seed=config.seed,
                                      out=out_dir / f"T_{T}", generator=config.generator)
        result = run_experiment(run_config, threads=threads)
        metrics = result.summary['metrics']
        rows.append({'T': T, **{f"mean_{name}": metrics[name]['mean'] for name in SUMMARY_METRICS}})
    table = pd.DataFrame(rows)

    fits: dict[str, Optional[dict[str, float]]] = {}
    for column in ('mean_cum_reg_r', 'mean_cum_reg_c'):
        points = list(zip(table['T'], table[column]))
        try:
            fits[column] = fit_scaling_exponent(points).to_dict()
        except ArgumentError as exc:
            logger.warning(f"Skipping scaling fit of {column}: {exc}")
            fits[column] = None
    _prepare_output(out_dir)
    table.to_csv(out_dir / 'sweep.csv', index=False, float_format=lab_defaults().get('float_format', '%.17g'))
    (out_dir / 'fits.json').write_text(json.dumps(fits, indent=2, sort_keys=True))
    logger.info(f"Sweep over {len(rows)} horizons written to {out_dir}")
    return SweepResult(table=table, fits=fits)


DEFAULT_VARIANTS = (
    {'name': 'never_reveal', 'algo': {'algo': 'fixed', 'policy': 0}},
    {'name': 'commit_pi2', 'algo': {'algo': 'fixed', 'policy': 1}},
    {'name': 'efbo', 'algo': {'algo': 'efbo'}},
    {'name': 'efbo_short', 'algo': {'algo': 'efbo', 'T0_fraction': 0.25}},
)


@dataclass(frozen=True)
class TradeoffConfig:
    c: float = 0.25
    gammas: tuple[float, ...] = (0.05, 0.1, 0.2)
    T: int = 2 ** 15
    replications: int = 1
    seed: int = 0
    epsilon: float = 0.0
    variants: tuple = DEFAULT_VARIANTS
    out: Optional[Path] = None

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any], base_dir: Optional[Path] = None) -> 'TradeoffConfig':
        payload = dict(payload)
        known = {'c', 'gammas', 'T', 'replications', 'seed', 'epsilon', 'variants', 'out'}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown tradeoff fields: {sorted(unknown)}")
        if 'gammas' in payload:
            payload['gammas'] = tuple(float(g) for g in payload['gammas'])
        if 'variants' in payload:
            variants = tuple(payload['variants'])
            if any('name' not in v or 'algo' not in v for v in variants):
                raise ConfigError("every tradeoff variant needs 'name' and 'algo'")
            payload['variants'] = variants
        if payload.get('out') is not None:
            out = Path(payload['out'])
            payload['out'] = base_dir / out if base_dir is not None and not out.is_absolute() else out
        try:
            config = cls(**payload)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid tradeoff config: {exc}") from exc
        if config.T < 8 or config.replications < 1 or not config.gammas:
            raise ConfigError("tradeoff needs T >= 8, replications >= 1 and at least one gamma")
        return config


def tradeoff_sweep(config: TradeoffConfig, threads: Optional[int] = None) -> pd.DataFrame:
    """
    Every variant under both user strategies of the lower-bound family, for every gamma.

    Reports the S2 constraint regret, the reward regret under the worse strategy
    and the product Reg_r sqrt(Reg_c).
    """
    T = config.T
    seeds = [config.seed + i for i in range(config.replications)]
    ticks = np.arange(1, T + 1)
    rows = []
    for gamma in config.gammas:
        for variant in config.variants:
            finals = {}
            for strategy in (Strategy.S1, Strategy.S2):
                try:
                    params = LowerBoundParams(c=config.c, gamma=gamma, strategy=strategy)
                except ArgumentError as exc:
                    raise ConfigError(str(exc)) from exc
                instance = make_lower_bound(params, epsilon=config.epsilon)
                truth = solve_cbus(instance)
                runner = build_runner(variant['algo'], instance, T)
                trajectories = run_replications(runner, truth, seeds, threads)
                mean_cum_c = np.mean([t.frame['cum_reg_c'].to_numpy() for t in trajectories], axis=0)
                finals[strategy] = {
                    'reg_r': float(np.mean([t.final_reg_r for t in trajectories])),
                    'reg_c': float(mean_cum_c[-1]),
                    'slope_c': float(stats.linregress(ticks, mean_cum_c).slope),
                }
            s1, s2 = finals[Strategy.S1], finals[Strategy.S2]
            reg_r_worst = max(s1['reg_r'], s2['reg_r'])
            product = max(reg_r_worst, 0.0) * math.sqrt(max(s2['reg_c'], 0.0))
            rows.append({
                'variant': variant['name'], 'gamma': gamma, 'c': config.c, 'T': T,
                'reg_r_s1': s1['reg_r'], 'reg_r_s2': s2['reg_r'],
                'reg_c_s1': s1['reg_c'], 'reg_c_s2': s2['reg_c'],
                'reg_c_slope_s2': s2['slope_c'],
                'reg_r_worst': reg_r_worst,
                'reg_c_worst': max(s1['reg_c'], s2['reg_c']),
                'product': product,
                'normalized_product': product / T,
            })
            logger.info(f"tradeoff gamma={gamma} variant={variant['name']}: Reg_r(worst)={reg_r_worst:.4g}, "
                        f"Reg_c(S2)={s2['reg_c']:.4g}")
    table = pd.DataFrame(rows)
    if config.out is not None:
        out = _prepare_output(Path(config.out))
        table.to_csv(out / 'tradeoff.csv', index=False,
                     float_format=lab_defaults().get('float_format', '%.17g'))
    return table


def tradeoff_checks(table: pd.DataFrame, exponent: float = 0.55) -> list[str]:
    """Linear S2 constraint regret for never_reveal, linear reward regret for commit_pi2, no variant below both."""
    failures = []
    for _, row in table.iterrows():
        if row['variant'] == 'never_reveal' and row['reg_c_slope_s2'] < row['gamma'] / 4:
            failures.append(f"never_reveal at gamma={row['gamma']}: slope {row['reg_c_slope_s2']:.4g} "
                            f"< gamma/4")
        if row['variant'] == 'commit_pi2' and row['reg_r_worst'] / row['T'] < row['c'] / 2:
            failures.append(f"commit_pi2 at gamma={row['gamma']}: Reg_r/T below c/2")
        limit = row['T'] ** exponent
        if row['reg_c_worst'] <= limit and row['reg_r_worst'] <= limit:
            failures.append(f"{row['variant']} at gamma={row['gamma']} beats T^{exponent} on both regrets")
    return failures
