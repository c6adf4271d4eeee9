"""Synthetic linear-regression experiment comparing the three privacy modes.

Each trial draws fresh data (seed ``seed + trial``), computes the regularised
least-squares optimum in closed form, runs diffusion in every requested mode
with shared gradient-sampling seeds, and records the centroid and average
mean-square deviation per iteration.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import AgentData, DiffusionConfig, PrivacyMode, run_diffusion
from .errors import DivergedError, InvalidConfigError, NumericalError
from .noise_protocol import DEFAULT_C
from .topology import Topology

ALL_MODES = (PrivacyMode.NON_PRIVATE, PrivacyMode.NAIVE_LAPLACE,
             PrivacyMode.LOCAL_GRAPH_HOMOMORPHIC)
STEADY_WINDOW = 100
CSV_HEADER = ("mode", "trial_or_avg", "i", "msd_centroid", "msd_avg")


@dataclass
class ExperimentConfig:
    num_agents: int = 30
    dim: int = 2
    samples_per_agent: int = 100
    graph: str = "erdos_renyi"
    edge_prob: float = 0.2
    graph_seed: int = 0
    mu: float = 0.4
    sigma_g2: float = 0.01
    rho_reg: float = 0.01
    iterations: int = 1000
    trials: int = 20
    seed: int = 0
    modes: tuple = ALL_MODES
    batch_size: int = 10
    c: int = DEFAULT_C
    freeze_split: bool = False
    fixed_data: bool = False
    literal_noise_scale: bool = False

    def __post_init__(self):
        self.modes = tuple(PrivacyMode.parse(m) if isinstance(m, str) else PrivacyMode(m)
                           for m in self.modes)

    def validate(self) -> None:
        for name in ("num_agents", "dim", "samples_per_agent", "iterations", "trials",
                     "batch_size", "c"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be positive")
        if self.mu <= 0 or self.sigma_g2 <= 0 or self.rho_reg < 0:
            raise InvalidConfigError("need mu > 0, sigma_g2 > 0 and rho_reg >= 0")
        if not self.modes:
            raise InvalidConfigError("at least one mode is required")
        if self.batch_size > self.samples_per_agent:
            raise InvalidConfigError("batch_size exceeds samples_per_agent")

    def diffusion_config(self) -> DiffusionConfig:
        return DiffusionConfig(mu=self.mu, sigma_g2=self.sigma_g2, iterations=self.iterations,
                               rho_reg=self.rho_reg, batch_size=self.batch_size, c=self.c,
                               freeze_split=self.freeze_split,
                               literal_noise_scale=self.literal_noise_scale)

    def topology(self) -> Topology:
        return Topology.build(self.num_agents, self.graph, self.graph_seed, self.edge_prob)


_ALIASES = {"k": "num_agents", "m": "dim", "n": "samples_per_agent", "t": "iterations",
            "p": "edge_prob", "base_seed": "seed", "sigma_g_2": "sigma_g2"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key.lower(), key.lower())
        if key not in fields:
            raise InvalidConfigError(f"line {lineno}: unknown key {key!r}")
        default = fields[key].default
        try:
            if key == "modes":
                values[key] = tuple(PrivacyMode.parse(m) for m in value.split(",") if m.strip())
            elif isinstance(default, bool):
                low = value.lower()
                if low not in _TRUE | _FALSE:
                    raise ValueError(value)
                values[key] = low in _TRUE
            elif isinstance(default, int):
                values[key] = int(value)
            elif isinstance(default, float):
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError:
            raise InvalidConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


@dataclass(frozen=True)
class SyntheticDataSpec:
    w_star: np.ndarray
    cov: np.ndarray
    noise_var: np.ndarray

    def cov_sqrt(self) -> np.ndarray:
        R = np.asarray(self.cov, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1] or not np.allclose(R, R.T):
            raise InvalidConfigError("feature covariance must be a symmetric matrix")
        lam, V = np.linalg.eigh(R)
        if np.any(lam <= 0):
            raise InvalidConfigError("feature covariance must be positive definite")
        return (V * np.sqrt(lam)) @ V.T


def default_data_spec(num_agents: int, dim: int, seed: int = 0) -> SyntheticDataSpec:
    """``w*`` with N(0, 1) entries, identity covariance, noise variances U[0.05, 0.15]."""
    rng = np.random.default_rng([seed, 7])
    return SyntheticDataSpec(rng.normal(size=dim), np.eye(dim),
                             rng.uniform(0.05, 0.15, size=num_agents))


def generate_data(spec: SyntheticDataSpec, num_agents: int, samples: int, seed) -> list[AgentData]:
    """``d = u.w* + v`` with ``u ~ N(0, R_u)`` and ``v ~ N(0, sigma_vk^2)``."""
    root = spec.cov_sqrt()
    noise_var = np.broadcast_to(np.asarray(spec.noise_var, dtype=float), (num_agents,))
    if np.any(noise_var <= 0):
        raise InvalidConfigError("noise variances must be positive")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(num_agents):
        u = rng.standard_normal((samples, len(spec.w_star))) @ root
        v = rng.standard_normal(samples) * math.sqrt(noise_var[k])
        out.append(AgentData(u, u @ spec.w_star + v))
    return out


def _moments(datasets):
    R = sum(ds.u.T @ ds.u / len(ds) for ds in datasets) / len(datasets)
    r = sum(ds.u.T @ ds.d / len(ds) for ds in datasets) / len(datasets)
    return R, r


def closed_form_optimum(datasets, rho_reg: float, w_star=None) -> np.ndarray:
    """Minimiser of the average regularised squared error.

    Solves ``(R_u + rho I) w = R_u w* + r_uv`` where ``R_u`` is the sample
    second moment of the features and ``r_uv`` the sample cross-moment with
    the target noise ``v = d - u.w*``. Without ``w_star`` the right-hand side
    is the feature-target cross-moment, which is the same quantity.
    """
    R, r_ud = _moments(datasets)
    if w_star is not None:
        w_star = np.asarray(w_star, dtype=float)
        r_uv = sum(ds.u.T @ (ds.d - ds.u @ w_star) / len(ds) for ds in datasets) / len(datasets)
        rhs = R @ w_star + r_uv
    else:
        rhs = r_ud
    try:
        return np.linalg.solve(R + rho_reg * np.eye(len(R)), rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("normal equations are singular") from exc


def full_batch_gradient(w, datasets, rho_reg: float) -> np.ndarray:
    """Gradient of the network objective at ``w``."""
    w = np.asarray(w, dtype=float)
    g = sum(-2.0 * ds.u.T @ (ds.d - ds.u @ w) / len(ds) for ds in datasets) / len(datasets)
    return g + 2.0 * rho_reg * w


def msd_metrics(history: np.ndarray, w_opt) -> tuple[np.ndarray, np.ndarray]:
    """Centroid MSD and average individual MSD for a ``(T, K, M)`` history."""
    dev = history - np.asarray(w_opt)
    centroid = np.sum(dev.mean(axis=1) ** 2, axis=-1)
    average = np.mean(np.sum(dev ** 2, axis=-1), axis=1)
    return centroid, average


@dataclass
class MetricsTrace:
    """Per-trial MSD curves of one mode, shape ``(trials, T)``."""

    mode: PrivacyMode
    centroid_trials: np.ndarray
    average_trials: np.ndarray

    @property
    def centroid(self) -> np.ndarray:
        return self.centroid_trials.mean(axis=0)

    @property
    def average(self) -> np.ndarray:
        return self.average_trials.mean(axis=0)

    def steady_state(self, window: int = STEADY_WINDOW) -> tuple[float, float]:
        w = min(window, self.centroid_trials.shape[1])
        return float(self.centroid[-w:].mean()), float(self.average[-w:].mean())


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    traces: dict
    topology: Topology
    histories: dict = field(default_factory=dict)

    def summary(self, window: int = STEADY_WINDOW) -> dict:
        return {mode: trace.steady_state(window) for mode, trace in self.traces.items()}


def run_trials(config: ExperimentConfig, topology: Topology | None = None,
               keep_history: bool = False) -> ExperimentResult:
    """Run ``config.trials`` trials of every requested mode.

    Trial ``t`` uses data seed ``seed + t`` (or ``seed`` with ``fixed_data``)
    and gradient/noise seeds derived from ``seed + t``, so all modes see the
    same data and gradient samples. ``keep_history`` retains trial 0's full
    iterate history per mode.
    """
    config.validate()
    topology = topology if topology is not None else config.topology()
    spec = default_data_spec(config.num_agents, config.dim, config.seed)
    dcfg = config.diffusion_config()
    T = config.iterations
    curves = {m: (np.empty((config.trials, T)), np.empty((config.trials, T))) for m in config.modes}
    histories = {}
    for t in range(config.trials):
        trial_seed = config.seed + t
        data = generate_data(spec, config.num_agents, config.samples_per_agent,
                             config.seed if config.fixed_data else trial_seed)
        w_opt = closed_form_optimum(data, config.rho_reg, spec.w_star)
        for mode in config.modes:
            try:
                res = run_diffusion(dcfg, topology, data, mode, gradient_seed=[trial_seed, 1],
                                    noise_seed=[trial_seed, 2])
            except DivergedError as exc:
                raise DivergedError(exc.iteration, exc.norm, trial=t, mode=mode.value) from exc
            curves[mode][0][t], curves[mode][1][t] = msd_metrics(res.history, w_opt)
            if keep_history and t == 0:
                histories[mode] = res.history
    traces = {m: MetricsTrace(m, *curves[m]) for m in config.modes}
    return ExperimentResult(config, traces, topology, histories)


def results_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for mode, trace in result.traces.items():
        blocks = [(str(t), trace.centroid_trials[t], trace.average_trials[t])
                  for t in range(trace.centroid_trials.shape[0])]
        blocks.append(("avg", trace.centroid, trace.average))
        for label, cen, avg in blocks:
            for i, (a, b) in enumerate(zip(cen.tolist(), avg.tolist()), 1):
                writer.writerow((mode.value, label, i, repr(a), repr(b)))
    return buf.getvalue()


def read_results_csv(path) -> dict:
    """Parse a results CSV into ``{(mode, label): (centroid, average)}`` arrays."""
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader)) != CSV_HEADER:
            raise InvalidConfigError("unexpected CSV header")
        for mode, label, _i, cen, avg in reader:
            rows.setdefault((mode, label), ([], []))
            rows[(mode, label)][0].append(float(cen))
            rows[(mode, label)][1].append(float(avg))
    return {k: (np.array(c), np.array(a)) for k, (c, a) in rows.items()}


def summary_text(result: ExperimentResult, window: int = STEADY_WINDOW) -> str:
    cfg = result.config
    w = min(window, cfg.iterations)
    lines = [f"{f.name} = {_fmt_value(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    lines.append(f"graph_retries = {result.topology.adjacency.retries}")
    lines.append("")
    lines.append(f"steady state: mean over the last {w} iterations of the trial-averaged MSD")
    lines.append(f"{'mode':<26} {'msd_centroid':>14} {'msd_avg':>14}")
    for mode, (cen, avg) in result.summary(window).items():
        lines.append(f"{mode.value:<26} {cen:>14.6e} {avg:>14.6e}")
    return "\n".join(lines) + "\n"


def _fmt_value(v):
    if isinstance(v, tuple):
        return ",".join(m.value for m in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_COLORS = {PrivacyMode.NON_PRIVATE: "#1f77b4", PrivacyMode.NAIVE_LAPLACE: "#d62728",
           PrivacyMode.LOCAL_GRAPH_HOMOMORPHIC: "#2ca02c"}
_DASH = {PrivacyMode.LOCAL_GRAPH_HOMOMORPHIC: ' stroke-dasharray="6 4"'}


def msd_svg(result: ExperimentResult, width: int = 720, height: int = 440) -> str:
    """Log-scale line chart of the trial-averaged centroid MSD, one polyline per mode."""
    left, right, top, bottom = 70, 20, 20, 50
    pw, ph = width - left - right, height - top - bottom
    curves = {m: np.log10(np.maximum(tr.centroid, 1e-300)) for m, tr in result.traces.items()}
    lo = math.floor(min(float(c.min()) for c in curves.values()))
    hi = math.ceil(max(float(c.max()) for c in curves.values()))
    hi = hi if hi > lo else lo + 1
    T = result.config.iterations

    def x_of(i):
        return left + pw * (i - 1) / max(T - 1, 1)

    def y_of(v):
        return top + ph * (hi - v) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>']
    for e in range(lo, hi + 1):
        y = y_of(e)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" font-size="11" text-anchor="end">'
                   f'1e{e}</text>')
    for j in range(5):
        i = 1 + round((T - 1) * j / 4)
        out.append(f'<text x="{x_of(i):.2f}" y="{top + ph + 16}" font-size="11" '
                   f'text-anchor="middle">{i}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" font-size="12" '
               f'text-anchor="middle">iteration</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.2f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.2f})">centroid MSD</text>')
    for n, (mode, curve) in enumerate(curves.items()):
        pts = " ".join(f"{x_of(i):.2f},{y_of(v):.2f}" for i, v in enumerate(curve.tolist(), 1))
        color = _COLORS.get(mode, "#000")
        out.append(f'<polyline data-mode="{mode.value}" fill="none" stroke="{color}" '
                   f'stroke-width="1.2"{_DASH.get(mode, "")} points="{pts}"/>')
        ly = top + 16 + 18 * n
        out.append(f'<line x1="{left + pw - 200}" y1="{ly - 4}" x2="{left + pw - 176}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"{_DASH.get(mode, "")}/>')
        out.append(f'<text x="{left + pw - 170}" y="{ly}" font-size="12">{mode.value}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def history_csv(history: np.ndarray) -> str:
    """``i,k,coord,value`` rows with 1-based indices."""
    T, K, M = history.shape
    values = history.tolist()
    lines = ["i,k,coord,value"]
    for i in range(T):
        for k in range(K):
            for d in range(M):
                lines.append(f"{i + 1},{k + 1},{d + 1},{values[i][k][d]!r}")
    return "\n".join(lines) + "\n"


def export_results(result: ExperimentResult, fmt: str, path) -> Path:
    """Write the results as ``csv`` or ``svg``."""
    if fmt == "csv":
        text = results_csv(result)
    elif fmt == "svg":
        text = msd_svg(result)
    else:
        raise InvalidConfigError(f"unknown export format {fmt!r}")
    path = Path(path)
    path.write_text(text)
    return path
