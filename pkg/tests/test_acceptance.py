"""End-to-end acceptance checks, one test per criterion.

A summary line per criterion is printed at the end of the pytest session.
"""

import dataclasses
import math
import subprocess
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from lghdiff.diffusion import DiffusionConfig, PrivacyMode, run_diffusion
from lghdiff.experiment import (
    ExperimentConfig, closed_form_optimum, default_data_spec, full_batch_gradient,
    generate_data, run_trials,
)
from lghdiff.noise_protocol import LocalGraphHomomorphicNoise, UnprotectedEdgeWarning
from lghdiff.privacy_metrics import (
    EpsilonConstants, audit_noise_pipeline, epsilon_bound, format_reports, ks_critical,
    neighborhood_residuals,
)
from lghdiff.topology import Adjacency, Topology, build_graph, metropolis_weights
from lghdiff.transport import MessageKind

ROOT = Path(__file__).resolve().parents[1]
NP, NAIVE, LGH = (PrivacyMode.NON_PRIVATE, PrivacyMode.NAIVE_LAPLACE,
                  PrivacyMode.LOCAL_GRAPH_HOMOMORPHIC)


@pytest.mark.criterion(1, "local cancellation within 1e-9 of the largest mask")
def test_local_cancellation():
    start = time.perf_counter()
    worst = 0.0
    for K in (5, 30):
        for M in (1, 3):
            for graph_seed in range(3):
                topo = Topology.build(K, "erdos_renyi", seed=[K, M, graph_seed], p=0.3)
                noise = LocalGraphHomomorphicNoise(topo, 0.1, M, seed=graph_seed)
                for i in range(1, 51):
                    masks = noise.masks(i)
                    rel = neighborhood_residuals(masks, topo.weights).max() / np.abs(masks).max()
                    worst = max(worst, rel)
    elapsed = time.perf_counter() - start
    print(f"worst relative residual {worst:.3e}, {elapsed:.2f} s")
    assert worst <= 1e-9
    assert elapsed < 5


@pytest.mark.criterion(2, "LGH and non-private trajectories agree to 1e-6 relative")
def test_trace_equivalence():
    start = time.perf_counter()
    cfg = ExperimentConfig()
    topo = cfg.topology()
    data = generate_data(default_data_spec(30, 2, 0), 30, 100, 0)
    dcfg = cfg.diffusion_config()
    a = run_diffusion(dcfg, topo, data, NP, gradient_seed=[0, 1], noise_seed=[0, 2]).history
    b = run_diffusion(dcfg, topo, data, LGH, gradient_seed=[0, 1], noise_seed=[0, 2]).history
    elapsed = time.perf_counter() - start
    rel = np.abs(a - b) / np.abs(a)
    print(f"max relative deviation {rel.max():.3e} over {a.shape}, {elapsed:.2f} s")
    assert a.shape == (1000, 30, 2)
    assert rel.max() <= 1e-6
    assert elapsed < 30


@pytest.mark.criterion(3, "key and noise distribution chain passes KS at n = 1e5")
def test_distribution_chain():
    start = time.perf_counter()
    reports = audit_noise_pipeline(n=100_000, sigma_g=0.1, seed=0)
    elapsed = time.perf_counter() - start
    print(format_reports(reports), f"{elapsed:.2f} s")
    by_name = {r.name: r for r in reports}
    for name in ("secret product vs Exp(1)", "shared key vs U(0,1)",
                 "noise vs Laplace(0, sigma_g/sqrt2)"):
        r = by_name[name]
        assert r.critical == pytest.approx(1.358 / math.sqrt(r.sample_size))
        assert r.passed, r.row()
    assert by_name["noise variance rel. error"].statistic <= 0.05
    assert elapsed < 5


@pytest.mark.criterion(4, "MSD ordering: LGH = non-private < naive, gap grows with noise")
def test_experiment_reproduction():
    start = time.perf_counter()
    base = ExperimentConfig()
    low = run_trials(base).summary()
    high = run_trials(dataclasses.replace(base, sigma_g2=0.1, modes=(NAIVE, LGH))).summary()
    elapsed = time.perf_counter() - start
    for name, s in (("0.01", low), ("0.1", high)):
        print(name, {m.value: f"{c:.4e}/{a:.4e}" for m, (c, a) in s.items()})
    print(f"{elapsed:.1f} s")
    for metric in (0, 1):  # centroid MSD, then average individual MSD
        lgh, nonp, naive = low[LGH][metric], low[NP][metric], low[NAIVE][metric]
        assert abs(lgh - nonp) <= 0.01 * nonp
        assert naive > lgh
        assert high[NAIVE][metric] - high[LGH][metric] > naive - lgh
        assert abs(high[LGH][metric] - lgh) <= 0.01 * lgh
    assert elapsed < 180


@pytest.mark.criterion(5, "Metropolis matrices doubly stochastic, symmetric, adjacency support")
def test_combination_matrices():
    rng = np.random.default_rng(2024)
    models = ("erdos_renyi", "ring", "star", "complete")
    for n in range(100):
        K = int(rng.integers(2, 60))
        model = models[n % 4]
        adj = build_graph(K, model, seed=int(rng.integers(1 << 30)), p=float(rng.uniform(0.1, 0.9)))
        A = metropolis_weights(adj)
        ones = np.ones(K)
        assert np.abs(A @ ones - 1).max() <= 1e-12
        assert np.abs(A.T @ ones - 1).max() <= 1e-12
        assert np.array_equal(A, A.T)
        assert np.array_equal(A != 0, adj.matrix())


@pytest.mark.criterion(6, "full-batch gradient at the closed-form optimum below 1e-10")
def test_closed_form_optimum():
    rng = np.random.default_rng(6)
    worst = 0.0
    for n in range(20):
        K, M, N = int(rng.integers(2, 40)), int(rng.integers(1, 6)), int(rng.integers(10, 200))
        rho = float(rng.uniform(0, 0.1))
        spec = default_data_spec(K, M, seed=n)
        data = generate_data(spec, K, N, seed=[n, 1])
        w_opt = closed_form_optimum(data, rho, spec.w_star)
        worst = max(worst, float(np.linalg.norm(full_batch_gradient(w_opt, data, rho))))
    print(f"largest gradient norm {worst:.3e}")
    assert worst <= 1e-10


def _audited(iterations):
    return DiffusionConfig(iterations=iterations, batch_size=10, audit_transport=True,
                           keep_messages=False)


@pytest.mark.criterion(7, "transport audit: no off-graph or hub-bypassing messages")
def test_transport_audit():
    path = Topology.from_adjacency(Adjacency.from_edges(4, [(0, 1), (1, 2), (2, 3)]))
    data = generate_data(default_data_spec(4, 2), 4, 100, 0)
    cfg = dataclasses.replace(_audited(1000), keep_messages=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnprotectedEdgeWarning)
        log = run_diffusion(cfg, path, data, LGH, 0, 1).transport
    assert not log.violations and log.bypassed == 0
    keys = log.of_kind(MessageKind.PUBLIC_KEY)
    assert keys and all(m.relay_hub in (m.src, m.dst) for m in keys)
    assert not [m for m in log.messages if not path.adjacency.is_adjacent(m.src, m.dst)]

    topo = ExperimentConfig().topology()
    data = generate_data(default_data_spec(30, 2), 30, 100, 0)
    log = run_diffusion(_audited(1000), topo, data, LGH, 0, 1).transport
    print(f"K=30: {log.delivered} messages, {len(log.violations)} violations, "
          f"{log.bypassed} bypassing the hub")
    assert log.counts[MessageKind.PUBLIC_KEY] > 0
    assert not log.violations and log.bypassed == 0


@pytest.mark.criterion(8, "epsilon bound nondecreasing in i and halves when sigma_g doubles")
def test_epsilon_evaluator():
    rng = np.random.default_rng(8)
    i = np.arange(1, 10_001)
    for _ in range(100):
        mu = float(rng.uniform(0.01, 0.9))
        c_mu = float(rng.uniform(0.01, 0.999 / mu))
        consts = EpsilonConstants(*rng.uniform(0, 5, size=2), c_mu, float(rng.uniform(0, 5)))
        sigma = float(rng.uniform(0.01, 2))
        eps = epsilon_bound(i, sigma, mu, consts)
        assert np.all(np.diff(eps) >= 0)
        half = epsilon_bound(i, 2 * sigma, mu, consts)
        assert np.all(np.abs(half - eps / 2) <= 1e-12 * np.abs(eps / 2))


@pytest.mark.criterion(9, "two runs of the default config give byte-identical results.csv")
def test_determinism(tmp_path):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        proc = subprocess.run([sys.executable, "-m", "lghdiff", "run", "--config",
                               str(ROOT / "fixtures" / "default.cfg"), "--out-dir", str(out)],
                              capture_output=True, text=True, cwd=ROOT)
        assert proc.returncode == 0, proc.stderr
        outputs.append((out / "results.csv").read_bytes())
    assert outputs[0] == outputs[1]
    assert outputs[0].count(b"\n") == 1 + 3 * 21 * 1000
