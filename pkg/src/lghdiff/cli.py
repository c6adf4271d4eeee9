"""Command line entry point: ``run``, ``verify`` and ``graph`` subcommands."""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .diffusion import PrivacyMode
from .errors import LGHError
from .experiment import (
    ExperimentConfig, export_results, history_csv, load_config, run_trials, summary_text,
)
from .noise_protocol import CANCELLATION_RTOL, LocalGraphHomomorphicNoise, UnprotectedEdgeWarning
from .privacy_metrics import (
    AuditReport, audit_noise_pipeline, format_reports, neighborhood_residuals,
)
from .topology import weights_text
from .transport import TransportLog, direct_key_messages


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.modes:
        cfg.modes = tuple(PrivacyMode.parse(m) for m in args.modes.split(",") if m.strip())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnprotectedEdgeWarning)
        result = run_trials(cfg, keep_history=args.dump_history)
    export_results(result, "csv", out / "results.csv")
    export_results(result, "svg", out / "msd.svg")
    (out / "summary.txt").write_text(summary_text(result))
    for mode, hist in result.histories.items():
        (out / f"history_{mode.value}.csv").write_text(history_csv(hist))
    sys.stdout.write(summary_text(result))
    return 0


def protocol_reports(cfg: ExperimentConfig, iterations: int, seed=0, exchanges=None):
    """Run the noise protocol alone on the configured graph and audit it.

    Appends the hub exchanges to ``exchanges`` when a list is given.
    """
    topo = cfg.topology()
    log = TransportLog(keep_messages=True)
    noise = LocalGraphHomomorphicNoise(
        topo, math.sqrt(cfg.sigma_g2), cfg.dim, seed, c=cfg.c,
        literal_scale=cfg.literal_noise_scale, freeze_split=cfg.freeze_split,
        transport=log, keep_exchanges=exchanges is not None)
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnprotectedEdgeWarning)
        for i in range(1, iterations + 1):
            masks = noise.masks(i)
            scale = float(np.max(np.abs(masks)))
            if scale > 0:
                worst = max(worst, float(neighborhood_residuals(masks, topo.weights).max()) / scale)
    if exchanges is not None:
        exchanges.extend(noise.exchanges)
    n = cfg.num_agents * iterations
    return [
        AuditReport("local cancellation (relative)", n, worst, CANCELLATION_RTOL),
        AuditReport("adjacency violations", log.delivered, len(log.violations), 1),
        AuditReport("key messages bypassing hub", log.delivered, len(direct_key_messages(log)), 1),
    ]


def _noise_dump(exchanges) -> str:
    lines = ["i,k,l,m,coord,g"]
    for ex in exchanges:
        for rec in ex.records():
            for d, g in enumerate(rec.noise.tolist(), 1):
                lines.append(f"{rec.iteration},{rec.hub + 1},{rec.left + 1},{rec.right + 1},{d},{g!r}")
    return "\n".join(lines) + "\n"


def _cmd_verify(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.sigma_g2 is not None:
        cfg.sigma_g2 = args.sigma_g2
    sigma_g = math.sqrt(cfg.sigma_g2)
    reports = audit_noise_pipeline(args.samples, sigma_g, cfg.c, args.seed,
                                   literal_scale=cfg.literal_noise_scale)
    exchanges = [] if args.dump_noise else None
    reports += protocol_reports(cfg, args.iterations, args.seed, exchanges)
    if args.dump_noise:
        Path(args.dump_noise).write_text(_noise_dump(exchanges))
    sys.stdout.write(format_reports(reports))
    return 0 if all(r.passed for r in reports) else 1


def _cmd_graph(args) -> int:
    cfg = load_config(args.config)
    topo = cfg.topology()
    out = Path(args.out)
    topo.adjacency.write_edge_list(out)
    weights = Path(args.weights_out) if args.weights_out else out.with_name(out.name + ".weights")
    weights.write_text(weights_text(topo.weights))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lghdiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the multi-trial MSD experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out-dir", default=".")
    run.add_argument("--modes", help="comma list of non_private,naive,lgh")
    run.add_argument("--dump-history", action="store_true",
                     help="also write trial 0's iterates per mode")
    run.set_defaults(func=_cmd_run)

    verify = sub.add_parser("verify", help="audit the noise pipeline and the protocol")
    verify.add_argument("--samples", type=int, default=100_000)
    verify.add_argument("--sigma-g2", type=float)
    verify.add_argument("--dump-noise", metavar="FILE")
    verify.add_argument("--config", help="graph and protocol settings (defaults otherwise)")
    verify.add_argument("--iterations", type=int, default=5)
    verify.add_argument("--seed", type=int, default=0)
    verify.set_defaults(func=_cmd_verify)

    graph = sub.add_parser("graph", help="write the edge list and combination weights")
    graph.add_argument("--config", required=True)
    graph.add_argument("--out", required=True)
    graph.add_argument("--weights-out", help="default: <out>.weights")
    graph.set_defaults(func=_cmd_graph)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LGHError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
