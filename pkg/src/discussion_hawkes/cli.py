"""Command-line front end for simulation, fitting, evidence, and scoring.

Every stochastic subcommand requires an explicit --seed, and each run
writes a manifest JSON next to its primary output recording the flags,
seed, package version, and wall time. Reruns with identical flags and
seed produce byte-identical primary outputs regardless of --threads.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import assess as assess_mod
from .evidence import bridge_logml
from .harmonics import HarmonicSpec
from .immigrants import fit_immigrants
from .inference import (
    PosteriorSamples,
    default_harmonic,
    posterior_from_csv,
    posterior_to_csv,
    sample_posterior,
)
from .likelihood import ModelParams, params_from_json
from .simulate import cluster_rng, propagate_cluster
from .trees import (
    Cluster,
    ClusterSet,
    build_clusters,
    cluster_set_to_csv,
    hourly_counts,
    parse_nodes,
)

VERSION = "0.1.0"
VARIANTS = ("M1", "M2", "M3", "M4", "M5")


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("DISCUSSION_HAWKES_THREADS", "1"))


def _read_clusters(path: str, window: float) -> ClusterSet:
    with open(path, encoding="utf-8") as fh:
        nodes = parse_nodes(fh.read())
    return build_clusters(nodes, window_hours=window)


def _read_posterior(path: str, model: str, K: int) -> PosteriorSamples:
    harmonic = default_harmonic(model, K)
    return posterior_from_csv(Path(path).read_text(encoding="utf-8"), model, harmonic)


def _write(path: str, text: str) -> None:
    Path(path).write_bytes(text.encode("utf-8"))


def _manifest(out: str, args, t0: float) -> None:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {
        "subcommand": args.subcommand,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "version": VERSION,
        "wall_time_s": round(time.time() - t0, 3),
    }
    _write(out + ".manifest.json", json.dumps(doc, indent=2, default=str) + "\n")


def _json_report(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _map_indexed(fn, n: int, threads: int) -> list:
    """Apply fn(i) for i in range(n), results in index order regardless of pool size."""
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


# ---------------------------------------------------------------- subcommands


def cmd_simulate(args) -> None:
    p = params_from_json(Path(args.params).read_text(encoding="utf-8"))
    seeds = np.loadtxt(args.seeds, delimiter=",", skiprows=1, usecols=0, ndmin=1)

    def one(i: int) -> Cluster:
        rng = cluster_rng(args.seed, i)
        t0 = float(seeds[i])
        root = Cluster(np.array([t0]), np.array([0]), window_end=t0 + args.horizon)
        return propagate_cluster(rng, p, root, t0, t0 + args.horizon, args.max_points)

    clusters = _map_indexed(one, seeds.size, _threads(args))
    _write(args.out, cluster_set_to_csv(ClusterSet(tuple(clusters))))


def cmd_fit(args) -> None:
    data = _read_clusters(args.data, args.window)
    samples = sample_posterior(
        data,
        args.model,
        chains=args.chains,
        warmup=args.warmup,
        iters=args.samples,
        seed=args.seed,
        K=args.K,
        thin=args.thin,
    )
    _write(args.out, posterior_to_csv(samples))
    if samples.warning:
        print(
            "warning: sampler diagnostics exceed thresholds "
            f"(max R-hat {np.max(samples.rhat):.3f}, min ESS {np.min(samples.ess):.0f})",
            file=sys.stderr,
        )


def cmd_fit_immigrants(args) -> None:
    data = _read_clusters(args.data, args.window)
    arrivals = np.sort([float(c.times[0]) for c in data.clusters])
    a0 = float(np.ceil(arrivals.max() + 1e-9))
    samples = fit_immigrants(
        arrivals,
        a0,
        K=args.K,
        chains=args.chains,
        warmup=args.warmup,
        iters=args.samples,
        seed=args.seed,
        thin=args.thin,
    )
    _write(args.out, posterior_to_csv(samples))


def cmd_evidence(args) -> None:
    data = _read_clusters(args.data, args.window)
    samples = _read_posterior(args.posterior, args.model, args.K)
    est = bridge_logml(samples, data, seed=args.seed)
    _write(
        args.out,
        _json_report(
            {
                "model": args.model,
                "log_ml": est.log_ml,
                "coefficient_of_variation": est.coefficient_of_variation,
                "iterations_used": est.iterations_used,
                "converged": est.converged,
            }
        ),
    )


def cmd_predict(args) -> None:
    data = _read_clusters(args.data, args.window)
    samples = _read_posterior(args.posterior, args.model, args.K)
    threads = _threads(args)

    def one(i: int) -> np.ndarray:
        return assess_mod.predict_sizes(
            samples, data.clusters[i], args.s, args.horizon, args.R,
            seed=(args.seed << 20) + i,
        )

    preds = _map_indexed(one, len(data.clusters), threads)
    lines = ["cluster,truth,mean,sd,q05,q50,q95"]
    for i, sizes in enumerate(preds):
        q = np.quantile(sizes, [0.05, 0.5, 0.95])
        lines.append(
            f"{i},{data.clusters[i].n},{float(sizes.mean())!r},"
            f"{float(sizes.std(ddof=1))!r},{float(q[0])!r},{float(q[1])!r},{float(q[2])!r}"
        )
    _write(args.out, "\n".join(lines) + "\n")


def _assess_lpd(args, test, samples) -> dict:
    rep = assess_mod.lpd(samples, test, args.R)
    return {
        "metric": "lpd",
        "aggregate": rep.aggregate,
        "standard_error": rep.standard_error,
        "per_cluster": rep.per_cluster.tolist(),
    }


def _assess_crps(args, test, samples) -> dict:
    train = _read_clusters(args.train, args.window)
    threads = _threads(args)

    def one(i: int) -> np.ndarray:
        return assess_mod.predict_sizes(
            samples, test.clusters[i], args.s, args.horizon, args.R,
            seed=(args.seed << 20) + i,
        )

    preds = _map_indexed(one, len(test.clusters), threads)
    truths = np.array([c.n for c in test.clusters], dtype=float)
    rep = assess_mod.crps_report(preds, truths)
    skill = assess_mod.crpss(rep, np.array([c.n for c in train.clusters], float), truths)
    return {
        "metric": "crps",
        "aggregate": rep.aggregate,
        "standard_error": rep.standard_error,
        "crpss": skill,
        "per_cluster": rep.per_cluster.tolist(),
    }


def _assess_ks(args, test, samples) -> dict:
    train = _read_clusters(args.train, args.window)
    train_sizes = np.array([c.n for c in train.clusters])
    rows = samples.thin(min(args.R, samples.n_draws))
    threads = _threads(args)

    def one(i: int) -> int:
        c = train.clusters[i]
        p = samples.params_at(rows[i % len(rows)])
        rng = cluster_rng(args.seed, i)
        t0 = float(c.times[0])
        root = Cluster(np.array([t0]), np.array([0]), window_end=c.window_end)
        sim = propagate_cluster(rng, p, root, t0, c.window_end, 100_000)
        return sim.n

    sim_sizes = np.array(_map_indexed(one, len(train.clusters), threads))
    stats = assess_mod.bootstrap_ks(
        train_sizes, {args.model: sim_sizes}, B=args.B, seed=args.seed
    )[args.model]
    return {
        "metric": "ks",
        "statistic": assess_mod.ks_statistic(train_sizes, sim_sizes),
        "bootstrap_mean": float(stats.mean()),
        "bootstrap_q05": float(np.quantile(stats, 0.05)),
        "bootstrap_q95": float(np.quantile(stats, 0.95)),
        "B": args.B,
    }


def _assess_rquantile(args, test, samples) -> dict:
    if "psi[1]" not in samples.names:
        raise ValueError("rquantile needs a model with a dispersion parameter")
    rows = samples.thin(min(args.R, samples.n_draws))
    i_mu = samples.names.index("mu[1]")
    i_psi = samples.names.index("psi[1]")
    r = np.array(
        [
            assess_mod.transmission_proportion(row[i_mu], row[i_psi], args.alpha_q)
            for row in rows
        ]
    )
    return {
        "metric": "rquantile",
        "alpha_q": args.alpha_q,
        "mean": float(r.mean()),
        "q025": float(np.quantile(r, 0.025)),
        "q975": float(np.quantile(r, 0.975)),
    }


def cmd_assess(args) -> None:
    test = _read_clusters(args.data, args.window)
    samples = _read_posterior(args.posterior, args.model, args.K)
    if args.metric in ("crps", "ks") and not args.train:
        raise ValueError(f"--train is required for metric {args.metric!r}")
    handler = {
        "lpd": _assess_lpd,
        "crps": _assess_crps,
        "ks": _assess_ks,
        "rquantile": _assess_rquantile,
    }[args.metric]
    _write(args.out, _json_report(handler(args, test, samples)))


def cmd_spectrum(args) -> None:
    data = _read_clusters(args.data, args.window)
    counts, start = hourly_counts(data)
    n = (counts.size // 24) * 24
    if n < 48:
        raise ValueError("need at least two full days of data")
    table = assess_mod.periodogram(counts[:n])
    lines = ["frequency_cycles_per_day,power"]
    lines += [f"{float(f)!r},{float(p)!r}" for f, p in table]
    _write(args.out, "\n".join(lines) + "\n")


# -------------------------------------------------------------------- parser


def _add_common(sp, seed=True, window=True, threads=True):
    if seed:
        sp.add_argument("--seed", type=int, required=True, help="RNG seed (required)")
    if window:
        sp.add_argument("--window", type=float, default=48.0,
                        help="observation window per cluster, hours")
    if threads:
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (results independent of this)")
    sp.add_argument("--out", required=True, help="primary output path")


def _add_model(sp):
    sp.add_argument("--model", choices=VARIANTS, required=True)
    sp.add_argument("--K", type=int, default=0, help="number of harmonics")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="discussion-hawkes",
        description="Branching-process models of discussion trees",
    )
    sub = ap.add_subparsers(dest="subcommand", required=True)

    sp = sub.add_parser("simulate", help="simulate clusters from parameters")
    sp.add_argument("--params", required=True, help="model parameters JSON")
    sp.add_argument("--seeds", required=True, help="CSV of immigrant times (header 'time')")
    sp.add_argument("--horizon", type=float, default=48.0)
    sp.add_argument("--max-points", type=int, default=100_000)
    _add_common(sp, window=False)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="sample the offspring-model posterior")
    sp.add_argument("--data", required=True)
    _add_model(sp)
    sp.add_argument("--chains", type=int, default=4)
    sp.add_argument("--warmup", type=int, default=1500)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--thin", type=int, default=20)
    _add_common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("fit-immigrants", help="fit the arrival-rate model")
    sp.add_argument("--data", required=True)
    sp.add_argument("--K", type=int, default=2)
    sp.add_argument("--chains", type=int, default=4)
    sp.add_argument("--warmup", type=int, default=1500)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--thin", type=int, default=20)
    _add_common(sp)
    sp.set_defaults(func=cmd_fit_immigrants)

    sp = sub.add_parser("evidence", help="bridge-sampling marginal likelihood")
    sp.add_argument("--data", required=True)
    sp.add_argument("--posterior", required=True)
    _add_model(sp)
    _add_common(sp)
    sp.set_defaults(func=cmd_evidence)

    sp = sub.add_parser("predict", help="final-size predictions per cluster")
    sp.add_argument("--data", required=True)
    sp.add_argument("--posterior", required=True)
    _add_model(sp)
    sp.add_argument("--s", type=float, default=0.0, help="learning window, hours")
    sp.add_argument("--horizon", type=float, default=48.0)
    sp.add_argument("--R", type=int, default=100)
    _add_common(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("assess", help="predictive scoring and diagnostics")
    sp.add_argument("--metric", choices=("lpd", "crps", "ks", "rquantile"), required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--train", default=None)
    sp.add_argument("--posterior", required=True)
    _add_model(sp)
    sp.add_argument("--R", type=int, default=100)
    sp.add_argument("--s", type=float, default=0.0)
    sp.add_argument("--horizon", type=float, default=48.0)
    sp.add_argument("--B", type=int, default=1000)
    sp.add_argument("--alpha-q", type=float, default=0.2)
    _add_common(sp)
    sp.set_defaults(func=cmd_assess)

    sp = sub.add_parser("spectrum", help="periodogram of hourly counts")
    sp.add_argument("--data", required=True)
    _add_common(sp, seed=False)
    sp.set_defaults(func=cmd_spectrum)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    K = getattr(args, "K", 0)
    model = getattr(args, "model", None)
    if model in ("M1", "M2") and K:
        ap.error(f"--model {model} does not admit harmonic terms (--K must be 0)")
    t0 = time.time()
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _manifest(args.out, args, t0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
