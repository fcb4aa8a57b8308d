"""Command-line interface.

Subcommands: generate, mask, fit, predict, eval, export-graph, run.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Seeds are always explicit or logged to stdout.
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys
from pathlib import Path

import numpy as np

from .dataio import load_edges, load_metadata, write_edges, write_metadata
from .errors import DataError, NumericalError
from .experiment import RunConfig, derive_seed, run_experiment
from .inference import fit_chain, load_samples, save_samples
from .model import (HyperParams, Metadata, SynthMixedConfig, SynthSingleConfig,
                    PRESENT, simulate_network, synth_mixed, synth_single)
from .predict import (Mask, PredictionTable, affinity_graph, auc, make_mask,
                      predict_links, sample_membership, variational_distance,
                      write_auc_report)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _seed_or_log(seed):
    if seed is None:
        seed = secrets.randbelow(2 ** 31)
        print(f"seed: {seed} (drawn from entropy; pass --seed to reproduce)")
    return seed


def _hyper_from_args(args) -> HyperParams:
    kwargs = {}
    for name in ("a_F", "b_F", "a_S", "b_S", "a_V", "b_V", "gamma_a", "gamma_b"):
        val = getattr(args, name.lower(), None)
        if val is not None:
            kwargs[name] = val
    return HyperParams(**kwargs)


def _add_hyper_flags(p):
    for name in ("a_F", "b_F", "a_S", "b_S", "a_V", "b_V", "gamma_a", "gamma_b"):
        p.add_argument(f"--{name.lower().replace('_', '-')}", dest=name.lower(),
                       type=float, default=None, help=f"hyperparameter {name}")


def cmd_generate(args) -> int:
    seed = _seed_or_log(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.preset == "synth-single":
        cfg = SynthSingleConfig(
            n_blocks=args.blocks or 5, block_size=args.block_size or 16,
            p_within=args.p_within if args.p_within is not None else 0.9,
            p_between=args.p_between if args.p_between is not None else 0.02)
        data, labels = synth_single(seed, cfg)
        write_edges(out / "edges.csv", data)
        with open(out / "labels.json", "w") as fh:
            json.dump(labels.tolist(), fh)
        with open(out / "generator.json", "w") as fh:
            json.dump({"preset": "synth-single", "seed": seed,
                       **cfg.__dict__}, fh, indent=2)
    elif args.preset == "synth-mixed":
        cfg = SynthMixedConfig(
            n_nodes=args.nodes or 80, n_blocks=args.blocks or 4,
            alpha=args.alpha if args.alpha is not None else 0.25,
            w_within=args.p_within if args.p_within is not None else 0.9,
            w_between=args.p_between if args.p_between is not None else 0.02)
        data, memberships = synth_mixed(seed, cfg)
        write_edges(out / "edges.csv", data)
        with open(out / "memberships.json", "w") as fh:
            json.dump(memberships.tolist(), fh)
        with open(out / "generator.json", "w") as fh:
            json.dump({"preset": "synth-mixed", "seed": seed,
                       **cfg.__dict__}, fh, indent=2)
    else:  # prior
        n = args.nodes or 40
        phi = Metadata.intercept_only(n)
        if args.covariates:
            rng = np.random.default_rng(derive_seed(seed, 99))
            cov = rng.standard_normal((args.covariates, n))
            phi = Metadata(np.vstack([np.ones((1, n)), cov]),
                           feature_names=["intercept"] + [f"x{c}" for c in range(args.covariates)])
            write_metadata(out / "metadata.csv", [str(i) for i in range(n)],
                           {f"x{c}": cov[c] for c in range(args.covariates)})
        data, record = simulate_network(_hyper_from_args(args), phi,
                                        args.relations or 1, seed)
        write_edges(out / "edges.csv", data)
        record.to_jsonl(out / "latents.jsonl")
        with open(out / "generator.json", "w") as fh:
            json.dump({"preset": "prior", "seed": seed, "nodes": n,
                       "relations": args.relations or 1,
                       "covariates": args.covariates}, fh, indent=2)
    print(f"wrote {out}")
    return 0


def cmd_mask(args) -> int:
    seed = _seed_or_log(args.seed)
    data, node_ids, relation_ids = load_edges(args.edges)
    train, mask = make_mask(data, args.probability, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_edges(out / "train.csv", train, node_ids, relation_ids, default="unobserved")
    mask.to_json(out / "mask.json")
    print(f"hid {mask.triples.shape[0]} of {data.n_observed} observed entries")
    return 0


def cmd_fit(args) -> int:
    seed = _seed_or_log(args.seed)
    data, node_ids, _ = load_edges(args.edges)
    if args.metadata:
        phi = load_metadata(args.metadata, node_ids, standardize=not args.no_standardize)
    else:
        phi = Metadata.intercept_only(data.N)
    hyper = _hyper_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = []
    for ci in range(args.chains):
        chain_seed = derive_seed(seed, 1, 0, ci)
        res = fit_chain(
            data, phi, hyper, chain_seed, args.sweeps,
            burn_in=args.burn_in, max_samples=args.max_samples,
            truncation=args.truncation,
            resample_lambda_v=not args.freeze_lambda_v,
            per_coordinate_v=args.per_coordinate_v,
            trace_path=out / f"chain{ci:02d}.trace.jsonl",
            checkpoint_path=out / f"chain{ci:02d}.ckpt.npz",
            checkpoint_every=args.checkpoint_every)
        save_samples(res.samples, out / f"chain{ci:02d}.samples.npz")
        stats.append((ci, res.mean_log_joint, res.state.K_occupied))
        print(f"chain {ci}: mean log joint {res.mean_log_joint:.2f}, "
              f"K_occupied {res.state.K_occupied}")
    best = max(stats, key=lambda t: t[1])[0]
    with open(out / "fit_summary.json", "w") as fh:
        json.dump({"seed": seed, "best_chain": best,
                   "mean_log_joint": {str(c): lj for c, lj, _ in stats}}, fh, indent=2)
    print(f"best chain by mean log joint: {best}")
    return 0


def _load_queries(args):
    if args.mask:
        return Mask.from_json(args.mask).triples
    queries = []
    with open(args.queries) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line == "i,j,m":
                continue
            a, b, c = line.split(",")
            queries.append((int(a), int(b), int(c)))
    return np.asarray(queries, dtype=np.int64)


def cmd_predict(args) -> int:
    samples = []
    for path in args.samples:
        samples.extend(load_samples(path))
    queries = _load_queries(args)
    y_true = None
    if args.edges:
        data, _, _ = load_edges(args.edges)
        y_true = (data.obs[queries[:, 0], queries[:, 1], queries[:, 2]]
                  == PRESENT).astype(np.int64)
    table = predict_links(samples, queries, y_true=y_true)
    table.to_csv(args.out)
    print(f"wrote {len(table)} predictions to {args.out}")
    return 0


def cmd_eval(args) -> int:
    table = PredictionTable.from_csv(args.predictions)
    score = auc(table)
    if args.out:
        write_auc_report(args.out, [score])
    print(f"auc = {score:.6f}")
    return 0


def cmd_export_graph(args) -> int:
    samples = load_samples(args.samples)
    if not samples:
        raise DataError("samples file is empty")
    kmax = max(s.v.shape[0] for s in samples)
    n = samples[0].v.shape[1]
    pi_mean = np.zeros((kmax, n))
    tail_mean = np.zeros(n)
    for smp in samples:
        pi, tail = sample_membership(smp)
        pi_mean[:pi.shape[0]] += pi
        tail_mean += tail
    pi_mean /= len(samples)
    tail_mean /= len(samples)
    D = variational_distance(pi_mean, tail_mean)
    names = None
    if args.node_ids:
        with open(args.node_ids) as fh:
            names = json.load(fh)
    dot = affinity_graph(D, threshold=args.threshold,
                         communities=np.argmax(pi_mean, axis=0), names=names)
    with open(args.out, "w") as fh:
        fh.write(dot)
    print(f"wrote {args.out}")
    return 0


def cmd_run(args) -> int:
    if args.config:
        config = RunConfig.from_json(args.config)
    else:
        if not args.edges:
            raise DataError("run needs --config or --edges")
        config = RunConfig(edges=args.edges, out_dir=args.out or "run",
                           metadata=args.metadata)
    for name in ("out_dir", "sweeps", "chains", "n_masks", "seed", "workers",
                 "mask_probability", "chain_selection"):
        arg = getattr(args, name if name != "out_dir" else "out")
        if arg is not None:
            setattr(config, name, arg)
    out = run_experiment(config)
    print(f"run complete: {out / 'auc_summary.txt'}")
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="metablock",
                description="Mixed-membership relational blockmodel with metadata "
                            "regression and an unbounded community set")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--preset", choices=["synth-single", "synth-mixed", "prior"],
                   required=True)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--nodes", type=int, default=None)
    g.add_argument("--blocks", type=int, default=None)
    g.add_argument("--block-size", type=int, default=None, dest="block_size")
    g.add_argument("--alpha", type=float, default=None)
    g.add_argument("--p-within", type=float, default=None, dest="p_within")
    g.add_argument("--p-between", type=float, default=None, dest="p_between")
    g.add_argument("--relations", type=int, default=None)
    g.add_argument("--covariates", type=int, default=0,
                   help="prior preset: number of standard-normal covariates")
    _add_hyper_flags(g)
    g.set_defaults(func=cmd_generate)

    mk = sub.add_parser("mask", help="hide observed entries at random")
    mk.add_argument("--edges", required=True)
    mk.add_argument("--probability", type=float, default=0.5)
    mk.add_argument("--seed", type=int, default=None)
    mk.add_argument("--out", required=True)
    mk.set_defaults(func=cmd_mask)

    f = sub.add_parser("fit", help="run MCMC chains on a dataset")
    f.add_argument("--edges", required=True)
    f.add_argument("--metadata", default=None)
    f.add_argument("--sweeps", type=int, default=2000)
    f.add_argument("--chains", type=int, default=3)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--burn-in", type=float, default=0.5, dest="burn_in")
    f.add_argument("--max-samples", type=int, default=200, dest="max_samples")
    f.add_argument("--truncation", type=int, default=None)
    f.add_argument("--freeze-lambda-v", action="store_true", dest="freeze_lambda_v")
    f.add_argument("--per-coordinate-v", action="store_true", dest="per_coordinate_v")
    f.add_argument("--no-standardize", action="store_true", dest="no_standardize")
    f.add_argument("--checkpoint-every", type=int, default=0, dest="checkpoint_every")
    f.add_argument("--out", required=True)
    _add_hyper_flags(f)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="posterior-predictive link probabilities")
    pr.add_argument("--samples", nargs="+", required=True)
    pr.add_argument("--mask", default=None, help="mask.json with the query triples")
    pr.add_argument("--queries", default=None, help="CSV of i,j,m query rows")
    pr.add_argument("--edges", default=None, help="original data, to attach labels")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("eval", help="AUC of a labeled prediction table")
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("export-graph", help="DOT affinity graph from samples")
    ex.add_argument("--samples", required=True)
    ex.add_argument("--threshold", type=float, default=0.5)
    ex.add_argument("--node-ids", default=None, dest="node_ids")
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export_graph)

    r = sub.add_parser("run", help="full multi-mask multi-chain experiment")
    r.add_argument("--config", default=None)
    r.add_argument("--edges", default=None)
    r.add_argument("--metadata", default=None)
    r.add_argument("--out", default=None)
    r.add_argument("--sweeps", type=int, default=None)
    r.add_argument("--chains", type=int, default=None)
    r.add_argument("--n-masks", type=int, default=None, dest="n_masks")
    r.add_argument("--mask-probability", type=float, default=None, dest="mask_probability")
    r.add_argument("--chain-selection", choices=["best-log-joint", "pooled"],
                   default=None, dest="chain_selection")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--workers", type=int, default=None)
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "mask", None) is None and getattr(args, "queries", None) is None \
            and args.command == "predict":
        parser.error("predict needs --mask or --queries")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
