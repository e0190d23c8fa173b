"""Command-line surface.

Subcommands:
    gen-data   synthesize a biased rotated-digit variant from IDX files
    stats      domain/class statistics of a dataset with one domain held out
    oracle     run the brute-force theorem certification suite
    train      one fit from a config file (first method/gamma/seed)
    sweep      full (method x gamma x seed) experiment from a config file
    report     summarize a finished run directory; optional sensitivity file

Exit code 0 on success, 2 when an acceptance-style assertion fails.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import datakit, harness, oracle
from .infostats import STATS_REPORT_HEADER, empirical_joint, stats_report_row


def _cmd_gen_data(args) -> int:
    mnist_dir = Path(args.mnist)
    images = labels = None
    for img_name in ("train-images-idx3-ubyte", "train-images.idx3-ubyte"):
        for suffix in ("", ".gz"):
            cand = mnist_dir / (img_name + suffix)
            if cand.exists():
                images = cand
    for lab_name in ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"):
        for suffix in ("", ".gz"):
            cand = mnist_dir / (lab_name + suffix)
            if cand.exists():
                labels = cand
    if images is None or labels is None:
        print(f"error: no IDX train files under {mnist_dir}", file=sys.stderr)
        return 2
    mnist = datakit.ingest_mnist(images, labels)
    pool = datakit.select_base_pool(mnist, per_class=100, seed=args.seed)
    datasets = datakit.generate_bmnistr(args.variant, pool, seed=args.seed)
    out = datakit.save_dataset(datasets, args.out, variant=f"BMNISTR-{args.variant}")
    total = sum(len(ds.examples) for ds in datasets)
    print(f"wrote {len(datasets)} domains, {total} examples to {out}")
    return 0


def _cmd_stats(args) -> int:
    datasets, variant = datakit.load_dataset(args.data)
    sources = [ex for ds in datasets
               if not (ds.name == args.target or ds.domain_id == args.target)
               for ex in ds.examples]
    if len(sources) == sum(len(ds.examples) for ds in datasets):
        print(f"error: target {args.target!r} not found", file=sys.stderr)
        return 2
    joint = empirical_joint(sources)
    print(STATS_REPORT_HEADER)
    print(stats_report_row(variant, str(args.target), joint))
    return 0


def _cmd_oracle(args) -> int:
    if args.suite != "default":
        print(f"error: unknown suite {args.suite!r}", file=sys.stderr)
        return 2
    result = oracle.run_suite(seed=args.seed, n_random=args.random_instances)
    text = oracle.certificate_text(result)
    if args.out:
        Path(args.out).write_text(text)
        print(f"certificate written to {args.out}")
    else:
        print(text, end="")
    print(f"suite {'PASS' if result.ok else 'FAIL'} "
          f"({len(result.verdicts)} instances, {result.elapsed_seconds:.2f}s)")
    return 0 if result.ok else 2


def _cmd_train(args) -> int:
    cfg = harness.parse_experiment_config(args.config)
    cfg = replace(cfg, methods=(cfg.methods[0],), gammas=(cfg.gammas[0],),
                  seeds=(cfg.seeds[0],))
    results = harness.run_experiment(cfg)
    r = results[0]
    print(f"method={r.method} gamma={r.gamma:g} seed={r.seed} "
          f"best_val_acc={r.best_val_acc:.4f} target_acc={r.target_acc:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = harness.parse_experiment_config(args.config)
    results = harness.run_experiment(cfg)
    chosen = harness.select_gammas(results)
    for method in cfg.methods:
        sel = [r for r in results if r.method == method and r.selected]
        accs = [r.target_acc for r in sel]
        mean = sum(accs) / len(accs)
        print(f"{method}: selected gamma={chosen[method]:g} "
              f"mean target acc={100 * mean:.2f} over {len(accs)} seeds")
    print(f"results written to {Path(cfg.out_dir) / 'results.csv'}")
    return 0


def _cmd_report(args) -> int:
    results = harness.read_results_csv(Path(args.runs) / "results.csv")
    methods = sorted({r.method for r in results})
    print("method,gamma,n_seeds,mean_target_acc,stderr")
    for method in methods:
        sel = [r for r in results if r.method == method and r.selected]
        accs = [100 * r.target_acc for r in sel]
        n = len(accs)
        mean = sum(accs) / n
        sd = (sum((a - mean) ** 2 for a in accs) / (n - 1)) ** 0.5 if n > 1 else 0.0
        print(f"{method},{sel[0].gamma:g},{n},{mean:.2f},{sd / n**0.5:.2f}")
    if args.fig3:
        text = harness.emit_gamma_sensitivity(results)
        Path(args.fig3).write_text(text)
        print(f"sensitivity plot data written to {args.fig3}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aflaclab", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a biased rotated-digit variant")
    g.add_argument("--variant", type=int, choices=(1, 2, 3), required=True)
    g.add_argument("--mnist", required=True, help="directory with IDX train files")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gen_data)

    s = sub.add_parser("stats", help="domain/class statistics excluding one domain")
    s.add_argument("--data", required=True)
    s.add_argument("--target", default="M0")
    s.set_defaults(func=_cmd_stats)

    o = sub.add_parser("oracle", help="run the theorem certification suite")
    o.add_argument("--suite", default="default")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--random-instances", type=int, default=50)
    o.add_argument("--out", default="")
    o.set_defaults(func=_cmd_oracle)

    t = sub.add_parser("train", help="single fit from a config file")
    t.add_argument("--config", required=True)
    t.set_defaults(func=_cmd_train)

    w = sub.add_parser("sweep", help="full experiment from a config file")
    w.add_argument("--config", required=True)
    w.set_defaults(func=_cmd_sweep)

    r = sub.add_parser("report", help="summarize a finished run directory")
    r.add_argument("--runs", required=True)
    r.add_argument("--fig3", default="", help="write sensitivity plot data here")
    r.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
