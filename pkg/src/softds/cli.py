"""Command-line interface.

Subcommands: ``aggregate`` (fit/apply an aggregation method to a
prediction manifest), ``evaluate`` (metrics against ground truth and/or
OOD AUROC), ``simulate`` (write a synthetic dataset), ``online`` (stream
per-item posteriors under a frozen model), ``explain`` (decompose one
item's posterior).

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numeric
failure.  Diagnostics go to stderr; stdout and output files carry payload
only.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .baselines import ds_em, ensemble_average, majority_vote
from .data import (
    ConfusionTensor,
    FormatError,
    PosteriorMatrix,
    SdsConfig,
    harden,
    load_ground_truth,
    load_posterior,
    load_predictions,
    save_confusion_tensor,
    save_posterior,
    save_predictions,
    save_ground_truth,
)
from .metrics import auroc, evaluate_posterior, ood_score, reliability_bins, true_confusion
from .sds import (
    NumericError,
    SdsModel,
    e_step_raw,
    explain,
    fit,
    load_model,
    online_infer,
    save_model,
)
from .synth import GenerativeSpec, bayes_posterior, sample

__all__ = ["main", "build_parser"]


def _log(msg):
    print(msg, file=sys.stderr)


def _resolve_threads(value):
    if value is not None:
        threads = value
    elif os.environ.get("SOFTDS_THREADS"):
        try:
            threads = int(os.environ["SOFTDS_THREADS"])
        except ValueError:
            raise FormatError("SOFTDS_THREADS must be an integer") from None
    else:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise FormatError("thread count must be >= 1")
    return threads


def _load_config(args):
    config = SdsConfig.from_json(args.config) if args.config else SdsConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    return config.validate()


def _derived_path(out_path, suffix):
    base, _ = os.path.splitext(out_path)
    return base + suffix


def _cmd_aggregate(args):
    threads = _resolve_threads(args.threads)
    config = _load_config(args)
    preds = load_predictions(args.manifest, prob_floor=config.prob_floor)
    _log(f"loaded {preds.n_items} items x {preds.n_members} members x "
         f"{preds.n_classes} classes")

    if args.method == "ea":
        post = ensemble_average(preds)
    elif args.method == "mv":
        post = majority_vote(harden(preds))
        post = PosteriorMatrix(post.rows, list(preds.item_ids))
    elif args.method == "ds":
        ds_model, post = ds_em(harden(preds), config.em_iterations,
                               config.ds_init_smoothing)
        post = PosteriorMatrix(post.rows, list(preds.item_ids))
        if args.model_out:
            clamped = np.maximum(ds_model.confusion, config.pi_floor)
            save_model(SdsModel(ConfusionTensor(clamped, config.pi_floor),
                                ds_model.prior), args.model_out)
    else:  # sds
        model, post, trace = fit(preds, config, threads=threads)
        model_path = args.model_out or _derived_path(args.out, ".model.json")
        trace_path = args.trace_out or _derived_path(args.out, ".trace.csv")
        save_model(model, model_path)
        trace.save_csv(trace_path)
        _log(f"model -> {model_path}; trace -> {trace_path} "
             f"({len(trace)} iterations, final q={trace.q[-1]:.6g})")

    if not np.all(np.isfinite(post.rows)):
        raise NumericError("aggregated posterior contains non-finite values")
    save_posterior(post, args.out)
    _log(f"posterior -> {args.out}")
    return 0


def _cmd_evaluate(args):
    report = {}
    if args.posterior and args.truth:
        post = load_posterior(args.posterior)
        truth = load_ground_truth(args.truth)
        if list(post.item_ids) != list(truth.item_ids):
            raise FormatError(
                f"item ids of {args.posterior} and {args.truth} do not match"
            )
        report.update(evaluate_posterior(post, truth, n_bins=args.bins).to_dict())
        if args.ece_bins_out:
            conf, acc, count = reliability_bins(post, truth, args.bins)
            with open(args.ece_bins_out, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["bin", "conf", "acc", "count"])
                for b in range(args.bins):
                    writer.writerow([b, repr(float(conf[b])), repr(float(acc[b])),
                                     int(count[b])])
        if args.confusion_out:
            if args.manifest:
                source = load_predictions(args.manifest)
                if list(source.item_ids) != list(truth.item_ids):
                    raise FormatError(
                        f"item ids of {args.manifest} and {args.truth} "
                        f"do not match"
                    )
            else:
                source = post
            save_confusion_tensor(true_confusion(source, truth), args.confusion_out)
    elif args.posterior or args.truth:
        raise FormatError("--posterior and --truth must be given together")

    if args.ood_in and args.ood_out:
        post_in = load_posterior(args.ood_in)
        post_out = load_posterior(args.ood_out)
        scores_in = [ood_score(row, args.ood_score) for row in post_in.rows]
        scores_out = [ood_score(row, args.ood_score) for row in post_out.rows]
        report["auroc"] = auroc(scores_in, scores_out)
        report["ood_score"] = args.ood_score
    elif args.ood_in or args.ood_out:
        raise FormatError("--ood-in and --ood-out must be given together")

    if not report:
        raise FormatError(
            "nothing to evaluate: pass --posterior/--truth and/or --ood-in/--ood-out"
        )
    payload = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0


def _cmd_simulate(args):
    spec = GenerativeSpec.from_json(args.spec)
    if args.seed is not None:
        spec = GenerativeSpec(spec.n_items, spec.n_members, spec.n_classes,
                              spec.nu_true, spec.pi_true, args.seed)
    preds, truth = sample(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    truth_name = "truth.csv"
    save_ground_truth(truth, os.path.join(args.out_dir, truth_name))
    manifest_path = save_predictions(preds, args.out_dir,
                                     labels_filename=truth_name)
    if args.bayes:
        save_posterior(bayes_posterior(spec, preds),
                       os.path.join(args.out_dir, "bayes_posterior.csv"))
    _log(f"wrote {preds.n_items} items to {args.out_dir} "
         f"(manifest: {manifest_path})")
    return 0


def _online_header(n_members, n_classes):
    return ["item_id"] + [f"m{k}_p{j}"
                          for k in range(n_members) for j in range(n_classes)]


def _cmd_online(args):
    model = load_model(args.model)
    k, j = model.n_members, model.n_classes
    expected = _online_header(k, j)

    fin = sys.stdin if args.input in (None, "-") else open(args.input, newline="",
                                                           encoding="utf-8")
    fout = sys.stdout if args.out in (None, "-") else open(args.out, "w",
                                                           newline="",
                                                           encoding="utf-8")
    failures = 0
    wrote_header = False
    try:
        reader = csv.reader(fin)
        writer = csv.writer(fout)
        for line_no, row in enumerate(reader, start=1):
            if line_no == 1:
                if row != expected:
                    _log(f"line 1: bad header, expected "
                         f"item_id,m0_p0,...,m{k - 1}_p{j - 1}")
                    failures += 1
                continue
            if not wrote_header:
                writer.writerow(["item_id"] + [f"p_{c}" for c in range(j)])
                fout.flush()
                wrote_header = True
            try:
                if len(row) != 1 + k * j:
                    raise FormatError(
                        f"expected {1 + k * j} columns, found {len(row)}"
                    )
                values = np.array([float(v) for v in row[1:]],
                                  dtype=np.float64).reshape(k, j)
                posterior = online_infer(values, model)
            except (FormatError, ValueError) as exc:
                _log(f"line {line_no}: skipped ({exc})")
                failures += 1
                continue
            writer.writerow([row[0]] + [repr(float(v)) for v in posterior])
            fout.flush()
    finally:
        if fin is not sys.stdin:
            fin.close()
        if fout is not sys.stdout:
            fout.close()
    return 1 if failures else 0


def _cmd_explain(args):
    model = load_model(args.model)
    preds = load_predictions(args.manifest)
    try:
        index = preds.item_ids.index(args.item)
    except ValueError:
        raise FormatError(f"unknown item id {args.item!r}") from None
    breakdown = explain(preds, model, index)
    # sanity: the decomposition must reproduce the batch posterior
    batch_row = e_step_raw(preds, model).rows[index]
    if np.max(np.abs(batch_row - breakdown.posterior)) > 1e-8:
        raise NumericError("explanation does not reproduce the posterior")
    payload = json.dumps(breakdown.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="softds",
        description="Aggregate soft classifier predictions into calibrated "
                    "per-item posteriors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    agg = sub.add_parser("aggregate", help="aggregate a prediction manifest")
    agg.add_argument("--manifest", required=True, help="prediction manifest JSON")
    agg.add_argument("--method", choices=["sds", "ea", "mv", "ds"], default="sds")
    agg.add_argument("--config", help="SdsConfig JSON (defaults apply otherwise)")
    agg.add_argument("--out", required=True, help="posterior CSV to write")
    agg.add_argument("--model-out", help="model JSON (sds/ds; default derives "
                                         "from --out for sds)")
    agg.add_argument("--trace-out", help="fit trace CSV (sds; default derives "
                                         "from --out)")
    agg.add_argument("--threads", type=int, default=None,
                     help="worker cap (default: SOFTDS_THREADS or all cores)")
    agg.add_argument("--seed", type=int, default=None, help="config seed override")
    agg.set_defaults(func=_cmd_aggregate)

    ev = sub.add_parser("evaluate", help="score a posterior against ground truth")
    ev.add_argument("--posterior", help="posterior CSV")
    ev.add_argument("--truth", help="ground-truth CSV")
    ev.add_argument("--bins", type=int, default=300, help="ECE bin count")
    ev.add_argument("--ece-bins-out", help="per-bin (conf, acc, count) CSV")
    ev.add_argument("--confusion-out", help="ground-truth confusion JSON")
    ev.add_argument("--manifest", help="manifest for per-member confusion")
    ev.add_argument("--ood-in", help="posterior CSV of in-distribution items")
    ev.add_argument("--ood-out", help="posterior CSV of out-of-distribution items")
    ev.add_argument("--ood-score", choices=["max_prob", "entropy"],
                    default="max_prob")
    ev.add_argument("--out", help="report JSON path (default: stdout)")
    ev.set_defaults(func=_cmd_evaluate)

    sim = sub.add_parser("simulate", help="write a synthetic dataset")
    sim.add_argument("--spec", required=True, help="generative spec JSON")
    sim.add_argument("--out-dir", required=True)
    sim.add_argument("--bayes", action="store_true",
                     help="also write the exact posterior under the true "
                          "parameters")
    sim.add_argument("--seed", type=int, default=None, help="spec seed override")
    sim.set_defaults(func=_cmd_simulate)

    onl = sub.add_parser("online", help="stream per-item posteriors under a "
                                        "frozen model")
    onl.add_argument("--model", required=True, help="model JSON from aggregate")
    onl.add_argument("--input", default="-",
                     help="CSV stream, header item_id,m0_p0,... (default stdin)")
    onl.add_argument("--out", default="-", help="posterior CSV (default stdout)")
    onl.set_defaults(func=_cmd_online)

    ex = sub.add_parser("explain", help="decompose one item's posterior")
    ex.add_argument("--model", required=True)
    ex.add_argument("--manifest", required=True)
    ex.add_argument("--item", required=True, help="item id to explain")
    ex.add_argument("--out", help="JSON path (default: stdout)")
    ex.set_defaults(func=_cmd_explain)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        _log(f"error: {exc}")
        return 1
    except NumericError as exc:
        _log(f"numeric error: {exc}")
        return 3
    except (ValueError, KeyError, IndexError) as exc:
        _log(f"error: {exc}")
        return 1
    except OSError as exc:
        _log(f"i/o error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
