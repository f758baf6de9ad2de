"""Command line entry point: ``tripdrift <command> ...``."""

import argparse
import csv
import logging
import os
import sys

from . import dataio
from .clusterer import build_family_model
from .detector import classify_batch, fit_mad_model
from .harness import EvalConfig, render_to_file, report_render, run_leave_one_out
from .metric import DEFAULT_HIDDEN_DIMS, TrainConfig, embed, train_triplet, train_vanilla
from .serialization import load_family_model, load_network, model_digest, save_family_model, save_network


def _dims(text):
    if text is None or text == "auto":
        return None
    try:
        dims = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--dims must be 'auto' or comma-separated integers, got {text!r}")
    if len(dims) < 2:
        raise argparse.ArgumentTypeError("--dims needs at least two sizes")
    return dims


def cmd_prep(args):
    ds = dataio.load_dataset(args.input)
    mask = dataio.fit_variance_mask(ds, args.min_variance)
    train, test = dataio.temporal_split(ds, args.train_fraction)
    os.makedirs(args.out_dir, exist_ok=True)
    dataio.save_mask(mask, os.path.join(args.out_dir, "mask.txt"))
    dataio.save_dataset(train, os.path.join(args.out_dir, "train.csv"))
    dataio.save_dataset(test, os.path.join(args.out_dir, "test.csv"))
    print(f"kept {mask.width} of {ds.n_features} features; train={len(train)} test={len(test)}")


def cmd_synth(args):
    spec = dataio.SyntheticSpec(
        n_families=args.families,
        dim=args.dim,
        samples_per_family=args.per_family,
        centroid_separation=args.separation,
        clusters_per_family=args.clusters_per_family,
    )
    ds = dataio.generate_synthetic(spec, seed=args.seed)
    dataio.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} rows x {ds.n_features} features to {args.out}")


def cmd_train(args):
    ds = dataio.load_dataset(args.input)
    mask = dataio.load_mask(args.mask) if args.mask else dataio.FeatureMask.identity(ds.n_features)
    masked = dataio.apply_mask(ds, mask)
    dims = args.dims or (masked.n_features,) + DEFAULT_HIDDEN_DIMS
    cfg = TrainConfig(
        layer_dims=dims,
        margin=args.margin,
        triplet_weight=args.triplet_weight,
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
    )
    train = train_triplet if args.mode == "triplet" else train_vanilla
    model = train(masked, cfg, mask=mask)
    save_network(model, args.out)
    loss_out = args.loss_out or os.path.splitext(args.out)[0] + ".loss.csv"
    with open(loss_out, "w", encoding="utf-8") as fh:
        fh.write(model.loss_curve_csv())
    last = model.loss_curve[-1]
    print(f"saved {args.out} (recon={last[1]:.6g}, triplet={last[2]:.6g}); loss curve in {loss_out}")


def cmd_cluster(args):
    model = load_network(args.model)
    ds = dataio.load_dataset(args.input)
    fm = build_family_model(
        embed(model, ds),
        ds.labels,
        model.latent_dim,
        network_hash=model_digest(model),
    )
    save_family_model(fm, args.out)
    if args.report:
        print(fm.report())
    print(f"saved {args.out}: {len(fm.clusters)} clusters over {len(fm.families)} families")


def cmd_detect(args):
    model = load_network(args.model)
    fm = load_family_model(args.family_model, network=model)
    ds = dataio.load_dataset(args.input)
    mad = fit_mad_model(fm, args.mad_coefficient) if args.threshold_mode == "mad" else None
    verdicts = classify_batch(fm, embed(model, ds), mad)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index", "verdict", "nearest_family", "nearest_cluster", "distance", "threshold"])
        for i, v in enumerate(verdicts):
            w.writerow([i, v.verdict, v.nearest_family, v.nearest_cluster_id, repr(v.distance), repr(v.threshold_used)])
    n_drift = sum(v.is_drift for v in verdicts)
    print(f"{n_drift} of {len(verdicts)} samples flagged DRIFT ({args.threshold_mode} thresholds)")


def cmd_eval(args):
    cfg = EvalConfig(
        min_variance=args.min_variance,
        train_fraction=args.train_fraction,
        layer_dims=args.dims,
        margin=args.margin,
        triplet_weight=args.triplet_weight,
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        mad_coefficient=args.mad_coefficient,
    )
    report = run_leave_one_out(args.input, cfg, model_dir=args.model_dir)
    render_to_file(report, args.out, "csv")
    if args.render:
        sys.stdout.write(report_render(report, args.render))


def _train_options(p):
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--lambda", dest="triplet_weight", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--dims", type=_dims, default=None, help="'auto' or e.g. 1376,1024,256,32")


def build_parser():
    parser = argparse.ArgumentParser(prog="tripdrift", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="variance mask + temporal split")
    p.add_argument("--input", required=True)
    p.add_argument("--min-variance", type=float, default=0.0)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("synth", help="write a synthetic Gaussian-family dataset")
    p.add_argument("--families", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--per-family", type=int, required=True)
    p.add_argument("--separation", type=float, required=True)
    p.add_argument("--clusters-per-family", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a vanilla or triplet autoencoder")
    p.add_argument("--input", required=True)
    p.add_argument("--mask")
    p.add_argument("--mode", choices=["vanilla", "triplet"], default="triplet")
    _train_options(p)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-out", help="loss curve CSV (default: <out stem>.loss.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="build a family model from training data")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", action="store_true", help="print one line per cluster")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("detect", help="classify samples as a known family or DRIFT")
    p.add_argument("--model", required=True)
    p.add_argument("--family-model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--threshold-mode", choices=["dbscan", "mad"], default="dbscan")
    p.add_argument("--mad-coefficient", type=float, default=3.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="leave-one-family-out evaluation")
    p.add_argument("--input", required=True)
    p.add_argument("--min-variance", type=float, default=0.0)
    p.add_argument("--train-fraction", type=float, default=0.8)
    _train_options(p)
    p.add_argument("--mad-coefficient", type=float, default=3.5)
    p.add_argument("--out", required=True)
    p.add_argument("--render", choices=["table", "csv"], default=None)
    p.add_argument("--model-dir", help="also save each scenario's network and family model here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # every failure becomes a diagnostic and a nonzero exit
        print(f"tripdrift {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
