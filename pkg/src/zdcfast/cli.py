"""Command-line interface for the fast-simulation pipeline."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .calibration import C_GRID_DEFAULT, SIGMA_GRID_DEFAULT, calibrate
from .dataio import load_dataset, save_dataset, save_weights, update_weights_calibration
from .errors import ValidationError
from .oracle import OracleConfig, generate_dataset
from .pipeline import (ModelSampler, benchmark, evaluate, generator_forward_fn,
                       load_model, run_ablation, simulate)
from .training import (TrainConfig, encode_conditions, pretrain_regressor,
                       train_classifier, train_gan, train_vae)


def _write_json(path: str, payload: dict):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def _train_config(args, lr_field: str) -> TrainConfig:
    kwargs = {"epochs": args.epochs, "batch_size": args.batch, "seed": args.seed}
    if args.lr is not None:
        kwargs[lr_field] = args.lr
    if getattr(args, "lambda_aux", None) is not None:
        kwargs["lambda_aux"] = args.lambda_aux
    return TrainConfig(**kwargs)


def cmd_gen_data(args) -> int:
    cfg = OracleConfig(seed=args.seed, n_samples=args.n)
    ds = generate_dataset(cfg)
    save_dataset(ds, args.out)
    print(f"wrote {ds.n} samples to {args.out} (zero fraction {ds.zero_fraction():.4f})")
    return 0


def cmd_train(args) -> int:
    data = load_dataset(args.data)
    if args.command == "train-classifier":
        cfg = _train_config(args, "lr_classifier")
        net, log = train_classifier(data, cfg)
        items, kind = net.state_items(), "classifier"
    elif args.command == "train-regressor":
        cfg = _train_config(args, "lr_regressor")
        net, log = pretrain_regressor(data, cfg)
        items, kind = net.state_items(), "regressor"
    elif args.command == "train-vae":
        cfg = _train_config(args, "lr_vae")
        net, log = train_vae(data, cfg)
        items, kind = net.state_items(), "vae"
    else:
        cfg = _train_config(args, "lr_gan")
        regressor = None
        if args.aux_regressor:
            bundle, regressor = load_model(args.aux_regressor)
            if bundle.kind != "regressor":
                raise ValidationError(f"--aux-regressor file has kind {bundle.kind!r}")
        net, log = train_gan(data, cfg, regressor=regressor)
        items, kind = net.state_items(), "gan"
    save_weights(args.out, kind, items, data.norm, train_config=cfg.to_dict(), seed=args.seed)
    if args.log:
        _write_json(args.log, log.to_dict())
    last = log.epochs[-1]["losses"] if log.epochs else {}
    print(f"trained {kind} for {cfg.epochs} epochs; final losses {last}; wrote {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    bundle, model = load_model(args.model)
    data = load_dataset(args.data)
    nz_train = data.nonzero_indices(data.train_idx)[:args.n_eval]
    if nz_train.size == 0:
        raise ValidationError("calibration requires non-zero training responses")
    steps = int(round((args.c_max - args.c_min) / args.c_step)) + 1
    c_grid = [round(args.c_min + i * args.c_step, 10) for i in range(steps)]
    sigma_grid = [float(s) for s in args.sigmas.split(",") if s.strip()]
    conds = encode_conditions(data.particles, bundle.norm)[nz_train]
    sampler = ModelSampler(generator_forward_fn(bundle, model), bundle.norm.pixel_scale,
                           conds, args.seed)
    result = calibrate(sampler, np.asarray(data.responses[nz_train]), seed=args.seed,
                       sigma_grid=sigma_grid, c_grid=c_grid)
    update_weights_calibration(args.model, result.to_dict())
    print(f"calibrated {args.model}: c*={result.c_star} sigma*={result.sigma_star} "
          f"on {result.n_eval_samples} samples")
    return 0


def cmd_evaluate(args) -> int:
    bundle, model = load_model(args.model)
    data = load_dataset(args.data)
    classifier_pair = load_model(args.classifier) if args.classifier else None
    report = evaluate(bundle, model, data, split=args.split, classifier_pair=classifier_pair,
                      seed=args.seed, bins=args.bins, hist_dir=args.hist_dir)
    _write_json(args.report, report)
    print(f"mean W1 = {report['mean_w1']:.6g} over {report['dataset']['n_nonzero']} "
          f"{args.split} samples; report at {args.report}")
    return 0


def cmd_simulate(args) -> int:
    path = Path(args.particles)
    if not path.exists():
        raise ValidationError(f"no particle file at {path}")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size == 0 or raw.size % 9 != 0:
        raise ValidationError(f"{path.name}: expected n*9 float32 values, found {raw.size}")
    particles = raw.reshape(-1, 9)
    clf_bundle, clf = load_model(args.classifier)
    gen_bundle, gen = load_model(args.model)
    responses = simulate(particles, clf_bundle, clf, gen_bundle, gen,
                         seed=args.seed, threshold=args.threshold)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    responses.astype("<f4").tofile(args.out)
    zero_frac = float(np.mean(~responses.any(axis=1)))
    print(f"simulated {particles.shape[0]} particles (zero fraction {zero_frac:.4f}); "
          f"wrote {args.out}")
    return 0


def cmd_benchmark(args) -> int:
    clf_bundle, clf = load_model(args.classifier)
    gen_bundle, gen = load_model(args.model)
    report = benchmark(clf_bundle, clf, gen_bundle, gen, n=args.n, seed=args.seed)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_ablation(args) -> int:
    data = load_dataset(args.data)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, seed=args.seed,
                      lambda_aux=args.lambda_aux)
    report = run_ablation(data, args.out_dir, cfg, seed=args.seed,
                          calib_samples=args.calib_samples)
    for row in report["rows"]:
        print(f"{row['model']:<28} train W1 {row['mean_w1_train']:.4f}  "
              f"validation W1 {row['mean_w1_validation']:.4f}")
    print(f"report at {Path(args.out_dir) / 'ablation.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zdcfast",
                                     description="Fast calorimeter-response simulation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    for name in ("train-classifier", "train-regressor", "train-vae", "train-gan"):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} on a dataset")
        p.add_argument("--data", required=True)
        p.add_argument("--epochs", type=int, default=10)
        p.add_argument("--batch", type=int, default=64)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--log", default=None, help="optional JSON training log path")
        if name == "train-gan":
            p.add_argument("--aux-regressor", default=None)
            p.add_argument("--lambda-aux", type=float, default=None)
        p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="grid-search sigma and c for a generative model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--c-min", type=float, default=C_GRID_DEFAULT[0])
    p.add_argument("--c-max", type=float, default=C_GRID_DEFAULT[-1])
    p.add_argument("--c-step", type=float, default=0.01)
    p.add_argument("--sigmas", default=",".join(str(s) for s in SIGMA_GRID_DEFAULT))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-eval", type=int, default=2000)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="channel-W1 report for a generative model")
    p.add_argument("--model", required=True)
    p.add_argument("--classifier", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("validation", "train"), default="validation")
    p.add_argument("--report", required=True)
    p.add_argument("--hist-dir", default=None)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="gated fast simulation of a particle file")
    p.add_argument("--model", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--particles", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="simulation throughput on sampled particles")
    p.add_argument("--model", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("ablation", help="full recipe: train, calibrate, compare models")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lambda-aux", type=float, default=1.0)
    p.add_argument("--calib-samples", type=int, default=2000)
    p.set_defaults(func=cmd_ablation)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, RuntimeError, FileNotFoundError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
