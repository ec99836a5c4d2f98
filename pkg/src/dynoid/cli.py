"""``dynoid`` command line.

Subcommands::

    gen-data   simulate a plant and write header.json + dataset.jsonl
    train      fit one regressor model per window size -> ell_<l>/model.json
    eval       free-run rollout MSE -> eval.csv, eval_summary.csv
    reduce     autoencoder compression sweep -> sweep.csv
    diagnose   observability bound check -> diagnostics.json / .csv
    sweep      gen-data, train, eval and reduce in one go

Exit codes: 0 success, 2 usage, 3 I/O or file format, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

log = logging.getLogger("dynoid")


# ---------------------------------------------------------------------------
# argument parsing

def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common options")
    g.add_argument("--out", metavar="DIR", help="output directory (config key 'out'; default ./out)")
    g.add_argument("--config", metavar="FILE", help="JSON experiment config; flags override its keys")
    g.add_argument("--seed", type=int, help="master seed (the DYNOID_SEED environment variable wins)")
    g.add_argument("--threads", type=int, metavar="N", help="cap BLAS worker threads")
    g.add_argument("--system", help="plant: tank or drone2d")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _data_flags(p):
    g = p.add_argument_group("data")
    g.add_argument("--noise", type=_float_list, metavar="S[,S..]",
                   help="output noise std (one value for tank, three for drone2d)")
    g.add_argument("--n-train", type=int, help="training trajectories")
    g.add_argument("--n-valid", type=int, help="validation trajectories")
    g.add_argument("--n-test", type=int, help="test trajectories")
    g.add_argument("--length", type=int, help="samples per trajectory")


def _train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--windows", type=_int_list, metavar="L1,L2..", help="window sizes ell")
    g.add_argument("--epochs", type=int, help="training epochs")
    g.add_argument("--lr", type=float, help="Adam learning rate")
    g.add_argument("--hidden", type=_int_list, metavar="H1,H2..", help="hidden layer widths")
    g.add_argument("--batch-size", type=int, help="trajectories per minibatch (default: all)")
    g.add_argument("--chunk-length", type=int, help="truncated backpropagation chunk length")


def _eval_flags(p):
    g = p.add_argument_group("evaluation")
    g.add_argument("--horizon", type=int, help="rollout horizon in steps")
    g.add_argument("--split", default="test", choices=("train", "valid", "test"), help="split to evaluate")


def _reduce_flags(p):
    g = p.add_argument_group("reduction")
    g.add_argument("--rates", type=_float_list, metavar="R1,R2..",
                   help="compression rates in [0,1): fraction of the window dimension removed")
    g.add_argument("--ae-epochs", type=int, help="autoencoder epochs")
    g.add_argument("--ae-lr", type=float, help="autoencoder learning rate")
    g.add_argument("--ae-hidden", type=_int_list, metavar="H1,H2..", help="autoencoder hidden widths")
    g.add_argument("--ae-batch-size", type=int, help="autoencoder minibatch size")
    g.add_argument("--joint", action="store_true", default=None,
                   help="add the one-step prediction loss to the reconstruction loss")


def _io_flags(p, models=True):
    g = p.add_argument_group("inputs")
    g.add_argument("--data", metavar="DIR", help="dataset directory (default: --out)")
    if models:
        g.add_argument("--models", metavar="DIR", help="directory holding ell_<l>/model.json (default: --out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynoid", description=__doc__.split("\n\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     epilog="Exit codes: 0 success, 2 usage, 3 I/O, 4 numeric failure.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("gen-data", help="simulate closed-loop trajectories")
    _common(p)
    _data_flags(p)

    p = sub.add_parser("train", help="train regressor models, one per window size")
    _common(p)
    _io_flags(p, models=False)
    _train_flags(p)

    p = sub.add_parser("eval", help="free-run rollout evaluation")
    _common(p)
    _io_flags(p)
    p.add_argument("--windows", type=_int_list, metavar="L1,L2..", help="window sizes ell")
    _eval_flags(p)

    p = sub.add_parser("reduce", help="autoencoder compression sweep")
    _common(p)
    _io_flags(p)
    p.add_argument("--windows", type=_int_list, metavar="L1,L2..", help="window sizes ell")
    _eval_flags(p)
    _reduce_flags(p)

    p = sub.add_parser("diagnose", help="observability error-bound check on the true plant")
    _common(p)
    g = p.add_argument_group("diagnostics")
    g.add_argument("--ell", type=int, help="window size (default 5)")
    g.add_argument("--noise-level", type=float, help="measurement noise std (default 0.01)")
    g.add_argument("--trials", type=int, help="Monte-Carlo trials (default 200)")
    g.add_argument("--samples", type=int, help="pairs sampled for gamma and alpha (default 100000)")
    g.add_argument("--grid", type=int, help="grid points per state axis (default 201)")
    g.add_argument("--lemma-steps", type=int, help="largest step count in the expansion table (default 10)")

    p = sub.add_parser("sweep", help="gen-data + train + eval + reduce")
    _common(p)
    _data_flags(p)
    _train_flags(p)
    _eval_flags(p)
    _reduce_flags(p)
    return parser


# ---------------------------------------------------------------------------
# config plumbing

def _config(args):
    from .config import load_config

    cfg = load_config(args.config, {"system": args.system, "seed": args.seed, "out": args.out,
                                    "window_sizes": getattr(args, "windows", None),
                                    "horizon": getattr(args, "horizon", None),
                                    "rates": getattr(args, "rates", None)})
    data = {"noise_sigma": getattr(args, "noise", None), "n_train": getattr(args, "n_train", None),
            "n_valid": getattr(args, "n_valid", None), "n_test": getattr(args, "n_test", None),
            "length": getattr(args, "length", None)}
    if data["noise_sigma"] is not None and cfg.system == "tank":
        if len(data["noise_sigma"]) != 1:
            from .errors import ConfigurationError
            raise ConfigurationError("tank takes a single --noise value")
        data["noise_sigma"] = data["noise_sigma"][0]
    training = {"epochs": getattr(args, "epochs", None), "lr": getattr(args, "lr", None),
                "hidden": getattr(args, "hidden", None), "batch_size": getattr(args, "batch_size", None),
                "chunk_length": getattr(args, "chunk_length", None)}
    ae = {"epochs": getattr(args, "ae_epochs", None), "lr": getattr(args, "ae_lr", None),
          "hidden": getattr(args, "ae_hidden", None), "batch_size": getattr(args, "ae_batch_size", None),
          "joint": getattr(args, "joint", None)}
    diag = {"ell": getattr(args, "ell", None), "noise_level": getattr(args, "noise_level", None),
            "trials": getattr(args, "trials", None), "samples": getattr(args, "samples", None),
            "grid": getattr(args, "grid", None), "lemma_steps": getattr(args, "lemma_steps", None)}
    for target, new in ((cfg.data, data), (cfg.training, training), (cfg.autoencoder, ae),
                        (cfg.diagnostics, diag)):
        target.update({k: v for k, v in new.items() if v is not None})
    # validate eagerly so bad settings fail before any work
    cfg.data_config()
    cfg.train_config()
    cfg.autoencoder_config()
    return cfg


def _out(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(cfg, out: Path, command: str) -> None:
    cfg.write(out / f"config.{command}.json")


def _model_path(root: Path, ell: int) -> Path:
    return Path(root) / f"ell_{ell}" / "model.json"


def _load_data(args, cfg):
    from .datagen import load_dataset

    ds = load_dataset(Path(args.data or cfg.out))
    if ds.system != cfg.system:
        log.warning("dataset system %r differs from configured %r; using the dataset", ds.system, cfg.system)
    return ds


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(cfg) -> Path:
    from .datagen import generate_drone_dataset, generate_tank_dataset, save_dataset

    out = _out(cfg)
    gen = generate_tank_dataset if cfg.system == "tank" else generate_drone_dataset
    dc = cfg.data_config()
    ds = gen(dc, cfg.seed)
    save_dataset(ds, out)
    _echo(cfg, out, "gen-data")
    lengths = sorted({len(t) for t in ds.trajectories()})
    print(f"{ds.system}: {len(ds.train)} train / {len(ds.valid)} valid / {len(ds.test)} test trajectories, "
          f"length {','.join(map(str, lengths))}, noise sigma {dc.noise_sigma} -> {out}")
    return out


def _write_loss_curve(history: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "train_loss", "valid_loss"))
        for r in history:
            v = r.get("valid_loss")
            w.writerow((r["epoch"], repr(r["train_loss"]), "" if v is None else repr(v)))


def cmd_train(cfg, dataset) -> list[Path]:
    from .regressor import StateMapSpec, save_model, train_regressor

    out = _out(cfg)
    tc = cfg.train_config()
    paths = []
    for ell in cfg.window_sizes:
        spec = StateMapSpec(ell, dataset.n_u, dataset.n_y)
        log.info("training ell=%d (L=%d)", ell, spec.L)
        model = train_regressor(dataset, spec, tc, seed=_sub_seed(cfg.seed, ell),
                                callback=lambda r: log.info("ell=%d %s", ell, r))
        path = save_model(model, _model_path(out, ell))
        _write_loss_curve(model.history, path.parent / "loss_curve.csv")
        best = min((r["valid_loss"] for r in model.history if r.get("valid_loss") is not None), default=None)
        print(f"ell={ell}: {model.H.n_params} parameters, best valid loss {best} -> {path}")
        paths.append(path)
    _echo(cfg, out, "train")
    return paths


def _sub_seed(seed: int, ell: int) -> int:
    import numpy as np

    return int(np.random.SeedSequence([int(seed), int(ell)]).generate_state(1)[0])


def cmd_eval(cfg, dataset, models_dir, split="test"):
    from .regressor import evaluate_rollout, load_model, write_eval_csv, write_eval_summary_csv

    out = _out(cfg)
    results = []
    for ell in cfg.window_sizes:
        model = load_model(_model_path(models_dir, ell))
        res = evaluate_rollout(model, dataset.split(split), cfg.horizon)
        print(f"ell={ell}: mean {cfg.horizon}-step rollout MSE {res.mean:.6g} over {len(res.per_trajectory)} trajectories")
        results.append(res)
    write_eval_csv(results, out / "eval.csv")
    write_eval_summary_csv(results, out / "eval_summary.csv")
    _echo(cfg, out, "eval")
    return results


def cmd_reduce(cfg, dataset, models_dir, split="test"):
    from .reduction import compression_sweep, train_autoencoder, write_sweep_csv  # noqa: F401
    from .regressor import load_model

    out = _out(cfg)
    ac = cfg.autoencoder_config()
    rows = []
    for ell in cfg.window_sizes:
        model = load_model(_model_path(models_dir, ell))
        cells = compression_sweep(model, dataset, cfg.rates, ac, cfg.seed, cfg.horizon, split,
                                  save_dir=out / f"ell_{ell}")
        for r in cells:
            status = "failed: " + r.error if r.error else f"recon {r.recon_mse:.3g}, rollout {r.rollout_mse:.3g}"
            print(f"ell={ell} rate={r.rate:.2f} latent={r.latent_dim}: {status}")
        rows.extend(cells)
    write_sweep_csv(rows, out / "sweep.csv")
    _echo(cfg, out, "reduce")
    return rows


def cmd_diagnose(cfg):
    from .diagnostics import check_error_bound, check_lemma1
    from .systems import drone_system, tank_system

    out = _out(cfg)
    d = {"ell": 5, "noise_level": 0.01, "trials": 200, "samples": 100_000, "grid": 201, "lemma_steps": 10,
         **cfg.diagnostics}
    if cfg.system == "tank":
        dc = cfg.data_config()
        system = tank_system(dc.params)
        X = d.get("X", [[0.1, 5.0], [0.1, 5.0]])
        U = d.get("U", [dc.pid.u_min, dc.pid.u_max])
    else:
        dc = cfg.data_config()
        system = drone_system(dc.params)
        X = d.get("X")
        U = d.get("U", [0.0, dc.params.omega_max])
        if X is None:
            from .errors import CapabilityError
            raise CapabilityError("drone2d has 6 states; grid inversion supports at most 3")
    report = check_error_bound(system, int(d["ell"]), float(d["noise_level"]), int(d["trials"]), cfg.seed,
                               X, U, int(d["samples"]), int(d["grid"]))
    report.write_json(out / "diagnostics.json")
    report.write_csv(out / "diagnostics.csv")
    gamma, rows = check_lemma1(system, int(d["lemma_steps"]), X, U, int(d["samples"]), cfg.seed)
    with open(out / "lemma1.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("i", "max_quotient", "gamma_power", "holds"))
        for r in rows:
            w.writerow((r.i, repr(r.max_quotient), repr(r.gamma_power), int(r.holds)))
    _echo(cfg, out, "diagnose")
    frac = report.satisfaction_fraction
    print(f"{system.name} ell={report.ell}: gamma_f >= {report.gamma_f_hat:.6g}, "
          f"alpha_ell <= {report.alpha_ell_hat:.6g}, "
          + ("bound satisfied in %.1f%% of %d trials" % (100 * frac, len(report.samples))
             if frac is not None else "numerically unobservable, no bound"))
    return report


# ---------------------------------------------------------------------------
# entry point

def _run(args) -> None:
    cfg = _config(args)
    cmd = args.command
    if cmd == "gen-data":
        cmd_gen_data(cfg)
    elif cmd == "train":
        cmd_train(cfg, _load_data(args, cfg))
    elif cmd == "eval":
        cmd_eval(cfg, _load_data(args, cfg), Path(args.models or cfg.out), args.split)
    elif cmd == "reduce":
        cmd_reduce(cfg, _load_data(args, cfg), Path(args.models or cfg.out), args.split)
    elif cmd == "diagnose":
        cmd_diagnose(cfg)
    elif cmd == "sweep":
        from .datagen import load_dataset

        out = cmd_gen_data(cfg)
        ds = load_dataset(out)
        cmd_train(cfg, ds)
        cmd_eval(cfg, ds, out, args.split)
        cmd_reduce(cfg, ds, out, args.split)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be >= 1")
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    from .errors import CapabilityError, ConfigurationError, ControllerError, FormatError, NumericError

    try:
        _run(args)
    except FormatError as exc:
        print(f"dynoid: file format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"dynoid: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, ControllerError, FloatingPointError) as exc:
        print(f"dynoid: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, CapabilityError, ValueError) as exc:
        print(f"dynoid: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
