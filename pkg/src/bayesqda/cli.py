"""Command-line surface.

Subcommands map one-to-one onto the library operations: meta-train, eval,
eval-incremental, calibrate, synth, inspect. All randomness is controlled
by --seed. A key=value config file can supply any long flag's value; flags
given on the command line take precedence.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import calibration, episodes, harness, io, training
from .classifier import MODE_FB, MODE_LDA, MODE_MAP
from .errors import BayesQdaError


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors by default; the contract is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="bayesqda", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key=value file supplying flag defaults")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("meta-train", help="train a prior on episodes from a feature file")
    common(p)
    p.add_argument("--features", required=True, help="MQDF training features")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--ways", type=int, default=5)
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--queries", type=int, default=15)
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--optimizer", choices=training.OPTIMIZERS, default=training.OPT_ADAM)
    p.add_argument("--batch-episodes", type=int, default=1)
    p.add_argument("--loss", choices=training.LOSS_KINDS, default=training.GENERATIVE)
    p.add_argument("--mode", choices=[MODE_MAP, MODE_FB], default=MODE_FB)
    p.add_argument("--schedule", choices=["constant", "cosine"], default="constant")
    p.add_argument("--freeze-mean", action="store_true")
    p.add_argument("--cl2n", action="store_true",
                   help="center by the training mean and L2-normalize")
    p.add_argument("--log", help="training log path (default: <out>.log)")

    p = sub.add_parser("eval", help="episodic accuracy of a stored prior")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--ways", type=int, default=5)
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--queries", type=int, default=15)
    p.add_argument("--episodes", type=int, default=600)
    p.add_argument("--mode", choices=[MODE_MAP, MODE_FB, MODE_LDA],
                   help="override the checkpoint's mode")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("eval-incremental", help="class-incremental sessions")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--base-ways", type=int, default=60)
    p.add_argument("--base-shots", type=int, default=25)
    p.add_argument("--sessions", type=int, default=8)
    p.add_argument("--session-ways", type=int, default=5)
    p.add_argument("--session-shots", type=int, default=5)
    p.add_argument("--test-per-class", type=int, default=15)
    p.add_argument("--mode", choices=[MODE_MAP, MODE_FB])

    p = sub.add_parser("calibrate", help="fit a temperature on validation episodes")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--ways", type=int, default=5)
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--queries", type=int, default=15)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--bins", type=int, default=calibration.DEFAULT_BINS)
    p.add_argument("--mode", choices=[MODE_MAP, MODE_FB, MODE_LDA])
    p.add_argument("--report", help="write the binned reliability table here")

    p = sub.add_parser("synth", help="generate a synthetic MQDF feature file")
    common(p)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kappa", type=float, default=10.0)
    p.add_argument("--nu", type=float, help="default d + 4")
    p.add_argument("--scale", type=float, default=1.0, help="S = scale * I")
    p.add_argument("--noise", type=float, default=0.0)

    p = sub.add_parser("inspect", help="validate and summarize a file")
    p.add_argument("path", help="MQDF feature file or prior checkpoint")

    return parser


def _apply_config(argv: list[str]) -> list[str]:
    """Splice config-file entries in as flags ahead of the real flags."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        return argv  # let argparse report the missing value
    path = argv[i + 1]
    injected = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise BayesQdaError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if value.lower() in ("true", "false"):
                if value.lower() == "true":
                    injected.append(flag)
            else:
                injected.extend([flag, value])
    # command name first, then config-derived flags, then explicit flags
    return argv[:1] + injected + argv[1:]


def _load_prior(args):
    ckpt = io.load_checkpoint(args.prior)
    mode = getattr(args, "mode", None) or ckpt.mode
    return ckpt, mode


def _load_features(args, cl2n: bool):
    dataset = io.read_feature_file(args.features)
    if cl2n:
        dataset = episodes.normalize_cl2n(dataset, dataset.features.mean(axis=0))
    return dataset


def _cmd_meta_train(args) -> int:
    dataset = io.read_feature_file(args.features)
    if args.cl2n:
        dataset = episodes.normalize_cl2n(dataset, dataset.features.mean(axis=0))
    config = training.TrainerConfig(
        iterations=args.iters,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        batch_episodes=args.batch_episodes,
        loss_kind=args.loss,
        mode=args.mode,
        ways=args.ways,
        shots=args.shots,
        queries=args.queries,
        seed=args.seed,
        schedule=args.schedule,
        freeze_mean=args.freeze_mean,
    )
    prior, log = training.meta_train(dataset, config)
    io.save_checkpoint(io.PriorCheckpoint(prior=prior, mode=args.mode, cl2n=args.cl2n), args.out)
    log_path = args.log or args.out + ".log"
    with open(log_path, "w", encoding="ascii") as fh:
        for rec in log:
            fh.write(
                f"{rec.iteration}\t{rec.loss:.6f}\t{rec.grad_norm:.6f}"
                f"\t{rec.kappa:.6f}\t{rec.nu:.6f}\n"
            )
    final = log[-1].loss if log else float("nan")
    print(f"trained {args.iters} iterations, final loss {final:.4f}")
    print(f"checkpoint -> {args.out}")
    print(f"log -> {log_path}")
    return 0


def _cmd_eval(args) -> int:
    ckpt, mode = _load_prior(args)
    dataset = _load_features(args, ckpt.cl2n)
    result = harness.evaluate(
        ckpt.prior, dataset, args.ways, args.shots, args.queries,
        episodes=args.episodes, mode=mode, temperature=args.temperature,
        seed=args.seed, workers=args.workers,
    )
    print(str(result))
    return 0


def _cmd_eval_incremental(args) -> int:
    ckpt, mode = _load_prior(args)
    if mode == MODE_LDA:
        raise BayesQdaError("incremental evaluation needs a map or fb prior")
    dataset = _load_features(args, ckpt.cl2n)
    rng = np.random.default_rng([args.seed & 0xFFFFFFFFFFFFFFFF, 0])
    class_ids = sorted(dataset.class_index)
    needed = args.base_ways + args.sessions * args.session_ways
    if len(class_ids) < needed:
        raise BayesQdaError(
            f"protocol needs {needed} classes, dataset has {len(class_ids)}"
        )

    def split(cid, shots):
        rows = dataset.class_index[cid]
        if len(rows) < shots + args.test_per_class:
            raise BayesQdaError(
                f"class {cid} has {len(rows)} samples, needs "
                f"{shots + args.test_per_class}"
            )
        perm = rng.permutation(len(rows))
        rows = rows[perm]
        return (
            dataset.features[rows[:shots]],
            dataset.features[rows[shots : shots + args.test_per_class]],
        )

    test_sets = {}
    base_support = {}
    for cid in class_ids[: args.base_ways]:
        base_support[cid], test_sets[cid] = split(cid, args.base_shots)
    sessions = []
    at = args.base_ways
    for _ in range(args.sessions):
        inc = {}
        for cid in class_ids[at : at + args.session_ways]:
            inc[cid], test_sets[cid] = split(cid, args.session_shots)
        sessions.append(inc)
        at += args.session_ways

    results = harness.evaluate_incremental(
        ckpt.prior, base_support, sessions, test_sets, mode=mode
    )
    for r in results:
        print(f"session {r.session} ({r.ways} ways)\tacc {100.0 * r.accuracy:.2f}")
    return 0


def _cmd_calibrate(args) -> int:
    ckpt, mode = _load_prior(args)
    dataset = _load_features(args, ckpt.cl2n)
    seed = args.seed & 0xFFFFFFFFFFFFFFFF
    eps = [
        episodes.sample_episode(
            dataset, args.ways, args.shots, args.queries,
            np.random.default_rng([seed, e]),
        )
        for e in range(args.episodes)
    ]
    temperature = calibration.fit_temperature(ckpt.prior, eps, mode, b=args.bins)

    run = harness.run_protocol(
        dataset, args.ways, args.shots, args.queries, args.episodes,
        harness.prior_scorer(ckpt.prior, mode), seed=args.seed,
        temperature=temperature,
    )
    before = harness.run_protocol(
        dataset, args.ways, args.shots, args.queries, args.episodes,
        harness.prior_scorer(ckpt.prior, mode), seed=args.seed,
    )
    report = calibration.ece(
        (run.confidences, run.corrects), args.bins, temperature_used=temperature
    )
    base = calibration.ece((before.confidences, before.corrects), args.bins)
    print(f"temperature {temperature:.6g}")
    print(f"ece {base.ece:.4f} -> {report.ece:.4f} (bins {args.bins})")
    if args.report:
        with open(args.report, "w", encoding="ascii") as fh:
            fh.write(calibration.report_table(report))
        print(f"report -> {args.report}")
    return 0


def _cmd_synth(args) -> int:
    nu = args.nu if args.nu is not None else args.d + 4.0
    spec = episodes.SyntheticTaskSpec(
        d=args.d,
        m=np.zeros(args.d),
        kappa=args.kappa,
        s=args.scale * np.eye(args.d),
        nu=nu,
        noise_scale=args.noise,
    )
    rng = np.random.default_rng(args.seed & 0xFFFFFFFFFFFFFFFF)
    dataset = episodes.generate_synthetic(spec, args.classes, args.per_class, rng)
    io.write_feature_file(dataset, args.out)
    print(f"wrote {dataset.n} x {dataset.d} features, {args.classes} classes -> {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    with open(args.path, "rb") as fh:
        head = fh.read(4)
    if head == io.MAGIC:
        dataset = io.read_feature_file(args.path)
        counts = [len(rows) for rows in dataset.class_index.values()]
        print(f"mqdf feature file: {args.path}")
        print(f"d {dataset.d}")
        print(f"classes {dataset.n_classes}")
        print(f"rows {dataset.n}")
        print(f"per-class rows min {min(counts)} max {max(counts)}")
        print("ok")
    else:
        ckpt = io.load_checkpoint(args.path)
        print(f"prior checkpoint: {args.path}")
        print(f"d {ckpt.prior.d}")
        print(f"mode {ckpt.mode}")
        print(f"cl2n {int(ckpt.cl2n)}")
        print(f"kappa {ckpt.prior.kappa:.6g}")
        print(f"nu {ckpt.prior.nu:.6g}")
        print("ok")
    return 0


_COMMANDS = {
    "meta-train": _cmd_meta_train,
    "eval": _cmd_eval,
    "eval-incremental": _cmd_eval_incremental,
    "calibrate": _cmd_calibrate,
    "synth": _cmd_synth,
    "inspect": _cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _apply_config(argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except BayesQdaError as exc:
        print(f"bayesqda: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"bayesqda: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
