# run_experiment.py
import argparse
import os
import sys

from fri_jsr import formats
from fri_jsr.analog_chain import DEFAULT_EPS, kernel_description, make_sos_kernel
from fri_jsr.core_model import make_pulse_spectrum
from fri_jsr.errors import ConfigError, FriJsrError
from fri_jsr.harness import (MethodId, emit_pattern_overlay, fit_method, jsr_base_seed, make_datasets, parse_snr,
                             run_cross_test, run_instance, run_sweep, write_cross_table)
from fri_jsr.jsr import jsr_backward, jsr_extend, jsr_forward, load_ladder, save_ladder
from fri_jsr.settings import load_config, setup_logging
from fri_jsr.sparse_recovery import lista_train


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (defaults: desk scale)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, help="method seed (random pattern, network init, JSR ladder seed)")
    common.add_argument("--snr-db", help="noise level in dB, or 'clean'")
    common.add_argument("--k", type=int, help="number of retained Fourier samples")
    common.add_argument("--method", help="one of: " + ", ".join(m.value for m in MethodId))
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING (default from FRI_JSR_LOG_LEVEL)")

    p = argparse.ArgumentParser(prog="run_experiment",
                                description="Fourier subsampling pattern selection and learned FRI recovery")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write train/test datasets (FRIDS1)")
    sub.add_parser("select", parents=[common], help="select a sampling pattern with one method")
    t = sub.add_parser("train", parents=[common], help="train LISTA for a stored pattern")
    t.add_argument("--pattern", required=True, help="PAT1 pattern file")
    j = sub.add_parser("jsr", parents=[common], help="build or extend a JSR ladder")
    j.add_argument("--resume", help="existing ladder directory to extend")
    sub.add_parser("sweep", parents=[common], help="methods x K x SNR x seeds, metrics.csv")
    sub.add_parser("cross-test", parents=[common], help="structured-sparsity pattern/network cross-test")
    e = sub.add_parser("export-kernel", parents=[common], help="write the SoS kernel description for a pattern")
    e.add_argument("--pattern", required=True, help="PAT1 pattern file")
    e.add_argument("--eps", type=float, default=None, help=f"guard fraction (default {DEFAULT_EPS})")
    o = sub.add_parser("overlay", parents=[common], help="plot-ready overlay of stored patterns")
    o.add_argument("patterns", nargs="+", help="PAT1 pattern files")
    i = sub.add_parser("instance", parents=[common], help="recover one test example with every method")
    i.add_argument("--index", type=int, default=0, help="test example index")
    return p


def _require_k(args) -> int:
    if args.k is None:
        raise ConfigError("--k is required for this command")
    return args.k


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def cmd_generate(args, cfg):
    train, test = make_datasets(cfg)
    formats.save_dataset(train, os.path.join(args.out, "train.frids"))
    formats.save_dataset(test, os.path.join(args.out, "test.frids"))
    print(f"wrote {train.Q} training and {test.Q} test examples to {args.out}")


def cmd_select(args, cfg):
    K = _require_k(args)
    method = MethodId.parse(args.method or MethodId.G_FISTA_FISTA)
    train, _ = make_datasets(cfg, snr_db=args.snr_db)
    fitted = fit_method(method, train, K, _seed(args), cfg)
    path = os.path.join(args.out, f"{method.value}_K{K}.json")
    formats.save_pattern(path, fitted.pattern, method.value, fitted.costs)
    if fitted.params is not None:
        formats.save_params(os.path.join(args.out, f"{method.value}_K{K}_params.json"), fitted.params)
    print(f"{method.value} K={K}: {list(fitted.pattern.indices)} -> {path}")


def cmd_train(args, cfg):
    pattern, _, _ = formats.load_pattern(args.pattern)
    train, _ = make_datasets(cfg, snr_db=args.snr_db)
    params, log = lista_train(train, pattern, cfg.train, cfg.jsr.P, init_seed=_seed(args))
    stem = os.path.splitext(os.path.basename(args.pattern))[0]
    path = os.path.join(args.out, f"{stem}_params.json")
    formats.save_params(path, params)
    print(f"trained LISTA on {list(pattern.indices)}: best validation MSE {log.best_val:.6g} "
          f"(epoch {log.best_epoch}) -> {path}")


def cmd_jsr(args, cfg):
    K = _require_k(args)
    train, _ = make_datasets(cfg, snr_db=args.snr_db)
    base_seed = jsr_base_seed(cfg, _seed(args))
    if args.resume:
        ladder = jsr_extend(load_ladder(args.resume), K, train, cfg.train)
    else:
        method = MethodId.parse(args.method or MethodId.JSR2)
        if method not in (MethodId.JSR1, MethodId.JSR2):
            raise ConfigError(f"jsr builds jsr1 or jsr2 ladders, not {method.value}")
        run = jsr_forward if method == MethodId.JSR1 else jsr_backward
        ladder = run(train, K, cfg.train, cfg.jsr.P, base_seed=base_seed)
    out = os.path.join(args.out, f"ladder_{ladder.direction}")
    save_ladder(ladder, out)
    print(f"{ladder.direction} ladder to K={ladder.endpoint.count}: {list(ladder.endpoint.indices)} "
          f"({ladder.trainings} trainings) -> {out}")


def cmd_sweep(args, cfg):
    if args.k is not None:
        cfg.sweep.ks = [args.k]
    if args.snr_db is not None:
        cfg.sweep.snrs = [args.snr_db]
    if args.method:
        cfg.sweep.methods = [args.method]
    if args.seed is not None:
        cfg.sweep.seeds = [args.seed]
    rows = run_sweep(cfg, args.out)
    print(f"{len(rows)} rows -> {os.path.join(args.out, 'metrics.csv')} (seed means in metrics_summary.csv)")


def cmd_cross_test(args, cfg):
    if args.k is not None:
        cfg.cross_test.k = args.k
    if args.snr_db is not None:
        cfg.cross_test.snr_db = args.snr_db
    result = run_cross_test(cfg, _seed(args))
    path = os.path.join(args.out, "cross_test.csv")
    write_cross_table(result, path)
    print("\t".join(["test set"] + result.labels()))
    for j, row in enumerate(result.table):
        print("\t".join([str(j + 1)] + [f"{v:.2f}" for v in row]))


def cmd_export_kernel(args, cfg):
    pattern, _, _ = formats.load_pattern(args.pattern)
    eps = cfg.analog.eps if args.eps is None else args.eps
    kernel, T_s, n_count, first = make_sos_kernel(pattern, cfg.grid, cfg.grid.t_max, eps, cfg.analog.n_count)
    path = os.path.join(args.out, "kernel.yaml")
    formats.save_kernel(path, kernel_description(kernel, T_s, eps, n_count, first))
    print(f"kernel for {list(pattern.indices)}: T_s={T_s:.6g}, T_g={kernel.support:.6g} -> {path}")


def cmd_overlay(args, cfg):
    patterns = {}
    for path in args.patterns:
        pattern, method, _ = formats.load_pattern(path)
        name = method or os.path.splitext(os.path.basename(path))[0]
        if name in patterns:
            name = os.path.splitext(os.path.basename(path))[0]
        patterns[name] = pattern
    series = emit_pattern_overlay(patterns, make_pulse_spectrum(cfg.grid), args.out)
    for name in series.names:
        print(f"{name}: spread {series.spread[name]:.3f}")


def cmd_instance(args, cfg):
    K = _require_k(args)
    methods = [args.method] if args.method else None
    path = os.path.join(args.out, f"instance_{args.index}_K{K}.csv")
    run_instance(cfg, K, parse_snr(args.snr_db), args.index, _seed(args), methods, path)
    print(f"instance {args.index} -> {path}")


COMMANDS = {
    "generate": cmd_generate,
    "select": cmd_select,
    "train": cmd_train,
    "jsr": cmd_jsr,
    "sweep": cmd_sweep,
    "cross-test": cmd_cross_test,
    "export-kernel": cmd_export_kernel,
    "overlay": cmd_overlay,
    "instance": cmd_instance,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        cfg = load_config(args.config)
        if args.snr_db is not None:
            parse_snr(args.snr_db)
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except FriJsrError as e:
        print("# run_experiment error", file=sys.stderr)
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
