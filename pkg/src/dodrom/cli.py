"""Command-line pipeline: generate, pod, train-dod, train-rom, evaluate, sweep, knw, export.

Every command reads a run config (``--config``), writes into the configured
output directory and prints a one-line summary. Exit codes: 0 ok, 2 config
error, 3 data error, 4 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, load_presets
from .dod import DodModel, load_dod, save_dod, train_dod
from .eval import DataOverlapError, add_timings, relative_error, weight_error_sweep
from .fom import ParameterError, SolverError
from .nn import CheckpointError, count_active_weights, load_mlp
from .reduction import RankError, knw_curves, load_basis, pod, save_basis
from .roms import (DOD_DFNN, DOD_DL_ROM, POD_DL_ROM, VARIANTS, SerialOrderError, load_rom, save_rom,
                   train_dod_dfnn, train_dod_dl_rom, train_pod_dl_rom)
from .snapshots import generate_snapshots, generate_test_set, load_snapshots, save_snapshots
from .store import StoreError, file_fingerprint, is_matrix_file, read_matrix, write_csv
from .training import TrainingDiverged

log = logging.getLogger("dodrom")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN = 0, 2, 3, 4

TRAIN_STEM = "snapshots"
TEST_STEM = "test"
BASIS_STEM = "pod"
DOD_DIR = "dod"


class DataError(RuntimeError):
    pass


def _rom_dir(variant: str) -> str:
    return f"rom-{variant}"


def _stem(cfg: RunConfig, given: str | None, default: str) -> Path:
    return Path(given) if given else cfg.path(default)


def _load_data(stem: Path):
    if not stem.with_suffix(".ini").exists():
        raise DataError(f"no snapshot store at {stem} (run 'generate' first)")
    return load_snapshots(stem)


def _fingerprint(stem: Path) -> str:
    return file_fingerprint(stem.with_suffix(".bin"))


def _training_overrides(cfg: RunConfig, args) -> RunConfig:
    kw = {}
    for name in ("lr", "max_epochs", "batch_size", "omega_h"):
        val = getattr(args, name, None)
        if val is not None:
            kw[name] = val
    if not kw:
        return cfg
    if "omega_h" in kw and not 0.0 <= kw["omega_h"] <= 1.0:
        raise ConfigError("omega_h must lie in [0, 1]")
    return replace(cfg, training=replace(cfg.training, **kw),
                   dod_training=replace(cfg.dod_training, **{k: v for k, v in kw.items() if k != "omega_h"}))


def cmd_generate(cfg: RunConfig, args) -> str:
    bench = cfg.benchmark
    for name in ("n_s1", "n_s2", "n_t"):
        if getattr(args, name) is not None:
            bench = replace(bench, **{name: getattr(args, name)})
    if min(bench.n_s1, bench.n_s2) < 1 or bench.n_t < 2:
        raise ConfigError("need n_s1, n_s2 >= 1 and n_t >= 2")
    cfg.dims.validate(bench.nx * bench.ny)
    out = _stem(cfg, args.out, TRAIN_STEM)
    snaps = generate_snapshots(bench, workers=args.workers)
    save_snapshots(snaps, out)
    msg = f"generate: {snaps.n_h} x {snaps.n_data} snapshots -> {out.with_suffix('.bin')}"
    if not args.no_test:
        test = generate_test_set(bench, cfg.n_test, cfg.seeds.test, workers=args.workers)
        test_out = out.with_name(TEST_STEM) if args.out else cfg.path(TEST_STEM)
        save_snapshots(test, test_out)
        msg += f"; {test.n_traj} test tuples -> {test_out.with_suffix('.bin')}"
    return msg


def cmd_pod(cfg: RunConfig, args) -> str:
    stem = _stem(cfg, args.data, TRAIN_STEM)
    snaps = _load_data(stem)
    n = args.modes or cfg.dims.n_a
    basis = pod(snaps.U, snaps.mass, n)
    out = _stem(cfg, args.out, BASIS_STEM)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_basis(basis, out)
    rel = np.sqrt(basis.tail(n) / basis.eigenvalues.sum())
    return f"pod: {n} modes, relative tail {rel:.3e} -> {out.with_suffix('.bin')}"


def _outer_basis(cfg: RunConfig, args, snaps) -> np.ndarray:
    path = Path(args.basis) if args.basis else cfg.path(BASIS_STEM)
    if path.with_suffix(".bin").exists():
        modes = load_basis(path).modes
        if modes.shape[0] != snaps.n_h:
            raise DataError(f"basis at {path} has {modes.shape[0]} rows, data has {snaps.n_h}")
        if modes.shape[1] < cfg.dims.n_a:
            raise DataError(f"basis at {path} has {modes.shape[1]} modes, need N_A={cfg.dims.n_a}")
        return modes[:, : cfg.dims.n_a]
    log.info("no stored basis at %s; computing POD", path)
    return pod(snaps.U, snaps.mass, cfg.dims.n_a).modes


def cmd_train_dod(cfg: RunConfig, args) -> str:
    cfg = _training_overrides(cfg, args)
    stem = _stem(cfg, args.data, TRAIN_STEM)
    snaps = _load_data(stem)
    A = _outer_basis(cfg, args, snaps)
    arch = cfg.architecture(args.preset)
    model = DodModel.build(A, cfg.dims.n_prime, np.random.default_rng(cfg.dod_training.init_seed),
                           n_mu=snaps.mu.shape[1], latent=arch.dod_latent,
                           seed_hidden=arch.dod_seed_hidden, head_hidden=arch.dod_head_hidden)
    hist = train_dod(model, snaps, cfg.dod_training)
    model.meta.update(data_fingerprint=_fingerprint(stem), preset=arch.name)
    out = Path(args.out) if args.out else cfg.path(DOD_DIR)
    save_dod(model, out)
    return (f"train-dod: {hist.epochs} epochs, best validation loss {hist.best_val:.4e}, "
            f"{count_active_weights(model)} weights -> {out}")


def cmd_train_rom(cfg: RunConfig, args) -> str:
    cfg = _training_overrides(cfg, args)
    stem = _stem(cfg, args.data, TRAIN_STEM)
    variant = args.variant
    dod = None
    if variant != POD_DL_ROM:
        dod_dir = Path(args.dod) if args.dod else cfg.path(DOD_DIR)
        if not (dod_dir / "manifest.json").exists():
            raise SerialOrderError(f"serial-order error: {variant} needs a trained DOD at {dod_dir}; "
                                   "run 'train-dod' first")
        dod = load_dod(dod_dir)
    snaps = _load_data(stem)
    fp = _fingerprint(stem)
    if dod is not None and dod.meta.get("data_fingerprint") not in (None, fp):
        raise DataError(f"DOD was trained on data {dod.meta['data_fingerprint']}, not {fp}")
    arch = cfg.architecture(args.preset)
    if variant == POD_DL_ROM:
        path = Path(args.basis) if args.basis else cfg.path(BASIS_STEM)
        basis = load_basis(path) if path.with_suffix(".bin").exists() else None
        model, hist = train_pod_dl_rom(snaps, cfg.dims, cfg.training, arch, basis)
    elif variant == DOD_DFNN:
        model, hist = train_dod_dfnn(snaps, dod, cfg.dims, cfg.training, arch)
    else:
        model, hist = train_dod_dl_rom(snaps, dod, cfg.dims, cfg.training, arch)
    model.meta.update(data_fingerprint=fp, preset=arch.name)
    out = Path(args.out) if args.out else cfg.path(_rom_dir(variant))
    save_rom(model, out)
    return (f"train-rom {variant}: {hist.epochs} epochs, best validation loss {hist.best_val:.4e}, "
            f"{count_active_weights(model)} weights -> {out}")


def cmd_evaluate(cfg: RunConfig, args) -> str:
    model_dir = Path(args.model) if args.model else cfg.path(_rom_dir(args.variant))
    if not (model_dir / "manifest.json").exists():
        raise DataError(f"no model bundle at {model_dir}")
    model = load_rom(model_dir)
    test = _load_data(_stem(cfg, args.test, TEST_STEM))
    rep = relative_error(model, test)
    if args.reps > 0:
        add_timings(rep, model, test, args.reps)
    out = Path(args.out) if args.out else cfg.path(f"eval-{model.variant}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    rep.write_csv(out)
    timing = f", t_fwd {rep.t_fwd_ms:.3f} ms, speedup {rep.speedup:.0f}x" if args.reps > 0 else ""
    return f"evaluate {model.variant}: E_R {rep.E_R:.4f} on {len(rep.per_tuple)} tuples{timing} -> {out}"


def cmd_sweep(cfg: RunConfig, args) -> str:
    cfg = _training_overrides(cfg, args)
    train = _load_data(_stem(cfg, args.data, TRAIN_STEM))
    test = _load_data(_stem(cfg, args.test, TEST_STEM))
    presets = load_presets(cfg.presets_file)
    names = args.presets.split(",") if args.presets else list(presets)
    unknown = [n for n in names if n not in presets]
    if unknown:
        raise ConfigError(f"unknown presets {unknown}; have {sorted(presets)}")
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants {bad}")
    table = weight_error_sweep(train, test, cfg.dims, [presets[n] for n in names], cfg.training,
                               cfg.dod_training, variants, timing=not args.no_timing,
                               timing_reps=cfg.timing_reps)
    out = Path(args.out) if args.out else cfg.path("sweep.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    table.write_csv(out)
    return f"sweep: {len(table.rows)} cells ok, {len(table.failures)} failed -> {out}"


def cmd_knw(cfg: RunConfig, args) -> str:
    snaps = _load_data(_stem(cfg, args.data, TRAIN_STEM))
    n_max = args.n_max or snaps.n_s2
    A = None
    if args.pre_reduce:
        A = pod(snaps.U, snaps.mass, cfg.dims.n_a).modes
    rows = knw_curves(snaps, n_max, A)
    out = Path(args.out) if args.out else cfg.path("knw.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, ["n", "global_tail", "worst_slice_tail"], ((int(r[0]), r[1], r[2]) for r in rows))
    k = min(2, n_max) - 1
    return f"knw: n={int(rows[k, 0])} global {rows[k, 1]:.3e} worst slice {rows[k, 2]:.3e} -> {out}"


def cmd_export(cfg: RunConfig, args) -> str:
    src = Path(args.input)
    if not src.exists():
        raise DataError(f"no such file {src}")
    out = Path(args.out) if args.out else src.with_suffix(src.suffix + ".csv")
    if is_matrix_file(src):
        M = read_matrix(src)
        write_csv(out, [f"c{j}" for j in range(M.shape[1])], M.tolist())
        return f"export: matrix {M.shape[0]} x {M.shape[1]} -> {out}"
    try:
        net = load_mlp(src)
    except CheckpointError:
        raise DataError(f"{src} is neither a matrix container nor a network checkpoint") from None
    rows = []
    for li, layer in enumerate(net.layers):
        for (i, j), w in np.ndenumerate(layer.weight.data):
            rows.append((li, "weight", i, j, w, int(layer.weight_mask[i, j])))
        for i, b in enumerate(layer.bias.data):
            rows.append((li, "bias", i, "", b, int(layer.bias_mask[i])))
    write_csv(out, ["layer", "kind", "row", "col", "value", "active"], rows)
    return f"export: network with {len(net.layers)} layers -> {out}"


COMMANDS = {
    "generate": cmd_generate, "pod": cmd_pod, "train-dod": cmd_train_dod, "train-rom": cmd_train_rom,
    "evaluate": cmd_evaluate, "sweep": cmd_sweep, "knw": cmd_knw, "export": cmd_export,
}


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--preset", help="network width preset (default from config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dodrom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-c", "--config", help="run config (INI); defaults apply when omitted")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="solve the full-order model on sampled parameters")
    p.add_argument("--out", help="snapshot store stem (default <output_dir>/snapshots)")
    p.add_argument("--n-s1", type=int, dest="n_s1")
    p.add_argument("--n-s2", type=int, dest="n_s2")
    p.add_argument("--n-t", type=int, dest="n_t")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-test", action="store_true", help="skip the held-out test set")

    p = sub.add_parser("pod", help="mass-weighted POD of the snapshots")
    p.add_argument("--data")
    p.add_argument("--modes", type=int, help="number of modes (default N_A)")
    p.add_argument("--out")

    p = sub.add_parser("train-dod", help="train the adaptive DOD basis")
    p.add_argument("--data")
    p.add_argument("--basis", help="stored POD basis stem (computed when missing)")
    p.add_argument("--out")
    _add_training_flags(p)

    p = sub.add_parser("train-rom", help="train one reduced-order model")
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--data")
    p.add_argument("--dod", help="trained DOD bundle (DOD variants)")
    p.add_argument("--basis", help="stored POD basis stem (pod-dl-rom)")
    p.add_argument("--omega-h", type=float, dest="omega_h")
    p.add_argument("--out")
    _add_training_flags(p)

    p = sub.add_parser("evaluate", help="relative error and speedup on the test set")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--model", help="model bundle directory")
    g.add_argument("--variant", choices=VARIANTS, help="use the bundle in the output directory")
    p.add_argument("--test")
    p.add_argument("--reps", type=int, default=20, help="timing repetitions (0 disables timing)")
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="active weights versus error over presets")
    p.add_argument("--data")
    p.add_argument("--test")
    p.add_argument("--presets", help="comma-separated preset names (default: all)")
    p.add_argument("--variants", help="comma-separated variants (default: all)")
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--out")
    _add_training_flags(p)

    p = sub.add_parser("knw", help="global and worst-slice relative eigenvalue tails")
    p.add_argument("--data")
    p.add_argument("--n-max", type=int, dest="n_max")
    p.add_argument("--pre-reduce", action="store_true", help="project slices onto N_A POD modes first")
    p.add_argument("--out")

    p = sub.add_parser("export", help="convert a binary matrix or network file to CSV")
    p.add_argument("input")
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        msg = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SerialOrderError, DataOverlapError, StoreError, CheckpointError, RankError,
            FileNotFoundError, ParameterError, SolverError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    print(msg)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
