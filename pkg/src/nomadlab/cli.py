"""Command-line entry point: ``nomadlab {gen,train,eval,pca,sweep,replay}``.

Exit codes: 0 success, 1 runtime or training failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

from . import config as C
from .analysis import (
    ArchConfig,
    dataset_spectrum,
    latent_sweep,
    pca_projection,
    relative_l2,
    write_errors_csv,
    write_spectrum_csv,
    write_sweep_csv,
)
from .datasets import (
    AdvectionConfig,
    AntiderivativeConfig,
    ShallowWaterConfig,
    gen_advection,
    gen_antiderivative,
    gen_shallow_water,
    read_dataset,
    write_dataset,
)
from .datasets.opds import read_container
from .datasets.shallow_water import full_lattice_dataset
from .errors import ConfigError, NomadLabError, ShapeError, TrainingError
from .models import (
    ModelSpec,
    Normalization,
    TrainConfig,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .netcore import LrSchedule, lr_at

log = logging.getLogger("nomadlab")

CHANNEL_NAMES = {"shallow-water": ["rho", "v1", "v2"]}


def _manifest_path(cfg: dict, out: str) -> Path:
    return Path(cfg.get("manifest") or f"{out}.manifest")


def generate(benchmark: str, n: int, seed: int, full_lattice: bool = False):
    if benchmark == "antiderivative":
        return gen_antiderivative(AntiderivativeConfig(n_samples=n, seed=seed))
    if benchmark == "advection":
        return gen_advection(AdvectionConfig(n_samples=n, seed=seed))
    if benchmark == "shallow-water":
        return gen_shallow_water(ShallowWaterConfig(n_samples=n, seed=seed, full_lattice=full_lattice))
    raise ConfigError(f"unknown benchmark {benchmark!r}")


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        iterations=cfg["iterations"], batch_size=cfg["batch"],
        schedule=LrSchedule(cfg["lr"], cfg["decay_rate"], cfg["decay_every"]),
        seed=seed, query_batch=cfg["query_batch"] or None,
    )


def _dataset_benchmark(path) -> str:
    fields, _ = read_container(path)
    return fields.get("benchmark_id", "")


# --- commands ---------------------------------------------------------------

def cmd_gen(file_values: dict, flags: dict) -> int:
    benchmark = flags.get("benchmark", file_values.get("benchmark"))
    if benchmark is None:
        raise ConfigError("gen: --benchmark is required")
    cfg = C.resolve("gen", benchmark, file_values, flags)
    if cfg["n"] < 1:
        raise ConfigError(f"gen: --n must be >= 1, got {cfg['n']}")
    ds = generate(benchmark, cfg["n"], cfg["seed"], cfg["full_lattice"])
    write_dataset(ds, cfg["out"])
    print(f"wrote {cfg['out']}: benchmark={ds.benchmark_id} N={ds.n_samples} m={ds.m} "
          f"P={ds.n_queries} d_u={ds.d_u} d_s={ds.d_s} d_x={ds.d_x} d_y={ds.d_y}")
    C.write_manifest(_manifest_path(cfg, cfg["out"]), "gen", cfg)
    return 0


def cmd_train(file_values: dict, flags: dict) -> int:
    data = flags.get("data", file_values.get("data"))
    if data is None:
        raise ConfigError("train: --data is required")
    benchmark = _dataset_benchmark(data)
    cfg = C.resolve("train", benchmark, file_values, flags)
    ds = read_dataset(cfg["data"])
    spec = ModelSpec.for_dataset(ds, cfg["decoder"], cfg["latent"], cfg["width"], cfg["depth"])
    model = init_model(spec, cfg["seed"], Normalization.fit(ds))
    tcfg = _train_config(cfg, cfg["seed"])
    every = max(1, tcfg.iterations // 20)

    def report(it, loss):
        if (it + 1) % every == 0:
            log.info("iteration %d/%d loss %.6g", it + 1, tcfg.iterations, loss)

    start = time.perf_counter()
    try:
        result = train(model, ds, tcfg, callback=report)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        C.write_manifest(_manifest_path(cfg, cfg["out"]), "train", cfg,
                         {"status": "diverged", "failed_iteration": exc.iteration})
        return 1
    minutes = (time.perf_counter() - start) / 60.0
    meta = {"benchmark": benchmark, "iterations": tcfg.iterations, "seed": cfg["seed"]}
    save_checkpoint(result.model, cfg["out"], meta)
    if cfg["history"]:
        with open(cfg["history"], "w", newline="") as fh:
            fh.write("# training loss per iteration, standardised output units\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "lr", "loss"])
            for it, loss in enumerate(result.losses):
                w.writerow([it, repr(lr_at(tcfg.schedule, it)), repr(float(loss))])
    params = result.model.num_params()
    final = float(result.losses[-1]) if result.losses.size else float("nan")
    print(f"wrote {cfg['out']}: decoder={spec.decoder_kind} n={spec.latent_dim} params={params} "
          f"iterations={tcfg.iterations} final_loss={final:.6g} minutes={minutes:.2f}")
    C.write_manifest(_manifest_path(cfg, cfg["out"]), "train", cfg,
                     {"status": "ok", "params": params, "wall_minutes": minutes, "final_loss": final})
    return 0


def cmd_eval(file_values: dict, flags: dict) -> int:
    data = flags.get("data", file_values.get("data"))
    if data is None:
        raise ConfigError("eval: --data is required")
    benchmark = _dataset_benchmark(data)
    cfg = C.resolve("eval", benchmark, file_values, flags)
    model, _ = load_checkpoint(cfg["checkpoint"])
    ds = read_dataset(cfg["data"])
    spec = model.spec
    have = (ds.m, ds.d_u, ds.d_s, ds.d_y)
    want = (spec.m, spec.d_u, spec.d_s, spec.d_y)
    if have != want:
        raise ShapeError(f"checkpoint expects (m, d_u, d_s, d_y)={want} but dataset has {have}")
    if benchmark == "shallow-water" and cfg["full_resolution"]:
        ds = full_lattice_dataset(ds)
    stats = relative_l2(model, ds)
    names = CHANNEL_NAMES.get(benchmark)
    write_errors_csv(stats, cfg["out"], names)
    names = names or [f"ch{c}" for c in range(ds.d_s)]
    per_ch = " ".join(f"{nm}={m:.4g}+-{s:.4g}" for nm, m, s in
                      zip(names, stats.channel_mean, stats.channel_std))
    print(f"rel_l2 mean={stats.mean:.6g} std={stats.std:.6g} worst={stats.worst_case_index} "
          f"{per_ch} (P={ds.n_queries})")
    C.write_manifest(_manifest_path(cfg, cfg["out"]), "eval", cfg,
                     {"mean_rel_l2": stats.mean, "std_rel_l2": stats.std})
    return 0


def cmd_pca(file_values: dict, flags: dict) -> int:
    data = flags.get("data", file_values.get("data"))
    if data is None:
        raise ConfigError("pca: --data is required")
    benchmark = _dataset_benchmark(data)
    cfg = C.resolve("pca", benchmark, file_values, flags)
    ds = read_dataset(cfg["data"])
    spectrum = dataset_spectrum(ds, keep_modes=bool(cfg["projection"]))
    write_spectrum_csv(spectrum, cfg["out"], cfg["max_modes"])
    if cfg["projection"]:
        coords = pca_projection(ds.s.reshape(ds.n_samples, -1), spectrum, 3)
        with open(cfg["projection"], "w", newline="") as fh:
            fh.write("# coordinates on the three leading PCA modes; tag = generating parameter(s)\n")
            w = csv.writer(fh, lineterminator="\n")
            k = coords.shape[1]
            w.writerow(["sample", *[f"pc{j + 1}" for j in range(k)], "tag"])
            for i in range(ds.n_samples):
                w.writerow([i, *[repr(float(v)) for v in coords[i]],
                            " ".join(repr(float(v)) for v in ds.tags[i])])
    lam = spectrum.eigenvalues
    print(f"wrote {cfg['out']}: N={spectrum.n_samples} modes={lam.size} "
          f"lambda_1={lam[0]:.6g} total={lam.sum():.6g}")
    C.write_manifest(_manifest_path(cfg, cfg["out"]), "pca", cfg)
    return 0


def sweep_datasets(cfg: dict):
    """Train/test sets for a sweep, cached in ``workdir`` when given."""
    benchmark = cfg["benchmark"]
    full = benchmark == "shallow-water"
    specs = [("train", cfg["n_train"], cfg["data_seed"], False),
             ("test", cfg["n_test"], cfg["data_seed"] + 1, full)]
    out = []
    for split, n, seed, lattice in specs:
        path = None
        if cfg.get("workdir"):
            Path(cfg["workdir"]).mkdir(parents=True, exist_ok=True)
            path = Path(cfg["workdir"]) / f"{benchmark}_{split}_n{n}_seed{seed}.opds"
            if path.exists():
                out.append(read_dataset(path))
                continue
        ds = generate(benchmark, n, seed, lattice)
        if path is not None:
            write_dataset(ds, path)
        out.append(ds)
    return out


def cmd_sweep(file_values: dict, flags: dict) -> int:
    benchmark = flags.get("benchmark", file_values.get("benchmark"))
    if benchmark is None:
        raise ConfigError("sweep: --benchmark is required")
    cfg = C.resolve("sweep", benchmark, file_values, flags)
    for kind in cfg["kinds"]:
        if kind not in ("linear", "nomad"):
            raise ConfigError(f"sweep: unknown decoder kind {kind!r}")
    train_ds, test_ds = sweep_datasets(cfg)

    def progress(row):
        log.info("%s n=%d seed=%d -> %s mean_rel_l2=%.4g", row.kind, row.n, row.seed,
                 row.status, row.mean_rel_l2)

    result = latent_sweep(train_ds, test_ds, cfg["kinds"], cfg["ns"], cfg["seeds"],
                          _train_config(cfg, 0), ArchConfig(cfg["width"], cfg["depth"]),
                          cfg["workers"], progress)
    write_sweep_csv(result, cfg["out"], cfg["record_timing"])
    for s in result.summary():
        print(f"{s['kind']:>6} n={s['n']:<3d} runs={s['runs']} mean={s['mean']:.4g} "
              f"std={s['std']:.4g} median={s['median']:.4g}")
    failed = sum(r.status != "ok" for r in result.rows)
    C.write_manifest(_manifest_path(cfg, cfg["out"]), "sweep", cfg,
                     {"runs": len(result.rows), "failed": failed,
                      "train_seconds": ",".join(f"{r.train_seconds:.3f}" for r in result.rows)})
    return 0


COMMAND_FUNCS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "pca": cmd_pca,
                 "sweep": cmd_sweep}


# --- argument parsing -------------------------------------------------------

def _add(p, *names, **kw):
    p.add_argument(*names, default=argparse.SUPPRESS, **kw)


def _train_flags(p):
    _add(p, "--width", type=int, help="hidden width of both networks (default 100)")
    _add(p, "--depth", type=int, help="dense layers per network (default 5)")
    _add(p, "--iterations", type=int, help="training iterations (benchmark default)")
    _add(p, "--batch", type=int, help="samples per minibatch (default 100)")
    _add(p, "--lr", type=float, help="initial learning rate (default 0.001)")
    _add(p, "--decay-rate", dest="decay_rate", type=float, help="learning-rate decay factor (0.99)")
    _add(p, "--decay-every", dest="decay_every", type=int, help="iterations per decay (100)")
    _add(p, "--query-batch", dest="query_batch", type=int,
         help="random query points per sample per iteration; 0 = all (default)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nomadlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        _add(p, "--config", help="key=value file; flags override it")
        _add(p, "--manifest", help="manifest path (default: <out>.manifest)")
        _add(p, "--out", help="output path")

    p = sub.add_parser("gen", help="generate a benchmark dataset (OPDS file)")
    common(p)
    _add(p, "--benchmark", choices=["antiderivative", "advection", "shallow-water"])
    _add(p, "--preset", choices=list(C.PRESETS))
    _add(p, "--n", type=int, help="number of samples")
    _add(p, "--seed", type=int)
    _add(p, "--full-lattice", dest="full_lattice", action="store_const", const=True,
         help="shallow water: store every snapshot-lattice point instead of P random ones")

    p = sub.add_parser("train", help="train a model on a dataset")
    common(p)
    _add(p, "--data", help="training dataset")
    _add(p, "--preset", choices=list(C.PRESETS))
    _add(p, "--decoder", choices=["linear", "nomad"])
    _add(p, "--latent", type=int, help="latent dimension n")
    _add(p, "--seed", type=int)
    _add(p, "--history", help="loss-history CSV path")
    _train_flags(p)

    p = sub.add_parser("eval", help="relative L2 errors of a checkpoint on a dataset")
    common(p)
    _add(p, "--checkpoint")
    _add(p, "--data")
    _add(p, "--no-full-resolution", dest="full_resolution", action="store_const", const=False,
         help="shallow water: evaluate at the stored query points only")

    p = sub.add_parser("pca", help="PCA spectrum of a dataset's output functions")
    common(p)
    _add(p, "--data")
    _add(p, "--max-modes", dest="max_modes", type=int)
    _add(p, "--projection", help="CSV of coordinates on the top three modes")

    p = sub.add_parser("sweep", help="latent-dimension sweep over decoders and seeds")
    common(p)
    _add(p, "--benchmark", choices=["antiderivative", "advection", "shallow-water"])
    _add(p, "--preset", choices=list(C.PRESETS))
    _add(p, "--kinds", help="comma-separated decoder kinds")
    _add(p, "--ns", help="latent dimensions, e.g. 1,2,4,8")
    _add(p, "--seeds", help="seeds, e.g. 0-9")
    _add(p, "--n-train", dest="n_train", type=int)
    _add(p, "--n-test", dest="n_test", type=int)
    _add(p, "--data-seed", dest="data_seed", type=int)
    _add(p, "--workdir", help="directory to cache generated datasets")
    _add(p, "--workers", type=int, help="parallel worker processes (default 1)")
    _add(p, "--record-timing", dest="record_timing", action="store_const", const=True,
         help="write wall-clock seconds into sweep.csv (breaks byte-identical reruns)")
    _train_flags(p)

    p = sub.add_parser("replay", help="rerun a command from its manifest")
    p.add_argument("manifest_file")
    _add(p, "--out", help="write to this path instead of the recorded one")
    return parser


def run(command: str, file_values: dict, flags: dict) -> int:
    return COMMAND_FUNCS[command](file_values, flags)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config",
                                                              "manifest_file")}
    try:
        if args.command == "replay":
            command, file_values = C.read_manifest(args.manifest_file)
            return run(command, file_values, flags)
        file_values = C.read_kv_file(args.config) if getattr(args, "config", None) else {}
        if "out" not in flags and "out" not in file_values:
            raise ConfigError(f"{args.command}: --out is required")
        return run(args.command, file_values, flags)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (NomadLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
