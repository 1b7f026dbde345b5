"""PCA spectra of output ensembles, error statistics and latent-dimension sweeps."""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets.types import OperatorDataset
from .errors import ShapeError, StatisticsError, TrainingError
from .models import ModelSpec, OperatorModel, Normalization, TrainConfig, init_model, predict_dataset, train

log = logging.getLogger(__name__)

EIG_CLAMP = 1e-12


@dataclass
class PcaSpectrum:
    eigenvalues: np.ndarray
    quadrature_weight: float
    mean_function: np.ndarray
    n_samples: int
    modes: np.ndarray | None = None

    def total(self) -> float:
        return float(self.eigenvalues.sum())


def pca_spectrum(outputs, cell_weight: float = 1.0, keep_modes: bool = False) -> PcaSpectrum:
    """Eigenvalues of the empirical covariance operator of discretised functions.

    ``outputs`` is (N, P*d_s), one flattened function per row. The L2 inner
    product is approximated by ``cell_weight`` times the Euclidean one, so
    ``lambda_k = cell_weight * sigma_k**2 / N`` with ``sigma_k`` the singular
    values of the centred snapshot matrix.
    """
    x = np.asarray(outputs, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"outputs must be (N, features), got {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise StatisticsError(f"PCA needs at least 2 samples, got {n}")
    mean = x.mean(axis=0)
    centred = x - mean
    if keep_modes:
        _, sv, vt = np.linalg.svd(centred, full_matrices=False)
    else:
        sv, vt = np.linalg.svd(centred, compute_uv=False), None
    lam = cell_weight * sv ** 2 / n
    if lam.size and lam.min() < -EIG_CLAMP:
        raise StatisticsError(f"negative eigenvalue {lam.min()}")
    lam = np.maximum(lam, 0.0)
    return PcaSpectrum(lam, float(cell_weight), mean, n, vt)


def dataset_spectrum(ds: OperatorDataset, keep_modes: bool = False) -> PcaSpectrum:
    return pca_spectrum(ds.s.reshape(ds.n_samples, -1), ds.cell_weight, keep_modes)


def tail_energy(spec: PcaSpectrum, n: int) -> float:
    """Sum of eigenvalues beyond the leading ``n``."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    return float(spec.eigenvalues[n:].sum())


def pca_projection(outputs, spec: PcaSpectrum, k: int = 3) -> np.ndarray:
    """Coordinates of each centred function on the leading ``k`` modes."""
    if spec.modes is None:
        raise ValueError("spectrum was computed without modes")
    x = np.asarray(outputs, dtype=np.float64) - spec.mean_function
    return x @ spec.modes[:k].T


# --- errors -----------------------------------------------------------------

@dataclass
class ErrorStats:
    """Per-sample relative L2 errors ``||s - s_hat|| / ||s||`` and their summary.

    ``std`` is the population standard deviation (ddof=0). ``per_channel``
    holds the same ratio per output channel, shape (N, d_s); entries whose
    target channel has zero norm are NaN.
    """

    per_sample_errors: np.ndarray
    mean: float
    std: float
    worst_case_index: int
    per_channel: np.ndarray
    excluded: int = 0

    @property
    def channel_mean(self) -> np.ndarray:
        return np.nanmean(self.per_channel, axis=0)

    @property
    def channel_std(self) -> np.ndarray:
        return np.nanstd(self.per_channel, axis=0)

    @property
    def worst_case(self) -> np.ndarray:
        return self.per_channel[self.worst_case_index]


def error_stats(s_true, s_pred) -> ErrorStats:
    """Relative L2 statistics for stacked targets and predictions (N, P, d_s)."""
    s_true = np.asarray(s_true, dtype=np.float64)
    s_pred = np.asarray(s_pred, dtype=np.float64)
    if s_true.shape != s_pred.shape or s_true.ndim != 3:
        raise ShapeError(f"need matching (N, P, d_s) arrays, got {s_true.shape} and {s_pred.shape}")
    diff2 = (s_true - s_pred) ** 2
    norm2 = s_true ** 2
    num = diff2.sum(axis=(1, 2))
    den = norm2.sum(axis=(1, 2))
    keep = den > 0
    excluded = int((~keep).sum())
    if excluded:
        log.warning("%d samples with zero-norm targets excluded from relative error", excluded)
    if not keep.any():
        raise StatisticsError("every target has zero norm")
    errors = np.sqrt(num[keep] / den[keep])
    ch_num = diff2.sum(axis=1)[keep]
    ch_den = norm2.sum(axis=1)[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        per_channel = np.where(ch_den > 0, np.sqrt(ch_num / ch_den), np.nan)
    return ErrorStats(errors, float(errors.mean()), float(errors.std()),
                      int(np.argmax(errors)), per_channel, excluded)


def relative_l2(model: OperatorModel, ds: OperatorDataset) -> ErrorStats:
    return error_stats(ds.s, predict_dataset(model, ds))


def mean_squared_l2(model: OperatorModel, ds: OperatorDataset) -> float:
    """Monte Carlo estimate of E||F(u) - G(u)||^2 in L2, using the dataset's cell weight."""
    resid = ds.s - predict_dataset(model, ds)
    return float(ds.cell_weight * np.sum(resid ** 2) / ds.n_samples)


# --- sweeps -----------------------------------------------------------------

@dataclass(frozen=True)
class ArchConfig:
    width: int = 100
    depth: int = 5


@dataclass
class SweepRow:
    benchmark: str
    kind: str
    n: int
    seed: int
    mean_rel_l2: float
    std_rel_l2: float
    params: int
    train_seconds: float
    status: str = "ok"
    mean_sq_l2: float = float("nan")
    pca_tail: float = float("nan")


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def select(self, kind: str, n: int) -> list[SweepRow]:
        return [r for r in self.rows if r.kind == kind and r.n == n and r.status == "ok"]

    def errors(self, kind: str, n: int) -> np.ndarray:
        return np.array([r.mean_rel_l2 for r in self.select(kind, n)])

    def summary(self) -> list[dict]:
        """Mean, std and median over seeds for each (kind, n)."""
        out = []
        seen = []
        for r in self.rows:
            if (r.kind, r.n) not in seen:
                seen.append((r.kind, r.n))
        for kind, n in seen:
            e = self.errors(kind, n)
            out.append({"kind": kind, "n": n, "runs": len(e),
                        "mean": float(e.mean()) if e.size else float("nan"),
                        "std": float(e.std()) if e.size else float("nan"),
                        "median": float(np.median(e)) if e.size else float("nan")})
        return out


def train_and_evaluate(train_ds: OperatorDataset, test_ds: OperatorDataset, kind: str, n: int,
                       seed: int, train_cfg: TrainConfig, arch: ArchConfig = ArchConfig(),
                       tail: float = float("nan")) -> tuple[SweepRow, OperatorModel | None]:
    """Build, train and evaluate one model; divergence gives a ``failed`` row."""
    spec = ModelSpec.for_dataset(train_ds, kind, n, arch.width, arch.depth)
    model = init_model(spec, seed, Normalization.fit(train_ds))
    cfg = TrainConfig(train_cfg.iterations, train_cfg.batch_size, train_cfg.schedule, seed,
                      train_cfg.query_batch)
    start = time.perf_counter()
    try:
        trained = train(model, train_ds, cfg).model
    except TrainingError as exc:
        log.error("%s n=%d seed=%d failed: %s", kind, n, seed, exc)
        return SweepRow(train_ds.benchmark_id, kind, n, seed, float("nan"), float("nan"),
                        model.num_params(), time.perf_counter() - start,
                        status=f"failed@{exc.iteration}", pca_tail=tail), None
    seconds = time.perf_counter() - start
    stats = relative_l2(trained, test_ds)
    row = SweepRow(train_ds.benchmark_id, kind, n, seed, stats.mean, stats.std,
                   trained.num_params(), seconds, "ok", mean_squared_l2(trained, test_ds), tail)
    return row, trained


_WORKER_DATA: dict = {}


def _worker_init(train_ds, test_ds):
    _WORKER_DATA["train"] = train_ds
    _WORKER_DATA["test"] = test_ds


def _worker_run(job):
    kind, n, seed, train_cfg, arch, tail = job
    row, _ = train_and_evaluate(_WORKER_DATA["train"], _WORKER_DATA["test"], kind, n, seed,
                                train_cfg, arch, tail)
    return row


def latent_sweep(train_ds: OperatorDataset, test_ds: OperatorDataset, kinds: Sequence[str],
                 ns: Sequence[int], seeds: Sequence[int], train_cfg: TrainConfig,
                 arch: ArchConfig = ArchConfig(), workers: int = 1,
                 progress=None) -> SweepResult:
    """Train and evaluate every (kind, n, seed) combination, in that nesting order."""
    if not kinds or not ns or not seeds:
        raise ValueError("kinds, ns and seeds must all be non-empty")
    spectrum = dataset_spectrum(test_ds)
    jobs = [(k, int(n), int(s), train_cfg, arch, tail_energy(spectrum, int(n)))
            for k in kinds for n in ns for s in seeds]
    rows: list[SweepRow] = []
    if workers <= 1:
        _worker_init(train_ds, test_ds)
        try:
            for job in jobs:
                rows.append(_worker_run(job))
                if progress is not None:
                    progress(rows[-1])
        finally:
            _WORKER_DATA.clear()
    else:
        with ProcessPoolExecutor(workers, initializer=_worker_init,
                                 initargs=(train_ds, test_ds)) as pool:
            for row in pool.map(_worker_run, jobs):
                rows.append(row)
                if progress is not None:
                    progress(row)
    return SweepResult(rows)


# --- CSV output -------------------------------------------------------------

SWEEP_COLUMNS = ["benchmark", "kind", "n", "seed", "mean_rel_l2", "std_rel_l2", "params",
                 "train_seconds", "status", "mean_sq_l2", "pca_tail"]

ERROR_CONVENTION = ("relative L2 error per sample is sqrt(sum|s - s_hat|^2 / sum|s|^2) over all "
                    "query points and channels; mean/std are over test samples (std ddof=0)")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_sweep_csv(result: SweepResult, path, record_timing: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {ERROR_CONVENTION}\n")
        fh.write("# mean_sq_l2: test-set mean of the squared L2 error (cell-weighted), raw units\n")
        fh.write("# pca_tail: sum of test-output covariance eigenvalues beyond n\n")
        fh.write("# train_seconds: wall clock, nan unless timing was recorded\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in result.rows:
            d = asdict(r)
            if not record_timing:
                d["train_seconds"] = float("nan")
            w.writerow([_fmt(d[c]) for c in SWEEP_COLUMNS])


def read_sweep_csv(path) -> SweepResult:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for rec in reader:
            rows.append(SweepRow(
                rec["benchmark"], rec["kind"], int(rec["n"]), int(rec["seed"]),
                float(rec["mean_rel_l2"]), float(rec["std_rel_l2"]), int(rec["params"]),
                float(rec["train_seconds"]), rec["status"], float(rec["mean_sq_l2"]),
                float(rec["pca_tail"])))
    return SweepResult(rows)


def write_spectrum_csv(spec: PcaSpectrum, path, max_modes: int | None = None) -> None:
    lam = spec.eigenvalues if max_modes is None else spec.eigenvalues[:max_modes]
    tails = np.cumsum(spec.eigenvalues[::-1])[::-1]
    with open(path, "w", newline="") as fh:
        fh.write(f"# PCA eigenvalues of the output covariance, L2 cell weight {spec.quadrature_weight!r}, "
                 f"N={spec.n_samples}\n")
        fh.write("# tail_energy_k = sum_{j>k} lambda_j (lower bound on linear-decoder mean squared L2 error)\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "lambda_k", "tail_energy_k"])
        for k in range(1, len(lam) + 1):
            tail = float(tails[k]) if k < len(tails) else 0.0
            w.writerow([k, repr(float(lam[k - 1])), repr(tail)])


def write_errors_csv(stats: ErrorStats, path, channel_names: Sequence[str] | None = None) -> None:
    d_s = stats.per_channel.shape[1]
    names = list(channel_names) if channel_names else [f"ch{c}" for c in range(d_s)]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {ERROR_CONVENTION}\n")
        fh.write(f"# mean={stats.mean!r} std={stats.std!r} worst_case_index={stats.worst_case_index} "
                 f"excluded={stats.excluded}\n")
        for c, name in enumerate(names):
            fh.write(f"# {name}: mean={float(stats.channel_mean[c])!r} std={float(stats.channel_std[c])!r} "
                     f"worst_case={float(stats.worst_case[c])!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "rel_l2", *[f"rel_l2_{name}" for name in names]])
        for i, e in enumerate(stats.per_sample_errors):
            w.writerow([i, repr(float(e)), *[repr(float(v)) for v in stats.per_channel[i]]])
