"""Encoder / approximator / decoder operator networks.

An :class:`OperatorModel` maps sensor readings ``u`` (m, d_u) and query
points ``y`` (P, d_y) to predicted output values (P, d_s):

* encode: per-channel standardisation of ``u``, flattened to length m*d_u;
* approximate: the branch MLP, giving a latent code ``beta`` of length n;
* decode: either the linear decoder ``sum_i beta_i tau_i(y)`` whose basis
  ``tau`` is a trunk MLP with n*d_s outputs, or the NOMAD decoder
  ``f([beta, y])``, one MLP evaluated on the concatenation.

Decoders work in standardised output units; :func:`predict` maps back to
raw units with the training-set mean and std of each output channel.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .datasets.opds import Payload, read_container, write_container
from .datasets.types import OperatorDataset
from .errors import ConfigError, FormatError, ShapeError, TrainingError
from .netcore import (
    AdamState,
    LrSchedule,
    MlpParams,
    adam_step,
    add_params,
    backward_cached,
    forward_cached,
    init_params,
    lr_at,
    mlp_forward,
)

log = logging.getLogger(__name__)

DECODER_KINDS = ("linear", "nomad")
STD_FLOOR = 1e-8
# rows of (beta, y) pushed through the NOMAD network at once; bounds memory
ROW_CHUNK = 1 << 15


@dataclass(frozen=True)
class ModelSpec:
    latent_dim: int
    decoder_kind: str
    branch_sizes: tuple[int, ...]
    decoder_sizes: tuple[int, ...]
    m: int
    d_u: int = 1
    d_s: int = 1
    d_y: int = 1

    def __post_init__(self):
        object.__setattr__(self, "branch_sizes", tuple(int(s) for s in self.branch_sizes))
        object.__setattr__(self, "decoder_sizes", tuple(int(s) for s in self.decoder_sizes))
        n = self.latent_dim
        if self.decoder_kind not in DECODER_KINDS:
            raise ConfigError(f"decoder_kind must be one of {DECODER_KINDS}, got {self.decoder_kind!r}")
        if n < 1:
            raise ConfigError(f"latent dimension must be >= 1, got {n}")
        if len(self.branch_sizes) < 2 or len(self.decoder_sizes) < 2:
            raise ConfigError("branch and decoder need at least one layer each")
        if self.branch_sizes[0] != self.m * self.d_u or self.branch_sizes[-1] != n:
            raise ConfigError(
                f"branch must map {self.m * self.d_u} -> {n}, got {self.branch_sizes}")
        if self.decoder_kind == "linear":
            want = (self.d_y, n * self.d_s)
        else:
            want = (n + self.d_y, self.d_s)
        if (self.decoder_sizes[0], self.decoder_sizes[-1]) != want:
            raise ConfigError(
                f"{self.decoder_kind} decoder must map {want[0]} -> {want[1]}, got {self.decoder_sizes}")

    @classmethod
    def build(cls, decoder_kind: str, latent_dim: int, m: int, d_u=1, d_s=1, d_y=1,
              width: int = 100, depth: int = 5) -> "ModelSpec":
        """Spec with ``depth`` dense layers of ``width`` units in both networks.

        ``depth`` counts weight layers, so ``depth=5`` means four hidden
        layers plus the affine output layer.
        """
        if depth < 1 or width < 1:
            raise ConfigError(f"depth and width must be positive, got {depth}, {width}")
        hidden = [width] * (depth - 1)
        branch = [m * d_u, *hidden, latent_dim]
        if decoder_kind == "linear":
            decoder = [d_y, *hidden, latent_dim * d_s]
        else:
            decoder = [latent_dim + d_y, *hidden, d_s]
        return cls(latent_dim, decoder_kind, tuple(branch), tuple(decoder), m, d_u, d_s, d_y)

    @classmethod
    def for_dataset(cls, ds: OperatorDataset, decoder_kind: str, latent_dim: int,
                    width: int = 100, depth: int = 5) -> "ModelSpec":
        return cls.build(decoder_kind, latent_dim, ds.m, ds.d_u, ds.d_s, ds.d_y, width, depth)


@dataclass(frozen=True)
class Normalization:
    u_mean: np.ndarray
    u_std: np.ndarray
    s_mean: np.ndarray
    s_std: np.ndarray

    @classmethod
    def identity(cls, d_u: int, d_s: int) -> "Normalization":
        return cls(np.zeros(d_u), np.ones(d_u), np.zeros(d_s), np.ones(d_s))

    @classmethod
    def fit(cls, ds: OperatorDataset) -> "Normalization":
        u = ds.u.reshape(-1, ds.d_u)
        s = ds.s.reshape(-1, ds.d_s)
        return cls(u.mean(axis=0), np.maximum(u.std(axis=0), STD_FLOOR),
                   s.mean(axis=0), np.maximum(s.std(axis=0), STD_FLOOR))


@dataclass
class OperatorModel:
    spec: ModelSpec
    branch: MlpParams
    decoder: MlpParams
    norm: Normalization

    def __post_init__(self):
        if tuple(self.branch.sizes) != self.spec.branch_sizes:
            raise ShapeError(f"branch sizes {self.branch.sizes} != spec {self.spec.branch_sizes}")
        if tuple(self.decoder.sizes) != self.spec.decoder_sizes:
            raise ShapeError(f"decoder sizes {self.decoder.sizes} != spec {self.spec.decoder_sizes}")

    def num_params(self) -> int:
        return self.branch.num_params() + self.decoder.num_params()

    def copy(self) -> "OperatorModel":
        return OperatorModel(self.spec, self.branch.copy(), self.decoder.copy(), self.norm)


def init_model(spec: ModelSpec, seed, norm: Normalization | None = None) -> OperatorModel:
    """Fresh model; branch and decoder weights come from independent streams."""
    ss = np.random.SeedSequence(seed)
    kb, kd = ss.spawn(2)
    if norm is None:
        norm = Normalization.identity(spec.d_u, spec.d_s)
    return OperatorModel(spec, init_params(spec.branch_sizes, kb), init_params(spec.decoder_sizes, kd), norm)


# --- the three maps ---------------------------------------------------------

def encode(u_values, model: OperatorModel) -> np.ndarray:
    """Standardise sensor readings per channel and flatten them.

    Accepts one sample ``(m, d_u)`` or a batch ``(B, m, d_u)``.
    """
    u = np.asarray(u_values, dtype=np.float64)
    spec = model.spec
    if u.ndim == 1 and spec.d_u == 1:
        u = u[:, None]
    if u.ndim not in (2, 3) or u.shape[-2:] != (spec.m, spec.d_u):
        raise ShapeError(f"expected sensor readings (..., {spec.m}, {spec.d_u}), got {u.shape}")
    z = (u - model.norm.u_mean) / model.norm.u_std
    return z.reshape(*u.shape[:-2], spec.m * spec.d_u)


def decode_inputs(encoded, model: OperatorModel) -> np.ndarray:
    """Invert :func:`encode` back to raw sensor readings."""
    spec = model.spec
    z = np.asarray(encoded, dtype=np.float64).reshape(*np.shape(encoded)[:-1], spec.m, spec.d_u)
    return z * model.norm.u_std + model.norm.u_mean


def approximate(encoded, model: OperatorModel) -> np.ndarray:
    """Latent code(s) from encoded input(s): the branch network."""
    x = np.asarray(encoded, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.branch.n_in:
        raise ShapeError(f"encoded input has length {x.shape[1]}, branch expects {model.branch.n_in}")
    beta = mlp_forward(model.branch, x)
    return beta[0] if single else beta


def _check_beta_y(beta, y, spec: ModelSpec):
    beta = np.asarray(beta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if beta.shape != (spec.latent_dim,):
        raise ShapeError(f"latent code must have length {spec.latent_dim}, got shape {beta.shape}")
    if y.ndim == 1 and spec.d_y == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[1] != spec.d_y:
        raise ShapeError(f"query points must be (P, {spec.d_y}), got {y.shape}")
    return beta, y


def trunk_basis(y, model: OperatorModel) -> np.ndarray:
    """Linear-decoder basis values, shape (P, n, d_s)."""
    spec = model.spec
    t = mlp_forward(model.decoder, y)
    return t.reshape(y.shape[0], spec.latent_dim, spec.d_s)


def decode_linear(beta, y, model: OperatorModel) -> np.ndarray:
    """``sum_i beta_i tau_i(y)`` per output channel, in standardised units."""
    spec = model.spec
    if spec.decoder_kind != "linear":
        raise ConfigError(f"decode_linear called on a {spec.decoder_kind} model")
    beta, y = _check_beta_y(beta, y, spec)
    return np.einsum("i,pic->pc", beta, trunk_basis(y, model))


def _nomad_rows(beta, y):
    """Stack [beta_b, y_bp] for every sample b and query p."""
    b, n = beta.shape
    if y.ndim == 2:
        y = np.broadcast_to(y, (b, *y.shape))
    p = y.shape[1]
    x = np.empty((b, p, n + y.shape[2]))
    x[:, :, :n] = beta[:, None, :]
    x[:, :, n:] = y
    return x.reshape(b * p, -1)


def decode_nomad(beta, y, model: OperatorModel) -> np.ndarray:
    """``f([beta, y])`` for every query row, in standardised units."""
    spec = model.spec
    if spec.decoder_kind != "nomad":
        raise ConfigError(f"decode_nomad called on a {spec.decoder_kind} model")
    beta, y = _check_beta_y(beta, y, spec)
    out = np.empty((y.shape[0], spec.d_s))
    step = max(1, ROW_CHUNK)
    for lo in range(0, y.shape[0], step):
        out[lo:lo + step] = mlp_forward(model.decoder, _nomad_rows(beta[None], y[lo:lo + step]))
    return out


def decode(beta, y, model: OperatorModel) -> np.ndarray:
    if model.spec.decoder_kind == "linear":
        return decode_linear(beta, y, model)
    return decode_nomad(beta, y, model)


# --- batched evaluation -----------------------------------------------------

def _check_batch(u, y, model: OperatorModel):
    spec = model.spec
    u = np.asarray(u, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if u.ndim != 3 or u.shape[1:] != (spec.m, spec.d_u):
        raise ShapeError(f"batch inputs must be (B, {spec.m}, {spec.d_u}), got {u.shape}")
    if y.ndim == 2:
        ok = y.shape[1] == spec.d_y
    elif y.ndim == 3:
        ok = y.shape[0] == u.shape[0] and y.shape[2] == spec.d_y
    else:
        ok = False
    if not ok:
        raise ShapeError(f"queries must be (P, {spec.d_y}) or (B, P, {spec.d_y}), got {y.shape}")
    return u, y


def _sample_chunk(b: int, p: int) -> int:
    return max(1, min(b, ROW_CHUNK // max(p, 1)))


def predict_normalized(u, y, model: OperatorModel) -> np.ndarray:
    """Batched standardised predictions, shape (B, P, d_s)."""
    u, y = _check_batch(u, y, model)
    spec = model.spec
    beta = mlp_forward(model.branch, encode(u, model))
    b = u.shape[0]
    p = y.shape[-2]
    if spec.decoder_kind == "linear":
        if y.ndim == 2:
            basis = mlp_forward(model.decoder, y).reshape(p, spec.latent_dim, spec.d_s)
            return np.einsum("bi,pic->bpc", beta, basis)
        basis = mlp_forward(model.decoder, y.reshape(b * p, -1)).reshape(b, p, spec.latent_dim, spec.d_s)
        return np.einsum("bi,bpic->bpc", beta, basis)
    out = np.empty((b, p, spec.d_s))
    step = _sample_chunk(b, p)
    for lo in range(0, b, step):
        yc = y if y.ndim == 2 else y[lo:lo + step]
        rows = _nomad_rows(beta[lo:lo + step], yc)
        out[lo:lo + step] = mlp_forward(model.decoder, rows).reshape(-1, p, spec.d_s)
    return out


def predict(u_values, query_points, model: OperatorModel) -> np.ndarray:
    """Raw-unit predictions: decode(approximate(encode(u)), y), de-standardised.

    Single sample: ``u (m, d_u)``, ``y (P, d_y)`` -> ``(P, d_s)``.
    Batch: ``u (B, m, d_u)`` with shared ``y (P, d_y)`` or per-sample
    ``y (B, P, d_y)`` -> ``(B, P, d_s)``.
    """
    u = np.asarray(u_values, dtype=np.float64)
    y = np.asarray(query_points, dtype=np.float64)
    spec = model.spec
    if u.ndim == 1 and spec.d_u == 1:
        u = u[:, None]
    if y.ndim == 1 and spec.d_y == 1:
        y = y[:, None]
    single = u.ndim == 2
    if single:
        if y.ndim != 2:
            raise ShapeError(f"single-sample queries must be (P, d_y), got {y.shape}")
        u = u[None]
    z = predict_normalized(u, y, model)
    out = z * model.norm.s_std + model.norm.s_mean
    return out[0] if single else out


def predict_dataset(model: OperatorModel, ds: OperatorDataset, chunk: int = 100) -> np.ndarray:
    out = np.empty_like(ds.s)
    for lo in range(0, ds.n_samples, chunk):
        idx = slice(lo, lo + chunk)
        y = ds.y if ds.shared_queries else ds.y[idx]
        out[idx] = predict(ds.u[idx], y, model)
    return out


# --- loss and gradients -----------------------------------------------------

@dataclass
class Batch:
    """Raw-unit minibatch: u (B, m, d_u), y (P, d_y) or (B, P, d_y), s (B, P, d_s)."""

    u: np.ndarray
    y: np.ndarray
    s: np.ndarray

    @classmethod
    def from_dataset(cls, ds: OperatorDataset, idx=None) -> "Batch":
        if idx is None:
            return cls(ds.u, ds.y, ds.s)
        idx = np.asarray(idx)
        return cls(ds.u[idx], ds.y if ds.shared_queries else ds.y[idx], ds.s[idx])


def _loss_and_grads(model: OperatorModel, batch: Batch, want_grads: bool):
    spec = model.spec
    u, y = _check_batch(batch.u, batch.y, model)
    s = np.asarray(batch.s, dtype=np.float64)
    b = u.shape[0]
    if b == 0:
        raise ConfigError("empty batch")
    p = y.shape[-2]
    if s.shape != (b, p, spec.d_s):
        raise ShapeError(f"targets must be {(b, p, spec.d_s)}, got {s.shape}")
    n, d_s = spec.latent_dim, spec.d_s
    target = (s - model.norm.s_mean) / model.norm.s_std
    scale = 1.0 / (b * p)

    beta, branch_acts = forward_cached(model.branch, encode(u, model))
    dbeta = np.zeros_like(beta) if want_grads else None
    dec_grad = None

    if spec.decoder_kind == "linear":
        if y.ndim == 2:
            t, t_acts = forward_cached(model.decoder, y)
            # (n, P*d_s) layout so prediction is one matmul
            basis = t.reshape(p, n, d_s).transpose(1, 0, 2).reshape(n, p * d_s)
            resid = beta @ basis - target.reshape(b, p * d_s)
            loss = float(np.sum(resid * resid) * scale)
            if want_grads:
                g = (2.0 * scale) * resid
                dbeta = g @ basis.T
                dbasis = (beta.T @ g).reshape(n, p, d_s).transpose(1, 0, 2).reshape(p, n * d_s)
                dec_grad, _ = backward_cached(model.decoder, t_acts, dbasis, need_input_grad=False)
        else:
            t, t_acts = forward_cached(model.decoder, y.reshape(b * p, -1))
            basis = t.reshape(b, p, n, d_s)
            resid = np.einsum("bi,bpic->bpc", beta, basis) - target
            loss = float(np.sum(resid * resid) * scale)
            if want_grads:
                g = (2.0 * scale) * resid
                dbeta = np.einsum("bpc,bpic->bi", g, basis)
                dbasis = np.einsum("bpc,bi->bpic", g, beta).reshape(b * p, n * d_s)
                dec_grad, _ = backward_cached(model.decoder, t_acts, dbasis, need_input_grad=False)
    else:
        loss = 0.0
        step = _sample_chunk(b, p)
        for lo in range(0, b, step):
            hi = min(lo + step, b)
            yc = y if y.ndim == 2 else y[lo:hi]
            out, acts = forward_cached(model.decoder, _nomad_rows(beta[lo:hi], yc))
            resid = out - target[lo:hi].reshape(-1, d_s)
            loss += float(np.sum(resid * resid))
            if want_grads:
                gd, drows = backward_cached(model.decoder, acts, (2.0 * scale) * resid)
                dec_grad = gd if dec_grad is None else add_params(dec_grad, gd)
                dbeta[lo:hi] = drows[:, :n].reshape(hi - lo, p, n).sum(axis=1)
        loss *= scale

    if not np.isfinite(loss):
        raise TrainingError("non-finite loss")
    if not want_grads:
        return loss, None, None
    branch_grad, _ = backward_cached(model.branch, branch_acts, dbeta, need_input_grad=False)
    return loss, branch_grad, dec_grad


def training_loss(model: OperatorModel, batch: Batch) -> float:
    """Mean over samples and query points of the squared standardised residual.

    The per-sample mean over query points is a Monte Carlo estimate of the
    squared L2 norm of the error, so this is the empirical risk up to the
    domain measure.
    """
    return _loss_and_grads(model, batch, want_grads=False)[0]


def loss_gradients(model: OperatorModel, batch: Batch) -> tuple[MlpParams, MlpParams]:
    """Exact gradients of :func:`training_loss` for (branch, decoder)."""
    _, gb, gd = _loss_and_grads(model, batch, want_grads=True)
    return gb, gd


def loss_and_gradients(model: OperatorModel, batch: Batch):
    return _loss_and_grads(model, batch, want_grads=True)


# --- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 20000
    batch_size: int = 100
    schedule: LrSchedule = field(default_factory=LrSchedule)
    seed: int = 0
    # random query points per sample per iteration; None uses every stored point
    query_batch: int | None = None

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ConfigError(f"invalid iterations/batch size: {self.iterations}, {self.batch_size}")
        if self.query_batch is not None and self.query_batch < 1:
            raise ConfigError(f"query_batch must be >= 1, got {self.query_batch}")


@dataclass
class TrainResult:
    model: OperatorModel
    losses: np.ndarray
    seconds: float = 0.0


def _draw_batch(ds: OperatorDataset, cfg: TrainConfig, rng) -> Batch:
    idx = rng.integers(0, ds.n_samples, size=cfg.batch_size)
    q = cfg.query_batch
    p = ds.n_queries
    if q is None or q >= p:
        return Batch.from_dataset(ds, idx)
    if ds.shared_queries:
        cols = rng.choice(p, size=q, replace=False)
        return Batch(ds.u[idx], ds.y[cols], ds.s[idx][:, cols])
    cols = np.argsort(rng.random((len(idx), p)), axis=1)[:, :q]
    rows = idx[:, None]
    return Batch(ds.u[idx], ds.y[rows, cols], ds.s[rows, cols])


def train(model: OperatorModel, ds: OperatorDataset, cfg: TrainConfig,
          callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Adam on with-replacement minibatches; returns a new model and the loss per iteration.

    Raises :class:`TrainingError` carrying the iteration index if the loss
    or a gradient stops being finite.
    """
    if ds.n_samples < 1:
        raise ConfigError("cannot train on an empty dataset")
    if (ds.m, ds.d_u, ds.d_s, ds.d_y) != (model.spec.m, model.spec.d_u, model.spec.d_s, model.spec.d_y):
        raise ShapeError("dataset dimensions do not match the model spec")
    rng = np.random.default_rng(cfg.seed)
    branch, decoder = model.branch, model.decoder
    st_b, st_d = AdamState.zeros(branch), AdamState.zeros(decoder)
    losses = np.empty(cfg.iterations)
    current = model.copy()
    start = time.perf_counter()
    for it in range(cfg.iterations):
        batch = _draw_batch(ds, cfg, rng)
        try:
            # overflow surfaces as a TrainingError below, not as warnings
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gb, gd = _loss_and_grads(current, batch, want_grads=True)
            lr = lr_at(cfg.schedule, it)
            branch, st_b = adam_step(current.branch, gb, st_b, lr)
            decoder, st_d = adam_step(current.decoder, gd, st_d, lr)
        except TrainingError as exc:
            raise TrainingError(f"training diverged: {exc}", it) from None
        current = OperatorModel(model.spec, branch, decoder, model.norm)
        losses[it] = loss
        if callback is not None:
            callback(it, loss)
    return TrainResult(current, losses, time.perf_counter() - start)


# --- checkpoints ------------------------------------------------------------

def _floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")]) if text else np.zeros(0)


def save_checkpoint(model: OperatorModel, path, meta: dict[str, object] | None = None) -> None:
    """Write the model as an OPDS container with ``kind=checkpoint``.

    The header holds the spec and normalisation statistics; the payload is
    branch then decoder arrays, each layer weight (out, in) then bias.
    """
    spec = model.spec
    fields: dict[str, object] = {
        "kind": "checkpoint",
        "decoder_kind": spec.decoder_kind,
        "latent_dim": spec.latent_dim,
        "m": spec.m, "d_u": spec.d_u, "d_s": spec.d_s, "d_y": spec.d_y,
        "branch_sizes": ",".join(map(str, spec.branch_sizes)),
        "decoder_sizes": ",".join(map(str, spec.decoder_sizes)),
        "norm.u_mean": _floats(model.norm.u_mean),
        "norm.u_std": _floats(model.norm.u_std),
        "norm.s_mean": _floats(model.norm.s_mean),
        "norm.s_std": _floats(model.norm.s_std),
        "num_params": model.num_params(),
    }
    for key, value in (meta or {}).items():
        fields[f"meta.{key}"] = value
    write_container(path, fields, model.branch.arrays() + model.decoder.arrays())


def _take_mlp(payload: Payload, sizes) -> MlpParams:
    arrays = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        arrays.append(payload.take((fan_out, fan_in)))
        arrays.append(payload.take((fan_out,)))
    return MlpParams.from_arrays(arrays)


def load_checkpoint(path) -> tuple[OperatorModel, dict[str, str]]:
    fields, payload = read_container(path)
    if fields.get("kind") != "checkpoint":
        raise FormatError(f"expected kind=checkpoint, found {fields.get('kind')!r}", 16)
    try:
        spec = ModelSpec(
            int(fields["latent_dim"]), fields["decoder_kind"],
            tuple(int(v) for v in fields["branch_sizes"].split(",")),
            tuple(int(v) for v in fields["decoder_sizes"].split(",")),
            int(fields["m"]), int(fields["d_u"]), int(fields["d_s"]), int(fields["d_y"]),
        )
        norm = Normalization(*(_parse_floats(fields[f"norm.{k}"])
                               for k in ("u_mean", "u_std", "s_mean", "s_std")))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad checkpoint header: {exc}", 16) from None
    branch = _take_mlp(payload, spec.branch_sizes)
    decoder = _take_mlp(payload, spec.decoder_sizes)
    payload.finish()
    meta = {k[len("meta."):]: v for k, v in fields.items() if k.startswith("meta.")}
    return OperatorModel(spec, branch, decoder, norm), meta
