"""Acceptance gate.

Every test carries ``@pytest.mark.criterion(k)``; the terminal summary
prints one PASS / FAIL / NOT RUN line per criterion (see conftest.py).

Runs marked ``full_budget`` use the full published training budget
(5x100 networks, 20k iterations, 10 seeds) and need tens of CPU-hours on one
core, so they only run with ``pytest --full-budget``. Tests named
``*_desk`` train the same comparisons with a reduced budget and check the
qualitative ordering only; they are evidence, not a substitute for the
full-budget thresholds.
"""

import itertools
import time

import numpy as np
import pytest

from nomadlab.analysis import (
    ArchConfig,
    dataset_spectrum,
    latent_sweep,
    pca_spectrum,
    relative_l2,
)
from nomadlab.cli import main
from nomadlab.datasets import (
    AdvectionConfig,
    AntiderivativeConfig,
    ShallowWaterConfig,
    ShallowWaterState,
    gen_advection,
    gen_antiderivative,
    gen_shallow_water,
    read_dataset,
    sw_initial_state,
    sw_step_lax_friedrichs,
    write_dataset,
)
from nomadlab.datasets import shallow_water as sw
from nomadlab.errors import FormatError
from nomadlab.models import (
    Batch,
    ModelSpec,
    Normalization,
    OperatorModel,
    TrainConfig,
    init_model,
    loss_gradients,
    train,
    training_loss,
)
from nomadlab.netcore import LrSchedule

FULL_TRAIN = TrainConfig(iterations=20000, batch_size=100, schedule=LrSchedule(1e-3, 0.99, 100))
FULL_ARCH = ArchConfig(width=100, depth=5)
FULL_SEEDS = list(range(10))
FULL_NS = [1, 2, 4, 8, 16]

# reduced budget: 3000 iterations with the decay compressed to the same
# overall factor, 50 random query points per sample and iteration, 4x50 nets
DESK_TRAIN = TrainConfig(iterations=3000, batch_size=100, schedule=LrSchedule(1e-3, 0.99, 15),
                         query_batch=50)
DESK_ARCH = ArchConfig(width=50, depth=4)
DESK_SEEDS = [0, 1, 2]


def note(record_property, text):
    record_property("detail", text)
    print(text)


# --- shared datasets ---------------------------------------------------------------

@pytest.fixture(scope="module")
def anti_sets():
    return (gen_antiderivative(AntiderivativeConfig(n_samples=1000, seed=0)),
            gen_antiderivative(AntiderivativeConfig(n_samples=1000, seed=1)))


@pytest.fixture(scope="module")
def adv_test():
    return gen_advection(AdvectionConfig(n_samples=1000, seed=1))


@pytest.fixture(scope="module")
def full_anti_sweep(anti_sets):
    tr, te = anti_sets
    return latent_sweep(tr, te, ["linear", "nomad"], FULL_NS, FULL_SEEDS, FULL_TRAIN, FULL_ARCH)


@pytest.fixture(scope="module")
def full_adv_sweep(adv_test):
    tr = gen_advection(AdvectionConfig(n_samples=1000, seed=0))
    return latent_sweep(tr, adv_test, ["linear", "nomad"], [2], FULL_SEEDS, FULL_TRAIN, FULL_ARCH)


# --- 1: gradient oracle --------------------------------------------------------------

def fd_check(model, batch, h=1e-6):
    gb, gd = loss_gradients(model, batch)
    analytic = np.concatenate([gb.flat(), gd.flat()])
    nb = model.branch.num_params()
    base = np.concatenate([model.branch.flat(), model.decoder.flat()])

    def loss(vec):
        m = OperatorModel(model.spec, model.branch.with_flat(vec[:nb]),
                          model.decoder.with_flat(vec[nb:]), model.norm)
        return training_loss(m, batch)

    numeric = np.empty_like(base)
    for k in range(base.size):
        up, dn = base.copy(), base.copy()
        up[k] += h
        dn[k] -= h
        numeric[k] = (loss(up) - loss(dn)) / (2 * h)
    # relative error, with a 1e-4 floor on the denominator for components
    # that are themselves at roundoff level
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    return rel.max(), base.size


@pytest.mark.criterion(1)
def test_c1_gradient_oracle(record_property):
    start = time.perf_counter()
    anti = gen_antiderivative(AntiderivativeConfig(n_samples=3, seed=11))
    water = gen_shallow_water(ShallowWaterConfig(n_samples=3, seed=11))
    worst = {}
    for (name, ds), kind in itertools.product([("antiderivative", anti), ("shallow-water", water)],
                                              ["linear", "nomad"]):
        spec = ModelSpec.for_dataset(ds, kind, 3, width=8, depth=3)
        model = init_model(spec, 5, Normalization.fit(ds))
        worst[f"{name}/{kind}"] = fd_check(model, Batch.from_dataset(ds))
    elapsed = time.perf_counter() - start
    text = ", ".join(f"{k}: max rel err {v[0]:.2e} over {v[1]} params" for k, v in worst.items())
    note(record_property, f"{text}; {elapsed:.1f} s")
    assert all(v[0] < 1e-5 for v in worst.values())
    assert elapsed < 60


# --- 2 and 3: antiderivative, full budget ----------------------------------------------

@pytest.mark.full_budget
@pytest.mark.criterion(2)
def test_c2_nomad_n1_full_budget(full_anti_sweep, record_property):
    errs = full_anti_sweep.errors("nomad", 1)
    good = int(np.sum(errs <= 0.15))
    note(record_property, f"nomad n=1 errors {np.round(errs, 4).tolist()}; {good}/10 <= 0.15")
    assert len(errs) == 10 and good >= 8


@pytest.mark.full_budget
@pytest.mark.criterion(3)
def test_c3_antiderivative_separation_full_budget(full_anti_sweep, record_property):
    med = {(k, n): float(np.median(full_anti_sweep.errors(k, n)))
           for k in ("linear", "nomad") for n in FULL_NS}
    ratio = med["linear", 1] / med["nomad", 1]
    note(record_property, f"medians {med}; linear/nomad at n=1 = {ratio:.2f}")
    assert all(med["nomad", n] < med["linear", n] for n in FULL_NS)
    assert ratio >= 3


@pytest.mark.criterion(3)
def test_c3_antiderivative_ordering_desk(anti_sets, record_property):
    tr, te = anti_sets
    te = te.subset(np.arange(200))
    res = latent_sweep(tr, te, ["linear", "nomad"], FULL_NS, DESK_SEEDS, DESK_TRAIN, DESK_ARCH)
    med = {(k, n): float(np.median(res.errors(k, n))) for k in ("linear", "nomad") for n in FULL_NS}
    text = "; ".join(f"n={n}: nomad {med['nomad', n]:.3f} vs linear {med['linear', n]:.3f}"
                     for n in FULL_NS)
    note(record_property, f"desk budget, median of 3 seeds: {text}")
    assert all(med["nomad", n] < med["linear", n] for n in FULL_NS)


# --- 4: sin-family PCA spectrum -------------------------------------------------------

@pytest.mark.criterion(4)
def test_c4_sin_spectrum(record_property):
    t = 10.0 * np.arange(1, 1001) / 1000
    x = np.linspace(0, 1, 500)
    lam = pca_spectrum(np.sin(2 * np.pi * t[:, None] * x), 1 / 499).eigenvalues
    r20, r60 = lam[19] / lam[0], lam[59] / lam[0]
    note(record_property, f"lambda_20/lambda_1 = {r20:.5f}, lambda_60/lambda_1 = {r60:.2e}")
    assert r20 > 1e-2 and r60 < 1e-4
    # frozen oracle value from a direct covariance eigendecomposition
    assert r20 == pytest.approx(0.12664, rel=1e-3)


# --- 5: linear-decoder lower bound ------------------------------------------------------

def bound_rows(train_ds, test_ds, cfg, ns, arch):
    res = latent_sweep(train_ds, test_ds, ["linear"], ns, [0], cfg, arch)
    return [(r.n, r.mean_sq_l2, r.pca_tail) for r in res.rows]


@pytest.mark.criterion(5)
def test_c5_linear_lower_bound(anti_sets, record_property):
    ns = [1, 2, 4, 8, 16, 32]
    cfg = TrainConfig(iterations=1000, batch_size=100, schedule=LrSchedule(1e-3, 0.99, 5))
    tr, te = anti_sets
    rows = {"antiderivative": bound_rows(tr, te.subset(np.arange(300)), cfg, ns, FULL_ARCH)}
    adv_cfg = TrainConfig(iterations=300, batch_size=50, schedule=LrSchedule(1e-3, 0.99, 2),
                          query_batch=500)
    rows["advection"] = bound_rows(gen_advection(AdvectionConfig(n_samples=200, seed=0)),
                                   gen_advection(AdvectionConfig(n_samples=200, seed=1)),
                                   adv_cfg, ns, DESK_ARCH)
    text = "; ".join(f"{b}: " + ", ".join(f"n={n} err {e:.3g} >= tail {t:.3g}" for n, e, t in r)
                     for b, r in rows.items())
    note(record_property, text)
    for r in rows.values():
        for n, err, tail in r:
            assert err >= 0.9 * tail


@pytest.mark.full_budget
@pytest.mark.criterion(5)
def test_c5_linear_lower_bound_full_budget(full_anti_sweep, full_adv_sweep, record_property):
    rows = [r for res in (full_anti_sweep, full_adv_sweep) for r in res.rows
            if r.kind == "linear" and r.status == "ok"]
    worst = min(r.mean_sq_l2 / r.pca_tail for r in rows)
    note(record_property, f"{len(rows)} trained linear models, min error/tail = {worst:.3f}")
    assert all(r.mean_sq_l2 >= 0.9 * r.pca_tail for r in rows)


# --- 6: advection ----------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_c6_advection_spectrum_slow_decay(adv_test, record_property):
    lam = dataset_spectrum(adv_test).eigenvalues
    ratio = lam[99] / lam[0]
    first = int(np.argmax(lam / lam[0] < 1e-3)) + 1
    note(record_property, f"lambda_100/lambda_1 = {ratio:.3e} (needs > 1e-3); ratio first "
                          f"drops below 1e-3 at k = {first}")
    assert ratio > 1e-3


@pytest.mark.full_budget
@pytest.mark.criterion(6)
def test_c6_advection_separation_full_budget(full_adv_sweep, record_property):
    nomad = full_adv_sweep.errors("nomad", 2).mean()
    linear = full_adv_sweep.errors("linear", 2).mean()
    note(record_property, f"n=2 mean error nomad {nomad:.4f}, linear {linear:.4f}")
    assert nomad <= linear / 3


@pytest.mark.criterion(6)
def test_c6_advection_ordering_desk(record_property):
    tr = gen_advection(AdvectionConfig(n_samples=200, seed=0))
    te = gen_advection(AdvectionConfig(n_samples=100, seed=1))
    cfg = TrainConfig(iterations=3000, batch_size=100, schedule=LrSchedule(1e-3, 0.99, 15),
                      query_batch=200)
    res = latent_sweep(tr, te, ["linear", "nomad"], [2], [0], cfg, DESK_ARCH)
    nomad, linear = res.errors("nomad", 2).mean(), res.errors("linear", 2).mean()
    note(record_property, f"desk budget, n=2: nomad {nomad:.4f} vs linear {linear:.4f}")
    assert nomad < linear


# --- 7: shallow-water solver ----------------------------------------------------------

@pytest.mark.criterion(7)
def test_c7_shallow_water_solver(record_property):
    ones = np.ones((32, 32))
    still = ShallowWaterState(ones, 0 * ones, 0 * ones, 0.0, 1 / 32, 1 / 32, 1.0)
    state = still
    for _ in range(20):
        state = sw_step_lax_friedrichs(state, still.stable_dt())
    fixed = max(np.abs(state.rho - 1).max(), np.abs(state.v1).max(), np.abs(state.v2).max())

    state = sw_initial_state(2.3, 0.007, 0.43, 0.58)
    m0 = state.mass()
    for _ in range(1000):
        state = sw_step_lax_friedrichs(state, state.stable_dt())
    mass = abs(state.mass() - m0) / m0

    sym = 0.0
    state = sw_initial_state(2.0, 0.005, 0.5, 0.5)
    for out in sw.sw_solve(state, sw.SNAPSHOT_TIMES):
        r = out.rho
        sym = max(sym, np.abs(r - r[::-1]).max(), np.abs(r - r[:, ::-1]).max(), np.abs(r - r.T).max(),
                  np.abs(out.v1 + out.v1[::-1]).max(), np.abs(out.v1 - out.v2.T).max())

    # positivity: every corner of the parameter box plus random interior draws
    rng = np.random.default_rng(0)
    configs = list(itertools.product(sw.H_RANGE, sw.W_RANGE, sw.CENTER_RANGE, sw.CENTER_RANGE))
    configs += [tuple(sw.draw_droplet(rng)) for _ in range(48)]
    lowest = np.inf
    for params in configs:
        state = sw_initial_state(*params)
        dt = state.stable_dt()
        while state.t < sw.SNAPSHOT_TIMES[-1]:
            while dt > state.stable_dt():
                dt *= 0.5
            state = sw_step_lax_friedrichs(state, min(dt, sw.SNAPSHOT_TIMES[-1] - state.t))
            lowest = min(lowest, state.rho.min())
    note(record_property, f"fixed point {fixed:.1e}, mass drift {mass:.1e} over 1000 steps, "
                          f"symmetry {sym:.1e}, min rho {lowest:.4f} over {len(configs)} droplets")
    assert fixed <= 1e-14
    assert mass <= 1e-12
    assert sym <= 1e-10
    assert lowest > 0


# --- 8: shallow-water desk preset -------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion(8)
def test_c8_shallow_water_desk_preset(record_property):
    tr = gen_shallow_water(ShallowWaterConfig(n_samples=200, seed=0))
    te = sw.full_lattice_dataset(gen_shallow_water(ShallowWaterConfig(n_samples=200, seed=1)))
    spec = ModelSpec.for_dataset(tr, "nomad", 20, 100, 5)
    model = init_model(spec, 0, Normalization.fit(tr))
    start = time.perf_counter()
    result = train(model, tr, FULL_TRAIN)
    minutes = (time.perf_counter() - start) / 60
    stats = relative_l2(result.model, te)
    rho, v1, v2 = stats.channel_mean
    note(record_property, f"NOMAD n=20, {model.num_params()} params, {minutes:.0f} min; "
                          f"rel L2 rho {rho:.4f}, v1 {v1:.3f}, v2 {v2:.3f} on {te.n_queries} points")
    assert np.isfinite(result.losses).all()
    assert rho <= 0.05


# --- 9: determinism ----------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_c9_commands_deterministic(tmp_path, monkeypatch, record_property):
    monkeypatch.chdir(tmp_path)
    files = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        d.mkdir()
        steps = [
            ["gen", "--benchmark", "antiderivative", "--n", "40", "--seed", "7", "--out", f"{tag}/tr.opds"],
            ["gen", "--benchmark", "antiderivative", "--n", "10", "--seed", "8", "--out", f"{tag}/te.opds"],
            ["gen", "--benchmark", "shallow-water", "--n", "3", "--seed", "2", "--out", f"{tag}/sw.opds"],
            ["gen", "--benchmark", "advection", "--n", "3", "--seed", "2", "--out", f"{tag}/adv.opds"],
            ["train", "--data", f"{tag}/tr.opds", "--decoder", "nomad", "--latent", "2", "--width", "16",
             "--depth", "3", "--iterations", "50", "--batch", "20", "--query-batch", "40",
             "--history", f"{tag}/hist.csv", "--out", f"{tag}/m.ckpt"],
            ["eval", "--checkpoint", f"{tag}/m.ckpt", "--data", f"{tag}/te.opds", "--out", f"{tag}/e.csv"],
            ["pca", "--data", f"{tag}/tr.opds", "--projection", f"{tag}/proj.csv", "--out", f"{tag}/s.csv"],
            ["sweep", "--benchmark", "antiderivative", "--ns", "1,2", "--seeds", "0,1", "--n-train", "20",
             "--n-test", "5", "--width", "8", "--depth", "2", "--iterations", "10", "--batch", "10",
             "--workdir", f"{tag}/cache", "--out", f"{tag}/sweep.csv"],
        ]
        for args in steps:
            assert main(args) == 0
        files = sorted(p.relative_to(d) for p in d.rglob("*") if p.is_file()
                       and not p.name.endswith(".manifest"))
    same = [f for f in files if (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()]
    note(record_property, f"{len(same)}/{len(files)} output files byte-identical across reruns")
    assert len(files) >= 12 and len(same) == len(files)


# --- 10: container format -------------------------------------------------------------------

@pytest.mark.criterion(10)
def test_c10_container_round_trip_and_corruption(tmp_path, record_property):
    sets = [gen_antiderivative(AntiderivativeConfig(n_samples=4, seed=0)),
            gen_advection(AdvectionConfig(n_samples=2, seed=0)),
            gen_shallow_water(ShallowWaterConfig(n_samples=3, seed=0))]
    for i, ds in enumerate(sets):
        a, b = tmp_path / f"{i}a.opds", tmp_path / f"{i}b.opds"
        write_dataset(ds, a)
        write_dataset(read_dataset(a), b)
        assert a.read_bytes() == b.read_bytes()
    raw = (tmp_path / "2a.opds").read_bytes()
    corruptions = {
        "magic": b"XXXX" + raw[4:],
        "version": raw[:6] + b"99" + raw[8:],
        "header length": raw[:8] + (2**40).to_bytes(8, "little") + raw[16:],
        "header line": raw[:16] + b"garbage" + raw[23:],
        "truncated": raw[:-100],
    }
    messages = []
    for name, blob in corruptions.items():
        bad = tmp_path / "bad.opds"
        bad.write_bytes(blob)
        with pytest.raises(FormatError) as info:
            read_dataset(bad)
        messages.append(f"{name}: {info.value}")
    note(record_property, "round trips byte-identical for 3 benchmarks; rejected " + "; ".join(messages))
