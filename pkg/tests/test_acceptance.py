"""Acceptance criteria: end-to-end checks of the package's headline claims.

Each test verifies one numbered criterion at full scale and records a
scorecard line (printed by the conftest terminal summary) so a run always
ends with one [PASS/FAIL/SKIP] line per criterion.

Three criteria compare against the electricity-load benchmark, which is not
redistributed here; they read the path from HYVAE_ELECTRICITY_CSV (optional
HYVAE_ELECTRICITY_COLUMN / HYVAE_ELECTRICITY_HEADER=1 adjust parsing) and
report SKIP when it is unset.
"""

import functools
import os
import time

import numpy as np
import pytest

from conftest import (ACCEPTANCE_RESULTS, fd_gradients, max_rel_err,
                      record_criterion)
from hyvae import cli, tensor
from hyvae.data import load_csv, prepare, split_chronological, synth_series
from hyvae.gaussian import DiagonalGaussian, SIGMA_MIN, kl
from hyvae.model import (HyVaeConfig, HyVaeModel, deserialize, serialize)
from hyvae.rng import Rng
from hyvae.tensor import Tensor
from hyvae.training import ar_baseline, evaluate, run_ablation, train

pytestmark = pytest.mark.acceptance

ELECTRICITY_ENV = "HYVAE_ELECTRICITY_CSV"

# Sine-fixture training length: validation MSE crosses the target around
# epoch 25 at default hyperparameters, so 60 epochs converges with margin
# while staying well inside the per-seed time budget.
SINE_EPOCHS = 60

# Ablation fixture: small enough that 3 variants x 5 seeds train in a few
# minutes, structured enough (trend + seasonality + noise) that both the
# subsequence ladder and the window-level chain earn their keep.
ABLATION = dict(length=800, m=20, l=5, L=2, d=8, warmup=10, epochs=30)


def criterion(name):
    """Record a FAIL/SKIP scorecard line even when a test dies early."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException as e:
                if not any(entry[0] == name for entry in ACCEPTANCE_RESULTS):
                    status = "SKIP" if isinstance(e, pytest.skip.Exception) else "FAIL"
                    record_criterion(name, status, f"{type(e).__name__}: {e}")
                raise
        return wrapper

    return deco


def verdict(name, ok, detail):
    record_criterion(name, "PASS" if ok else "FAIL", detail)
    assert ok, f"{name}: {detail}"


def skip(name, reason):
    record_criterion(name, "SKIP", reason)
    pytest.skip(reason)


def electricity_splits(m, n):
    path = os.environ.get(ELECTRICITY_ENV)
    if not path:
        return None
    series = load_csv(
        path,
        column=int(os.environ.get("HYVAE_ELECTRICITY_COLUMN", "0")),
        has_header=os.environ.get("HYVAE_ELECTRICITY_HEADER") == "1",
    )
    return prepare(series, m=m, n=n)


def default_config(seed, n=1, m=50):
    return HyVaeConfig(l=10, L=4, d_z=32, d_h=32, n=n, m=m,
                       warmup_epochs=30, seed=seed)


def train_default(splits, seed, epochs=SINE_EPOCHS, n=1):
    model = HyVaeModel(default_config(seed, n=n))
    model, _ = train(model, splits, epochs=epochs, batch_size=64, lr=0.01,
                     rng=Rng(seed))
    return model


# -- criterion 1: analytic gradients match finite differences -----------------


def _random_op_case(i, rng):
    """One random differentiable expression; returns (label, leaves, build).

    `build()` re-reads the leaves' current data, so the same closure serves
    the analytic backward pass and the finite-difference probes.
    """

    def leaf(rows, cols, lo=-1.5, hi=1.5):
        return tensor.parameter(rng.uniform(lo, hi, size=(rows, cols)))

    r, c = int(rng.integers(1, 4)), int(rng.integers(1, 5))
    unary = [
        ("tanh", tensor.tanh, (-2.0, 2.0)),
        ("sigmoid", tensor.sigmoid, (-3.0, 3.0)),
        ("softplus", tensor.softplus, (-3.0, 3.0)),
        ("exp", tensor.exp, (-1.5, 1.5)),
        ("log", tensor.log, (0.3, 3.0)),
        ("square", tensor.square, (-2.0, 2.0)),
        ("neg", tensor.neg, (-2.0, 2.0)),
    ]
    kind = i % 7
    if kind == 0:
        name, op, (lo, hi) = unary[int(rng.integers(len(unary)))]
        a = leaf(r, c, lo, hi)
        return name, [a], lambda: tensor.reduce_sum(op(a))
    if kind == 1:
        a, b = leaf(r, c), leaf(r, c)
        return "add", [a, b], lambda: tensor.reduce_sum(a + b * 0.5)
    if kind == 2:
        a, b = leaf(r, c), leaf(r, 1)            # column broadcast
        return "sub-bcast", [a, b], lambda: tensor.reduce_sum(a - b)
    if kind == 3:
        a, b = leaf(r, c), leaf(1, c)            # row broadcast
        return "mul-bcast", [a, b], lambda: tensor.reduce_sum(tensor.mul(a, b))
    if kind == 4:
        k = int(rng.integers(1, 4))
        a, b = leaf(r, k), leaf(k, c)
        return "matmul", [a, b], lambda: tensor.reduce_sum(tensor.tanh(a @ b))
    if kind == 5:
        a, b = leaf(r, c), leaf(r, c)
        axis = int(rng.integers(2))
        return (f"concat-axis{axis}", [a, b],
                lambda: tensor.reduce_sum(
                    tensor.square(tensor.concat([a, b], axis=axis))))
    axis = [None, 0, 1][int(rng.integers(3))]
    keepdims = bool(rng.integers(2))
    a = leaf(r, c)
    return (f"reduce-axis{axis}", [a],
            lambda: tensor.reduce_sum(
                tensor.square(tensor.reduce_mean(
                    tensor.sigmoid(a), axis=axis, keepdims=keepdims))))


@criterion("criterion-1 gradient-suite")
def test_criterion_01_gradient_suite():
    name = "criterion-1 gradient-suite"
    started = time.perf_counter()

    # full-loss gradients on the tiny model configuration
    config = HyVaeConfig(l=4, L=2, d_z=3, d_h=3, n=1, m=8, seed=5)
    model = HyVaeModel(config)
    window = np.linspace(0.05, 0.95, config.m)
    target = np.array([0.5])

    model.zero_grad()
    total, _ = model.loss(window, target, Rng(31), beta=0.8)
    total.backward()
    params = model.parameters()

    def forward():
        with tensor.no_grad():
            return model.loss(window, target, Rng(31), beta=0.8)[0].item()

    numeric = fd_gradients(forward, list(params.values()))
    worst_param, worst_err = "", 0.0
    for (pname, p), approx in zip(params.items(), numeric):
        assert p.grad is not None, f"no gradient reached {pname}"
        err = max_rel_err(p.grad, approx)
        if err > worst_err:
            worst_param, worst_err = pname, err

    # random op-level expressions
    case_rng = np.random.default_rng(20260814)
    worst_case, worst_case_err = "", 0.0
    for i in range(100):
        label, leaves, build = _random_op_case(i, case_rng)
        for t in leaves:
            t.zero_grad()
        build().backward()

        def fd_forward():
            with tensor.no_grad():
                return build().item()

        for t, approx in zip(leaves, fd_gradients(fd_forward, leaves)):
            err = max_rel_err(t.grad, approx)
            if err > worst_case_err:
                worst_case, worst_case_err = f"case {i} ({label})", err

    elapsed = time.perf_counter() - started
    ok = worst_err < 1e-4 and worst_case_err < 1e-4 and elapsed < 30.0
    verdict(name, ok,
            f"full loss worst {worst_param} rel err {worst_err:.2e}; "
            f"100 op cases worst {worst_case} rel err {worst_case_err:.2e}; "
            f"{elapsed:.1f}s")


# -- criterion 2: closed-form KL matches Monte Carlo --------------------------


@criterion("criterion-2 kl-oracle")
def test_criterion_02_kl_matches_monte_carlo():
    name = "criterion-2 kl-oracle"
    started = time.perf_counter()
    draws = 100_000
    rng = np.random.default_rng(42)
    worst_z, worst_pair = 0.0, ""
    for pair in range(50):
        dim = int(rng.integers(1, 7))
        q_mean, p_mean = rng.normal(size=(2, dim, 1))
        q_std, p_std = rng.uniform(0.2, 2.0, size=(2, dim, 1))

        closed = kl(
            DiagonalGaussian(Tensor(q_mean), Tensor(q_std)),
            DiagonalGaussian(Tensor(p_mean), Tensor(p_std)),
        ).item()

        # Monte Carlo E_q[ln q(x) - ln p(x)] from first principles
        x = q_mean + q_std * rng.standard_normal((dim, draws))
        log_q = np.sum(-np.log(q_std) - 0.5 * np.log(2 * np.pi)
                       - (x - q_mean) ** 2 / (2 * q_std ** 2), axis=0)
        log_p = np.sum(-np.log(p_std) - 0.5 * np.log(2 * np.pi)
                       - (x - p_mean) ** 2 / (2 * p_std ** 2), axis=0)
        sample = log_q - log_p
        se = sample.std(ddof=1) / np.sqrt(draws)
        z = abs(closed - sample.mean()) / se
        if z > worst_z:
            worst_z, worst_pair = z, f"pair {pair} (dim {dim})"

    elapsed = time.perf_counter() - started
    ok = worst_z <= 3.0 and elapsed < 30.0
    verdict(name, ok,
            f"50 pairs x {draws} draws, worst |closed-MC| = "
            f"{worst_z:.2f} SE ({worst_pair}); {elapsed:.1f}s")


# -- criterion 3: reduction to the textbook single-sample VAE bound -----------


class _StandardNormalPrior:
    """Prior stand-in emitting N(0, I) with the input's batch width."""

    def __init__(self, dim):
        self.dim = dim

    def forward(self, x):
        batch = x.shape[1]
        return DiagonalGaussian(
            Tensor(np.zeros((self.dim, batch))),
            Tensor(np.ones((self.dim, batch))),
        )


@criterion("criterion-3 vanilla-vae-reduction")
def test_criterion_03_vanilla_vae_reduction():
    name = "criterion-3 vanilla-vae-reduction"
    config = HyVaeConfig(l=6, L=1, d_z=4, d_h=3, n=1, m=6, seed=13)
    model = HyVaeModel(config)
    model.prior_top = _StandardNormalPrior(config.d_z)

    def mlp_ref(net, v):
        hidden = np.tanh(net.W1.data @ v + net.b1.data)
        mean = net.W_mu.data @ hidden + net.b_mu.data
        std = np.logaddexp(0.0, net.W_sig.data @ hidden + net.b_sig.data) + SIGMA_MIN
        return mean, std

    case_rng = np.random.default_rng(7)
    worst = 0.0
    for case in range(20):
        window = case_rng.uniform(0.05, 0.95, config.m)
        noise_seed = 3000 + case
        breakdown, _, _ = model.elbo(window, Rng(noise_seed), beta=1.0)
        ours = breakdown.elbo_enc().item()

        # independent single-sample bound: E_q[ln p(x|z)] - KL(q || N(0, I))
        x = window.reshape(-1, 1)
        enc_in = np.vstack([np.zeros((config.d_h, 1)), x,
                            np.zeros((config.d_z, 1))])
        q_mean, q_std = mlp_ref(model.enc_top, enc_in)
        z = q_mean + q_std * Rng(noise_seed).normal((config.d_z, 1))
        d_mean, d_std = mlp_ref(model.decoder,
                                np.vstack([z, np.zeros((config.d_h, 1))]))
        recon = np.sum(-0.5 * np.log(2 * np.pi) - np.log(d_std)
                       - (x - d_mean) ** 2 / (2 * d_std ** 2))
        kl_std_normal = np.sum(-np.log(q_std)
                               + (q_std ** 2 + q_mean ** 2) / 2.0 - 0.5)
        worst = max(worst, abs(ours - (recon - kl_std_normal)))

    verdict(name, worst < 1e-10,
            f"20 random inputs, worst |bound - reference| = {worst:.2e}")


# -- criterion 4: chronological split sizes -----------------------------------


@criterion("criterion-4 split-arithmetic")
def test_criterion_04_split_arithmetic():
    name = "criterion-4 split-arithmetic"
    expected = {
        3571: (2856, 357, 358),
        1352: (1081, 135, 136),
        1400: (1120, 140, 140),
    }
    got = {}
    for length in expected:
        series = synth_series("sine", length=length)
        got[length] = tuple(
            seg.values.size for seg in split_chronological(series))
    verdict(name, got == expected, f"{got}")


# -- criterion 5: sine fixture forecast accuracy over seeds -------------------


@criterion("criterion-5 synthetic-forecasting")
def test_criterion_05_sine_forecasting():
    name = "criterion-5 synthetic-forecasting"
    series = synth_series("sine", length=1400, params={"A": 1.0, "P": 25.0})
    splits = prepare(series, m=50, n=1)

    mses, walls = [], []
    for seed in range(5):
        started = time.perf_counter()
        model = train_default(splits, seed)
        mses.append(evaluate(model, splits.test, horizons=(1,)).horizons[1].mse)
        walls.append(time.perf_counter() - started)

    hits = sum(mse < 1e-3 for mse in mses)
    ok = hits >= 4 and max(walls) < 300.0
    verdict(name, ok,
            f"test MSE by seed: [{', '.join(f'{m:.2e}' for m in mses)}], "
            f"{hits}/5 under 1e-3; slowest seed {max(walls):.0f}s")


# -- criterion 6: electricity accuracy band vs the AR baseline ----------------


@criterion("criterion-6 public-data-band")
def test_criterion_06_electricity_band():
    name = "criterion-6 public-data-band"
    splits = electricity_splits(m=50, n=1)
    if splits is None:
        skip(name, f"{ELECTRICITY_ENV} unset; export it to run this check")

    started = time.perf_counter()
    mses = []
    for seed in range(5):
        model = train_default(splits, seed)
        mses.append(evaluate(model, splits.test, horizons=(1,)).horizons[1].mse)
    mean_mse = float(np.mean(mses))
    ar_mse = ar_baseline(splits).metrics.mse
    elapsed = time.perf_counter() - started

    ok = mean_mse < 0.5e-2 and mean_mse < 0.5 * ar_mse and elapsed < 1800.0
    verdict(name, ok,
            f"mean MSE {mean_mse:.3e} (target < 5.0e-03), "
            f"AR baseline {ar_mse:.3e}; {elapsed:.0f}s")


# -- criterion 7: ablations hurt ----------------------------------------------


def _ablation_means(splits, seeds=range(5)):
    config = HyVaeConfig(l=ABLATION["l"], L=ABLATION["L"], d_z=ABLATION["d"],
                         d_h=ABLATION["d"], n=1, m=ABLATION["m"],
                         warmup_epochs=ABLATION["warmup"], seed=0)
    table = run_ablation(splits, config, seeds=tuple(seeds),
                         epochs=ABLATION["epochs"], batch_size=64, lr=0.01)
    return {variant: row["mse"] for variant, row in table.items()}


@criterion("criterion-7 ablation-ordering")
def test_criterion_07_ablation_ordering():
    name = "criterion-7 ablation-ordering"
    started = time.perf_counter()
    series = synth_series("trend_season", length=ABLATION["length"],
                          params={"a": 0.01, "A": 1.0, "P": 25.0,
                                  "sigma": 0.05})
    fixture = _ablation_means(prepare(series, m=ABLATION["m"], n=1))
    parts = [f"fixture full={fixture['full']:.2e} "
             f"no_subseq={fixture['no_subseq']:.2e} "
             f"no_entire={fixture['no_entire']:.2e}"]
    ok = (fixture["full"] < fixture["no_subseq"]
          and fixture["full"] < fixture["no_entire"])

    splits = electricity_splits(m=ABLATION["m"], n=1)
    if splits is None:
        parts.append(f"electricity half skipped ({ELECTRICITY_ENV} unset)")
    else:
        elec = _ablation_means(splits)
        parts.append(f"electricity full={elec['full']:.2e} "
                     f"no_subseq={elec['no_subseq']:.2e} "
                     f"no_entire={elec['no_entire']:.2e}")
        ok = ok and (elec["full"] < elec["no_subseq"]
                     and elec["full"] < elec["no_entire"])

    elapsed = time.perf_counter() - started
    parts.append(f"{elapsed:.0f}s")
    verdict(name, ok and elapsed < 2700.0, "; ".join(parts))


# -- criterion 8: multi-step error does not beat single-step ------------------


@criterion("criterion-8 multi-step-degradation")
def test_criterion_08_multi_step_degradation():
    name = "criterion-8 multi-step-degradation"
    splits = electricity_splits(m=50, n=5)
    if splits is None:
        skip(name, f"{ELECTRICITY_ENV} unset; export it to run this check")

    one_step, five_step = [], []
    for seed in range(5):
        model = train_default(splits, seed, n=5)
        report = evaluate(model, splits.test, horizons=(1, 5))
        one_step.append(report.horizons[1].mse)
        five_step.append(report.horizons[5].mse)
    mean1, mean5 = float(np.mean(one_step)), float(np.mean(five_step))
    verdict(name, mean5 >= mean1,
            f"mean 5-step MSE {mean5:.3e} vs 1-step {mean1:.3e}")


# -- criterion 9: determinism and persistence ---------------------------------


@criterion("criterion-9 determinism-persistence")
def test_criterion_09_determinism_and_persistence(tmp_path):
    name = "criterion-9 determinism-persistence"
    data = tmp_path / "series.csv"
    assert cli.main(["synth", "--kind", "sine", "--length", "260",
                     "--out", str(data), "--quiet"]) == 0

    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for out in paths:
        code = cli.main(["train", "--data", str(data), "--out", str(out),
                         "--m", "12", "--n", "1", "--l", "4", "--L", "2",
                         "--d", "6", "--epochs", "3", "--warmup-epochs", "2",
                         "--seed", "7", "--quiet"])
        assert code == 0, f"training exited {code}"
    identical = paths[0].read_bytes() == paths[1].read_bytes()

    model_a, norm = deserialize(paths[0].read_bytes())
    model_b, _ = deserialize(serialize(model_a, norm))
    probe_rng = np.random.default_rng(3)
    exact = True
    for _ in range(16):
        window = probe_rng.uniform(0.0, 1.0, 12)
        exact = exact and np.array_equal(
            model_a.forecast(window, mode="mean").data,
            model_b.forecast(window, mode="mean").data)

    verdict(name, identical and exact,
            f"same-seed files identical: {identical}; round-trip mean "
            f"forecasts bit-exact on 16 probes: {exact}")


# -- criterion 10: least-squares baseline recovers an exact AR(1) -------------


def _independent_lag_sweep(splits, max_lag=10):
    """Validation MSE per lag from a from-scratch OLS fit and 1-step rule."""
    values = splits.train.values
    sweep = {}
    for lag in range(1, max_lag + 1):
        rows = np.array([values[t - lag:t][::-1]
                         for t in range(lag, values.size)])
        design = np.column_stack([rows, np.ones(rows.shape[0])])
        coef, *_ = np.linalg.lstsq(design, values[lag:], rcond=None)
        recent = splits.valid.windows[:, :-lag - 1:-1]  # newest first
        preds = recent @ coef[:lag] + coef[lag]
        sweep[lag] = float(np.mean((preds - splits.valid.targets[:, 0]) ** 2))
    return sweep


@criterion("criterion-10 ar-oracle")
def test_criterion_10_ar_oracle():
    name = "criterion-10 ar-oracle"
    series = synth_series("ar1", length=1400,
                          params={"rho": 0.5, "sigma": 0.0, "s0": 1.0})
    splits = prepare(series, m=50, n=1)
    result = ar_baseline(splits, max_lag=10)

    coef_err = abs(result.coefficients[0] - 0.5)
    intercept = abs(result.coefficients[result.lag])
    chosen_mse = result.validation_mse[result.lag]
    floor = min(_independent_lag_sweep(splits).values())
    minimal = chosen_mse <= floor + 1e-12 + 1e-9 * floor

    ok = coef_err < 1e-6 and intercept < 1e-6 and minimal
    verdict(name, ok,
            f"lag {result.lag}, |coef - 0.5| = {coef_err:.1e}, "
            f"|intercept| = {intercept:.1e}; validation MSE "
            f"{chosen_mse:.2e} vs independent sweep floor {floor:.2e}")
