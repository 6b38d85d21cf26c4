import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from copvae import evaluation as ev
from copvae import nn, oracle, vae
from copvae.errors import ConfigurationError, IncompleteOracleError

TABLE = [
    ("diag_gm", 5, 2, 24), ("diag_gm", 5, 3, 34), ("diag_gm", 5, 5, 54), ("diag_gm", 5, 10, 104),
    ("full_gm", 5, 2, 29), ("full_gm", 5, 3, 49), ("full_gm", 5, 5, 104), ("full_gm", 5, 10, 329),
    ("copula", 5, 2, 5), ("copula", 5, 3, 9), ("copula", 5, 5, 20), ("copula", 5, 10, 65),
]


@pytest.mark.parametrize("family,k,d,count", TABLE)
def test_param_count(family, k, d, count):
    assert ev.param_count(family, k, d) == count


@pytest.mark.parametrize("family", vae.FAMILIES)
@pytest.mark.parametrize("k", [1, 2, 3, 5, 10])
@pytest.mark.parametrize("d", [2, 3, 4, 10])
def test_param_count_matches_wired_heads(family, k, d):
    assert ev.param_count(family, k, d) == vae.head_width(family, k, d)


@pytest.mark.parametrize("family,k,count", [
    ("diag_gm", 1, 4), ("diag_gm", 2, 9), ("full_gm", 1, 5), ("full_gm", 2, 11),
    ("full_gm", 10, 59), ("copula", 1, 5),
])
def test_param_count_desk_models(family, k, count):
    assert ev.param_count(family, k, 2) == count


def test_copula_ignores_k():
    assert ev.param_count("copula", 7, 2) == ev.param_count("copula", 1, 2)


def test_param_count_unknown():
    with pytest.raises(ConfigurationError):
        ev.param_count("nf", 1, 2)


def test_information_criteria_examples():
    assert ev.information_criteria(0.0, 10, 0) == (0.0, 0.0)
    bic, aic = ev.information_criteria(-100.0, 100, 5)
    assert bic == pytest.approx(2.0 + 5 * math.log(100) / 100, abs=1e-12)
    assert round(bic, 4) == 2.2303
    assert aic == pytest.approx(2.1, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(ll=st.floats(-1e6, 1e6), n=st.integers(1, 10 ** 6), p=st.integers(0, 500))
def test_bic_minus_aic(ll, n, p):
    bic, aic = ev.information_criteria(ll, n, p)
    assert bic - aic == pytest.approx(p * (math.log(n) - 2) / n, abs=1e-9 * max(1.0, abs(ll) / n))


@settings(max_examples=50, deadline=None)
@given(ll=st.floats(-1e4, 1e4), n=st.integers(1, 1000), p=st.integers(0, 100))
def test_penalty_monotone(ll, n, p):
    b0, a0 = ev.information_criteria(ll, n, p)
    b1, a1 = ev.information_criteria(ll, n, p + 1)
    assert a1 > a0
    if n > 1:
        assert b1 > b0


# ---------------------------------------------------------------- log-likelihood

def toy_setup(seed=0, n=12, family="copula", k=1, n_f=80):
    r = np.random.default_rng(seed)
    dec = nn.init_mlp(nn.mlp_spec(5, (6,), ("tanh",), 4, out_activation="softplus"), r)
    dec.freeze()
    w = r.uniform(size=(n, 3))
    z = r.uniform(0.2, 0.8, size=(n, 2))
    m = nn.predict(dec, np.hstack([z, w]))
    enc = vae.build_encoder(family, k, 2, 7, r)
    model = vae.TrainedVae(enc, dec, family, k, 2, seconds=1.5)
    ids = np.arange(100, 100 + n)
    gts = {int(i): oracle.build_ground_truth(m[j], w[j], dec, n_grid=41, n_f=n_f, scenario_id=int(i))
           for j, i in enumerate(ids)}
    return model, m, w, ids, gts


def test_missing_ground_truth():
    model, m, w, ids, gts = toy_setup()
    gts.pop(int(ids[3]))
    with pytest.raises(IncompleteOracleError):
        ev.test_loglik(model, m, w, ids, gts, 5, np.random.default_rng(0))


def test_gt_variant_matches_loop():
    model, m, w, ids, gts = toy_setup(family="diag_gm", k=2)
    z, _ = ev.posterior_draws(model, m, w, ids, 6, np.random.default_rng(1), n_mc=2048)
    got = ev.gt_logliks(gts, ids, z)
    for a, i in enumerate(ids):
        gt = gts[int(i)]
        for b in range(6):
            total = 0.0
            for p, wj in zip(gt.points, gt.weights):
                q = (z[a, b] - p) / gt.h
                total += wj * math.exp(-0.5 * q @ q) / (2 * math.pi * gt.h.prod())
            assert got[a, b] == pytest.approx(math.log(max(total, 1e-300)), abs=1e-12)


def test_loglik_is_per_sample_mean():
    model, m, w, ids, gts = toy_setup()
    ll = ev.test_loglik(model, m, w, ids, gts, 8, np.random.default_rng(4))
    z, logq = ev.posterior_draws(model, m, w, ids, 8, np.random.default_rng(4))
    assert ll["q"] == pytest.approx(logq.mean(), rel=1e-14)
    assert ll["gt"] == pytest.approx(ev.gt_logliks(gts, ids, z).mean(), rel=1e-14)


def test_tight_posterior_has_positive_loglik():
    model, m, w, ids, gts = toy_setup()
    # bias the sigma heads far negative: softplus gives sigma around 1e-4
    last = model.encoder.params[-1]
    last[2:4] = -9.0
    ll = ev.test_loglik(model, m, w, ids, gts, 20, np.random.default_rng(0))
    assert ll["q"] > 5.0


def test_uniform_posterior_has_zero_loglik():
    model, m, w, ids, gts = toy_setup()
    model.encoder.params[-2][...] = 0.0
    last = model.encoder.params[-1]
    last[:] = 0.0
    last[2:4] = 1e6  # flat marginals and an identity copula
    ll = ev.test_loglik(model, m, w, ids, gts, 20, np.random.default_rng(0))
    assert abs(ll["q"]) <= 1e-6


def test_protocol_degenerates_to_test_loglik():
    # enough draws that the standard error of the gap is well below 0.05
    model, m, w, ids, gts = toy_setup(n=24, family="diag_gm", k=2, n_f=1200)
    full = ev.test_loglik(model, m, w, ids, gts, 2000, np.random.default_rng(9), n_mc=4096)
    reps = ev.repetition_protocol({"a": model}, m, w, ids, gts, r=1, n_r=len(ids), h=2000,
                                  seed=3, n_mc=4096)
    assert len(reps["a"]["gt"]) == 1
    assert abs(reps["a"]["gt"][0] - full["gt"]) < 0.05
    assert abs(reps["a"]["q"][0] - full["q"]) < 0.05


def test_protocol_length_and_determinism():
    model, m, w, ids, gts = toy_setup()
    a = ev.repetition_protocol({"c": model}, m, w, ids, gts, r=4, n_r=5, h=10, seed=1)
    b = ev.repetition_protocol({"c": model}, m, w, ids, gts, r=4, n_r=5, h=10, seed=1)
    assert len(a["c"]["gt"]) == 4
    assert a == b
    with pytest.raises(ConfigurationError):
        ev.repetition_protocol({"c": model}, m, w, ids, gts, r=1, n_r=len(ids) + 1)


def test_report_fields():
    model, m, w, ids, gts = toy_setup()
    ll = {"q": 1.0, "gt": -2.0}
    rep = ev.make_report(model, ll, 12, reps=[-2.0, -1.0, -3.0])
    assert rep.param_count == 5
    assert rep.bic == pytest.approx(ev.information_criteria(-24.0, 12, 5)[0])
    d = rep.to_dict()
    assert d["name"] == "copula" and d["violin"]["q50"] == -2.0
    with pytest.raises(ConfigurationError):
        ev.EvalReport("diag_gm", 2, 2, 10, 0, 0, 0, 0, 0, 1)


def test_oracle_self_loglik_finite():
    _, _, _, ids, gts = toy_setup()
    assert np.isfinite(ev.oracle_self_loglik(gts, ids, 50, np.random.default_rng(0)))
