"""Model-comparison metrics: test log-likelihood, BIC/AIC and parameter counts.

Two log-likelihood variants are computed from the same posterior draws:
``q`` scores each draw under the trained posterior itself, ``gt`` scores it
under the scenario's ground-truth KDE. Model comparison uses ``gt``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from copvae import oracle, vae
from copvae.errors import ConfigurationError, IncompleteOracleError

LOG_FLOOR = 1e-300
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
EVAL_CHUNK = 64


def param_count(family, k, d):
    """Closed-form number of posterior parameters per scenario."""
    if k < 1 or d < 1:
        raise ConfigurationError("need k >= 1 and d >= 1")
    if family == "diag_gm":
        return k * (2 * d + 1) - 1
    if family == "full_gm":
        return k * (1 + d + d * (d + 1) // 2) - 1
    if family == "copula":
        return 2 * d + d * (d - 1) // 2
    raise ConfigurationError(f"unknown posterior family {family!r}")


def information_criteria(ll, n, p):
    """(BIC, AIC), both divided by n."""
    if n < 1 or p < 0:
        raise ConfigurationError("need n >= 1 and p >= 0")
    bic = -2.0 * ll / n + p * math.log(n) / n
    aic = -2.0 * ll / n + 2.0 * p / n
    return bic, aic


def _floored_log(density):
    return np.log(np.maximum(density, LOG_FLOOR))


def _require(gts, ids):
    missing = [int(i) for i in ids if int(i) not in gts]
    if missing:
        raise IncompleteOracleError(f"no ground truth for scenarios {missing[:5]}"
                                    + (" ..." if len(missing) > 5 else ""))


def posterior_draws(model: vae.TrainedVae, m, w, ids, h, rng, n_mc=65536, chunk=EVAL_CHUNK):
    """z (N, h, D) and log q (N, h) for every row, in row chunks."""
    zs, lqs = [], []
    for lo in range(0, len(ids), chunk):
        sl = slice(lo, lo + chunk)
        z, lq = vae.sample_posterior(model, m[sl], w[sl], h, rng, n_mc, ids=list(ids[sl]))
        zs.append(z)
        lqs.append(lq)
    return np.concatenate(zs), np.concatenate(lqs)


def gt_logliks(gts, ids, z):
    """log ground-truth density at each draw, (N, h)."""
    return np.stack([_floored_log(oracle.gt_density(gts[int(i)], zi)) for i, zi in zip(ids, z)])


def test_loglik(model, m, w, ids, gts, h, rng, n_mc=65536):
    """Mean per-sample log-likelihood over all rows, under q and under the KDE."""
    ids = np.asarray(ids)
    _require(gts, ids)
    z, logq = posterior_draws(model, m, w, ids, h, rng, n_mc)
    return {"q": float(np.mean(np.maximum(logq, math.log(LOG_FLOOR)))),
            "gt": float(np.mean(gt_logliks(gts, ids, z)))}


test_loglik.__test__ = False  # keep pytest from collecting it by name


def oracle_self_loglik(gts, ids, h, rng):
    """Mean log KDE density of draws from the KDE itself."""
    vals = [np.mean(_floored_log(oracle.gt_density(gts[int(i)],
                                                    oracle.gt_sample(gts[int(i)], h, rng))))
            for i in ids]
    return float(np.mean(vals))


def _stream(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def repetition_protocol(models, m, w, ids, gts, r=50, n_r=1000, h=100, seed=0, n_mc=65536):
    """Per-model lists of r mean log-likelihoods.

    Each repetition picks ``n_r`` scenarios without replacement (shared by
    all models) and draws ``h`` samples per scenario from every model.
    Returns ``{name: {"q": [...], "gt": [...]}}``.
    """
    ids = np.asarray(ids)
    _require(gts, ids)
    if not 1 <= n_r <= len(ids):
        raise ConfigurationError(f"n_r={n_r} must lie in [1, {len(ids)}]")
    out = {name: {"q": [], "gt": []} for name in models}
    for rep in range(r):
        pick = np.sort(_stream(seed, 0, rep).choice(len(ids), size=n_r, replace=False))
        for j, (name, model) in enumerate(models.items()):
            z, logq = posterior_draws(model, m[pick], w[pick], ids[pick], h,
                                      _stream(seed, 1, rep, j), n_mc)
            out[name]["q"].append(float(np.mean(np.maximum(logq, math.log(LOG_FLOOR)))))
            out[name]["gt"].append(float(np.mean(gt_logliks(gts, ids[pick], z))))
    return out


def quantiles(values, qs=QUANTILES):
    return {f"q{int(round(100 * q)):02d}": float(v) for q, v in zip(qs, np.quantile(values, qs))}


@dataclass
class EvalReport:
    family: str
    k: int
    d: int
    param_count: int
    ll_test: float
    ll_test_q: float
    bic: float
    aic: float
    train_seconds: float
    n_test: int
    repetitions: list = field(default_factory=list)
    repetitions_q: list = field(default_factory=list)

    def __post_init__(self):
        if self.param_count != param_count(self.family, self.k, self.d):
            raise ConfigurationError("param_count disagrees with the closed form")

    @property
    def name(self):
        return self.family if self.family == "copula" else f"{self.family}_k{self.k}"

    def to_dict(self):
        out = asdict(self)
        out["name"] = self.name
        out["violin"] = quantiles(self.repetitions) if self.repetitions else {}
        return out


def make_report(model: vae.TrainedVae, ll, n_test, reps=None, reps_q=None) -> EvalReport:
    """Assemble a report; BIC/AIC use the summed per-scenario LL over n_test rows."""
    p = param_count(model.family, model.k, model.d)
    bic, aic = information_criteria(ll["gt"] * n_test, n_test, p)
    return EvalReport(model.family, model.k, model.d, p, ll["gt"], ll["q"], bic, aic,
                      model.seconds, n_test, list(reps or []), list(reps_q or []))
