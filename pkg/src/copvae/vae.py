"""Encoder heads, the sampled ELBO loss and encoder training.

The encoder maps ``[m_scaled, w_scaled]`` to raw head outputs. Head
activations then turn them into the parameters of one posterior family:

* ``diag_gm``: alpha (K), mu (K x D), sigma (K x D)
* ``full_gm``: alpha (K), mu (K x D), s (K x D), gamma (K x n_angles)
* ``copula``: mu (D), sigma (D), l_off (D(D-1)/2)

Mixture weights use K-1 free logits plus a fixed zero logit, so K=1 has no
weight outputs at all. The copula factor's diagonal is fixed to 1: after
row normalization it carries no information.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from copvae import nn
from copvae.distributions import copula as cop
from copvae.distributions import mixture as mix
from copvae.errors import ConfigurationError, IncompatibilityError, TrainingError
from copvae.mathcore import ad, n_angles, rotation_tensor

log = logging.getLogger(__name__)

FAMILIES = ("diag_gm", "full_gm", "copula")
BETA = 0.075
GAMMA_FLOOR = 1e-12
N_MC_TRAIN = 4096


def check_family(family):
    if family not in FAMILIES:
        raise ConfigurationError(f"unknown posterior family {family!r}; expected one of {FAMILIES}")


def head_layout(family, k, d):
    """Ordered (name, shape, activation) blocks of the raw head output."""
    check_family(family)
    if d < 1 or k < 1:
        raise ConfigurationError("need k >= 1 and d >= 1")
    if family == "copula":
        return [("mu", (d,), "sigmoid"), ("sigma", (d,), "softplus"),
                ("l_off", (n_angles(d),), "linear")]
    blocks = []
    if k > 1:
        blocks.append(("alpha", (k - 1,), "softmax"))
    blocks.append(("mu", (k, d), "sigmoid"))
    if family == "diag_gm":
        blocks.append(("sigma", (k, d), "softplus"))
    else:
        blocks.append(("s", (k, d), "softplus"))
        if n_angles(d):
            blocks.append(("gamma", (k, n_angles(d)), "scaled_sigmoid_2pi"))
    return blocks


def head_width(family, k, d):
    return sum(int(np.prod(shape)) for _, shape, _ in head_layout(family, k, d))


@dataclass
class PosteriorParams:
    """Batched parameters of one family; entries are arrays or Tensors.

    Mixtures hold ``alpha (B, K)``, ``mu (B, K, D)`` and ``scale (B, K, D)``
    (sigma or s), plus ``gamma (B, K, n_angles)`` for ``full_gm``. The copula
    holds ``mu (B, D)``, ``sigma (B, D)`` and ``l_off (B, n_angles)``.
    """

    family: str
    k: int
    d: int
    values: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.values[name]

    def numpy(self):
        return PosteriorParams(self.family, self.k, self.d,
                               {n: ad.value_of(v) for n, v in self.values.items()})

    def rotation(self):
        if self.family != "full_gm":
            return None
        return rotation_tensor(self.values["gamma"], self.d)

    def chol_hat(self):
        l_off = self.values["l_off"]
        ones = np.ones(ad.value_of(l_off).shape[:-1] + (self.d,))
        return cop.normalize_chol_t(cop.chol_from_params_t(ad.Tensor(ones), l_off, self.d))

    def row(self, i):
        return PosteriorParams(self.family, self.k, self.d,
                               {n: ad.value_of(v)[i] for n, v in self.values.items()})


def apply_heads(raw, family, k, d):
    """Split raw outputs (B, width) into activated PosteriorParams."""
    width = raw.shape[-1]
    if width != head_width(family, k, d):
        raise ConfigurationError(
            f"{family} with K={k}, D={d} needs {head_width(family, k, d)} head outputs, got {width}"
        )
    batch = raw.shape[:-1]
    values, start = {}, 0
    for name, shape, act in head_layout(family, k, d):
        size = int(np.prod(shape))
        block = raw[..., start:start + size]
        start += size
        if name == "alpha":
            zero = np.zeros(batch + (1,))
            values[name] = ad.softmax(ad.concatenate([block, zero], axis=-1), axis=-1)
            continue
        values[name] = ad.reshape(nn.ACTIVATIONS[act](block), batch + shape)
    if family != "copula":
        if k == 1:
            values["alpha"] = ad.Tensor(np.ones(batch + (1,)))
        values["scale"] = values.pop("sigma" if family == "diag_gm" else "s")
        if family == "full_gm" and "gamma" not in values:
            values["gamma"] = ad.Tensor(np.zeros(batch + (k, 0)))
    return PosteriorParams(family, k, d, values)


def as_mixture(post: PosteriorParams, i: int) -> mix.GaussianMixture:
    """Row ``i`` as a GaussianMixture value object."""
    p = post.row(i)
    angles = p["gamma"] if post.family == "full_gm" else None
    return mix.GaussianMixture(p["alpha"], p["mu"], p["scale"], angles)


def as_copula(post: PosteriorParams, i: int) -> cop.GaussianCopulaPosterior:
    p = post.row(i)
    l = np.eye(post.d)
    l[np.tril_indices(post.d, -1)] = p["l_off"]
    return cop.GaussianCopulaPosterior(p["mu"], p["sigma"], l)


# ---------------------------------------------------------------- sampling

def sample_and_logq(post: PosteriorParams, h, rng, n_mc=N_MC_TRAIN, ids=None):
    """Draws z (B, H, D) in the unit box and log q(z) (B, H), both taped.

    The random inputs (component picks, normal noise, MC points) are drawn
    from ``rng`` in the same order for both mixture families.
    """
    if post.family == "copula":
        eps = rng.standard_normal(ad.value_of(post["mu"]).shape[:-1] + (h, post.d))
        return cop.sample_t(post["mu"], post["sigma"], post.chol_hat(), eps)
    rot = post.rotation()
    comp, eps, _, _ = mix.draw_truncated(
        ad.value_of(post["alpha"]), ad.value_of(post["mu"]), ad.value_of(post["scale"]),
        None if rot is None else rot.value, h, rng, ids=ids,
    )
    z = mix.transform_t(post["mu"], post["scale"], rot, comp, eps)
    u = mix.mc_points(n_mc, post.d, rng)
    logq = mix.truncated_logpdf_t(z, post["alpha"], post["mu"], post["scale"], rot, u, 1.0)
    return z, logq


def log_density(post: PosteriorParams, z, rng, n_mc=65536):
    """log q at given points z (B, G, D) in the open unit box (plain arrays)."""
    z = np.asarray(z, dtype=float)
    if post.family == "copula":
        return cop.joint_logpdf_t(z, post["mu"], post["sigma"], post.chol_hat()).value
    u = mix.mc_points(n_mc, post.d, rng)
    rot = post.rotation()
    return mix.truncated_logpdf_t(z, post["alpha"], post["mu"], post["scale"], rot, u, 1.0).value


# ---------------------------------------------------------------- loss

def decode(decoder, z, w):
    """F([z, w]) for z (B, H, D) and w (B, n_w); returns (B, H, F)."""
    zv = ad.value_of(z)
    w_rep = np.broadcast_to(np.asarray(w, dtype=float)[:, None, :],
                            zv.shape[:-1] + (np.shape(w)[-1],))
    return nn.forward(decoder, ad.concatenate([z, ad.Tensor(w_rep)], axis=-1))


def misfit(m, f, beta=BETA):
    """1/2 (m - F)^T Gamma^-1 (m - F) with Gamma = diag((beta F)^2) floored."""
    gamma = ad.clip(ad.square(beta * f), GAMMA_FLOOR, None)
    resid = ad.expand_dims(ad.as_tensor(np.asarray(m, dtype=float)), -2) - f
    return 0.5 * (ad.square(resid) / gamma).sum(axis=-1)


def elbo_terms(post, m, w, decoder, beta=BETA, h=1, rng=None, n_mc=N_MC_TRAIN):
    """Per-sample (misfit, log q), each (B, H)."""
    z, logq = sample_and_logq(post, h, rng, n_mc)
    return misfit(m, decode(decoder, z, w), beta), logq


def elbo_loss(post, m, w, decoder, beta=BETA, h=1, rng=None, n_mc=N_MC_TRAIN):
    """Sample-average ELBO loss: mean over batch and samples of misfit + log q."""
    data, logq = elbo_terms(post, m, w, decoder, beta, h, rng, n_mc)
    return (data + logq).mean()


# ---------------------------------------------------------------- model

@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 1024
    max_epochs: int = 5000
    patience: int = 100
    min_delta: float = 1e-3
    beta: float = BETA
    h_train: int = 1
    h_val: int = 1
    n_mc: int = N_MC_TRAIN
    clip_norm: float | None = None
    seed: int = 0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class TrainedVae:
    encoder: nn.Mlp
    decoder: nn.Mlp
    family: str
    k: int
    d: int
    config: TrainConfig = field(default_factory=TrainConfig)
    history: list = field(default_factory=list)
    seconds: float = 0.0
    initial_val: float = math.nan

    @property
    def decoder_hash(self):
        return self.decoder.param_hash()

    def to_dict(self):
        return {
            "kind": "encoder",
            "family": self.family,
            "k": self.k,
            "d": self.d,
            "head_layout": [[n, list(s), a] for n, s, a in head_layout(self.family, self.k, self.d)],
            "decoder_hash": self.decoder_hash,
            "config": self.config.to_dict(),
            "network": self.encoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, d, decoder):
        family, k, dim = d["family"], int(d["k"]), int(d["d"])
        check_family(family)
        encoder = nn.Mlp.from_dict(d["network"])
        if encoder.n_out != head_width(family, k, dim):
            raise IncompatibilityError("encoder head width does not match its family/K/D")
        if d.get("decoder_hash") not in (None, decoder.param_hash()):
            raise IncompatibilityError("encoder was trained against a different decoder")
        return cls(encoder, decoder, family, k, dim, TrainConfig(**d.get("config", {})))


def encoder_input(m, w):
    return np.hstack([np.asarray(m, dtype=float), np.asarray(w, dtype=float)])


def encode(vae: TrainedVae, m, w, params=None) -> PosteriorParams:
    x = encoder_input(np.atleast_2d(m), np.atleast_2d(w))
    raw = nn.forward(vae.encoder, x, params)
    return apply_heads(raw, vae.family, vae.k, vae.d)


def build_encoder(family, k, d, n_in, rng):
    layers = nn.mlp_spec(n_in, nn.ENCODER_WIDTHS, nn.ENCODER_ACTIVATIONS, head_width(family, k, d))
    return nn.init_mlp(layers, rng)


def train_encoder(m, w, m_val, w_val, family, k, decoder, config: TrainConfig | None = None,
                  d=2) -> TrainedVae:
    """Fit the encoder by minimizing the mean ELBO loss over the train rows."""
    check_family(family)
    config = config or TrainConfig()
    if not decoder.frozen:
        raise ConfigurationError("the decoder must be pretrained and frozen")
    x = encoder_input(m, w)
    w = np.asarray(w, dtype=float)
    m = np.asarray(m, dtype=float)
    x_val = encoder_input(m_val, w_val)
    encoder = build_encoder(family, k, d, x.shape[1], np.random.default_rng([config.seed, 0xE1C]))
    vae = TrainedVae(encoder, decoder, family, k, d, config)
    before = decoder.param_hash()

    def batch_loss(params, idx, rng):
        post = apply_heads(nn.forward(encoder, x[idx], params), family, k, d)
        return elbo_loss(post, m[idx], w[idx], decoder, config.beta, config.h_train, rng, config.n_mc)

    def val_loss(params, rng):
        post = apply_heads(nn.forward(encoder, x_val, params), family, k, d)
        return float(elbo_loss(post, m_val, w_val, decoder, config.beta, config.h_val, rng,
                               config.n_mc).value)

    def frozen_check():
        if decoder.param_hash() != before:
            raise TrainingError("decoder parameters changed during encoder training")

    vae.initial_val = val_loss(encoder.params, nn.epoch_rng(config.seed, 0, 1))
    res = nn.train_loop(encoder.params, batch_loss, x.shape[0], val_loss,
                        batch_size=config.batch_size, lr=config.lr,
                        max_epochs=config.max_epochs, patience=config.patience,
                        min_delta=config.min_delta, seed=config.seed, frozen_check=frozen_check,
                        clip_norm=config.clip_norm)
    encoder.set_params(res.params)
    vae.history = res.history
    vae.seconds = res.seconds
    return vae


def sample_posterior(vae: TrainedVae, m, w, h, rng, n_mc=65536, ids=None):
    """h draws per row and their log q, as plain arrays."""
    post = encode(vae, m, w).numpy()
    z, logq = sample_and_logq(post, h, rng, n_mc, ids=ids)
    return ad.value_of(z), ad.value_of(logq)


