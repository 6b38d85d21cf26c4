"""Analytic toy forward model for platform motions and its feature pipeline.

Each monitored degree of freedom responds as a superposition of a static
offset, a lightly damped resonance, a wave-band oscillation and a small
amount of white measurement noise. Damage enters through two closed-form
effects: anchoring lowers the restoring stiffness k(z2) = 1 - 0.4 z2 and
biofouling adds mass m(z1) = 1 + 0.5 z1, so the natural frequency becomes
f_n0 * sqrt(k / m) and the mean offset grows as 1 / k.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate, signal

from copvae.errors import ArityError, ConfigurationError, DomainError

log = logging.getLogger(__name__)

HS_RANGE = (2.0, 15.0)
TP_RANGE = (1.0, 15.0)
WV_RANGE = (1.0, 30.0)
ENV_BOUNDS = np.array([HS_RANGE, TP_RANGE, WV_RANGE])

DURATION = 1800.0
DT = 0.1
F_LIM = 0.05
TRANSIENT_FRACTION = 0.1
DAMAGE_SCALE = 0.25
NOISE_FRACTION = 0.02
SPLIT_FRACTIONS = (0.7, 0.2, 0.1)
FEATURE_NAMES = ("mean", "std", "f1", "f2", "m0")

# Per-DOF constants: healthy natural frequency (Hz), offset, resonant and
# wave-band gains. Three rotation-analog channels; the first is the one
# whose mean offset is checked against anchoring damage.
DOF_TABLE = (
    dict(f_n0=0.020, offset=1.00, resonant=0.80, wave=0.50),
    dict(f_n0=0.030, offset=0.40, resonant=0.60, wave=0.35),
    dict(f_n0=0.040, offset=0.25, resonant=0.45, wave=0.20),
)
MAX_DOF = len(DOF_TABLE)


@dataclass(frozen=True)
class Environment:
    hs: float
    tp: float
    wv: float

    def __post_init__(self):
        for name, value, (lo, hi) in zip(("hs", "tp", "wv"), self.as_array(), ENV_BOUNDS):
            if not lo <= value <= hi:
                raise DomainError(f"{name}={value} outside [{lo}, {hi}]")

    def as_array(self):
        return np.array([self.hs, self.tp, self.wv], dtype=float)


@dataclass(frozen=True)
class DamageState:
    z1: float
    z2: float

    def __post_init__(self):
        for name, value in (("z1", self.z1), ("z2", self.z2)):
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"{name}={value} outside [0, 1]")

    def as_array(self):
        return np.array([self.z1, self.z2], dtype=float)


def stiffness(z2):
    return 1.0 - 0.4 * z2


def added_mass(z1):
    return 1.0 + 0.5 * z1


def natural_frequency(z: DamageState, f_n0: float) -> float:
    return f_n0 * np.sqrt(stiffness(z.z2) / added_mass(z.z1))


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_response(z: DamageState, w: Environment, seed, n_dof=MAX_DOF,
                      duration=DURATION, dt=DT):
    """Time series of shape (n_dof, n_steps) sampled every ``dt`` seconds.

    Deterministic for fixed (z, w, seed); phases and noise come from ``seed``.
    """
    if not isinstance(z, DamageState):
        z = DamageState(*z)
    if not isinstance(w, Environment):
        w = Environment(*w)
    if not 1 <= n_dof <= MAX_DOF:
        raise ConfigurationError(f"n_dof must be in [1, {MAX_DOF}], got {n_dof}")
    rng = _as_rng(seed)
    t = np.arange(int(round(duration / dt))) * dt
    k, fouling = stiffness(z.z2), 1.0 + 0.3 * z.z1
    load = 0.3 + w.hs / HS_RANGE[1] + 0.5 * w.wv / WV_RANGE[1]
    out = np.empty((n_dof, t.size))
    for i, dof in enumerate(DOF_TABLE[:n_dof]):
        phase_r, phase_w = rng.uniform(0.0, 2.0 * np.pi, 2)
        f_n = natural_frequency(z, dof["f_n0"])
        offset = dof["offset"] * (0.5 + w.wv / WV_RANGE[1] + 0.3 * w.hs / HS_RANGE[1]) / k
        amp_r = dof["resonant"] * load / (k * fouling)
        amp_w = dof["wave"] * w.hs / HS_RANGE[1]
        x = (offset
             + amp_r * np.sin(2.0 * np.pi * f_n * t + phase_r)
             + amp_w * np.sin(2.0 * np.pi * t / w.tp + phase_w)
             + amp_r * np.exp(-t / 20.0) * np.cos(2.0 * np.pi * f_n * t))
        x += NOISE_FRACTION * x.std() * rng.standard_normal(t.size)
        out[i] = x
    return out


def extract_features(series, sample_rate, f_lim=F_LIM, discard=TRANSIENT_FRACTION):
    """[mean, std, f1, f2, m0] of one channel after dropping the transient.

    The PSD is a mean-removed one-sided periodogram; f1 and f2 are its
    argmax on [0, f_lim] and [f_lim, Nyquist]; m0 integrates omega * S
    over omega = 2 pi f by the trapezoid rule.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ArityError("extract_features takes one channel")
    x = x[int(discard * x.size):]
    if x.size < 2:
        raise ArityError("need at least two samples after the transient")
    nyquist = 0.5 * sample_rate
    if f_lim >= nyquist:
        raise ConfigurationError(f"f_lim={f_lim} must be below the Nyquist frequency {nyquist}")
    freqs, psd = signal.periodogram(x, fs=sample_rate, detrend="constant", scaling="density")
    low = freqs <= f_lim
    high = freqs >= f_lim
    f1 = freqs[low][np.argmax(psd[low])]
    f2 = freqs[high][np.argmax(psd[high])]
    omega = 2.0 * np.pi * freqs
    m0 = integrate.trapezoid(omega * psd, omega)
    return np.array([x.mean(), x.std(ddof=1), f1, f2, m0])


def sample_damage(rng, scale=DAMAGE_SCALE) -> DamageState:
    z = np.minimum(np.abs(rng.normal(0.0, scale, 2)), 1.0)
    return DamageState(float(z[0]), float(z[1]))


def sample_environment(rng) -> Environment:
    v = rng.uniform(ENV_BOUNDS[:, 0], ENV_BOUNDS[:, 1])
    return Environment(*map(float, v))


def scenario_features(z, w, seed, n_dof=MAX_DOF, f_lim=F_LIM):
    series = simulate_response(z, w, seed, n_dof)
    return np.concatenate([extract_features(s, 1.0 / DT, f_lim) for s in series])


# ---------------------------------------------------------------- dataset

class MinMaxScaler:
    """Per-column affine map of the training range onto [0, 1]."""

    def __init__(self, low, high):
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x.min(axis=0), x.max(axis=0))

    @property
    def span(self):
        span = self.high - self.low
        return np.where(span > 0, span, 1.0)

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.low) / self.span

    def inverse(self, x):
        return np.asarray(x, dtype=float) * self.span + self.low

    def to_dict(self):
        return {str(i): {"min": float(a), "max": float(b)}
                for i, (a, b) in enumerate(zip(self.low, self.high))}

    @classmethod
    def from_dict(cls, d):
        keys = sorted(d, key=int)
        return cls([d[k]["min"] for k in keys], [d[k]["max"] for k in keys])


# Environment scaling uses the fixed sampling box, so every split and every
# hand-built query maps into [0, 1] the same way.
ENV_SCALER = MinMaxScaler(ENV_BOUNDS[:, 0], ENV_BOUNDS[:, 1])


@dataclass
class Dataset:
    ids: np.ndarray
    split: np.ndarray
    env: np.ndarray
    z: np.ndarray
    m: np.ndarray
    scaler: MinMaxScaler

    def __len__(self):
        return self.ids.size

    @property
    def n_features(self):
        return self.m.shape[1]

    def mask(self, split):
        return self.split == split

    def part(self, split):
        """(m_scaled, w_scaled, z, ids) for one split."""
        sel = self.mask(split)
        return (self.scaler.transform(self.m[sel]), ENV_SCALER.transform(self.env[sel]),
                self.z[sel], self.ids[sel])


def split_counts(n):
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    return n_train, n_val, n - n_train - n_val


def _simulate_chunk(args):
    seeds, n_dof, f_lim = args
    rows = []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        w = sample_environment(rng)
        z = sample_damage(rng)
        m = scenario_features(z, w, rng, n_dof, f_lim)
        rows.append((w.as_array(), z.as_array(), m))
    return rows


def build_dataset(n=6000, seed=0, n_dof=MAX_DOF, f_lim=F_LIM, workers=1) -> Dataset:
    """Simulate ``n`` scenarios, split 70/20/10 and fit the scaler on train.

    Scenario i draws everything from the i-th child of ``SeedSequence(seed)``,
    so serial and parallel builds agree exactly.
    """
    if n < 10:
        raise ConfigurationError("dataset needs at least 10 scenarios")
    root = np.random.SeedSequence(seed)
    split_seed, *children = root.spawn(n + 1)
    if workers > 1:
        step = -(-n // (4 * workers))
        chunks = [(children[i:i + step], n_dof, f_lim) for i in range(0, n, step)]
        with ProcessPoolExecutor(workers) as pool:
            rows = [r for part in pool.map(_simulate_chunk, chunks) for r in part]
    else:
        rows = _simulate_chunk((children, n_dof, f_lim))
    env = np.array([r[0] for r in rows])
    z = np.array([r[1] for r in rows])
    m = np.array([r[2] for r in rows])

    order = np.random.default_rng(split_seed).permutation(n)
    n_train, n_val, _ = split_counts(n)
    split = np.empty(n, dtype=object)
    split[order[:n_train]] = "train"
    split[order[n_train:n_train + n_val]] = "val"
    split[order[n_train + n_val:]] = "test"
    split = split.astype(str)
    scaler = MinMaxScaler.fit(m[split == "train"])
    log.info("built %d scenarios (%d features)", n, m.shape[1])
    return Dataset(np.arange(n), split, env, z, m, scaler)
