"""Degradation-trend-constrained VAE with a one-dimensional latent HI.

Loss per batch::

    alpha * KL(q(z|x) || N(0, 1)) + beta * sum (x - x_hat)**2
    + gamma * sum_j (z_j - z_{j-1} - r)**2

where the last sum runs over consecutive timesteps of the same specimen
that fall in the same mini-batch.  Batches are contiguous time blocks of
the concatenated (specimen-shuffled) training sequences.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .datamodel import MinMaxOutputNormalizer, fit_zscore

logger = logging.getLogger(__name__)

SEARCH_SPACE = {
    "hidden": (40, 60, True),
    "batch_size": (75, 95, True),
    "lr": (1e-3, 1e-2, False),
    "epochs": (500, 600, True),
    "alpha": (1.4, 1.8, False),
    "beta": (2.6, 3.0, False),
    "gamma": (0.05, 0.1, False),
}
RATE_RANGE = (9.0, 10.0)


class PosteriorCollapseWarning(RuntimeWarning):
    pass


@dataclass
class DtcVaeHyperparams:
    hidden: int = 50
    batch_size: int = 85
    lr: float = 5e-3
    epochs: int = 550
    alpha: float = 1.6
    beta: float = 2.8
    gamma: float = 0.075

    def validate(self) -> None:
        for name, (lo, hi, _) in SEARCH_SPACE.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    @classmethod
    def from_dict(cls, d: dict) -> "DtcVaeHyperparams":
        hp = cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})
        for name, (_, _, is_int) in SEARCH_SPACE.items():
            if is_int:
                setattr(hp, name, int(round(getattr(hp, name))))
        return hp


@dataclass
class VaeNet:
    encoder: nn.DenseNet  # input -> hidden (sigmoid)
    heads: nn.DenseNet    # hidden -> [mu, logvar] (linear)
    decoder: nn.DenseNet  # latent -> hidden (sigmoid) -> input (linear)

    @classmethod
    def build(cls, n_in: int, hidden: int, rng) -> "VaeNet":
        enc = nn.DenseNet.build([n_in, hidden], "sigmoid", rng)
        heads = nn.DenseNet.build([hidden, 2], "linear", rng)
        dec = nn.DenseNet.build([1, hidden, n_in], ["sigmoid", "linear"], rng)
        return cls(enc, heads, dec)

    def params(self):
        return self.encoder.params() + self.heads.params() + self.decoder.params()

    def encode(self, x):
        out = self.heads(self.encoder(x))
        return out[:, 0], out[:, 1]


def reparameterize(mu, logvar, noise):
    """``z = mu + exp(logvar / 2) * noise``."""
    return np.asarray(mu) + np.exp(0.5 * np.asarray(logvar)) * np.asarray(noise)


def kl_term(mu, logvar) -> float:
    mu, logvar = np.asarray(mu), np.asarray(logvar)
    return float(-0.5 * np.sum(1.0 + logvar - np.exp(logvar) - mu * mu))


def consecutive_pairs(seg, pos) -> np.ndarray:
    """Row indices ``j`` (j >= 1) whose predecessor row is the previous timestep of the same specimen."""
    seg, pos = np.asarray(seg), np.asarray(pos)
    return np.flatnonzero((seg[1:] == seg[:-1]) & (pos[1:] == pos[:-1] + 1)) + 1


def trend_term(z, pairs, rate) -> float:
    e = z[pairs] - z[pairs - 1] - rate
    return float(np.sum(e * e))


def loss_and_grads(net: VaeNet, x, seg, pos, noise, hp: DtcVaeHyperparams, rate: float):
    """Weighted three-term loss on one batch and gradients aligned with ``net.params()``."""
    h, ce = net.encoder.forward(x)
    out, ch = net.heads.forward(h)
    mu, lv = out[:, 0], out[:, 1]
    sd = np.exp(0.5 * lv)
    z = mu + sd * noise
    xh, cd = net.decoder.forward(z[:, None])
    diff = x - xh
    l_kl = kl_term(mu, lv)
    l_re = float(np.sum(diff * diff))
    pairs = consecutive_pairs(seg, pos)
    l_mo = trend_term(z, pairs, rate)
    total = hp.alpha * l_kl + hp.beta * l_re + hp.gamma * l_mo

    gz_dec, g_dec = net.decoder.backward(cd, -2.0 * hp.beta * diff)
    gz = gz_dec[:, 0]
    if pairs.size:
        e = 2.0 * hp.gamma * (z[pairs] - z[pairs - 1] - rate)
        np.add.at(gz, pairs, e)
        np.add.at(gz, pairs - 1, -e)
    gmu = gz + hp.alpha * mu
    glv = gz * noise * 0.5 * sd - 0.5 * hp.alpha * (1.0 - np.exp(lv))
    gh, g_heads = net.heads.backward(ch, np.stack([gmu, glv], axis=1))
    _, g_enc = net.encoder.backward(ce, gh)
    parts = {"kl": l_kl, "re": l_re, "mo": l_mo, "z": z}
    return total, g_enc + g_heads + g_dec, parts


def time_block_batches(seg, batch_size: int, rng) -> list[np.ndarray]:
    """Contiguous blocks of rows after shuffling the order of specimens.

    Rows of each specimen must be stored in time order.
    """
    seg = np.asarray(seg)
    specimens = list(dict.fromkeys(seg.tolist()))
    order = rng.permutation(len(specimens))
    rows = np.concatenate([np.flatnonzero(seg == specimens[i]) for i in order])
    return [rows[i : i + batch_size] for i in range(0, rows.size, batch_size)]


def fit(x_train, specimen_ids, hp: DtcVaeHyperparams, seed: int, epoch_scale: float = 1.0) -> nn.TrainedModel:
    """Train one model on raw feature rows (time-ordered within each specimen)."""
    x_train = np.asarray(x_train, dtype=np.float64)
    seg = np.asarray(specimen_ids)
    pos = np.arange(len(seg))
    rng = np.random.default_rng(seed)
    rate = float(rng.uniform(*RATE_RANGE))
    while rate <= RATE_RANGE[0]:
        rate = float(rng.uniform(*RATE_RANGE))
    zs = fit_zscore(x_train)
    x = zs.transform(x_train)
    net = VaeNet.build(x.shape[1], hp.hidden, rng)
    opt = nn.Adam(net.params(), lr=hp.lr)
    epochs = max(1, int(round(hp.epochs * epoch_scale)))
    history = []
    for _ in range(epochs):
        total = 0.0
        for idx in time_block_batches(seg, hp.batch_size, rng):
            noise = rng.standard_normal(idx.size)
            loss, grads, _ = loss_and_grads(net, x[idx], seg[idx], pos[idx], noise, hp, rate)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite DTC-VAE loss after {len(history)} epoch(s)")
            opt.step(grads)
            total += loss
        history.append(total / len(x))

    mu, _ = net.encode(x)
    collapsed = bool(np.var(mu) < 1e-8)
    if collapsed:
        warnings.warn("latent mean is constant over the training set (posterior collapse)",
                      PosteriorCollapseWarning, stacklevel=2)
    firsts, lasts = [], []
    for s in dict.fromkeys(seg.tolist()):
        m = mu[seg == s]
        firsts.append(m[0])
        lasts.append(m[-1])
    sign = -1.0 if np.mean(lasts) < np.mean(firsts) else 1.0
    mm = MinMaxOutputNormalizer.fit(sign * mu)
    return nn.TrainedModel(
        "dtcvae",
        {"encoder": net.encoder, "heads": net.heads, "decoder": net.decoder},
        {"z_mean": zs.mean, "z_std": zs.std, "minmax": np.array([mm.lo, mm.hi]), "sign": np.array(sign)},
        {"seed": int(seed), "hp": asdict(hp), "rate": rate, "epoch_scale": epoch_scale,
         "train_loss": history, "collapsed": collapsed},
    )


def infer_hi(model: nn.TrainedModel, x, normalize: bool = True) -> np.ndarray:
    """Latent mean per row, sign-oriented and min-max scaled with training statistics."""
    x = np.asarray(x, dtype=np.float64)
    enc = model.nets["encoder"]
    if x.ndim != 2 or x.shape[1] != enc.in_width:
        raise ValueError(f"expected {enc.in_width} features per row, got shape {x.shape}")
    xz = (x - model.arrays["z_mean"]) / model.arrays["z_std"]
    mu = model.nets["heads"](model.nets["encoder"](xz))[:, 0] * float(model.arrays["sign"])
    if not normalize:
        return mu
    lo, hi = model.arrays["minmax"]
    return MinMaxOutputNormalizer(float(lo), float(hi)).transform(mu)
