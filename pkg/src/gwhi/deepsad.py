"""Diversity-DeepSAD with continuous auxiliary labels.

The HI of a sample is its embedding distance to a fixed hypersphere
centre.  Training minimises

    (1/B) * [sum_unlabeled y**2 + eta * sum_labeled (y + eps)**(2*label)]
    + nu * sum ||W||**2 + lam * (trace(G) - logdet(G))

with ``G`` the Gram matrix of the batch embeddings.  Labels run linearly
from +1 (healthy) to -1 (failed) and are only assigned in the first and
last quarter of each specimen's life.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .datamodel import MinMaxOutputNormalizer, fit_zscore

logger = logging.getLogger(__name__)

# (lo, hi, is_integer)
SEARCH_SPACE = {
    "batch_size": (50, 150, True),
    "lr_pretrain": (1e-4, 1e-3, False),
    "lr": (1e-4, 1e-3, False),
    "epochs_pretrain": (5, 20, True),
    "epochs": (50, 200, True),
}


@dataclass
class DeepSadHyperparams:
    batch_size: int = 100
    lr_pretrain: float = 1e-3
    lr: float = 1e-3
    epochs_pretrain: int = 10
    epochs: int = 100
    nu: float = 10.0
    eta: float = 10.0
    lam: float = 1e-3
    eps: float = 1e-6
    embed_dim: int = 16
    n_layers: int = 6
    leaky_slope: float = 0.01

    def validate(self) -> None:
        for name, (lo, hi, _) in SEARCH_SPACE.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    @classmethod
    def from_dict(cls, d: dict) -> "DeepSadHyperparams":
        hp = cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})
        for name, (_, _, is_int) in SEARCH_SPACE.items():
            if is_int:
                setattr(hp, name, int(round(getattr(hp, name))))
        return hp


def scaled_epochs(n: int, scale: float) -> int:
    return max(1, int(round(n * scale)))


# ---------------------------------------------------------------------------
# labels and centre
# ---------------------------------------------------------------------------

def make_labels(times, t_end=None):
    """Auxiliary labels ``1 - 2 t / t_end`` on the first and last quarter of life.

    Returns ``(labels, labeled)``; unlabeled entries hold NaN.
    """
    t = np.asarray(times, dtype=np.float64)
    t_end = float(t[-1]) if t_end is None else float(t_end)
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if np.any(np.diff(t) < 0):
        raise ValueError("times must be increasing")
    frac = t / t_end
    labeled = (frac <= 0.25) | (frac >= 0.75)
    labels = np.where(labeled, 1.0 - 2.0 * frac, np.nan)
    return labels, labeled


def adjust_center(c, eps: float = 1e-6) -> np.ndarray:
    """Push near-zero centre components ``eps`` away from zero.

    Exact zeros move to ``+eps``.
    """
    c = np.array(c, dtype=np.float64)
    pos = (c >= 0) & (c < eps)
    neg = (c > -eps) & (c < 0)
    c[pos] = c[pos] + eps
    c[neg] = c[neg] - eps
    return c


def init_center(encoder: nn.DenseNet, x, eps: float = 1e-6) -> np.ndarray:
    """Mean embedding of the training rows, then :func:`adjust_center`."""
    return adjust_center(encoder(x).mean(axis=0), eps)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

def encoder_widths(n_in: int, n_layers: int = 6, embed_dim: int = 16) -> list[int]:
    """Halve the width layer by layer (never below ``embed_dim``), ending at ``embed_dim``."""
    widths = [n_in]
    for _ in range(n_layers - 1):
        widths.append(max(embed_dim, widths[-1] // 2))
    widths.append(embed_dim)
    return widths


def build_encoder(n_in: int, hp: DeepSadHyperparams, rng) -> nn.DenseNet:
    widths = encoder_widths(n_in, hp.n_layers, hp.embed_dim)
    n = len(widths) - 1
    acts = ["leaky_relu"] * (n - 1) + ["linear"]
    return nn.DenseNet.build(widths, acts, rng, bias=[True] * (n - 1) + [False], slope=hp.leaky_slope)


def build_decoder(encoder: nn.DenseNet, rng) -> nn.DenseNet:
    widths = [encoder.out_width] + [l.shape[0] for l in reversed(encoder.layers)]
    n = len(widths) - 1
    acts = ["leaky_relu"] * (n - 1) + ["linear"]
    return nn.DenseNet.build(widths, acts, rng, slope=encoder.layers[0].slope)


def pretrain(encoder: nn.DenseNet, x, hp: DeepSadHyperparams, rng, epochs: int | None = None) -> list[float]:
    """Autoencoder pretraining on mean squared reconstruction error.

    Updates ``encoder`` in place; the mirrored decoder is discarded.
    Returns the per-epoch mean training loss.
    """
    epochs = hp.epochs_pretrain if epochs is None else epochs
    decoder = build_decoder(encoder, rng)
    opt = nn.Adam(encoder.params() + decoder.params(), lr=hp.lr_pretrain)
    history = []
    for _ in range(epochs):
        total = 0.0
        for idx in nn.minibatches(len(x), hp.batch_size, rng):
            xb = x[idx]
            z, ce = encoder.forward(xb)
            xh, cd = decoder.forward(z)
            diff = xh - xb
            loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite autoencoder loss after {len(history)} epoch(s)")
            gz, gdec = decoder.backward(cd, 2.0 * diff / diff.size)
            _, genc = encoder.backward(ce, gz)
            opt.step(genc + gdec)
            total += loss * len(idx)
        history.append(total / len(x))
    return history


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def loss_terms(z, labels, center, hp: DeepSadHyperparams):
    """Data term and diversity term on a batch of embeddings, with ``dL/dz``.

    ``labels`` holds NaN for unlabeled rows.  Returns
    ``(l_ds, l_div, grad_z)`` where ``grad_z`` already includes ``lam``.
    """
    b = z.shape[0]
    d = z - center
    y = np.sqrt(np.sum(d * d, axis=1))
    labeled = ~np.isnan(labels)
    unl = ~labeled
    l_ds = float(np.sum(y[unl] ** 2)) / b
    g = np.zeros_like(z)
    g[unl] = 2.0 * d[unl] / b
    if labeled.any():
        lab = labels[labeled]
        yl = y[labeled] + hp.eps
        l_ds += hp.eta * float(np.sum(yl ** (2.0 * lab))) / b
        dy = hp.eta * 2.0 * lab * yl ** (2.0 * lab - 1.0) / b
        yr = y[labeled]
        safe = np.where(yr > 0, yr, 1.0)
        g[labeled] = np.where(yr[:, None] > 0, (dy / safe)[:, None] * d[labeled], 0.0)
    l_div, g_div = nn.gram_trace_logdet(z, hp.eps)
    return l_ds, l_div, g + hp.lam * g_div


def total_loss(encoder: nn.DenseNet, x, labels, center, hp: DeepSadHyperparams):
    """Full objective on one batch and its gradients w.r.t. ``encoder.params()``."""
    z, cache = encoder.forward(x)
    l_ds, l_div, gz = loss_terms(z, labels, center, hp)
    _, grads = encoder.backward(cache, gz)
    l2 = encoder.l2()
    grads = [g + hp.nu * r for g, r in zip(grads, encoder.l2_grads())]
    total = l_ds + hp.nu * l2 + hp.lam * l_div
    return total, grads, {"ds": l_ds, "l2": l2, "div": l_div}


def train(encoder: nn.DenseNet, x, labels, center, hp: DeepSadHyperparams, rng, epochs: int | None = None):
    """Mini-batch Adam on :func:`total_loss`; the centre stays fixed."""
    epochs = hp.epochs if epochs is None else epochs
    opt = nn.Adam(encoder.params(), lr=hp.lr)
    history = []
    for _ in range(epochs):
        total = 0.0
        for idx in nn.minibatches(len(x), hp.batch_size, rng):
            loss, grads, _ = total_loss(encoder, x[idx], labels[idx], center, hp)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite DeepSAD loss after {len(history)} epoch(s)")
            opt.step(grads)
            total += loss * len(idx)
        history.append(total / len(x))
    return history


def distances(encoder: nn.DenseNet, x, center) -> np.ndarray:
    d = encoder(x) - center
    return np.sqrt(np.sum(d * d, axis=1))


# ---------------------------------------------------------------------------
# end-to-end fit / inference
# ---------------------------------------------------------------------------

def fit(x_train, times, specimen_ids, hp: DeepSadHyperparams, seed: int, epoch_scale: float = 1.0) -> nn.TrainedModel:
    """Train one model on the raw (un-normalised) feature rows of the training specimens.

    ``times`` and ``specimen_ids`` give, per row, the measurement time and
    the specimen it belongs to; labels use each specimen's own end time.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    specimen_ids = np.asarray(specimen_ids)
    rng = np.random.default_rng(seed)
    zs = fit_zscore(x_train)
    x = zs.transform(x_train)
    labels = np.full(len(x), np.nan)
    for s in np.unique(specimen_ids):
        m = specimen_ids == s
        labels[m] = make_labels(times[m])[0]
    encoder = build_encoder(x.shape[1], hp, rng)
    pre_hist = pretrain(encoder, x, hp, rng, scaled_epochs(hp.epochs_pretrain, epoch_scale))
    center = init_center(encoder, x, hp.eps)
    hist = train(encoder, x, labels, center, hp, rng, scaled_epochs(hp.epochs, epoch_scale))
    raw = distances(encoder, x, center)
    mm = MinMaxOutputNormalizer.fit(raw)
    return nn.TrainedModel(
        "deepsad",
        {"encoder": encoder},
        {"center": center, "z_mean": zs.mean, "z_std": zs.std, "minmax": np.array([mm.lo, mm.hi])},
        {"seed": int(seed), "hp": asdict(hp), "epoch_scale": epoch_scale,
         "pretrain_loss": pre_hist, "train_loss": hist},
    )


def infer_hi(model: nn.TrainedModel, x, normalize: bool = True) -> np.ndarray:
    """Distance to the centre per row, min-max scaled with training statistics."""
    x = np.asarray(x, dtype=np.float64)
    enc = model.nets["encoder"]
    if x.ndim != 2 or x.shape[1] != enc.in_width:
        raise ValueError(f"expected {enc.in_width} features per row, got shape {x.shape}")
    xz = (x - model.arrays["z_mean"]) / model.arrays["z_std"]
    raw = distances(enc, xz, model.arrays["center"])
    if not normalize:
        return raw
    lo, hi = model.arrays["minmax"]
    return MinMaxOutputNormalizer(float(lo), float(hi)).transform(raw)
