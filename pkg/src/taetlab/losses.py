"""Training losses: cross-entropy, balanced softmax, and the hierarchical
equalization loss (HEL) family.

HEL drives the adversarial stage of two-stage equalization training. It is a
weighted sum of three terms built from the vector of per-class mean losses:

* BCL -- the mean of per-class losses, giving every class equal weight;
* HDL -- the mean squared deviation of per-class losses from their mean,
  penalizing inter-class spread;
* RCEL -- the sum of squared normalized loss shares, amplifying whichever
  classes currently carry the most loss.

Each loss exists in two forms: a plain-numpy scalar (evaluation, oracles) and
a loss-selector object with a ``graph`` method that builds the same value on
the autodiff tape so gradients flow back to logits and inputs. Per-class
aggregates run over the classes present in the batch; batches routinely lack
tail classes, and including their zero losses would deflate the mean and
distort the deviation and share terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

__all__ = [
    "ClassLossVector",
    "HelWeights",
    "BslConfig",
    "cross_entropy",
    "balanced_softmax_loss",
    "per_sample_cross_entropy",
    "class_losses",
    "bcl",
    "hdl",
    "rcel",
    "hel",
    "CeLoss",
    "BslLoss",
    "HelLoss",
]


@dataclass(frozen=True)
class ClassLossVector:
    """Per-class mean losses plus the mask of classes present in the batch."""

    per_class_loss: np.ndarray
    present_mask: np.ndarray

    def __post_init__(self):
        loss = np.asarray(self.per_class_loss, dtype=np.float64)
        mask = np.asarray(self.present_mask, dtype=bool)
        if loss.shape != mask.shape or loss.ndim != 1:
            raise ValueError("per_class_loss and present_mask must be 1-D and equal length")
        if not mask.any():
            raise ValueError("at least one class must be present")
        object.__setattr__(self, "per_class_loss", loss)
        object.__setattr__(self, "present_mask", mask)

    @property
    def s_c(self) -> int:
        return int(self.present_mask.sum())

    @property
    def present_losses(self) -> np.ndarray:
        return self.per_class_loss[self.present_mask]


@dataclass(frozen=True)
class HelWeights:
    """Reweighting coefficients for the three HEL components."""

    weight_bcl: float = 0.1
    weight_hdl: float = 0.1
    weight_rcel: float = 0.1

    def __post_init__(self):
        ws = (self.weight_bcl, self.weight_hdl, self.weight_rcel)
        if any(w < 0 for w in ws):
            raise ValueError("HEL weights must be non-negative")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one HEL weight must be positive")


@dataclass(frozen=True)
class BslConfig:
    """Class counts and temperature for the balanced softmax logit shift."""

    class_counts: np.ndarray
    tau_b: float = 1.0

    def __post_init__(self):
        counts = np.asarray(self.class_counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 2:
            raise ValueError("class_counts must be a 1-D sequence of at least two counts")
        if (counts <= 0).any():
            raise ValueError("class counts must be strictly positive (log n_y undefined at 0)")
        object.__setattr__(self, "class_counts", counts)

    @property
    def logit_shift(self) -> np.ndarray:
        return self.tau_b * np.log(self.class_counts.astype(np.float64))


def _log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=1, keepdims=True)
    return z - (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))


def _check_batch(logits: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2:
        raise ValueError(f"logits must be 2-D, got shape {z.shape}")
    if z.shape[0] == 0:
        raise ValueError("empty batch")
    if y.shape != (z.shape[0],):
        raise ValueError("labels must match the batch dimension")
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise ValueError(f"labels must lie in [0, {z.shape[1]})")
    return z, y


def per_sample_cross_entropy(logits: np.ndarray, labels) -> np.ndarray:
    """-log softmax(z)[y] for each row, log-sum-exp stabilized."""
    z, y = _check_batch(logits, labels)
    return -_log_softmax_np(z)[np.arange(z.shape[0]), y]


def cross_entropy(logits: np.ndarray, labels) -> float:
    """Mean negative log-likelihood over the batch."""
    return float(per_sample_cross_entropy(logits, labels).mean())


def balanced_softmax_loss(logits: np.ndarray, labels, cfg: BslConfig) -> float:
    """Cross-entropy on logits shifted by tau_b * log(n_y) per class."""
    z, y = _check_batch(logits, labels)
    if cfg.class_counts.size != z.shape[1]:
        raise ValueError("class_counts length must equal the number of classes")
    return cross_entropy(z + cfg.logit_shift, y)


def class_losses(per_sample_loss, labels, num_classes: int) -> ClassLossVector:
    """Mean per-sample loss of each class appearing in the batch."""
    losses = np.asarray(per_sample_loss, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if losses.shape != y.shape:
        raise ValueError("per-sample losses and labels must have equal length")
    per_class = np.zeros(num_classes)
    mask = np.zeros(num_classes, dtype=bool)
    for c in np.unique(y):
        sel = y == c
        per_class[c] = losses[sel].mean()
        mask[c] = True
    return ClassLossVector(per_class, mask)


def bcl(v: ClassLossVector) -> float:
    """Mean of per-class losses over present classes."""
    return float(v.present_losses.mean())


def hdl(v: ClassLossVector) -> float:
    """Mean squared deviation of per-class losses from their mean."""
    present = v.present_losses
    return float(((present - present.mean()) ** 2).mean())


def rcel(v: ClassLossVector) -> float:
    """Sum of squared normalized per-class loss shares; 0 when the total loss is 0."""
    present = v.present_losses
    total = present.sum()
    if total == 0.0:
        return 0.0
    shares = present / total
    return float((shares * shares).sum())


def hel(v: ClassLossVector, w: HelWeights) -> float:
    return w.weight_bcl * bcl(v) + w.weight_hdl * hdl(v) + w.weight_rcel * rcel(v)


# ---------------------------------------------------------------------------
# Loss selectors: the graph-building counterparts used by training and attacks.


@dataclass(frozen=True)
class CeLoss:
    """Mean cross-entropy."""

    def graph(self, logits: ad.Var, labels: np.ndarray) -> ad.Var:
        n = logits.value.shape[0]
        if n == 0:
            raise ValueError("empty batch")
        return ad.mean_all(-ad.pick(ad.log_softmax(logits), labels))


@dataclass(frozen=True)
class BslLoss:
    """Balanced softmax: CE on logits shifted by the class-count bias."""

    cfg: BslConfig

    def graph(self, logits: ad.Var, labels: np.ndarray) -> ad.Var:
        if self.cfg.class_counts.size != logits.value.shape[1]:
            raise ValueError("class_counts length must equal the number of classes")
        shifted = logits + ad.const(self.cfg.logit_shift)
        return CeLoss().graph(shifted, labels)


@dataclass(frozen=True)
class HelLoss:
    """Hierarchical equalization loss on per-sample cross-entropies.

    Per-sample CE is averaged within each present class (a constant averaging
    matrix, so gradients split evenly across a class's samples), then the
    three components are combined with their weights.
    """

    weights: HelWeights

    def graph(self, logits: ad.Var, labels: np.ndarray) -> ad.Var:
        y = np.asarray(labels, dtype=np.int64)
        per_sample = -ad.pick(ad.log_softmax(logits), y)  # (n,)
        present = np.unique(y)
        averaging = np.zeros((present.size, y.size))
        for row, c in enumerate(present):
            sel = y == c
            averaging[row, sel] = 1.0 / sel.sum()
        per_class = ad.reshape(ad.const(averaging) @ ad.reshape(per_sample, (y.size, 1)), (present.size,))

        w = self.weights
        mean = ad.mean_all(per_class)
        out = ad.const(np.asarray(0.0))
        if w.weight_bcl:
            out = out + ad.const(w.weight_bcl) * mean
        if w.weight_hdl:
            out = out + ad.const(w.weight_hdl) * ad.mean_all(ad.square(per_class - mean))
        if w.weight_rcel:
            total = ad.sum_all(per_class)
            if float(total.value) == 0.0:
                pass  # loss floor reached: RCEL defined as 0 with zero gradient
            else:
                out = out + ad.const(w.weight_rcel) * ad.sum_all(ad.square(per_class / total))
        return out
