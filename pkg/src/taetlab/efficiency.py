"""Cost models for two-stage training.

The time model predicts the ratio eta of two-stage training cost to pure
adversarial training cost from per-phase timings: F (forward), B (parameter
backward) and B_adv (input-gradient backward, the attack-side pass), with
kappa attack steps per batch. A cross-entropy epoch costs F + B per batch;
an adversarial epoch costs F + B + kappa * (F + B_adv).

The memory model tracks the extra allocation M_delta = b*c*h*w*d held only
while adversarial examples are being generated, and the effective saving
xi = (CE fraction of training) * M_delta.

Note: the byte arithmetic of M_delta is implemented literally. With
b=128, c=3, h=w=32, d=4 it yields 1,572,864 bytes (1.5 MiB), which does not
match the "~1629.42 MB" sometimes quoted for the same inputs; reports carry
the formula result in bytes and leave unit conversion to the reader.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .losses import CeLoss
from .network import Model

__all__ = [
    "TimeModel",
    "MemoryModel",
    "predict_eta",
    "predicted_epoch_cost",
    "predict_memory_saving",
    "peak_memory",
    "measure_phase_costs",
]


@dataclass(frozen=True)
class TimeModel:
    """Epoch counts, measured per-phase seconds, and the attack step count."""

    n_ce: int
    n_at: int
    f: float
    b: float
    b_adv: float
    kappa: int

    def __post_init__(self):
        if self.n_ce < 0 or self.n_at < 0 or self.n_ce + self.n_at == 0:
            raise ValueError("epoch counts must be non-negative and not all zero")
        if self.f <= 0 or self.b <= 0 or self.b_adv <= 0:
            raise ValueError("phase costs must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")

    @property
    def n_total(self) -> int:
        return self.n_ce + self.n_at

    @property
    def rho(self) -> float:
        """CE-epoch cost relative to an adversarial epoch; in (0, 1]."""
        return (self.f + self.b) / (self.f + self.b + self.kappa * (self.f + self.b_adv))

    @property
    def gamma_time(self) -> float:
        """Cost of one attack step relative to a clean forward+backward."""
        return (self.f + self.b_adv) / (self.f + self.b)


def predict_eta(tm: TimeModel) -> float:
    """Predicted two-stage / single-stage total training time ratio."""
    expansion = 1.0 + tm.kappa * tm.gamma_time
    return (tm.n_ce * tm.rho + tm.n_at * expansion) / (tm.n_total * expansion)


def eta_from_components(n_ce: int, n_at: int, kappa: int, rho: float, gamma_time: float) -> float:
    """Same prediction from already-derived rho and gamma_time."""
    expansion = 1.0 + kappa * gamma_time
    return (n_ce * rho + n_at * expansion) / ((n_ce + n_at) * expansion)


def predicted_epoch_cost(tm: TimeModel, stage: str) -> float:
    """Per-batch cost model for one epoch of the given stage ('CE' or 'ADV')."""
    if stage == "CE":
        return tm.f + tm.b
    if stage == "ADV":
        return tm.f + tm.b + tm.kappa * (tm.f + tm.b_adv)
    raise ValueError(f"unknown stage {stage!r}")


@dataclass(frozen=True)
class MemoryModel:
    """Byte accounting for the adversarial-example buffer."""

    m_model: int
    m_data: int
    m_grad: int
    batch: int
    channels: int
    height: int
    width: int
    bytes_per_element: int
    delta_flag: int = 1

    def __post_init__(self):
        if self.delta_flag not in (0, 1):
            raise ValueError("delta_flag must be 0 or 1")
        for name in ("batch", "channels", "height", "width", "bytes_per_element"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def m_delta(self) -> int:
        """Exact adversarial-buffer size: b*c*h*w*d bytes, no rounding."""
        return self.batch * self.channels * self.height * self.width * self.bytes_per_element


def peak_memory(mm: MemoryModel) -> int:
    return mm.m_model + mm.m_data + mm.m_grad + mm.delta_flag * mm.m_delta


def predict_memory_saving(mm: MemoryModel, ce_fraction: float) -> float:
    """xi = ce_fraction * M_delta: bytes freed for the CE share of training time."""
    if not 0.0 <= ce_fraction <= 1.0:
        raise ValueError("ce_fraction must lie in [0, 1]")
    return ce_fraction * mm.m_delta


def measure_phase_costs(model: Model, dataset: Dataset, attack_steps: int, probe_batches: int = 5, batch_size: int = 128) -> dict[str, float]:
    """Median per-batch timings for F, B and B_adv on this machine.

    Probes run single-threaded training semantics: each probe builds the same
    graphs the trainer builds. Returns a dict with keys 'f', 'b', 'b_adv',
    'kappa' ready to feed a TimeModel.
    """
    if probe_batches < 3:
        raise ValueError("need at least 3 probe batches")
    n = min(batch_size, len(dataset))
    feats = dataset.features[:n]
    labs = dataset.labels[:n]
    loss = CeLoss()

    tick = time.get_clock_info("perf_counter").resolution
    f_times, b_times, badv_times = [], [], []
    for _ in range(probe_batches):
        t0 = time.perf_counter()
        x_var = ad.leaf(feats)
        logits = model.forward_graph(x_var)
        out = loss.graph(logits, labs)
        t1 = time.perf_counter()
        ad.backward(out)
        t2 = time.perf_counter()

        x_var2 = ad.leaf(feats)
        out2 = loss.graph(model.forward_graph_frozen(x_var2), labs)
        t3 = time.perf_counter()
        ad.backward(out2)
        t4 = time.perf_counter()

        f_times.append(t1 - t0)
        b_times.append(t2 - t1)
        badv_times.append(t4 - t3)

    costs = {
        "f": float(np.median(f_times)),
        "b": float(np.median(b_times)),
        "b_adv": float(np.median(badv_times)),
        "kappa": int(attack_steps),
    }
    floor = 10.0 * tick
    if min(costs["f"], costs["b"], costs["b_adv"]) < floor:
        warnings.warn(
            f"phase timings approach timer resolution ({tick:.2e}s); rerun with more probe batches",
            stacklevel=2,
        )
    return costs
