"""Dense feedforward network with exact gradients for training and attacks.

The model is a plain ReLU MLP over float64 arrays. Forward evaluation has a
fast numpy path (:meth:`Model.forward`); gradient evaluation builds a small
reverse-mode graph (:mod:`taetlab.autodiff`), which yields exact derivatives
of any supported scalar loss with respect to the parameters, the inputs, or
both. Also hosts the SGD-with-momentum optimizer, the step learning-rate
schedule, and the binary checkpoint format.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad

__all__ = [
    "ModelSpec",
    "Model",
    "OptimizerState",
    "LrSchedule",
    "NonFiniteForwardError",
    "CheckpointError",
    "init_model",
    "forward",
    "loss_and_grads",
    "input_gradient",
    "sgd_step",
    "lr_at_epoch",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = "taetlab-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteForwardError(RuntimeError):
    """Raised when a layer produces NaN/Inf during a gradient pass."""


class CheckpointError(RuntimeError):
    """Raised on checkpoint version mismatch or payload corruption."""


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: input width, hidden widths, class count."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden dims must be positive, got {self.hidden_dims}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(widths[:-1], widths[1:]))


class Model:
    """MLP parameters: per layer a (fan_in, fan_out) weight matrix and a bias vector."""

    def __init__(self, spec: ModelSpec, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(spec.layer_dims) or len(biases) != len(weights):
            raise ValueError("layer count does not match spec")
        for (fin, fout), w, b in zip(spec.layer_dims, weights, biases):
            if w.shape != (fin, fout) or b.shape != (fout,):
                raise ValueError(f"layer shape {w.shape}/{b.shape} does not chain with spec {(fin, fout)}")
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list in layer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "Model":
        return Model(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Logits for a (batch, input_dim) array. Pure numpy, no tape."""
        x = _check_inputs(self.spec, x)
        h = x
        last = self.num_layers - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k != last:
                h = np.maximum(h, 0.0)
        return h

    def forward_graph(self, x_var: ad.Var) -> ad.Var:
        """Graph forward from an existing input Var, parameters as leaves."""
        params = [(ad.leaf(w), ad.leaf(b)) for w, b in zip(self.weights, self.biases)]
        logits = _chain(x_var, params, self.num_layers)
        self._param_vars = params
        return logits

    def forward_graph_frozen(self, x_var: ad.Var) -> ad.Var:
        """Graph forward with parameters as constants (input gradients only)."""
        params = [(ad.const(w), ad.const(b)) for w, b in zip(self.weights, self.biases)]
        return _chain(x_var, params, self.num_layers)


def _chain(h: ad.Var, params: list[tuple[ad.Var, ad.Var]], num_layers: int) -> ad.Var:
    for k, (w, b) in enumerate(params):
        h = h @ w + b
        if not np.isfinite(h.value).all():
            raise NonFiniteForwardError(f"non-finite activation after layer {k}")
        if k != num_layers - 1:
            h = ad.relu(h)
    return h


def _check_inputs(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"expected inputs of shape (batch, {spec.input_dim}), got {x.shape}")
    return x


def init_model(spec: ModelSpec, seed: int) -> Model:
    """Fan-in-scaled uniform init: W ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero.

    Identical (seed, spec) pairs produce bit-identical parameters.
    """
    rng = np.random.default_rng(np.random.SeedSequence([0x6D0DE1, int(seed)]))
    weights, biases = [], []
    for fin, fout in spec.layer_dims:
        bound = np.sqrt(6.0 / fin)
        weights.append(rng.uniform(-bound, bound, size=(fin, fout)))
        biases.append(np.zeros(fout))
    return Model(spec, weights, biases)


def forward(model: Model, inputs: np.ndarray) -> np.ndarray:
    return model.forward(inputs)


def _check_labels(labels, num_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got range [{y.min()}, {y.max()}]")
    return y


def loss_and_grads(model: Model, inputs: np.ndarray, labels, loss) -> tuple[float, list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Scalar batch loss plus exact gradients w.r.t. parameters and inputs.

    `loss` is a loss selector from :mod:`taetlab.losses` (CeLoss, BslLoss or
    HelLoss instance) exposing ``graph(logits_var, labels)``.

    Returns (loss_value, [(dW, db) per layer], input_grads).
    """
    x = _check_inputs(model.spec, inputs)
    y = _check_labels(labels, model.spec.num_classes)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    x_var = ad.leaf(x)
    logits = model.forward_graph(x_var)
    out = loss.graph(logits, y)
    ad.backward(out)
    param_grads = []
    for w_var, b_var in model._param_vars:
        dw = w_var.grad if w_var.grad is not None else np.zeros_like(w_var.value)
        db = b_var.grad if b_var.grad is not None else np.zeros_like(b_var.value)
        param_grads.append((dw, db))
    input_grads = x_var.grad if x_var.grad is not None else np.zeros_like(x)
    return float(out.value), param_grads, input_grads


def input_gradient(model: Model, inputs: np.ndarray, labels, loss) -> tuple[float, np.ndarray]:
    """Gradient of the batch loss w.r.t. the inputs only (parameters frozen).

    This is the attack-side backward pass; it skips every weight-gradient
    product, so it is cheaper than a full parameter backward.
    """
    x = _check_inputs(model.spec, inputs)
    y = _check_labels(labels, model.spec.num_classes)
    x_var = ad.leaf(x)
    logits = model.forward_graph_frozen(x_var)
    out = loss.graph(logits, y)
    ad.backward(out)
    g = x_var.grad if x_var.grad is not None else np.zeros_like(x)
    return float(out.value), g


@dataclass
class OptimizerState:
    """SGD-with-momentum state. Velocity shapes mirror the parameters exactly."""

    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocity: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    @classmethod
    def for_model(cls, model: Model, learning_rate: float, momentum: float = 0.0, weight_decay: float = 0.0) -> "OptimizerState":
        vel = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(model.weights, model.biases)]
        return cls(learning_rate, momentum, weight_decay, vel)


def sgd_step(model: Model, grads: list[tuple[np.ndarray, np.ndarray]], state: OptimizerState) -> tuple[Model, OptimizerState]:
    """One SGD update with weight decay coupled into the velocity:

        v <- momentum * v + grad + weight_decay * param
        param <- param - lr * v

    Updates the model and state in place and returns them.
    """
    if len(grads) != model.num_layers:
        raise ValueError("gradient list does not match layer count")
    for k, ((dw, db), (vw, vb)) in enumerate(zip(grads, state.velocity)):
        w, b = model.weights[k], model.biases[k]
        if dw.shape != w.shape or db.shape != b.shape:
            raise ValueError(f"gradient shape mismatch at layer {k}")
        vw *= state.momentum
        vw += dw + state.weight_decay * w
        vb *= state.momentum
        vb += db + state.weight_decay * b
        w -= state.learning_rate * vw
        b -= state.learning_rate * vb
    return model, state


@dataclass(frozen=True)
class LrSchedule:
    """Step decay: divide base_lr by decay_factor at each milestone epoch."""

    base_lr: float
    milestones: tuple[int, ...] = ()
    decay_factor: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.decay_factor <= 1.0:
            raise ValueError("decay_factor must exceed 1")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")


def lr_at_epoch(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    hits = sum(1 for m in schedule.milestones if m <= epoch)
    return schedule.base_lr / schedule.decay_factor**hits


def _payload_arrays(model: Model, state: OptimizerState) -> list[np.ndarray]:
    arrays = list(model.parameters())
    for vw, vb in state.velocity:
        arrays.extend((vw, vb))
    return arrays


def save_checkpoint(path, model: Model, state: OptimizerState, epoch: int) -> None:
    """Binary checkpoint: one JSON header line, then raw little-endian float64 payload.

    Payload is parameters then velocities in layer order; a SHA-256 of the
    payload makes truncation and corruption detectable. Round-trips bit-exactly.
    """
    arrays = _payload_arrays(model, state)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "spec": {
            "input_dim": model.spec.input_dim,
            "hidden_dims": list(model.spec.hidden_dims),
            "num_classes": model.spec.num_classes,
            "activation": model.spec.activation,
        },
        "epoch": int(epoch),
        "optimizer": {
            "learning_rate": state.learning_rate,
            "momentum": state.momentum,
            "weight_decay": state.weight_decay,
        },
        "payload_doubles": sum(a.size for a in arrays),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii"))
        fh.write(b"\n")
        fh.write(payload)


def load_checkpoint(path) -> tuple[Model, OptimizerState, int]:
    """Restore (model, optimizer state, epoch) from :func:`save_checkpoint` output."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError("missing checkpoint header")
    try:
        header = json.loads(raw[:nl].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_MAGIC:
        raise CheckpointError("not a taetlab checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    payload = raw[nl + 1 :]
    expected_bytes = header["payload_doubles"] * 8
    if len(payload) != expected_bytes:
        raise CheckpointError(f"payload truncated: expected {expected_bytes} bytes, found {len(payload)}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("payload checksum mismatch")

    spec = ModelSpec(
        input_dim=header["spec"]["input_dim"],
        hidden_dims=tuple(header["spec"]["hidden_dims"]),
        num_classes=header["spec"]["num_classes"],
        activation=header["spec"]["activation"],
    )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    cursor = 0

    def take(shape):
        nonlocal cursor
        n = int(np.prod(shape))
        block = flat[cursor : cursor + n].reshape(shape).copy()
        cursor += n
        return block

    weights = []
    biases = []
    for fin, fout in spec.layer_dims:
        weights.append(take((fin, fout)))
        biases.append(take((fout,)))
    velocity = []
    for fin, fout in spec.layer_dims:
        velocity.append((take((fin, fout)), take((fout,))))
    model = Model(spec, weights, biases)
    opt = header["optimizer"]
    state = OptimizerState(opt["learning_rate"], opt["momentum"], opt["weight_decay"], velocity)
    return model, state, int(header["epoch"])
