"""Linear head + residual adapter with text-embedding init and analytic backward."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .data import EmbeddingTable, l2_normalize

TEMP_FLOOR = 0.01  # realized loss temperatures are clipped here


@dataclass
class LinearHead:
    weights: np.ndarray  # (d, C), column c is the classifier vector for class c


@dataclass
class Adapter:
    a1: np.ndarray  # (h, d), first transform
    a2: np.ndarray  # (d, h), second transform
    enabled: bool = False

    @property
    def hidden(self) -> int:
        return self.a1.shape[0]


@dataclass
class TemperatureSet:
    t_conf: float = 0.01
    theta_x: float = float(np.log(0.07))
    theta_u: float = float(np.log(0.07))
    learn_x: bool = True
    learn_u: bool = True
    floor: float = TEMP_FLOOR

    @property
    def t_loss_x(self) -> float:
        return max(float(np.exp(self.theta_x)), self.floor)

    @property
    def t_loss_u(self) -> float:
        return max(float(np.exp(self.theta_u)), self.floor)

    def theta_grad_x(self, dloss_dt: float) -> float:
        """d(loss)/d(theta_x) through T = exp(theta), zero when frozen or clipped."""
        t = float(np.exp(self.theta_x))
        if not self.learn_x or t < self.floor:
            return 0.0
        return dloss_dt * t

    def theta_grad_u(self, dloss_dt: float) -> float:
        t = float(np.exp(self.theta_u))
        if not self.learn_u or t < self.floor:
            return 0.0
        return dloss_dt * t


@dataclass
class Gradients:
    w: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    theta_x: float = 0.0
    theta_u: float = 0.0

    @staticmethod
    def zeros(head: LinearHead, adapter: Adapter) -> "Gradients":
        return Gradients(np.zeros_like(head.weights),
                         np.zeros_like(adapter.a1),
                         np.zeros_like(adapter.a2))

    def add_(self, other: "Gradients") -> "Gradients":
        self.w += other.w
        self.a1 += other.a1
        self.a2 += other.a2
        self.theta_x += other.theta_x
        self.theta_u += other.theta_u
        return self


@dataclass
class Model:
    head: LinearHead
    adapter: Adapter
    temps: TemperatureSet = field(default_factory=TemperatureSet)


def init_head_from_text(text: EmbeddingTable) -> LinearHead:
    """Zero-shot classifier: column c of W is the (normalized) text row for class c."""
    rows = text.values
    if not text.normalized:
        rows = l2_normalize(rows)
    return LinearHead(weights=rows.T.copy())


def make_adapter(dim: int, hidden: int | None = None, enabled: bool = False,
                 seed: int = 0) -> Adapter:
    """Residual adapter starting exactly at the identity: a2 is zero-initialized."""
    h = hidden if hidden is not None else max(1, dim // 4)
    rng = np.random.default_rng(seed)
    a1 = 1e-3 * rng.standard_normal((h, dim))
    a2 = np.zeros((dim, h))
    return Adapter(a1=a1, a2=a2, enabled=enabled)


def adapt(adapter: Adapter, x: np.ndarray) -> np.ndarray:
    """z = x + a2 @ relu(a1 @ x), identity when disabled."""
    if not adapter.enabled:
        return x
    pre = x @ adapter.a1.T
    return x + np.maximum(pre, 0.0) @ adapter.a2.T


def forward(head: LinearHead, adapter: Adapter, x: np.ndarray) -> np.ndarray:
    """Logits q = W^T z for a batch of embeddings x (n, d) -> (n, C)."""
    if x.shape[1] != head.weights.shape[0]:
        raise ValueError(f"dim mismatch: x has {x.shape[1]}, head expects {head.weights.shape[0]}")
    return adapt(adapter, x) @ head.weights


def backward(head: LinearHead, adapter: Adapter, temps: TemperatureSet,
             x: np.ndarray, upstream: np.ndarray,
             dloss_dt_x: float = 0.0, dloss_dt_u: float = 0.0) -> Gradients:
    """Map per-logit loss gradients to parameter gradients.

    upstream is dL/dq (n, C). Temperature derivatives are passed through from
    the loss layer and converted to theta gradients here.
    """
    if not np.all(np.isfinite(upstream)):
        raise FloatingPointError("non-finite upstream gradients")
    g = Gradients.zeros(head, adapter)
    if adapter.enabled:
        pre = x @ adapter.a1.T
        r = np.maximum(pre, 0.0)
        z = x + r @ adapter.a2.T
        g.w = z.T @ upstream
        dz = upstream @ head.weights.T
        g.a2 = dz.T @ r
        dr = dz @ adapter.a2
        dpre = dr * (pre > 0.0)
        g.a1 = dpre.T @ x
    else:
        g.w = x.T @ upstream
    g.theta_x = temps.theta_grad_x(dloss_dt_x)
    g.theta_u = temps.theta_grad_u(dloss_dt_u)
    return g


def save_model(model: Model, path: str) -> None:
    """Checkpoint: model.json (dims, flags, thetas) + model.f32 (W then a1 then a2)."""
    os.makedirs(path, exist_ok=True)
    d, c = model.head.weights.shape
    meta = {
        "dim": d,
        "num_classes": c,
        "adapter_hidden": model.adapter.hidden,
        "adapter_enabled": model.adapter.enabled,
        "t_conf": model.temps.t_conf,
        "theta_x": model.temps.theta_x,
        "theta_u": model.temps.theta_u,
        "learn_x": model.temps.learn_x,
        "learn_u": model.temps.learn_u,
        "floor": model.temps.floor,
    }
    with open(os.path.join(path, "model.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    blob = np.concatenate([
        model.head.weights.ravel(),
        model.adapter.a1.ravel(),
        model.adapter.a2.ravel(),
    ])
    np.ascontiguousarray(blob, dtype="<f4").tofile(os.path.join(path, "model.f32"))


def load_model(path: str) -> Model:
    with open(os.path.join(path, "model.json")) as f:
        meta = json.load(f)
    d, c, h = meta["dim"], meta["num_classes"], meta["adapter_hidden"]
    blob = np.fromfile(os.path.join(path, "model.f32"), dtype="<f4").astype(np.float64)
    expect = d * c + h * d + d * h
    if blob.size != expect:
        raise ValueError(f"model blob has {blob.size} floats, expected {expect}")
    w = blob[: d * c].reshape(d, c)
    a1 = blob[d * c: d * c + h * d].reshape(h, d)
    a2 = blob[d * c + h * d:].reshape(d, h)
    temps = TemperatureSet(
        t_conf=meta["t_conf"], theta_x=meta["theta_x"], theta_u=meta["theta_u"],
        learn_x=meta["learn_x"], learn_u=meta["learn_u"], floor=meta["floor"],
    )
    return Model(LinearHead(w), Adapter(a1, a2, enabled=meta["adapter_enabled"]), temps)
