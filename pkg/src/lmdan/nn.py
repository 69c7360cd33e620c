"""Small dense networks with exact hand-written gradients.

Three players share these pieces: an encoder producing features, a
classifier head (logits, softmaxed in the loss), and a domain
discriminator (single logit, logistic in the loss). The adversarial step
applies one simultaneous SGD update: encoder and classifier descend the
weighted classification loss, the encoder additionally descends the
trade-off-scaled domain loss, and the discriminator ascends the domain
loss. Per-sample weights are treated as constants by every gradient.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .numerics import Rng, softmax

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lmdan-mlp-v1"
PROB_CLAMP = 1e-300
LOGISTIC_CLAMP = 1e-12


class NonFiniteLossError(RuntimeError):
    """A loss evaluated to NaN/inf; the training run must abort."""


@dataclass
class MlpModel:
    """Fully-connected net; ReLU on hidden layers, configurable output."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "identity"  # "identity" | "relu"

    def copy_params(self) -> list[np.ndarray]:
        return [w.copy() for w in self.weights] + [b.copy() for b in self.biases]


@dataclass
class ForwardCache:
    activations: list[np.ndarray]  # [input, post-act layer 1, ..., output]
    preacts: list[np.ndarray]


def init_mlp(layer_sizes, rng: Rng, output_activation: str = "identity") -> MlpModel:
    """Seeded Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"bad layer sizes {sizes}")
    if output_activation not in ("identity", "relu"):
        raise ValueError(f"unknown output activation {output_activation!r}")
    weights = []
    biases = []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-bound, bound, (d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MlpModel(sizes, weights, biases, output_activation)


def forward(model: MlpModel, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Batch forward pass; the cache holds everything backward needs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0]:
        raise ValueError(
            f"input shape {x.shape} does not match input size {model.layer_sizes[0]}"
        )
    last = len(model.weights) - 1
    a = x
    activations = [x]
    preacts = []
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        preacts.append(z)
        if l < last or model.output_activation == "relu":
            a = np.maximum(z, 0.0)
        else:
            a = z
        activations.append(a)
    return a, ForwardCache(activations, preacts)


def backward(model: MlpModel, cache: ForwardCache, grad_out: np.ndarray):
    """Exact reverse pass.

    Returns per-layer ``(dW, db)`` and the gradient w.r.t. the input batch.
    The ReLU derivative at exactly 0 is 0 (strict ``z > 0`` mask).
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    last = len(model.weights) - 1
    if grad_out.shape != cache.preacts[last].shape:
        raise ValueError(
            f"upstream gradient shape {grad_out.shape} does not match "
            f"output shape {cache.preacts[last].shape}"
        )
    if model.output_activation == "relu":
        dz = grad_out * (cache.preacts[last] > 0)
    else:
        dz = grad_out
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * (last + 1)
    for l in range(last, -1, -1):
        grads[l] = (cache.activations[l].T @ dz, dz.sum(axis=0))
        da = dz @ model.weights[l].T
        if l > 0:
            dz = da * (cache.preacts[l - 1] > 0)
    return grads, da


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def weighted_cross_entropy(probs: np.ndarray, labels: np.ndarray, v: np.ndarray):
    """Per-sample-weighted cross entropy over probability rows.

    loss = (1/n) * sum_i v_i * (-log p[i, y_i]); the returned gradient is
    w.r.t. the logits that produced ``probs`` via softmax, i.e. the usual
    (p - onehot) scaled per row by v_i / n.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    v = np.asarray(v, dtype=np.float64)
    n = labels.shape[0]
    if probs.shape[0] != n or v.shape[0] != n:
        raise ValueError("probs, labels and weights must share the batch size")
    idx = np.arange(n)
    p_true = probs[idx, labels]
    if np.any(p_true < PROB_CLAMP):
        log.debug("cross-entropy: clamped %d vanishing probabilities", int(np.sum(p_true < PROB_CLAMP)))
        p_true = np.maximum(p_true, PROB_CLAMP)
    loss = float(np.sum(v * -np.log(p_true)) / n)
    grad = probs.copy()
    grad[idx, labels] -= 1.0
    grad *= (v / n)[:, None]
    return loss, grad


def weighted_domain_loss(d_src: np.ndarray, d_tgt: np.ndarray, v_src: np.ndarray):
    """Source-weighted logistic domain objective.

    loss = mean_i v_i*log(d_src_i) + mean_j log(1 - d_tgt_j), the quantity
    the discriminator ascends and the encoder descends. Inputs are
    logistic outputs; gradients are returned w.r.t. the underlying logits.
    """
    ds = np.asarray(d_src, dtype=np.float64)
    dt = np.asarray(d_tgt, dtype=np.float64)
    v = np.asarray(v_src, dtype=np.float64)
    if ds.shape[0] != v.shape[0]:
        raise ValueError("v_src must match d_src length")
    if np.any(ds <= 0) or np.any(ds >= 1) or np.any(dt <= 0) or np.any(dt >= 1):
        # Saturation is routine late in adversarial training; flag quietly.
        log.debug("domain loss: clamped saturated discriminator outputs")
    ds = np.clip(ds, LOGISTIC_CLAMP, 1.0 - LOGISTIC_CLAMP)
    dt = np.clip(dt, LOGISTIC_CLAMP, 1.0 - LOGISTIC_CLAMP)
    n_s = ds.shape[0]
    n_t = dt.shape[0]
    loss = float(np.sum(v * np.log(ds)) / n_s + np.sum(np.log1p(-dt)) / n_t)
    grad_src_logits = v * (1.0 - ds) / n_s
    grad_tgt_logits = -dt / n_t
    return loss, grad_src_logits, grad_tgt_logits


@dataclass
class ScheduleState:
    """Training progress and base rates driving both learning-rate laws."""

    p: float
    lr: float
    lam: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("progress p must lie in [0, 1]")
        if self.lr <= 0:
            raise ValueError("base learning rate must be > 0")


def lr_classifier(sched: ScheduleState) -> float:
    """Decaying rate for encoder and classifier: lr * (1 + 10p)^-0.75."""
    return sched.lr * (1.0 + 10.0 * sched.p) ** -0.75


def lr_discriminator(sched: ScheduleState) -> float:
    """Warm-up rate for the discriminator: lr * (1 - e^-10p) / (1 + e^-10p)."""
    e = math.exp(-10.0 * sched.p)
    return sched.lr * (1.0 - e) / (1.0 + e)


class Batch(NamedTuple):
    """One balanced mini-batch; target samples carry no labels."""

    src_x: np.ndarray
    src_y: np.ndarray
    tgt_x: np.ndarray


@dataclass
class SgdState:
    """Optional momentum buffers, one velocity list per model."""

    momentum: float = 0.0
    velocities: dict = field(default_factory=dict)

    def apply(self, name: str, model: MlpModel, grads, step_scale: float) -> None:
        """theta += step_scale * (velocity-smoothed) gradient, in place."""
        params = model.weights + model.biases
        gs = [g for g, _ in grads] + [g for _, g in grads]
        if self.momentum == 0.0:
            for p, g in zip(params, gs):
                p += step_scale * g
            return
        if name not in self.velocities:
            self.velocities[name] = [np.zeros_like(p) for p in params]
        vel = self.velocities[name]
        for p, vbuf, g in zip(params, vel, gs):
            vbuf *= self.momentum
            vbuf += g
            p += step_scale * vbuf


def adversarial_step(
    encoder: MlpModel,
    classifier: MlpModel,
    discriminator: MlpModel,
    batch: Batch,
    v_src: np.ndarray,
    sched: ScheduleState,
    opt: SgdState | None = None,
):
    """One simultaneous update of all three models on a balanced batch.

    All gradients are evaluated at the current parameters before anything
    moves. Weights ``v_src`` are constants (no differentiation through the
    transport plan). Returns ``(classification_loss, domain_loss)``.
    """
    if opt is None:
        opt = SgdState()
    n_s = batch.src_x.shape[0]
    x = np.vstack([batch.src_x, batch.tgt_x])

    feats, cache_f = forward(encoder, x)
    logits, cache_g = forward(classifier, feats)
    probs = softmax(logits)
    l1, g_logits_src = weighted_cross_entropy(probs[:n_s], batch.src_y, v_src)

    d_logits, cache_d = forward(discriminator, feats)
    d = sigmoid(d_logits[:, 0])
    l2, g_dl_src, g_dl_tgt = weighted_domain_loss(d[:n_s], d[n_s:], v_src)

    if not (math.isfinite(l1) and math.isfinite(l2)):
        raise NonFiniteLossError(f"non-finite losses: L1={l1!r}, L2={l2!r}")

    g_up_clf = np.vstack([g_logits_src, np.zeros((x.shape[0] - n_s, logits.shape[1]))])
    grads_g, g_feats_clf = backward(classifier, cache_g, g_up_clf)

    g_up_disc = np.concatenate([g_dl_src, g_dl_tgt])[:, None]
    grads_d, g_feats_disc = backward(discriminator, cache_d, g_up_disc)

    g_feats = g_feats_clf + sched.lam * g_feats_disc
    grads_f, _ = backward(encoder, cache_f, g_feats)

    lr_c = lr_classifier(sched)
    lr_d = lr_discriminator(sched)
    opt.apply("classifier", classifier, grads_g, -lr_c)
    opt.apply("encoder", encoder, grads_f, -lr_c)
    opt.apply("discriminator", discriminator, grads_d, +lr_d)
    return l1, l2


def save_checkpoint(model: MlpModel, path) -> None:
    """Write the model as versioned JSON; float64 values round-trip exactly."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "layer_sizes": model.layer_sizes,
        "output_activation": model.output_activation,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> MlpModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    sizes = [int(s) for s in payload["layer_sizes"]]
    weights = [np.asarray(w, dtype=np.float64) for w in payload["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in payload["biases"]]
    model = MlpModel(sizes, weights, biases, payload["output_activation"])
    for w, (d_in, d_out) in zip(weights, zip(sizes[:-1], sizes[1:])):
        if w.shape != (d_in, d_out):
            raise ValueError("checkpoint weight shapes do not chain")
    return model
