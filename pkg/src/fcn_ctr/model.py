"""The fusing cross network: forward pass, hand-derived backward pass,
parameter accounting, and field-wise interpretability views.

Layout conventions. With f fields and an even embedding width d, the model
width is D = f * d. Each field embedding e_i splits at its midpoint into an
"original view" half a_i and "another view" half b_i, and the first-order
vector is x1 = [a_1 .. a_f, b_1 .. b_f] of length D.

Each cross layer computes a cross vector c = W x_in + b of length D/2, builds
the gate [c || mask(c)], and outputs anchor * gate + x_in. The exponential
branch (ecn) anchors on its own layer input, doubling the interaction order
per layer; the linear branch (lcn) anchors on x1, adding one order per layer.
The mask is the self-mask c * relu(layernorm(c)), which zeroes roughly half
of the gated view. Two sigmoid heads read the branch outputs and the model
prediction is their mean.

Batches are row-major: ids (n, f) int64, activations (n, D) float64, cross
vectors (n, D/2). Params are immutable during forward/backward; traces are
per-batch and single-owner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fcn_ctr.numerics import Rng, init_params

MASK_MODES = ("paper", "no_ln", "identity")
BRANCHES = ("ecn", "lcn")

# Test-only fault injection: when set, the backward pass flips the sign of the
# first cross-layer bias gradient so the gradient audit must fail.
_inject_grad_sign_flip = False


@dataclass
class ModelConfig:
    d: int = 16
    lcn_depth: int = 3
    ecn_depth: int = 3
    mask_mode: str = "paper"
    dropout_rate: float = 0.1
    ln_epsilon: float = 1e-5
    seed: int = 1

    def __post_init__(self):
        if self.d < 2 or self.d % 2 != 0:
            raise ValueError(f"embedding dim must be even and >= 2, got {self.d}")
        if self.lcn_depth < 0 or self.ecn_depth < 0:
            raise ValueError("branch depths must be >= 0")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.ln_epsilon <= 0:
            raise ValueError(f"ln_epsilon must be positive, got {self.ln_epsilon}")


@dataclass
class CrossLayerParams:
    w: np.ndarray      # (D/2, D)
    b: np.ndarray      # (D/2,)
    gain: np.ndarray   # (D/2,) layernorm gain
    beta: np.ndarray   # (D/2,) layernorm bias

    def copy(self) -> "CrossLayerParams":
        return CrossLayerParams(self.w.copy(), self.b.copy(), self.gain.copy(), self.beta.copy())


@dataclass
class HeadParams:
    w_deep: np.ndarray     # (D,)
    b_deep: np.ndarray     # (1,)
    w_shallow: np.ndarray  # (D,)
    b_shallow: np.ndarray  # (1,)

    def copy(self) -> "HeadParams":
        return HeadParams(self.w_deep.copy(), self.b_deep.copy(),
                          self.w_shallow.copy(), self.b_shallow.copy())


@dataclass
class ModelParams:
    embeddings: list[np.ndarray]          # per field, (s_i, d): row per token id
    lcn_layers: list[CrossLayerParams]
    ecn_layers: list[CrossLayerParams]
    heads: HeadParams

    @property
    def num_fields(self) -> int:
        return len(self.embeddings)

    @property
    def width(self) -> int:
        return int(self.heads.w_deep.shape[0])

    def copy(self) -> "ModelParams":
        return ModelParams(
            [e.copy() for e in self.embeddings],
            [l.copy() for l in self.lcn_layers],
            [l.copy() for l in self.ecn_layers],
            self.heads.copy(),
        )


@dataclass
class LayerTrace:
    """Per-layer forward cache consumed by the backward pass."""

    x_in: np.ndarray           # (n, D)
    c: np.ndarray              # (n, D/2)
    mu: np.ndarray | None      # (n,) layernorm mean
    delta: np.ndarray | None   # (n,) epsilon-clamped layernorm std
    nrm: np.ndarray | None     # (n, D/2) normalized cross vector
    act: np.ndarray | None     # (n, D/2) bool, relu gate open
    unclamped: np.ndarray | None  # (n,) bool, std exceeded epsilon
    drop_mask: np.ndarray | None  # (n, D) scaled dropout mask, None when off
    gate_dropped: np.ndarray   # (n, D) gate after dropout


@dataclass
class ForwardTrace:
    x1: np.ndarray
    ecn: list[LayerTrace]
    lcn: list[LayerTrace]
    x_ecn: np.ndarray
    x_lcn: np.ndarray
    z_deep: np.ndarray
    z_shallow: np.ndarray
    y_deep: np.ndarray
    y_shallow: np.ndarray
    ids: np.ndarray | None = None


@dataclass
class ForwardResult:
    y: np.ndarray
    y_deep: np.ndarray
    y_shallow: np.ndarray
    trace: ForwardTrace | None = None


@dataclass
class Gradients:
    """Mirror of ModelParams, with embedding gradients kept sparse as
    per-field (ids, rows) accumulations over the touched rows only."""

    embeddings: list[tuple[np.ndarray, np.ndarray] | None]
    lcn_layers: list[CrossLayerParams]
    ecn_layers: list[CrossLayerParams]
    heads: HeadParams


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_model_params(config: ModelConfig, sizes: list[int], seed: int) -> ModelParams:
    """Draw fresh parameters: embeddings and cross weights uniform by fan-in,
    layernorm gain 1 / bias 0, all other biases 0. Draw order is fixed
    (embeddings, lcn layers, ecn layers, heads) so a seed pins every tensor."""
    rng = Rng(seed)
    d = config.d
    D = d * len(sizes)
    m = D // 2
    embeddings = [init_params((s, d), "uniform_fan", rng, fan_in=d) for s in sizes]

    def make_layer() -> CrossLayerParams:
        return CrossLayerParams(
            w=init_params((m, D), "uniform_fan", rng),
            b=np.zeros(m),
            gain=np.ones(m),
            beta=np.zeros(m),
        )

    lcn = [make_layer() for _ in range(config.lcn_depth)]
    ecn = [make_layer() for _ in range(config.ecn_depth)]
    heads = HeadParams(
        w_deep=init_params((D,), "uniform_fan", rng),
        b_deep=np.zeros(1),
        w_shallow=init_params((D,), "uniform_fan", rng),
        b_shallow=np.zeros(1),
    )
    return ModelParams(embeddings, lcn, ecn, heads)


def zero_gradients(params: ModelParams) -> Gradients:
    return Gradients(
        embeddings=[None] * params.num_fields,
        lcn_layers=[CrossLayerParams(np.zeros_like(l.w), np.zeros_like(l.b),
                                     np.zeros_like(l.gain), np.zeros_like(l.beta))
                    for l in params.lcn_layers],
        ecn_layers=[CrossLayerParams(np.zeros_like(l.w), np.zeros_like(l.b),
                                     np.zeros_like(l.gain), np.zeros_like(l.beta))
                    for l in params.ecn_layers],
        heads=HeadParams(np.zeros_like(params.heads.w_deep), np.zeros_like(params.heads.b_deep),
                         np.zeros_like(params.heads.w_shallow), np.zeros_like(params.heads.b_shallow)),
    )


def embed_reshape(ids: np.ndarray, params: ModelParams, d: int) -> np.ndarray:
    """Look up field embeddings and lay them out as [a_1..a_f, b_1..b_f].

    ids is (n, f) or (f,) for a single row; output is (n, D) or (D,).
    """
    single = ids.ndim == 1
    ids2 = ids[None, :] if single else ids
    half = d // 2
    f = len(params.embeddings)
    if ids2.shape[1] != f:
        raise ValueError(f"expected {f} fields, got {ids2.shape[1]}")
    firsts = []
    seconds = []
    for j in range(f):
        col = ids2[:, j]
        table = params.embeddings[j]
        if col.size and (col.min() < 0 or col.max() >= table.shape[0]):
            raise ValueError(
                f"field {j}: id out of range [0, {table.shape[0]}) in batch"
            )
        e = table[col]
        firsts.append(e[:, :half])
        seconds.append(e[:, half:])
    x1 = np.concatenate(firsts + seconds, axis=1)
    return x1[0] if single else x1


def self_mask(c: np.ndarray, gain: np.ndarray, beta: np.ndarray,
              mode: str = "paper", ln_epsilon: float = 1e-5):
    """Gate a cross vector against its own normalized sign.

    paper:    c * relu(gain * (c - mean) / max(std, eps) + beta), with mean and
              population std taken over the D/2 entries of each row. The relu
              of a zero-mean normalization closes roughly half the gate.
    no_ln:    c * relu(c) (ablation without the normalization).
    identity: c unchanged (oracle hook for the interaction-order probe).

    Accepts a single vector or an (n, D/2) batch; returns (masked, stats)
    where stats carries what the backward pass needs.
    """
    single = c.ndim == 1
    cb = c[None, :] if single else c
    stats = {"mu": None, "delta": None, "nrm": None, "act": None, "unclamped": None}
    if mode == "identity":
        masked = cb.copy()
    elif mode == "no_ln":
        act = cb > 0
        masked = np.where(act, cb * cb, 0.0)
        stats["act"] = act
    elif mode == "paper":
        mu = cb.mean(axis=1)
        centered = cb - mu[:, None]
        raw_std = np.sqrt(np.mean(centered * centered, axis=1))
        delta = np.maximum(raw_std, ln_epsilon)
        nrm = centered / delta[:, None]
        ln = gain * nrm + beta
        act = ln > 0
        masked = cb * np.where(act, ln, 0.0)
        stats.update(mu=mu, delta=delta, nrm=nrm, act=act, unclamped=raw_std > ln_epsilon)
    else:
        raise ValueError(f"unknown mask mode {mode!r}")
    if single:
        masked = masked[0]
    return masked, stats


def cross_layer_forward(x_in: np.ndarray, anchor: np.ndarray, layer: CrossLayerParams,
                        mode: str, ln_epsilon: float, dropout_rate: float = 0.0,
                        rng: Rng | None = None, training: bool = False):
    """One cross layer: c = W x_in + b, gate = [c || mask(c)],
    out = anchor * gate + x_in. In training mode each gate entry is dropped
    independently with probability dropout_rate and survivors are scaled by
    1/(1 - dropout_rate). Returns (x_out, LayerTrace)."""
    if x_in.shape != anchor.shape:
        raise ValueError(f"cross layer shape mismatch: x_in {x_in.shape} vs anchor {anchor.shape}")
    if x_in.shape[-1] != layer.w.shape[1]:
        raise ValueError(
            f"cross layer shape mismatch: input width {x_in.shape[-1]}, weight is {layer.w.shape}"
        )
    c = x_in @ layer.w.T + layer.b
    masked, stats = self_mask(c, layer.gain, layer.beta, mode, ln_epsilon)
    gate = np.concatenate([c, masked], axis=1)
    drop_mask = None
    if training and dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training-mode dropout requires an rng")
        keep = rng.random(gate.shape) >= dropout_rate
        drop_mask = keep / (1.0 - dropout_rate)
        gate = gate * drop_mask
    x_out = anchor * gate + x_in
    trace = LayerTrace(
        x_in=x_in, c=c, mu=stats["mu"], delta=stats["delta"], nrm=stats["nrm"],
        act=stats["act"], unclamped=stats["unclamped"], drop_mask=drop_mask,
        gate_dropped=gate,
    )
    return x_out, trace


def forward_from_x1(x1: np.ndarray, params: ModelParams, config: ModelConfig,
                    training: bool = False, rng: Rng | None = None,
                    want_trace: bool | None = None) -> ForwardResult:
    """Run both cross branches and the fused heads from a prepared x1 batch.

    A trace is captured by default only in training mode; pass
    ``want_trace=True`` to capture one for inspection without dropout.
    """
    if want_trace is None:
        want_trace = training
    ecn_traces: list[LayerTrace] = []
    lcn_traces: list[LayerTrace] = []

    x = x1
    for layer in params.ecn_layers:
        x, tr = cross_layer_forward(x, x, layer, config.mask_mode, config.ln_epsilon,
                                    config.dropout_rate, rng, training)
        ecn_traces.append(tr)
    x_ecn = x

    x = x1
    for layer in params.lcn_layers:
        x, tr = cross_layer_forward(x, x1, layer, config.mask_mode, config.ln_epsilon,
                                    config.dropout_rate, rng, training)
        lcn_traces.append(tr)
    x_lcn = x

    heads = params.heads
    z_deep = x_ecn @ heads.w_deep + heads.b_deep[0]
    z_shallow = x_lcn @ heads.w_shallow + heads.b_shallow[0]
    y_deep = sigmoid(z_deep)
    y_shallow = sigmoid(z_shallow)
    y = 0.5 * (y_deep + y_shallow)

    trace = None
    if want_trace:
        trace = ForwardTrace(x1, ecn_traces, lcn_traces, x_ecn, x_lcn,
                             z_deep, z_shallow, y_deep, y_shallow)
    return ForwardResult(y, y_deep, y_shallow, trace)


def forward(batch, params: ModelParams, config: ModelConfig,
            training: bool = False, rng: Rng | None = None,
            want_trace: bool | None = None) -> ForwardResult:
    """Embed an encoded batch and run the network. See forward_from_x1."""
    x1 = embed_reshape(batch.ids, params, config.d)
    result = forward_from_x1(x1, params, config, training, rng, want_trace)
    if result.trace is not None:
        result.trace.ids = batch.ids
    return result


def _mask_backward(dg_hi: np.ndarray, tr: LayerTrace, layer: CrossLayerParams,
                   mode: str, grads_layer: CrossLayerParams) -> np.ndarray:
    """Gradient of the masked gate half with respect to c, accumulating the
    layernorm gain/bias gradients on the way. Returns dc (n, D/2)."""
    if mode == "identity":
        return dg_hi
    if mode == "no_ln":
        # masked = c * relu(c): derivative 2c on the open side, 0 elsewhere
        return dg_hi * np.where(tr.act, 2.0 * tr.c, 0.0)
    # paper mode: masked = c * relu(gain * nrm + beta)
    relu_ln = np.where(tr.act, layer.gain * tr.nrm + layer.beta, 0.0)
    dc = dg_hi * relu_ln
    dln = np.where(tr.act, dg_hi * tr.c, 0.0)
    grads_layer.gain += (dln * tr.nrm).sum(axis=0)
    grads_layer.beta += dln.sum(axis=0)
    dnrm = dln * layer.gain
    # layernorm backward; the std term only flows where the clamp was inactive
    mean_dnrm = dnrm.mean(axis=1, keepdims=True)
    proj = (dnrm * tr.nrm).mean(axis=1, keepdims=True)
    std_term = np.where(tr.unclamped[:, None], tr.nrm * proj, 0.0)
    dc += (dnrm - mean_dnrm - std_term) / tr.delta[:, None]
    return dc


def backward(trace: ForwardTrace, params: ModelParams, config: ModelConfig,
             dy_deep: np.ndarray, dy_shallow: np.ndarray) -> Gradients:
    """Exact reverse-mode gradients of the loss for every parameter tensor.

    ``dy_deep`` and ``dy_shallow`` are the per-sample loss gradients with
    respect to the two head outputs (they already carry any 1/N factor).
    Dropout masks are replayed from the trace. The ecn anchor receives
    gradient through both the anchor slot and the cross vector, while the
    lcn anchor x1 collects a contribution from every layer.
    """
    if trace is None:
        raise ValueError("backward requires a training-mode forward trace")
    grads = zero_gradients(params)
    heads = params.heads

    dz_deep = dy_deep * trace.y_deep * (1.0 - trace.y_deep)
    dz_shallow = dy_shallow * trace.y_shallow * (1.0 - trace.y_shallow)

    grads.heads.w_deep += trace.x_ecn.T @ dz_deep
    grads.heads.b_deep += dz_deep.sum()
    grads.heads.w_shallow += trace.x_lcn.T @ dz_shallow
    grads.heads.b_shallow += dz_shallow.sum()

    dx1 = np.zeros_like(trace.x1)
    m = trace.x1.shape[1] // 2

    # exponential branch: anchor is the layer input
    dx = np.outer(dz_deep, heads.w_deep)
    for layer, gl, tr in zip(reversed(params.ecn_layers),
                             reversed(grads.ecn_layers), reversed(trace.ecn)):
        go = dx
        danchor = go * tr.gate_dropped
        dgate = go * tr.x_in
        if tr.drop_mask is not None:
            dgate = dgate * tr.drop_mask
        dc = dgate[:, :m] + _mask_backward(dgate[:, m:], tr, layer, config.mask_mode, gl)
        gl.w += dc.T @ tr.x_in
        gl.b += dc.sum(axis=0)
        dx = go + danchor + dc @ layer.w
    dx1 += dx

    # linear branch: anchor is x1 at every layer
    dx = np.outer(dz_shallow, heads.w_shallow)
    for layer, gl, tr in zip(reversed(params.lcn_layers),
                             reversed(grads.lcn_layers), reversed(trace.lcn)):
        go = dx
        dx1 += go * tr.gate_dropped
        dgate = go * trace.x1
        if tr.drop_mask is not None:
            dgate = dgate * tr.drop_mask
        dc = dgate[:, :m] + _mask_backward(dgate[:, m:], tr, layer, config.mask_mode, gl)
        gl.w += dc.T @ tr.x_in
        gl.b += dc.sum(axis=0)
        dx = go + dc @ layer.w
    dx1 += dx

    if _inject_grad_sign_flip:
        target = grads.ecn_layers or grads.lcn_layers
        if target:
            target[0].b *= -1.0

    # scatter x1 gradient back into the touched embedding rows
    if trace.ids is not None:
        half = config.d // 2
        f = params.num_fields
        for j in range(f):
            de = np.concatenate(
                [dx1[:, j * half:(j + 1) * half],
                 dx1[:, m + j * half:m + (j + 1) * half]],
                axis=1,
            )
            uids, inverse = np.unique(trace.ids[:, j], return_inverse=True)
            rows = np.zeros((uids.shape[0], config.d))
            np.add.at(rows, inverse, de)
            grads.embeddings[j] = (uids, rows)
    return grads


def param_count(config: ModelConfig, sizes: list[int]) -> dict:
    """Closed-form parameter accounting.

    Per cross layer: D^2/2 + D/2 for (W, b) plus D for the layernorm gain and
    bias. Heads contribute 2(D + 1); embeddings sum d * s_i. The non-embedding
    total therefore scales with the leading term D^2 * depth / 2 per branch.
    """
    D = config.d * len(sizes)
    per_layer = D * D // 2 + D // 2 + D
    lcn = per_layer * config.lcn_depth
    ecn = per_layer * config.ecn_depth
    heads = 2 * (D + 1)
    return {
        "embedding": config.d * int(sum(sizes)),
        "per_layer": per_layer,
        "lcn_cross": lcn,
        "ecn_cross": ecn,
        "heads": heads,
        "non_embedding_total": lcn + ecn + heads,
    }


def _branch_layers(params: ModelParams, branch: str) -> list[CrossLayerParams]:
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")
    return params.ecn_layers if branch == "ecn" else params.lcn_layers


def field_importance(params: ModelParams, config: ModelConfig, trace_or_batch,
                     layer_index: int, branch: str):
    """Field-wise interpretability views of one cross layer.

    Returns (cross_strengths, mask_sparsity, pair_matrix):
      cross_strengths[i]  batch-mean euclidean norm of field i's segment of c;
      mask_sparsity[i]    zero fraction of field i's segment of the masked view;
      pair_matrix[i][j]   frobenius norm of the (d/2, d) weight block mapping
                          field j's input coordinates to field i's cross rows.
    """
    layers = _branch_layers(params, branch)
    if not (0 <= layer_index < len(layers)):
        raise ValueError(
            f"layer index {layer_index} out of range for branch {branch!r} "
            f"with depth {len(layers)}"
        )
    trace = trace_or_batch
    if not isinstance(trace, ForwardTrace):
        trace = forward(trace_or_batch, params, config, training=False,
                        want_trace=True).trace
    tr = (trace.ecn if branch == "ecn" else trace.lcn)[layer_index]

    f = params.num_fields
    half = config.d // 2
    m = f * half
    c = tr.c
    masked = tr.gate_dropped[:, m:]

    cross_strengths = np.empty(f)
    mask_sparsity = np.empty(f)
    for i in range(f):
        seg = slice(i * half, (i + 1) * half)
        cross_strengths[i] = np.sqrt((c[:, seg] ** 2).sum(axis=1)).mean()
        mask_sparsity[i] = float((masked[:, seg] == 0.0).mean())

    w = layers[layer_index].w
    pair = np.empty((f, f))
    for i in range(f):
        rows = w[i * half:(i + 1) * half]
        for j in range(f):
            block = np.concatenate(
                [rows[:, j * half:(j + 1) * half],
                 rows[:, m + j * half:m + (j + 1) * half]],
                axis=1,
            )
            pair[i, j] = np.sqrt((block ** 2).sum())
    return cross_strengths, mask_sparsity, pair
