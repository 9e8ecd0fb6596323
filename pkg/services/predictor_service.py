"""
GCN + LSTM + temporal attention trajectory predictor with hand-written reverse mode.

Shapes: B samples, T history steps, N vehicles (padded per batch), C cognitive nodes,
g GCN width, h LSTM width, F future steps.
"""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.special import expit, softmax

from schemas.predictor import (
    VARIANT_DBN, ForwardTrace, PredictorDims, PredictorParams, PreparedSample, flatten, unflatten,
)
from schemas.run_config import Variant
from utils.errors import GraphError, MissingArtifactError, ShapeError, TrainingError
from utils.logger_factory import new_logger

log = new_logger("predictor_service")


class Batch(BaseModel):
    """Stacked PreparedSamples; physical tensors are zero-padded to the largest vehicle count."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    keys: List[str]
    phys_x: np.ndarray
    phys_a: np.ndarray
    ego_index: np.ndarray
    cog_x: Optional[np.ndarray] = None
    cog_a: Optional[np.ndarray] = None
    origin: np.ndarray
    target: np.ndarray

    @property
    def size(self) -> int:
        return len(self.keys)


def gcn_layer(h: np.ndarray, a_norm: np.ndarray, w: np.ndarray) -> np.ndarray:
    """ReLU(A_norm H W); leading axes of h and a_norm broadcast."""
    if h.shape[-2] != a_norm.shape[-1] or h.shape[-1] != w.shape[0]:
        raise ShapeError(f"gcn_layer shapes {h.shape}, {a_norm.shape}, {w.shape} do not chain")
    return np.maximum(a_norm @ h @ w, 0.0)


def _gcn_forward(x: np.ndarray, a: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> Dict[str, np.ndarray]:
    m0 = a @ x
    z1 = m0 @ w1
    h1 = np.maximum(z1, 0.0)
    m1 = a @ h1
    z2 = m1 @ w2
    return {"a": a, "m0": m0, "z1": z1, "h1": h1, "m1": m1, "z2": z2, "h2": np.maximum(z2, 0.0)}


def _gcn_backward(c: Dict[str, np.ndarray], d_h2: np.ndarray, w2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    d_z2 = d_h2 * (c["z2"] > 0)
    d_w2 = np.einsum("btng,btnk->gk", c["m1"], d_z2)
    d_h1 = np.swapaxes(c["a"], -1, -2) @ d_z2 @ w2.T
    d_z1 = d_h1 * (c["z1"] > 0)
    d_w1 = np.einsum("btnd,btng->dg", c["m0"], d_z1)
    return d_w1, d_w2


def lstm_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Single-layer LSTM from a zero state; x is (B, T, E) or (T, E).

    Gate rows of w and b are ordered input, forget, output, candidate.
    Returns hidden states under "h" plus the gate/cell cache.
    """
    squeeze = x.ndim == 2
    x = x[None] if squeeze else x
    batch, steps, _ = x.shape
    width = b.shape[0] // 4
    h_prev = np.zeros((batch, width))
    c_prev = np.zeros((batch, width))
    keys = ("xh", "i", "f", "o", "g", "c", "h")
    cache = {k: [] for k in keys}
    for t in range(steps):
        xh = np.concatenate([x[:, t], h_prev], axis=1)
        z = xh @ w.T + b
        i = expit(z[:, :width])
        f = expit(z[:, width:2 * width])
        o = expit(z[:, 2 * width:3 * width])
        g = np.tanh(z[:, 3 * width:])
        c_prev = f * c_prev + i * g
        h_prev = o * np.tanh(c_prev)
        for k, v in zip(keys, (xh, i, f, o, g, c_prev, h_prev)):
            cache[k].append(v)
    out = {k: np.stack(v, axis=1) for k, v in cache.items()}
    if squeeze:
        out = {k: v[0] for k, v in out.items()}
    return out


def _lstm_backward(cache: Dict[str, np.ndarray], d_h: np.ndarray, w: np.ndarray):
    batch, steps, width = d_h.shape
    d_w = np.zeros_like(w)
    d_b = np.zeros(4 * width)
    d_x = np.zeros((batch, steps, w.shape[1] - width))
    dh_next = np.zeros((batch, width))
    dc_next = np.zeros((batch, width))
    for t in reversed(range(steps)):
        i, f, o, g, c = (cache[k][:, t] for k in ("i", "f", "o", "g", "c"))
        c_prev = cache["c"][:, t - 1] if t > 0 else np.zeros_like(c)
        tanh_c = np.tanh(c)
        dh = d_h[:, t] + dh_next
        do = dh * tanh_c
        dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            do * o * (1.0 - o),
            dc * i * (1.0 - g ** 2),
        ], axis=1)
        d_w += dz.T @ cache["xh"][:, t]
        d_b += dz.sum(axis=0)
        d_xh = dz @ w
        d_x[:, t] = d_xh[:, :-width]
        dh_next = d_xh[:, -width:]
        dc_next = dc * f
    return d_x, d_w, d_b


def attention_pool(hidden: np.ndarray, p: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    s_t = u . tanh(P h_t), weights = softmax(s) over time, context = sum_t weights_t h_t.

    hidden is (B, T, h) or (T, h); returns (context, weights, tanh(P h)).
    """
    m = np.tanh(hidden @ p.T)
    scores = m @ u
    weights = softmax(scores, axis=-1)
    context = (weights[..., None] * hidden).sum(axis=-2)
    return context, weights, m


def stack_batch(samples: Sequence[PreparedSample], variant: Variant) -> Batch:
    """
    Stack samples for `variant`, checking each carries cognitive graphs from the DBN the
    variant needs.
    """
    if not samples:
        raise ShapeError("empty batch")
    needed = VARIANT_DBN[variant]
    for index, s in enumerate(samples):
        if needed is None:
            continue
        if s.cog_features is None:
            raise MissingArtifactError(f"variant {variant.value} needs cognitive graphs from the {needed} DBN "
                                       f"(sample {index}, {s.key})")
        if s.dbn != needed:
            raise GraphError(f"variant {variant.value} needs the {needed} DBN, sample {index} ({s.key}) "
                             f"was built with {s.dbn}")
    steps = {s.phys_features.shape[0] for s in samples}
    futures = {s.future_xy.shape[0] for s in samples}
    if len(steps) != 1 or len(futures) != 1:
        raise ShapeError("samples in a batch must share history and future lengths")

    n_max = max(s.phys_features.shape[1] for s in samples)
    t = steps.pop()
    phys_x = np.zeros((len(samples), t, n_max, samples[0].phys_features.shape[2]))
    phys_a = np.zeros((len(samples), t, n_max, n_max))
    for k, s in enumerate(samples):
        n = s.phys_features.shape[1]
        phys_x[k, :, :n] = s.phys_features
        phys_a[k, :, :n, :n] = s.phys_adjacency
        # padded vehicles only see themselves
        phys_a[k, :, np.arange(n, n_max), np.arange(n, n_max)] = 1.0
    cog_x = cog_a = None
    if needed is not None:
        cog_x = np.stack([s.cog_features for s in samples])
        cog_a = np.stack([s.cog_adjacency for s in samples])
    return Batch(
        keys=[s.key for s in samples],
        phys_x=phys_x,
        phys_a=phys_a,
        ego_index=np.array([s.ego_index for s in samples]),
        cog_x=cog_x,
        cog_a=cog_a,
        origin=np.stack([s.origin for s in samples]),
        target=np.stack([s.future_xy for s in samples]),
    )


def encode_steps(batch: Batch, p: Dict[str, np.ndarray], variant: Variant, dims: PredictorDims):
    """
    Per-step embeddings (B, T, 2g): the ego node of the physical branch next to the mean-pooled
    cognitive branch, which is all zeros for the P variant.

    Returns:
        (embeddings, physical cache, cognitive cache or None)
    """
    b_idx = np.arange(batch.size)
    phy = _gcn_forward(batch.phys_x, batch.phys_a, p["phy_w1"], p["phy_w2"])
    e_phy = phy["h2"][b_idx, :, batch.ego_index]
    cog = None
    if batch.cog_x is not None and variant != Variant.P:
        if batch.cog_x.shape[-1] != dims.cog_in:
            raise ShapeError(f"cognitive features have width {batch.cog_x.shape[-1]}, model expects {dims.cog_in}")
        cog = _gcn_forward(batch.cog_x, batch.cog_a, p["cog_w1"], p["cog_w2"])
        e_cog = cog["h2"].mean(axis=2)
    else:
        e_cog = np.zeros_like(e_phy)
    return np.concatenate([e_phy, e_cog], axis=2), phy, cog


class PredictorService:
    """Forward pass, loss and analytic gradients of the trajectory predictor."""

    @staticmethod
    def init_params(dims: PredictorDims, seed: int) -> PredictorParams:
        """Glorot-uniform matrices, zero biases except a unit forget-gate bias."""
        rng = np.random.default_rng(seed)
        blocks = {}
        for name, shape in dims.layout():
            if len(shape) == 2:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                blocks[name] = rng.uniform(-limit, limit, size=shape)
            elif name == "att_u":
                blocks[name] = rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(shape[0])
            else:
                blocks[name] = np.zeros(shape)
        h = dims.lstm_width
        blocks["lstm_b"][h:2 * h] = 1.0
        return PredictorParams(dims=dims, vector=flatten(dims, blocks))

    @staticmethod
    def forward_batch(
        batch: Batch, params: PredictorParams, variant: Variant, offset_scale: float = 10.0
    ) -> Tuple[np.ndarray, ForwardTrace]:
        """Predicted absolute positions (B, F, 2) and the trace for backward."""
        p = params.views()
        dims = params.dims
        if batch.phys_x.shape[-1] != dims.phys_in:
            raise ShapeError(f"physical features have width {batch.phys_x.shape[-1]}, model expects {dims.phys_in}")
        if batch.target.shape[1] != dims.future_steps:
            raise ShapeError(f"batch has {batch.target.shape[1]} future steps, model predicts {dims.future_steps}")
        x, phy, cog = encode_steps(batch, p, variant, dims)
        lstm = lstm_forward(x, p["lstm_w"], p["lstm_b"])
        context, weights, m = attention_pool(lstm["h"], p["att_p"], p["att_u"])
        raw = context @ p["head_w"].T + p["head_b"]
        offsets = raw.reshape(batch.size, dims.future_steps, 2) * offset_scale
        pred = batch.origin[:, None, :] + offsets
        trace = ForwardTrace(
            attention=weights,
            cache={"phy": phy, "cog": cog, "lstm": lstm, "m": m, "context": context, "x": x},
        )
        return pred, trace

    @staticmethod
    def forward(
        sample: PreparedSample, params: PredictorParams, variant: Variant, offset_scale: float = 10.0
    ) -> Tuple[np.ndarray, ForwardTrace]:
        """(F, 2) prediction for one sample."""
        pred, trace = PredictorService.forward_batch(stack_batch([sample], variant), params, variant, offset_scale)
        return pred[0], trace

    @staticmethod
    def sample_losses(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        """Mean squared Euclidean error over the F points of each sample."""
        return ((pred - target) ** 2).sum(axis=2).mean(axis=1)

    @staticmethod
    def loss_and_gradients(
        batch: Batch, params: PredictorParams, variant: Variant, offset_scale: float = 10.0
    ) -> Tuple[float, np.ndarray]:
        """
        Batch-mean loss and its gradient aligned with the flat parameter vector.

        Raises TrainingError naming the first sample whose loss is not finite.
        """
        p = params.views()
        dims = params.dims
        pred, trace = PredictorService.forward_batch(batch, params, variant, offset_scale)
        losses = PredictorService.sample_losses(pred, batch.target)
        bad = ~np.isfinite(losses)
        if bad.any():
            index = int(np.argmax(bad))
            raise TrainingError(f"non-finite loss at sample {index} ({batch.keys[index]})")
        loss = float(losses.mean())

        c = trace.cache
        grads = {name: np.zeros(shape) for name, shape in dims.layout()}
        d_pred = 2.0 * (pred - batch.target) / (batch.size * dims.future_steps)
        d_raw = d_pred.reshape(batch.size, -1) * offset_scale
        grads["head_w"] = d_raw.T @ c["context"]
        grads["head_b"] = d_raw.sum(axis=0)
        d_context = d_raw @ p["head_w"]

        hidden = c["lstm"]["h"]
        weights = trace.attention
        d_hidden = weights[..., None] * d_context[:, None, :]
        d_weights = (hidden * d_context[:, None, :]).sum(axis=2)
        d_scores = weights * (d_weights - (weights * d_weights).sum(axis=1, keepdims=True))
        m = c["m"]
        grads["att_u"] = np.einsum("bt,bta->a", d_scores, m)
        d_q = d_scores[..., None] * p["att_u"] * (1.0 - m ** 2)
        grads["att_p"] = np.einsum("bta,bth->ah", d_q, hidden)
        d_hidden += d_q @ p["att_p"]

        d_x, grads["lstm_w"], grads["lstm_b"] = _lstm_backward(c["lstm"], d_hidden, p["lstm_w"])

        g = dims.gcn_width
        phy = c["phy"]
        d_h2 = np.zeros_like(phy["h2"])
        d_h2[np.arange(batch.size), :, batch.ego_index] = d_x[:, :, :g]
        grads["phy_w1"], grads["phy_w2"] = _gcn_backward(phy, d_h2, p["phy_w2"])
        if c["cog"] is not None:
            cog = c["cog"]
            nodes = cog["h2"].shape[2]
            d_cog = np.broadcast_to(d_x[:, :, None, g:] / nodes, cog["h2"].shape)
            grads["cog_w1"], grads["cog_w2"] = _gcn_backward(cog, d_cog, p["cog_w2"])
        return loss, flatten(dims, grads)

    @staticmethod
    def loss(batch: Batch, params: PredictorParams, variant: Variant, offset_scale: float = 10.0) -> float:
        pred, _ = PredictorService.forward_batch(batch, params, variant, offset_scale)
        return float(PredictorService.sample_losses(pred, batch.target).mean())

    @staticmethod
    def predict(samples: Sequence[PreparedSample], params: PredictorParams, variant: Variant,
                offset_scale: float = 10.0, batch_size: int = 256) -> np.ndarray:
        """(n, F, 2) predictions, computed in fixed-order chunks."""
        chunks = []
        for start in range(0, len(samples), batch_size):
            batch = stack_batch(samples[start:start + batch_size], variant)
            chunks.append(PredictorService.forward_batch(batch, params, variant, offset_scale)[0])
        if not chunks:
            return np.zeros((0, params.dims.future_steps, 2))
        return np.concatenate(chunks)

    @staticmethod
    def finite_difference(batch: Batch, params: PredictorParams, variant: Variant,
                          offset_scale: float = 10.0, eps: float = 1e-5,
                          indices: Optional[Sequence[int]] = None) -> np.ndarray:
        """Central differences of the batch loss; all parameters unless `indices` is given."""
        base = params.vector
        indices = range(len(base)) if indices is None else indices
        out = np.zeros(len(base))
        for k in indices:
            up, down = base.copy(), base.copy()
            up[k] += eps
            down[k] -= eps
            out[k] = (PredictorService.loss(batch, params.with_vector(up), variant, offset_scale)
                      - PredictorService.loss(batch, params.with_vector(down), variant, offset_scale)) / (2 * eps)
        return out


__all__ = [
    "Batch", "PredictorService", "attention_pool", "gcn_layer", "lstm_forward", "stack_batch", "unflatten",
]
