"""Minimal trainable GRU network with exact hand-derived gradients.

Layers hold their weights either as dense matrices or as `FactoredLayer`
products; a factored product W x is always evaluated as U (V x). Sequences
in a batch may have different lengths: updates beyond a sequence's end are
masked out, so the hidden state is simply carried forward there and the
final-step readout is length-correct.

The loss is softmax cross-entropy on the final hidden state (synthetic
sequence classification); gates follow

    z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
    r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
    htld_t = tanh(W_h x_t + r_t * (U_h h_{t-1}) + b_h)
    h_t = (1 - z_t) * h_{t-1} + z_t * htld_t
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidStateError
from .lowrank import (
    NONRECURRENT,
    RECURRENT,
    FactoredLayer,
    GruLayerWeights,
    SharingScheme,
)

def sigmoid(x):
    # evaluated via exp(-|x|) so neither branch can overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def slot_matmul(slot, x2d: np.ndarray) -> np.ndarray:
    """Rows of x2d times W^T; factored products evaluate as U (V x)."""
    if isinstance(slot, FactoredLayer):
        return (x2d @ slot.v.T) @ slot.u.T
    return x2d @ slot.T


def slot_matmul_t(slot, g2d: np.ndarray) -> np.ndarray:
    """Rows of g2d times W (the transpose map, used in backprop)."""
    if isinstance(slot, FactoredLayer):
        return (g2d @ slot.u) @ slot.v
    return g2d @ slot


def slot_parameters(name: str, slot, out: dict) -> None:
    if isinstance(slot, FactoredLayer):
        out[name + ".u"] = slot.u
        out[name + ".v"] = slot.v
    else:
        out[name] = slot


def slot_gradients(name: str, slot, g_dense: np.ndarray, out: dict) -> None:
    """Translate a dense weight gradient to the slot's parameterization.

    For W = U V the data-loss gradients are grad_U = G V^T and
    grad_V = U^T G, with G the gradient with respect to W.
    """
    if isinstance(slot, FactoredLayer):
        out[name + ".u"] = g_dense @ slot.v.T
        out[name + ".v"] = slot.u.T @ g_dense
    else:
        out[name] = g_dense


@dataclass
class Batch:
    """A batch of padded sequences with final-step class labels."""

    x: np.ndarray        # (B, T, n_in)
    lengths: np.ndarray  # (B,) ints in [1, T]
    labels: np.ndarray   # (B,) ints in [0, classes)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.x.ndim != 3:
            raise InvalidInputError("batch input must be (B, T, n_in)")
        b, t, _ = self.x.shape
        if self.lengths.shape != (b,) or self.labels.shape != (b,):
            raise InvalidInputError("lengths/labels must match the batch size")
        if t < 1 or np.any(self.lengths < 1) or np.any(self.lengths > t):
            raise InvalidInputError("sequence lengths must lie in [1, T]")

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def mask(self) -> np.ndarray:
        """(B, T) float mask, 1.0 where t < length."""
        t = self.x.shape[1]
        return (np.arange(t)[None, :] < self.lengths[:, None]).astype(np.float64)


class GruLayer:
    """One GRU layer whose weights are grouped per a sharing scheme."""

    def __init__(self, n_in: int, n_h: int, scheme: SharingScheme, slots: dict, bias: np.ndarray):
        self.n_in = n_in
        self.n_h = n_h
        self.scheme = scheme
        self.slots = slots
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.bias.shape != (3 * n_h,):
            raise InvalidInputError("bias must have length 3*n_h")
        self._check_slots()

    def _check_slots(self):
        n3 = 3 * self.n_h
        expect = {
            SharingScheme.PARTIALLY_JOINT: {"w": (n3, self.n_in), "u": (n3, self.n_h)},
            SharingScheme.COMPLETELY_SPLIT: {
                "w_z": (self.n_h, self.n_in), "w_r": (self.n_h, self.n_in),
                "w_h": (self.n_h, self.n_in), "u_z": (self.n_h, self.n_h),
                "u_r": (self.n_h, self.n_h), "u_h": (self.n_h, self.n_h),
            },
            SharingScheme.COMPLETELY_JOINT: {"wu": (n3, self.n_in + self.n_h)},
        }[self.scheme]
        if set(self.slots) != set(expect):
            raise InvalidInputError(f"scheme {self.scheme} expects slots {sorted(expect)}")
        for name, slot in self.slots.items():
            shape = slot.shape if isinstance(slot, FactoredLayer) else slot.shape
            if tuple(shape) != expect[name]:
                raise InvalidInputError(f"slot {name} has shape {shape}, want {expect[name]}")

    # -- grouped products ---------------------------------------------------
    # For the completely joint scheme the single matrix acts on [x; h]; its
    # x-side and h-side column blocks are applied separately so the h-side
    # product stays available for the reset gate. With a factored slot the
    # block of W = U V is U V[:, block].

    def _part_matmul(self, x2d, lo, hi):
        slot = self.slots["wu"]
        if isinstance(slot, FactoredLayer):
            return (x2d @ slot.v[:, lo:hi].T) @ slot.u.T
        return x2d @ slot[:, lo:hi].T

    def _part_matmul_t(self, g3, lo, hi):
        slot = self.slots["wu"]
        if isinstance(slot, FactoredLayer):
            return (g3 @ slot.u) @ slot.v[:, lo:hi]
        return g3 @ slot[:, lo:hi]

    def x_gates(self, x2d: np.ndarray) -> np.ndarray:
        """Nonrecurrent pre-activations, stacked (z, r, h) columns."""
        if self.scheme is SharingScheme.PARTIALLY_JOINT:
            return slot_matmul(self.slots["w"], x2d)
        if self.scheme is SharingScheme.COMPLETELY_SPLIT:
            return np.hstack([
                slot_matmul(self.slots["w_z"], x2d),
                slot_matmul(self.slots["w_r"], x2d),
                slot_matmul(self.slots["w_h"], x2d),
            ])
        return self._part_matmul(x2d, 0, self.n_in)

    def h_gates(self, h: np.ndarray) -> np.ndarray:
        """Recurrent pre-activations, stacked (z, r, h) columns."""
        if self.scheme is SharingScheme.PARTIALLY_JOINT:
            return slot_matmul(self.slots["u"], h)
        if self.scheme is SharingScheme.COMPLETELY_SPLIT:
            return np.hstack([
                slot_matmul(self.slots["u_z"], h),
                slot_matmul(self.slots["u_r"], h),
                slot_matmul(self.slots["u_h"], h),
            ])
        return self._part_matmul(h, self.n_in, self.n_in + self.n_h)

    def x_gates_t(self, g3: np.ndarray) -> np.ndarray:
        if self.scheme is SharingScheme.PARTIALLY_JOINT:
            return slot_matmul_t(self.slots["w"], g3)
        if self.scheme is SharingScheme.COMPLETELY_SPLIT:
            n = self.n_h
            return (slot_matmul_t(self.slots["w_z"], g3[:, :n])
                    + slot_matmul_t(self.slots["w_r"], g3[:, n:2 * n])
                    + slot_matmul_t(self.slots["w_h"], g3[:, 2 * n:]))
        return self._part_matmul_t(g3, 0, self.n_in)

    def h_gates_t(self, g3: np.ndarray) -> np.ndarray:
        if self.scheme is SharingScheme.PARTIALLY_JOINT:
            return slot_matmul_t(self.slots["u"], g3)
        if self.scheme is SharingScheme.COMPLETELY_SPLIT:
            n = self.n_h
            return (slot_matmul_t(self.slots["u_z"], g3[:, :n])
                    + slot_matmul_t(self.slots["u_r"], g3[:, n:2 * n])
                    + slot_matmul_t(self.slots["u_h"], g3[:, 2 * n:]))
        return self._part_matmul_t(g3, self.n_in, self.n_in + self.n_h)

    def weight_gradients(self, gx_dense: np.ndarray, gh_dense: np.ndarray, out: dict, prefix: str):
        """Distribute dense grads w.r.t. the stacked x-side and h-side maps."""
        if self.scheme is SharingScheme.PARTIALLY_JOINT:
            slot_gradients(prefix + ".w", self.slots["w"], gx_dense, out)
            slot_gradients(prefix + ".u", self.slots["u"], gh_dense, out)
        elif self.scheme is SharingScheme.COMPLETELY_SPLIT:
            n = self.n_h
            slot_gradients(prefix + ".w_z", self.slots["w_z"], gx_dense[:n], out)
            slot_gradients(prefix + ".w_r", self.slots["w_r"], gx_dense[n:2 * n], out)
            slot_gradients(prefix + ".w_h", self.slots["w_h"], gx_dense[2 * n:], out)
            slot_gradients(prefix + ".u_z", self.slots["u_z"], gh_dense[:n], out)
            slot_gradients(prefix + ".u_r", self.slots["u_r"], gh_dense[n:2 * n], out)
            slot_gradients(prefix + ".u_h", self.slots["u_h"], gh_dense[2 * n:], out)
        else:
            slot_gradients(prefix + ".wu", self.slots["wu"], np.hstack([gx_dense, gh_dense]), out)

    # -- forward / backward over a padded batch ------------------------------

    def forward(self, x: np.ndarray, mask: np.ndarray, h0: np.ndarray | None = None):
        """Run the layer over (B, T, n_in); returns (h_seq, h_last, cache)."""
        b, t, _ = x.shape
        n = self.n_h
        h = np.zeros((b, n)) if h0 is None else np.array(h0, dtype=np.float64)
        gx = self.x_gates(x.reshape(b * t, -1)).reshape(b, t, 3 * n)
        bz, br, bh = self.bias[:n], self.bias[n:2 * n], self.bias[2 * n:]
        h_seq = np.empty((b, t, n))
        steps = []
        for step in range(t):
            rec = self.h_gates(h)
            z = sigmoid(gx[:, step, :n] + rec[:, :n] + bz)
            r = sigmoid(gx[:, step, n:2 * n] + rec[:, n:2 * n] + br)
            q = rec[:, 2 * n:]
            htld = np.tanh(gx[:, step, 2 * n:] + r * q + bh)
            h_new = (1.0 - z) * h + z * htld
            m = mask[:, step][:, None]
            h_prev = h
            h = m * h_new + (1.0 - m) * h
            h_seq[:, step] = h
            steps.append((h_prev, z, r, q, htld))
        cache = {"x": x, "mask": mask, "steps": steps}
        return h_seq, h, cache

    def backward(self, dh_seq: np.ndarray | None, dh_last: np.ndarray, cache: dict,
                 grads: dict, prefix: str) -> np.ndarray:
        """Backprop through time; returns dL/dx and fills ``grads``.

        ``dh_seq`` carries gradients flowing into each timestep's emitted
        hidden state (from a stacked layer above), ``dh_last`` the gradient
        of the final state (from the readout).
        """
        x, mask, steps = cache["x"], cache["mask"], cache["steps"]
        b, t, _ = x.shape
        n = self.n_h
        dh = dh_last.copy()
        dgx = np.zeros((b, t, 3 * n))
        drec_all = np.zeros((b, t, 3 * n))
        hprev_all = np.zeros((b, t, n))
        for step in range(t - 1, -1, -1):
            if dh_seq is not None:
                dh = dh + dh_seq[:, step]
            h_prev, z, r, q, htld = steps[step]
            m = mask[:, step][:, None]
            dh_new = dh * m
            dz = dh_new * (htld - h_prev)
            dhtld = dh_new * z
            dh_direct = dh_new * (1.0 - z)
            dpre_h = dhtld * (1.0 - htld * htld)
            dr = dpre_h * q
            dq = dpre_h * r
            dpre_z = dz * z * (1.0 - z)
            dpre_r = dr * r * (1.0 - r)
            dgx[:, step, :n] = dpre_z
            dgx[:, step, n:2 * n] = dpre_r
            dgx[:, step, 2 * n:] = dpre_h
            drec = np.hstack([dpre_z, dpre_r, dq])
            drec_all[:, step] = drec
            hprev_all[:, step] = h_prev
            dh = dh * (1.0 - m) + dh_direct + self.h_gates_t(drec)
        dgx2 = dgx.reshape(b * t, 3 * n)
        x2 = x.reshape(b * t, -1)
        gx_dense = dgx2.T @ x2
        gh_dense = drec_all.reshape(b * t, 3 * n).T @ hprev_all.reshape(b * t, n)
        self.weight_gradients(gx_dense, gh_dense, grads, prefix)
        grads[prefix + ".b"] = dgx2.sum(axis=0)
        dx = self.x_gates_t(dgx2).reshape(b, t, -1)
        return dx

    def parameters(self, prefix: str, out: dict):
        for name in sorted(self.slots):
            slot_parameters(f"{prefix}.{name}", self.slots[name], out)
        out[prefix + ".b"] = self.bias

    def regularizable(self, prefix: str):
        """(name, slot, kind) for the weight groups regularization applies to."""
        kinds = {
            "w": NONRECURRENT, "w_z": NONRECURRENT, "w_r": NONRECURRENT,
            "w_h": NONRECURRENT, "u": RECURRENT, "u_z": RECURRENT,
            "u_r": RECURRENT, "u_h": RECURRENT, "wu": RECURRENT,
        }
        return [(f"{prefix}.{name}", self.slots[name], kinds[name])
                for name in sorted(self.slots)]

    def replace_slot(self, name: str, slot) -> None:
        self.slots[name] = slot
        self._check_slots()


class Network:
    """Stacked GRU layers plus a dense softmax readout on the final state."""

    def __init__(self, gru_layers: list[GruLayer], out_w: np.ndarray, out_b: np.ndarray):
        self.gru_layers = gru_layers
        self.out_w = np.asarray(out_w, dtype=np.float64)
        self.out_b = np.asarray(out_b, dtype=np.float64)
        for lower, upper in zip(gru_layers, gru_layers[1:]):
            if upper.n_in != lower.n_h:
                raise InvalidInputError("adjacent GRU layer dimensions do not compose")
        if gru_layers and self.out_w.shape[1] != gru_layers[-1].n_h:
            raise InvalidInputError("readout width does not match the last GRU layer")
        self._forward_token = 0

    @property
    def classes(self) -> int:
        return self.out_w.shape[0]

    def parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.gru_layers):
            layer.parameters(f"gru{i}", out)
        out["out.w"] = self.out_w
        out["out.b"] = self.out_b
        return out

    def regularizable(self):
        found = []
        for i, layer in enumerate(self.gru_layers):
            found.extend(layer.regularizable(f"gru{i}"))
        return found

    def forward_loss(self, batch: Batch):
        """Mean softmax cross-entropy over the batch; returns (loss, caches)."""
        if np.any(batch.labels < 0) or np.any(batch.labels >= self.classes):
            raise InvalidInputError("label out of range")
        mask = batch.mask()
        seq = batch.x
        layer_caches = []
        h_last = None
        for layer in self.gru_layers:
            seq, h_last, cache = layer.forward(seq, mask)
            layer_caches.append(cache)
        if h_last is None:
            # degenerate stack: read out the final valid input step directly
            h_last = seq[np.arange(batch.size), batch.lengths - 1]
        logits = h_last @ self.out_w.T + self.out_b
        shifted = logits - logits.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(shifted).sum(axis=1))
        logp = shifted[np.arange(batch.size), batch.labels] - logsumexp
        loss = float(-logp.mean())
        self._forward_token += 1
        caches = {
            "token": self._forward_token,
            "batch": batch,
            "layers": layer_caches,
            "h_last": h_last,
            "probs": np.exp(shifted - logsumexp[:, None]),
        }
        return loss, caches

    def backward(self, caches: dict) -> dict:
        """Exact gradients of the mean data loss for every trainable tensor."""
        if caches.get("token") != self._forward_token:
            raise InvalidStateError("backward called with stale caches")
        batch: Batch = caches["batch"]
        b = batch.size
        dlogits = caches["probs"].copy()
        dlogits[np.arange(b), batch.labels] -= 1.0
        dlogits /= b
        grads = {
            "out.w": dlogits.T @ caches["h_last"],
            "out.b": dlogits.sum(axis=0),
        }
        dh = dlogits @ self.out_w
        dseq = None
        for i in range(len(self.gru_layers) - 1, -1, -1):
            dseq = self.gru_layers[i].backward(
                dseq, dh, caches["layers"][i], grads, f"gru{i}")
            dh = np.zeros((b, self.gru_layers[i].n_in)) if i else None
        return grads


def gru_forward(weights, x_seq: np.ndarray, h0: np.ndarray | None = None):
    """Single-sequence GRU pass; returns (h_seq of shape (T, n_h), cache).

    ``weights`` is either a :class:`GruLayerWeights` (plain matrices) or a
    :class:`GruLayer` (grouped / possibly factored).
    """
    layer = weights if isinstance(weights, GruLayer) else layer_from_weights(weights)
    x = np.asarray(x_seq, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.n_in:
        raise InvalidInputError(f"x_seq must be (T, {layer.n_in})")
    t = x.shape[0]
    if t < 1:
        raise InvalidInputError("sequence must have at least one step")
    mask = np.ones((1, t))
    h0b = None if h0 is None else np.asarray(h0, dtype=np.float64)[None, :]
    h_seq, _, cache = layer.forward(x[None], mask, h0b)
    return h_seq[0], cache


def layer_from_weights(w: GruLayerWeights) -> GruLayer:
    """Wrap plain GRU matrices in a completely-split (unfactored) layer."""
    slots = {"w_z": w.w_z, "w_r": w.w_r, "w_h": w.w_h,
             "u_z": w.u_z, "u_r": w.u_r, "u_h": w.u_h}
    bias = np.concatenate([w.b_z, w.b_r, w.b_h])
    return GruLayer(w.n_in, w.n_h, SharingScheme.COMPLETELY_SPLIT, slots, bias)


def init_network(rng: np.random.Generator, n_in: int, hidden: list[int], classes: int,
                 scheme: SharingScheme = SharingScheme.PARTIALLY_JOINT,
                 factored: bool = False) -> Network:
    """Build a network with uniform(-1/sqrt(fan_in), +) initialization.

    With ``factored`` each GRU weight group becomes a full-rank
    FactoredLayer (r = min(m, n)), the parameterization stage-1 trace-norm
    training requires.
    """
    layers = []
    feed = n_in
    for n_h in hidden:
        slots = {}
        for name, shape, kind in _slot_specs(feed, n_h, scheme):
            slots[name] = _init_slot(rng, shape, kind, factored)
        layers.append(GruLayer(feed, n_h, scheme, slots, np.zeros(3 * n_h)))
        feed = n_h
    out_w = _uniform(rng, (classes, feed), feed)
    out_b = np.zeros(classes)
    return Network(layers, out_w, out_b)


def _slot_specs(n_in: int, n_h: int, scheme: SharingScheme):
    n3 = 3 * n_h
    if scheme is SharingScheme.PARTIALLY_JOINT:
        return [("w", (n3, n_in), NONRECURRENT), ("u", (n3, n_h), RECURRENT)]
    if scheme is SharingScheme.COMPLETELY_SPLIT:
        return [("w_z", (n_h, n_in), NONRECURRENT), ("w_r", (n_h, n_in), NONRECURRENT),
                ("w_h", (n_h, n_in), NONRECURRENT), ("u_z", (n_h, n_h), RECURRENT),
                ("u_r", (n_h, n_h), RECURRENT), ("u_h", (n_h, n_h), RECURRENT)]
    return [("wu", (n3, n_in + n_h), RECURRENT)]


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


def _init_slot(rng, shape, kind, factored):
    m, n = shape
    if not factored:
        return _uniform(rng, shape, n)
    r = min(m, n)
    u = _uniform(rng, (m, r), r)
    v = _uniform(rng, (r, n), n)
    return FactoredLayer(u=u, v=v, kind=kind)
