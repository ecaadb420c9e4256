"""Parameterized layers shared by the classifiers and the generator.

Embeddings, GRU cells, a masked bidirectional GRU, temperature-softmax
attention pooling, and linear maps.  All parameters are Tensors with
``requires_grad=True``; weight init is uniform(-0.1, 0.1), biases zero.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidArgument

INIT_SCALE = 0.1


def uniform_param(rng: np.random.Generator, shape, dtype=np.float64) -> Tensor:
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(dtype),
                  requires_grad=True)


def zeros_param(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Embedding:
    """Token embedding table; row 0 (PAD) is pinned at zero."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.table = uniform_param(rng, (vocab_size, dim), dtype)
        self.table.data[0] = 0.0
        self.dim = dim

    def __call__(self, ids) -> Tensor:
        return ad.embedding_rows(self.table, ids)

    def soft(self, dists: Tensor) -> Tensor:
        """Expected embedding under per-step distributions [..., V]."""
        lead = dists.shape[:-1]
        flat = ad.reshape(dists, (-1, self.table.shape[0]))
        return ad.reshape(ad.matmul(flat, self.table), lead + (self.dim,))

    def clamp_pad(self) -> None:
        """Re-pin the PAD row (call after every optimizer step)."""
        self.table.data[0] = 0.0
        if self.table.grad is not None:
            self.table.grad[0] = 0.0

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.table": self.table}


class GRUCell:
    """Single GRU step: sigmoid update/reset gates, tanh candidate."""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.d_in, self.d_h = d_in, d_h
        self.wxz = uniform_param(rng, (d_in, d_h), dtype)
        self.whz = uniform_param(rng, (d_h, d_h), dtype)
        self.bz = zeros_param((d_h,), dtype)
        self.wxr = uniform_param(rng, (d_in, d_h), dtype)
        self.whr = uniform_param(rng, (d_h, d_h), dtype)
        self.br = zeros_param((d_h,), dtype)
        self.wxn = uniform_param(rng, (d_in, d_h), dtype)
        self.whn = uniform_param(rng, (d_h, d_h), dtype)
        self.bn = zeros_param((d_h,), dtype)

    def step(self, h_prev: Tensor, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in or h_prev.shape[-1] != self.d_h:
            raise InvalidArgument(
                f"gru_step shapes {h_prev.shape}/{x.shape} do not match "
                f"(d_in={self.d_in}, d_h={self.d_h})")
        z = ad.sigmoid(ad.matmul(x, self.wxz) + ad.matmul(h_prev, self.whz) + self.bz)
        r = ad.sigmoid(ad.matmul(x, self.wxr) + ad.matmul(h_prev, self.whr) + self.br)
        n = ad.tanh(ad.matmul(x, self.wxn) + r * ad.matmul(h_prev, self.whn) + self.bn)
        return z * h_prev + (1.0 - z) * n

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{k}": getattr(self, k)
                for k in ("wxz", "whz", "bz", "wxr", "whr", "br", "wxn", "whn", "bn")}


class BiGRU:
    """Bidirectional GRU with masked updates: padding never changes state."""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.fwd = GRUCell(d_in, d_h, rng, dtype)
        self.bwd = GRUCell(d_in, d_h, rng, dtype)
        self.d_h = d_h
        self.dtype = dtype

    def _run(self, cell: GRUCell, seq: Tensor, fmask: np.ndarray, times) -> tuple:
        batch = seq.shape[0]
        h = Tensor(np.zeros((batch, self.d_h), dtype=self.dtype))
        states = {}
        for t in times:
            x = ad.select(seq, t, axis=1)
            h_new = cell.step(h, x)
            m = fmask[:, t : t + 1]
            h = h_new * m + h * (1.0 - m)
            states[t] = h
        return states, h

    def encode(self, seq: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Return per-step states H [B, T, 2*d_h] (zero at padding) and the
        final state [B, 2*d_h] = forward at length-1 ++ backward at 0."""
        steps = seq.shape[1]
        fmask = mask.astype(self.dtype)
        f_states, f_last = self._run(self.fwd, seq, fmask, range(steps))
        b_states, b_last = self._run(self.bwd, seq, fmask, range(steps - 1, -1, -1))
        per_step = [ad.concat([f_states[t], b_states[t]], axis=-1) for t in range(steps)]
        h_all = ad.stack(per_step, axis=1) * fmask[:, :, None]
        h_final = ad.concat([f_last, b_last], axis=-1)
        return h_all, h_final

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = self.fwd.params(f"{prefix}.fwd")
        out.update(self.bwd.params(f"{prefix}.bwd"))
        return out


class Attention:
    """tanh-projected attention scores with a learned context vector."""

    def __init__(self, d_in: int, rng: np.random.Generator, tau: float = 1.0,
                 dtype=np.float64):
        self.ww = uniform_param(rng, (d_in, d_in), dtype)
        self.bw = zeros_param((d_in,), dtype)
        self.u = uniform_param(rng, (d_in, 1), dtype)
        self.tau = tau

    def scores(self, h_all: Tensor, mask: np.ndarray) -> Tensor:
        """Distribution over time steps [B, T]; masked positions exactly 0."""
        batch, steps, dim = h_all.shape
        flat = ad.reshape(h_all, (batch * steps, dim))
        v = ad.tanh(ad.matmul(flat, self.ww) + self.bw)
        logits = ad.reshape(ad.matmul(v, self.u), (batch, steps))
        return ad.softmax_temp(logits, self.tau, mask=mask)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.ww": self.ww, f"{prefix}.bw": self.bw, f"{prefix}.u": self.u}


def context_vector(h_all: Tensor, alpha: Tensor) -> Tensor:
    """Attention-weighted sum over time: sum_t alpha_t * h_t."""
    batch, steps = alpha.shape
    return ad.reduce_sum(h_all * ad.reshape(alpha, (batch, steps, 1)), axis=1)


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.w = uniform_param(rng, (d_in, d_out), dtype)
        self.b = zeros_param((d_out,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.w) + self.b

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}
