"""The transfer network: reverse-attention content encoder, conditional
layer-norm stylizer, and a GRU decoder with greedy decoding and
differentiable soft sampling.

The content representation is the final state of a BiGRU run over token
embeddings scaled by reverse attention (one minus the style marker's
attention).  The stylizer consumes a stop-gradient copy of the content
vector, so no style-loss signal reaches the encoder through that branch.
"""

from __future__ import annotations

import logging

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .classifier import StyleClassifier, marker_attention, marker_attention_soft
from .data import BOS, EOS, PAD, Batch
from .errors import InvalidArgument
from .layers import Attention, BiGRU, Embedding, GRUCell, Linear, uniform_param

log = logging.getLogger(__name__)


def reverse_attention(alpha: Tensor, mask: np.ndarray) -> Tensor:
    """Complement of the style attention: 1 - alpha on real tokens, 0 at padding.

    Sums to T_real - 1 per sentence; a single-token sentence is fully
    suppressed (logged once per call).
    """
    fmask = mask.astype(alpha.dtype)
    if np.any(mask.sum(axis=-1) == 1):
        log.warning("reverse attention: single-token sentence(s) fully suppressed")
    return (1.0 - alpha) * fmask


def apply_reverse(emb_seq: Tensor, alpha_tilde: Tensor) -> Tensor:
    """Scale each token embedding by its reverse-attention weight."""
    if emb_seq.shape[:-1] != alpha_tilde.shape:
        raise InvalidArgument(
            f"apply_reverse shapes {emb_seq.shape} vs {alpha_tilde.shape}")
    return emb_seq * ad.reshape(alpha_tilde, alpha_tilde.shape + (1,))


class Stylizer:
    """Conditional layer norm over a shrunken content vector.

    Affine projection down to the style dimension, normalize to mean 0 /
    std 1 (population std, eps-guarded), then per-style gain and bias.
    Gains start at one and biases at zero (plain layer norm).
    """

    def __init__(self, d_content: int, d_style: int, rng: np.random.Generator,
                 eps: float = 1e-5, dtype=np.float64):
        self.proj = Linear(d_content, d_style, rng, dtype)
        self.gamma = Tensor(np.ones((2, d_style), dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros((2, d_style), dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, z_x: Tensor, styles: np.ndarray) -> Tensor:
        z = ad.detach(z_x)  # style gradients must not reach the encoder
        zt = self.proj(z)
        mu = ad.reduce_mean(zt, axis=-1, keepdims=True)
        centered = zt - mu
        var = ad.reduce_mean(ad.square(centered), axis=-1, keepdims=True)
        normed = centered / (ad.sqrt(var) + self.eps)
        gain = ad.embedding_rows(self.gamma, styles)
        bias = ad.embedding_rows(self.beta, styles)
        return gain * normed + bias

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = self.proj.params(f"{prefix}.proj")
        out[f"{prefix}.gamma"] = self.gamma
        out[f"{prefix}.beta"] = self.beta
        return out


class StyleTable:
    """Ablation stand-in: a learned per-style embedding, ignoring content."""

    def __init__(self, d_style: int, rng: np.random.Generator, dtype=np.float64):
        self.table = uniform_param(rng, (2, d_style), dtype)

    def __call__(self, z_x: Tensor, styles: np.ndarray) -> Tensor:
        return ad.embedding_rows(self.table, styles)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.table": self.table}


class Generator:
    """f(x, target_style): encoder + stylizer + single-layer GRU decoder.

    The decoder's initial hidden state is an affine projection of
    [content ++ style]; the style vector is additionally concatenated to the
    input embedding at every step so the conditioning cannot fade.
    """

    def __init__(self, vocab_size: int, *, d_emb: int, enc_hidden: int,
                 cln_dim: int, dec_hidden: int, rng: np.random.Generator,
                 use_stylizer: bool = True, use_reverse_attention: bool = True,
                 dtype=np.float64):
        self.emb = Embedding(vocab_size, d_emb, rng, dtype)
        self.encoder = BiGRU(d_emb, enc_hidden, rng, dtype)
        if use_stylizer:
            self.stylizer = Stylizer(2 * enc_hidden, cln_dim, rng, dtype=dtype)
        else:
            self.stylizer = StyleTable(cln_dim, rng, dtype)
        self.dec_cell = GRUCell(d_emb + cln_dim, dec_hidden, rng, dtype)
        self.init_proj = Linear(2 * enc_hidden + cln_dim, dec_hidden, rng, dtype)
        self.out_proj = Linear(dec_hidden, vocab_size, rng, dtype)
        self.use_reverse_attention = use_reverse_attention
        self.vocab_size = vocab_size
        self.dtype = dtype

    # -- encoder -------------------------------------------------------------
    def content_weights(self, alpha: Tensor, mask: np.ndarray) -> Tensor:
        if self.use_reverse_attention:
            return reverse_attention(alpha, mask)
        return ad.as_tensor(mask.astype(self.dtype))  # ablation: keep full norms

    def encode_ids(self, batch: Batch, marker: StyleClassifier) -> Tensor:
        alpha = marker_attention(marker, batch)
        weights = self.content_weights(alpha, batch.mask)
        scaled = apply_reverse(self.emb(batch.ids), weights)
        _, z_x = self.encoder.encode(scaled, batch.mask)
        return z_x

    def encode_soft(self, dists: Tensor, mask: np.ndarray,
                    marker: StyleClassifier) -> Tensor:
        alpha = marker_attention_soft(marker, dists, mask)
        weights = self.content_weights(alpha, mask)
        scaled = apply_reverse(self.emb.soft(dists), weights)
        _, z_x = self.encoder.encode(scaled, mask)
        return z_x

    def style_repr(self, z_x: Tensor, styles: np.ndarray) -> Tensor:
        return self.stylizer(z_x, np.asarray(styles, dtype=np.int64))

    # -- decoder -------------------------------------------------------------
    def _dec_start(self, z_x: Tensor, z_s: Tensor) -> Tensor:
        return self.init_proj(ad.concat([z_x, z_s], axis=-1))

    def _dec_step(self, h: Tensor, tok_emb: Tensor, z_s: Tensor) -> tuple[Tensor, Tensor]:
        h = self.dec_cell.step(h, ad.concat([tok_emb, z_s], axis=-1))
        return h, self.out_proj(h)

    def teacher_forced_nll(self, z_x: Tensor, z_s: Tensor, batch: Batch) -> Tensor:
        """Token-mean cross-entropy of reconstructing the batch, teacher forced.

        Inputs are [BOS, x_1..x_T]; targets are [x_1..x_T, EOS]; padded steps
        are masked out and each sentence normalizes by its own length + 1.
        """
        n, steps = batch.ids.shape
        targets = np.full((n, steps + 1), PAD, dtype=np.int64)
        targets[:, :steps] = batch.ids
        targets[np.arange(n), batch.lengths] = EOS
        step_mask = (np.arange(steps + 1)[None, :] <= batch.lengths[:, None])
        fmask = step_mask.astype(self.dtype)

        h = self._dec_start(z_x, z_s)
        loglik = []
        prev = np.full(n, BOS, dtype=np.int64)
        for t in range(steps + 1):
            h, logits = self._dec_step(h, self.emb(prev), z_s)
            logp = ad.log_softmax(logits)
            loglik.append(ad.gather_last(logp, targets[:, t]))
            if t < steps:
                prev = batch.ids[:, t]
        total = ad.reduce_sum(ad.stack(loglik, axis=1) * fmask, axis=1)
        per_sentence = total / (batch.lengths + 1.0).astype(self.dtype)
        return ad.neg(ad.reduce_mean(per_sentence))

    def decode_soft(self, z_x: Tensor, z_s: Tensor, steps: int) -> tuple[Tensor, Tensor]:
        """Differentiable generation: each step feeds the expected embedding
        (distribution times embedding table) to the next step.

        Returns (distributions [B, steps, V], soft embeddings [B, steps, d]).
        """
        if steps < 1:
            raise InvalidArgument(f"decode_soft needs steps >= 1, got {steps}")
        n = z_x.shape[0]
        h = self._dec_start(z_x, z_s)
        tok = self.emb(np.full(n, BOS, dtype=np.int64))
        dists, soft_embs = [], []
        for _ in range(steps):
            h, logits = self._dec_step(h, tok, z_s)
            p = ad.softmax(logits)
            tok = ad.matmul(p, self.emb.table)
            dists.append(p)
            soft_embs.append(tok)
        return ad.stack(dists, axis=1), ad.stack(soft_embs, axis=1)

    def decode_greedy(self, z_x: Tensor, z_s: Tensor, max_len: int) -> list[list[int]]:
        """Argmax decoding, stopping per sentence at EOS or ``max_len`` tokens.

        Never emits PAD or BOS; returned sequences exclude the final EOS.
        """
        if max_len < 1:
            raise InvalidArgument(f"decode_greedy needs max_len >= 1, got {max_len}")
        n = z_x.shape[0]
        with ad.no_grad():
            h = self._dec_start(z_x, z_s)
            prev = np.full(n, BOS, dtype=np.int64)
            alive = np.ones(n, dtype=bool)
            out = [[] for _ in range(n)]
            for _ in range(max_len):
                h, logits = self._dec_step(h, self.emb(prev), z_s)
                scores = logits.data.copy()
                scores[:, PAD] = -np.inf
                scores[:, BOS] = -np.inf
                chosen = scores.argmax(axis=1)
                for i in range(n):
                    if alive[i]:
                        if chosen[i] == EOS:
                            alive[i] = False
                        else:
                            out[i].append(int(chosen[i]))
                if not alive.any():
                    break
                prev = np.where(alive, chosen, EOS)
        return out

    def transfer(self, batch: Batch, targets, marker: StyleClassifier,
                 max_len: int = 32) -> list[list[int]]:
        """Greedy style transfer of a batch toward per-sentence target labels."""
        targets = np.asarray(targets, dtype=np.int64)
        if targets.ndim == 0:
            targets = np.full(batch.size, int(targets), dtype=np.int64)
        with ad.no_grad():
            z_x = self.encode_ids(batch, marker)
            z_s = self.style_repr(z_x, targets)
            return self.decode_greedy(z_x, z_s, max_len)

    # -- plumbing ------------------------------------------------------------
    def params(self) -> dict[str, Tensor]:
        out = self.emb.params("emb")
        out.update(self.encoder.params("enc"))
        out.update(self.stylizer.params("sty"))
        out.update(self.dec_cell.params("dec"))
        out.update(self.init_proj.params("dec_init"))
        out.update(self.out_proj.params("dec_out"))
        return out
