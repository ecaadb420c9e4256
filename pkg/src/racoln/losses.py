"""The four training losses, their weighted combination, and the training loop.

Self-reconstruction and cycle reconstruction are teacher-forced negative
log-likelihoods; the cycle and style losses run through soft-sampled
sequences so gradients reach the decoder.  The style classifier and the
marker stay frozen throughout (asserted by tests via parameter hashes).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .classifier import StyleClassifier
from .data import Batch, iter_batches
from .errors import InvalidArgument, InvalidState
from .generator import Generator
from .optim import Adam, clip_global_norm

log = logging.getLogger(__name__)


@dataclass
class LossWeights:
    self_rec: float = 0.5
    cycle: float = 0.5
    content: float = 1.0
    style: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise InvalidArgument(f"loss weight {name} must be >= 0, got {value}")


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    seed: int = 0
    history: list[dict] = field(default_factory=list)


def batch_losses(gen: Generator, marker: StyleClassifier,
                 loss_clf: StyleClassifier, batch: Batch,
                 weights: LossWeights, detach_content: bool = False) -> dict[str, Tensor]:
    """All four losses for one batch sharing a single forward pipeline.

    Target style is the deterministic flip of the source label (two-style
    setting).  Marker attention is computed forward-only on both the real
    and the soft-sampled sequences.
    """
    if not loss_clf.frozen:
        raise InvalidState("style loss requires a frozen classifier")
    z_x = gen.encode_ids(batch, marker)
    z_src = gen.style_repr(z_x, batch.styles)
    l_self = gen.teacher_forced_nll(z_x, z_src, batch)

    targets = 1 - batch.styles
    z_tgt = gen.style_repr(z_x, targets)
    dists, _ = gen.decode_soft(z_x, z_tgt, batch.max_len)

    logp = ad.log_softmax(loss_clf.logits_soft(dists, batch.mask))
    l_style = ad.neg(ad.reduce_mean(ad.gather_last(logp, targets)))

    # the cycle decode conditions on the same source-style representation as
    # self-reconstruction (built from the original sentence's content)
    z_cycle = gen.encode_soft(dists, batch.mask, marker)
    l_cycle = gen.teacher_forced_nll(z_cycle, z_src, batch)

    z_ref = ad.detach(z_x) if detach_content else z_x
    diff = z_ref - z_cycle
    l_content = ad.reduce_mean(ad.reduce_sum(ad.square(diff), axis=-1))

    total = (weights.self_rec * l_self + weights.cycle * l_cycle
             + weights.content * l_content + weights.style * l_style)
    return {"self": l_self, "cycle": l_cycle, "content": l_content,
            "style": l_style, "total": total}


def train_generator(gen: Generator, marker: StyleClassifier,
                    loss_clf: StyleClassifier, train_examples, vocab, *,
                    weights: LossWeights, lr: float = 5e-4, batch_size: int = 64,
                    epochs: int = 20, max_len: int = 32, seed: int = 0,
                    grad_clip: float = 5.0, detach_content: bool = False,
                    log_every: int = 10, log_path=None, ckpt_dir=None,
                    epoch_callback=None) -> TrainState:
    """Adam training over shuffled mixed-style batches; checkpoint per epoch.

    Deterministic under a fixed seed: shuffling comes from one seeded
    generator and parameter updates are plain numpy.
    """
    if marker is None or loss_clf is None or not loss_clf.frozen:
        raise InvalidState("training requires a pretrained marker and frozen classifier")
    params = gen.params()
    opt = Adam(params, lr)
    rng = np.random.default_rng(seed)
    state = TrainState(seed=seed)
    log_fh = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_fh = open(log_path, "a", encoding="utf-8")
    t0 = time.time()
    try:
        for epoch in range(epochs):
            for batch in iter_batches(train_examples, vocab, batch_size, max_len,
                                      shuffle=True, rng=rng):
                opt.zero_grad()
                with ad.Tape() as tape:
                    losses = batch_losses(gen, marker, loss_clf, batch, weights,
                                          detach_content)
                ad.backward(tape, losses["total"])
                clip_global_norm(params, grad_clip)
                opt.step()
                gen.emb.clamp_pad()
                state.step += 1
                if state.step % log_every == 0 or state.step == 1:
                    record = {k: v.item() for k, v in losses.items()}
                    state.history.append({"step": state.step, **record})
                    if log_fh is not None:
                        log_fh.write(
                            f"{state.step}, {record['self']:.6f}, {record['cycle']:.6f}, "
                            f"{record['content']:.6f}, {record['style']:.6f}, "
                            f"{record['total']:.6f}\n")
                        log_fh.flush()
                    log.info("step %d total=%.4f self=%.4f cycle=%.4f content=%.4f style=%.4f",
                             state.step, record["total"], record["self"],
                             record["cycle"], record["content"], record["style"])
            state.epoch = epoch + 1
            if ckpt_dir is not None:
                from .checkpoint import save_checkpoint

                save_checkpoint(Path(ckpt_dir) / f"generator-epoch{epoch + 1:03d}.ckpt",
                                params, meta={"epoch": str(epoch + 1), "seed": str(seed)})
            if epoch_callback is not None:
                epoch_callback(state, gen)
    finally:
        if log_fh is not None:
            log_fh.close()
    log.info("training done: %d steps in %.1fs", state.step, time.time() - t0)
    return state
