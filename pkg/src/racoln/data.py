"""Corpus ingestion, vocabulary, and padded batching.

Input files are pre-tokenized (whitespace split), one sentence per line,
named ``<split>.<style>.txt`` with styles ``neg``/``pos`` mapping to labels
0/1.  Reference files for ref-BLEU are tab-separated ``input\treference``.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorpusError, InvalidArgument

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")

NEGATIVE, POSITIVE = 0, 1
STYLE_NAMES = {"neg": NEGATIVE, "pos": POSITIVE}


@dataclass
class Example:
    tokens: list[str]
    style: int


@dataclass
class Vocabulary:
    """Token/id bijection with frequency cutoff; reserved ids come first."""

    token_to_id: dict[str, int]
    id_to_token: list[str]
    min_freq: int

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[int(i)] for i in ids]

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id


@dataclass
class Batch:
    """Padded token-id matrix with lengths, boolean mask, and style labels."""

    ids: np.ndarray       # [B, T] int64, PAD beyond each length
    lengths: np.ndarray   # [B] int64
    mask: np.ndarray      # [B, T] bool, True iff t < lengths[b]
    styles: np.ndarray    # [B] int64 in {0, 1}

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def max_len(self) -> int:
        return self.ids.shape[1]


def load_corpus(path, style: int) -> list[Example]:
    """Read one whitespace-pre-tokenized sentence per line, all labeled ``style``.

    Empty lines are skipped (counted in a single warning).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot read corpus {path}: {e}") from e
    examples = []
    skipped = 0
    for line in text.splitlines():
        tokens = line.split()
        if not tokens:
            skipped += 1
            continue
        examples.append(Example(tokens, style))
    if skipped:
        log.warning("%s: skipped %d empty line(s)", path, skipped)
    if not examples:
        raise CorpusError(f"no usable lines in corpus {path}")
    return examples


def load_style_pair(directory, split: str) -> list[Example]:
    """Load ``<split>.neg.txt`` and ``<split>.pos.txt`` from a directory."""
    directory = Path(directory)
    examples = []
    for name, style in STYLE_NAMES.items():
        examples.extend(load_corpus(directory / f"{split}.{name}.txt", style))
    return examples


def build_vocab(examples, min_freq: int = 2) -> Vocabulary:
    """Deterministic ids: reserved first, then by descending frequency, ties lexicographic."""
    if min_freq < 1:
        raise InvalidArgument(f"min_freq must be >= 1, got {min_freq}")
    counts = Counter()
    for ex in examples:
        counts.update(ex.tokens)
    kept = [t for t, c in counts.items() if c >= min_freq and t not in RESERVED]
    kept.sort(key=lambda t: (-counts[t], t))
    id_to_token = list(RESERVED) + kept
    return Vocabulary({t: i for i, t in enumerate(id_to_token)}, id_to_token, min_freq)


def make_batch(examples, vocab: Vocabulary, max_len: int = 32) -> Batch:
    """Encode, truncate to ``max_len``, and pad to the batch max length.

    BOS/EOS are not stored here; the generator prepends BOS to decoder inputs
    and appends EOS to its targets.
    """
    if not examples:
        raise InvalidArgument("make_batch on empty example list")
    encoded = [vocab.encode(ex.tokens[:max_len]) for ex in examples]
    lengths = np.array([len(e) for e in encoded], dtype=np.int64)
    t_max = int(lengths.max())
    ids = np.full((len(encoded), t_max), PAD, dtype=np.int64)
    for i, e in enumerate(encoded):
        ids[i, : len(e)] = e
    mask = np.arange(t_max)[None, :] < lengths[:, None]
    styles = np.array([ex.style for ex in examples], dtype=np.int64)
    return Batch(ids=ids, lengths=lengths, mask=mask, styles=styles)


def iter_batches(examples, vocab: Vocabulary, batch_size: int, max_len: int = 32,
                 shuffle: bool = False, rng: np.random.Generator | None = None):
    """Yield order-preserving Batches (or a seeded shuffle when requested)."""
    order = np.arange(len(examples))
    if shuffle:
        if rng is None:
            raise InvalidArgument("shuffle requires an explicit rng for determinism")
        rng.shuffle(order)
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start : start + batch_size]]
        yield make_batch(chunk, vocab, max_len)


def load_references(path) -> list[tuple[list[str], list[str]]]:
    """Read ``input<TAB>reference`` pairs for ref-BLEU."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot read references {path}: {e}") from e
    pairs = []
    for ln, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusError(f"{path}:{ln}: expected 'input<TAB>reference'")
        pairs.append((parts[0].split(), parts[1].split()))
    if not pairs:
        raise CorpusError(f"no reference pairs in {path}")
    return pairs
