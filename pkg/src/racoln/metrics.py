"""Automatic evaluation: transfer accuracy, corpus BLEU, 5-gram LM perplexity,
G-score, plus embedding export and a linear probe for disentanglement checks.

BLEU is corpus-level, case-sensitive, whitespace-token, 4-gram with brevity
penalty, no smoothing.  The language model is interpolated modified
Kneser-Ney; it will not match KenLM binaries bit-for-bit, so consumers should
rely on its internal-consistency properties and relative comparisons rather
than published absolute perplexities.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Example, make_batch
from .errors import CorpusError, InvalidArgument

BOS_MARK = "<s>"
EOS_MARK = "</s>"
UNK_MARK = "<unk>"


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(candidates, references) -> float:
    """Corpus-level BLEU-4 (0-100): clipped n-gram precisions, geometric mean,
    brevity penalty; identical corpora score exactly 100.

    ``references[i]`` may be a single reference (list of tokens) or a list of
    alternatives; the brevity penalty uses the closest reference length
    (ties resolved toward the shorter).
    """
    if len(candidates) != len(references):
        raise InvalidArgument(
            f"candidate/reference count mismatch: {len(candidates)} vs {len(references)}")
    if not candidates:
        raise InvalidArgument("BLEU of an empty corpus")
    clipped = [0] * 4
    totals = [0] * 4
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        if refs and isinstance(refs[0], str):
            refs = [refs]
        if not refs:
            raise InvalidArgument("candidate with no reference")
        cand_len += len(cand)
        ref_len += min((r_len for r_len in map(len, refs)),
                       key=lambda r_len: (abs(r_len - len(cand)), r_len))
        for n in range(1, 5):
            counts = _ngrams(cand, n)
            if not counts:
                continue
            best = Counter()
            for ref in refs:
                for gram, c in _ngrams(ref, n).items():
                    if c > best[gram]:
                        best[gram] = c
            clipped[n - 1] += sum(min(c, best[gram]) for gram, c in counts.items())
            totals[n - 1] += sum(counts.values())
    if cand_len == 0 or any(c == 0 for c in clipped):
        return 0.0
    log_precision = sum(math.log(c / t) for c, t in zip(clipped, totals)) / 4.0
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_precision)


# ---------------------------------------------------------------------------
# transfer accuracy and G-score
# ---------------------------------------------------------------------------


def transfer_accuracy(outputs, targets, eval_clf, vocab, batch_size: int = 64,
                      max_len: int = 32) -> float:
    """Percent of outputs the evaluation classifier assigns to the target style."""
    from .classifier import predict_styles

    targets = np.asarray(targets, dtype=np.int64)
    if len(outputs) != len(targets):
        raise InvalidArgument("outputs/targets length mismatch")
    predicted = predict_styles(eval_clf, outputs, vocab, batch_size, max_len)
    return float((predicted == targets).mean() * 100.0)


def g_score(s_acc: float, self_bleu: float) -> float:
    """Geometric mean of transfer accuracy and self-BLEU (reported to 0.1)."""
    if s_acc < 0 or self_bleu < 0:
        raise InvalidArgument(f"g_score inputs must be non-negative, got "
                              f"({s_acc}, {self_bleu})")
    return math.sqrt(s_acc * self_bleu)


@dataclass
class MetricReport:
    s_acc: float
    self_bleu: float
    ppl: float
    ref_bleu: float | None = None

    @property
    def g(self) -> float:
        return g_score(self.s_acc, self.self_bleu)

    def table(self) -> str:
        rows = [("S-ACC", f"{self.s_acc:.1f}"),
                ("self-BLEU", f"{self.self_bleu:.1f}")]
        if self.ref_bleu is not None:
            rows.append(("ref-BLEU", f"{self.ref_bleu:.1f}"))
        rows += [("PPL", f"{self.ppl:.1f}"), ("G-score", f"{self.g:.1f}")]
        width = max(len(k) for k, _ in rows)
        lines = [f"{k:<{width}}  {v:>8}" for k, v in rows]
        bar = "-" * (width + 10)
        return "\n".join([bar] + lines + [bar])

    def kv_lines(self) -> str:
        parts = [f"s_acc={self.s_acc:.4f}", f"self_bleu={self.self_bleu:.4f}"]
        if self.ref_bleu is not None:
            parts.append(f"ref_bleu={self.ref_bleu:.4f}")
        parts += [f"ppl={self.ppl:.4f}", f"g_score={self.g:.4f}"]
        return "\n".join(parts)


# ---------------------------------------------------------------------------
# interpolated modified Kneser-Ney n-gram language model
# ---------------------------------------------------------------------------


class NGramLM:
    """Interpolated modified Kneser-Ney LM (orders 1..n) or raw MLE.

    Training replaces frequency-1 tokens with <unk> (KN mode only) so unknown
    words carry mass at query time.  Conditional distributions sum to one for
    every history, seen or unseen, because the unigram level interpolates
    with the uniform distribution over the event vocabulary.
    """

    def __init__(self, order: int = 5, smoothing: str = "kn"):
        if order < 1:
            raise InvalidArgument(f"LM order must be >= 1, got {order}")
        if smoothing not in ("kn", "mle"):
            raise InvalidArgument(f"unknown smoothing {smoothing!r}")
        self.order = order
        self.smoothing = smoothing
        self.vocab: set[str] = set()
        self._counts: list[dict] = []      # index k: k-gram table (raw or continuation)
        self._hist: list[dict] = []        # index k: history -> (total, n1, n2, n3p)
        self._discounts: list[tuple] = []  # index k: (D1, D2, D3+)

    # -- training ----------------------------------------------------------
    def fit(self, sentences) -> "NGramLM":
        sentences = [list(s) for s in sentences]
        if not sentences:
            raise InvalidArgument("cannot train an LM on an empty corpus")
        if self.smoothing == "kn":
            freq = Counter(tok for s in sentences for tok in s)
            sentences = [[t if freq[t] > 1 else UNK_MARK for t in s] for s in sentences]
        self.vocab = {tok for s in sentences for tok in s}
        self.vocab.add(EOS_MARK)
        self.vocab.add(UNK_MARK)
        self.vocab.discard(BOS_MARK)

        raw: list[dict] = [dict() for _ in range(self.order + 1)]  # raw[k]: k-gram counts
        pad = [BOS_MARK] * (self.order - 1)
        for s in sentences:
            seq = pad + s + [EOS_MARK]
            for k in range(1, self.order + 1):
                table = raw[k]
                for i in range(self.order - k, len(seq) - k + 1):
                    gram = tuple(seq[i : i + k])
                    table[gram] = table.get(gram, 0) + 1
        if self.smoothing == "mle":
            self._counts = [None] * (self.order + 1)
            self._counts[self.order] = raw[self.order]
            self._hist = [None] * (self.order + 1)
            self._hist[self.order] = self._history_stats(raw[self.order])
            return self

        # level k table: raw counts at the top, continuation counts below
        counts: list[dict] = [None] * (self.order + 1)
        counts[self.order] = raw[self.order]
        for k in range(self.order - 1, 0, -1):
            cont: dict = {}
            for gram in raw[k + 1]:
                suffix = gram[1:]
                cont[suffix] = cont.get(suffix, 0) + 1
            counts[k] = cont
        self._counts = counts
        self._hist = [None] + [self._history_stats(counts[k])
                               for k in range(1, self.order + 1)]
        self._discounts = [None] + [self._estimate_discounts(counts[k])
                                    for k in range(1, self.order + 1)]
        return self

    @staticmethod
    def _history_stats(table: dict) -> dict:
        hist: dict = {}
        for gram, c in table.items():
            h = gram[:-1]
            total, n1, n2, n3p = hist.get(h, (0, 0, 0, 0))
            total += c
            if c == 1:
                n1 += 1
            elif c == 2:
                n2 += 1
            else:
                n3p += 1
            hist[h] = (total, n1, n2, n3p)
        return hist

    @staticmethod
    def _estimate_discounts(table: dict) -> tuple[float, float, float]:
        """Count-of-count discount estimates, clamped so that a count-c mass
        never goes negative (keeps every conditional exactly normalized)."""
        n = Counter()
        for c in table.values():
            if c <= 4:
                n[c] += 1
        y = n[1] / (n[1] + 2.0 * n[2]) if (n[1] + 2 * n[2]) > 0 else 0.5
        d1 = 1.0 - 2.0 * y * n[2] / n[1] if n[1] > 0 else 0.5
        d2 = 2.0 - 3.0 * y * n[3] / n[2] if n[2] > 0 else 1.0
        d3 = 3.0 - 4.0 * y * n[4] / n[3] if n[3] > 0 else 1.5
        return (min(max(d1, 0.0), 1.0), min(max(d2, 0.0), 2.0), min(max(d3, 0.0), 3.0))

    # -- querying ------------------------------------------------------------
    def _normalize_token(self, tok: str) -> str:
        return tok if (tok in self.vocab or tok == BOS_MARK) else UNK_MARK

    def cond_prob(self, history, word: str) -> float:
        """p(word | history); history may be any length and contain OOV tokens."""
        history = tuple(self._normalize_token(t) for t in history)[-(self.order - 1):] \
            if self.order > 1 else ()
        if len(history) < self.order - 1:
            history = (BOS_MARK,) * (self.order - 1 - len(history)) + history
        word = self._normalize_token(word)
        if self.smoothing == "mle":
            stats = self._hist[self.order].get(history)
            if stats is None or stats[0] == 0:
                return 0.0
            return self._counts[self.order].get(history + (word,), 0) / stats[0]
        return self._p(self.order, history, word)

    def _p(self, level: int, history: tuple, word: str) -> float:
        if level == 0:
            return 1.0 / len(self.vocab)
        stats = self._hist[level].get(history)
        if stats is None or stats[0] == 0:
            return self._p(level - 1, history[1:], word)
        total, n1, n2, n3p = stats
        c = self._counts[level].get(history + (word,), 0)
        d1, d2, d3 = self._discounts[level]
        d = 0.0 if c == 0 else (d1 if c == 1 else (d2 if c == 2 else d3))
        lam = (d1 * n1 + d2 * n2 + d3 * n3p) / total
        return max(c - d, 0.0) / total + lam * self._p(level - 1, history[1:], word)

    def logprob(self, sentence) -> float:
        """Natural-log likelihood of a sentence including its end marker."""
        toks = list(sentence) + [EOS_MARK]
        context = [BOS_MARK] * (self.order - 1)
        total = 0.0
        for tok in toks:
            p = self.cond_prob(tuple(context), tok)
            if p <= 0.0:
                return -math.inf
            total += math.log(p)
            context = (context + [self._normalize_token(tok)])[-(self.order - 1):] \
                if self.order > 1 else []
        return total

    def perplexity(self, sentences) -> float:
        """exp of per-event NLL; events are tokens plus one end marker each."""
        total = 0.0
        n = 0
        for s in sentences:
            lp = self.logprob(s)
            if lp == -math.inf:
                return math.inf
            total += lp
            n += len(list(s)) + 1
        if n == 0:
            raise InvalidArgument("perplexity of an empty corpus")
        return math.exp(-total / n)

    # -- persistence -----------------------------------------------------------
    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"#ngram-lm\t{self.order}\t{self.smoothing}"]
        lines.append("#vocab\t" + "\t".join(sorted(self.vocab)))
        for k in range(1, self.order + 1):
            table = self._counts[k]
            if table is None:
                continue
            for gram in sorted(table):
                lines.append(f"{k}\t{' '.join(gram)}\t{table[gram]}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NGramLM":
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise CorpusError(f"cannot read LM file {path}: {e}") from e
        if not lines or not lines[0].startswith("#ngram-lm\t"):
            raise CorpusError(f"{path} is not an LM file")
        _, order, smoothing = lines[0].split("\t")
        lm = cls(order=int(order), smoothing=smoothing)
        lm.vocab = set(lines[1].split("\t")[1:])
        counts: list[dict] = [None] * (lm.order + 1)
        for line in lines[2:]:
            if not line:
                continue
            k_str, gram_str, c_str = line.split("\t")
            k = int(k_str)
            if counts[k] is None:
                counts[k] = {}
            counts[k][tuple(gram_str.split(" "))] = int(c_str)
        for k in range(1, lm.order + 1):
            if counts[k] is None:
                counts[k] = {}
        lm._counts = counts
        lm._hist = [None] + [lm._history_stats(counts[k])
                             for k in range(1, lm.order + 1)]
        if lm.smoothing == "kn":
            lm._discounts = [None] + [lm._estimate_discounts(counts[k])
                                      for k in range(1, lm.order + 1)]
        return lm


def lm_train(sentences, order: int = 5) -> NGramLM:
    return NGramLM(order=order).fit(sentences)


def lm_perplexity(lm: NGramLM, sentences) -> float:
    return lm.perplexity(sentences)


# ---------------------------------------------------------------------------
# embedding export and linear probe
# ---------------------------------------------------------------------------


def export_embeddings(gen, marker, examples, vocab, path, batch_size: int = 64,
                      max_len: int = 32) -> int:
    """Write per-sentence content/style vectors, one row per (sentence, target).

    Row format (tab-separated): source style, target style, content vector,
    style vector.  Each sentence appears once per target style, and the
    content columns are identical across the two rows.  Returns row count.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = 0
    with ad.no_grad(), open(path, "w", encoding="utf-8") as fh:
        wrote_header = False
        for start in range(0, len(examples), batch_size):
            chunk = examples[start : start + batch_size]
            batch = make_batch(chunk, vocab, max_len)
            z_x = gen.encode_ids(batch, marker)
            if not wrote_header:
                d_style = gen.style_repr(z_x, batch.styles).shape[-1]
                fh.write(f"#dims\t{z_x.shape[-1]}\t{d_style}\n")
                wrote_header = True
            for target in (0, 1):
                targets = np.full(batch.size, target, dtype=np.int64)
                z_s = gen.style_repr(z_x, targets)
                for i in range(batch.size):
                    cells = [str(int(batch.styles[i])), str(target)]
                    cells += [format(v, ".17g") for v in z_x.data[i]]
                    cells += [format(v, ".17g") for v in z_s.data[i]]
                    fh.write("\t".join(cells) + "\n")
                    rows += 1
    return rows


def read_embeddings(path):
    """Inverse of export_embeddings: (src, tgt, content[N, dx], style[N, ds])."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CorpusError(f"cannot read embeddings {path}: {e}") from e
    if not lines or not lines[0].startswith("#dims\t"):
        raise CorpusError(f"{path} missing #dims header")
    _, dx_str, ds_str = lines[0].split("\t")
    dx, ds = int(dx_str), int(ds_str)
    src, tgt, zx, zs = [], [], [], []
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split("\t")
        if len(cells) != 2 + dx + ds:
            raise CorpusError(f"{path}: bad row width {len(cells)}")
        src.append(int(cells[0]))
        tgt.append(int(cells[1]))
        zx.append([float(v) for v in cells[2 : 2 + dx]])
        zs.append([float(v) for v in cells[2 + dx :]])
    return (np.array(src), np.array(tgt),
            np.array(zx, dtype=np.float64), np.array(zs, dtype=np.float64))


def groups_by_content(zx: np.ndarray) -> np.ndarray:
    """Group ids over exported rows: rows sharing a content vector are one
    sentence (the export repeats each sentence once per target style)."""
    seen: dict[bytes, int] = {}
    out = np.empty(len(zx), dtype=np.int64)
    for i, row in enumerate(np.asarray(zx)):
        key = row.tobytes()
        out[i] = seen.setdefault(key, len(seen))
    return out


def linear_probe_accuracy(features: np.ndarray, labels: np.ndarray, seed: int = 0,
                          train_frac: float = 0.8, l2: float = 1e-3,
                          iters: int = 400, lr: float = 0.05,
                          groups: np.ndarray | None = None) -> float:
    """Held-out accuracy of an L2-regularized logistic probe (plain numpy).

    ``groups`` assigns rows to units that must not straddle the train/test
    split (exported embeddings repeat each sentence once per target style).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if groups is None:
        groups = np.arange(len(labels))
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    uniq = uniq[rng.permutation(len(uniq))]
    train_groups = set(uniq[: int(len(uniq) * train_frac)].tolist())
    in_train = np.array([g in train_groups for g in groups])
    tr = np.flatnonzero(in_train)
    te = np.flatnonzero(~in_train)
    mu = features[tr].mean(axis=0)
    sd = features[tr].std(axis=0) + 1e-8
    x_tr = (features[tr] - mu) / sd
    x_te = (features[te] - mu) / sd
    y_tr = labels[tr]
    w = np.zeros(features.shape[1])
    b = 0.0
    mw = np.zeros_like(w); vw = np.zeros_like(w)
    mb = vb = 0.0
    for t in range(1, iters + 1):
        p = 1.0 / (1.0 + np.exp(-(x_tr @ w + b)))
        gw = x_tr.T @ (p - y_tr) / len(y_tr) + l2 * w
        gb = float((p - y_tr).mean())
        mw = 0.9 * mw + 0.1 * gw; vw = 0.999 * vw + 0.001 * gw * gw
        mb = 0.9 * mb + 0.1 * gb; vb = 0.999 * vb + 0.001 * gb * gb
        w -= lr * (mw / (1 - 0.9 ** t)) / (np.sqrt(vw / (1 - 0.999 ** t)) + 1e-8)
        b -= lr * (mb / (1 - 0.9 ** t)) / (np.sqrt(vb / (1 - 0.999 ** t)) + 1e-8)
    pred = (x_te @ w + b) > 0
    return float((pred == (labels[te] > 0.5)).mean())
