"""Desk-scale synthetic review corpus generator.

Templated sentences share their content vocabulary across both styles;
exactly one slot carries a style-bearing adjective, drawn from disjoint
positive/negative lexicons.  Adjectives come in positive/negative pairs and
the pair is a fixed function of the sentence's head noun (as "delicious" vs
"bland" belong to food contexts), so the style class of a sentence is
carried only by the adjective while the choice within a class is plain
content.  Neutral adjectives fill look-alike slots so style cannot be
predicted from token position alone.  The paired lexicons yield ground-truth
transfer references for the test split.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Example
from .errors import InvalidArgument

POSITIVE_ADJ = ["delicious", "great", "lovely", "friendly", "amazing",
                "wonderful", "tasty", "perfect", "superb", "charming"]
NEGATIVE_ADJ = ["disgusting", "terrible", "dreadful", "rude", "awful",
                "horrible", "bland", "useless", "dire", "grim"]
NEUTRAL_ADJ = ["big", "small", "round", "warm", "cold", "quiet", "busy",
               "new", "old", "local"]
NOUNS = ["pasta", "coffee", "burger", "salad", "soup", "steak", "cake",
         "pizza", "service", "staff", "room", "patio", "bar", "menu"]

# every template has exactly one {adj} slot (the style token), one {n} noun
# slot, and possibly one {x} neutral-adjective slot
TEMPLATES = [
    "the {n} was {adj} .",
    "i thought the {x} {n} was {adj} .",
    "that {n} seemed {adj} to me .",
    "my friend said the {n} was {adj} .",
    "the {adj} {n} came with a {x} side .",
    "we found the {n} quite {adj} .",
    "honestly the {n} here is {adj} .",
    "our {x} waiter brought a {adj} {n} .",
    "the {n} in the {x} corner was {adj} .",
    "everyone agreed the {n} was {adj} .",
]


def adjective_pair(noun: str) -> tuple[str, str]:
    """The (positive, negative) adjective pair associated with a head noun."""
    k = NOUNS.index(noun) % len(POSITIVE_ADJ)
    return POSITIVE_ADJ[k], NEGATIVE_ADJ[k]


def generate_pairs(rng: np.random.Generator, n_per_style: int):
    """Balanced (positive, negative) sentences plus swapped-adjective
    references; a sentence and its reference share all content words."""
    pos, neg, pos_ref, neg_ref = [], [], [], []

    def draw():
        t = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
        noun = str(rng.choice(NOUNS))
        neutral = str(rng.choice(NEUTRAL_ADJ))
        p_adj, n_adj = adjective_pair(noun)
        render = lambda adj: t.format(n=noun, x=neutral, adj=adj).split()
        return render, p_adj, n_adj

    for _ in range(n_per_style):
        render, p_adj, n_adj = draw()
        pos.append(render(p_adj))
        pos_ref.append(render(n_adj))
        render, p_adj, n_adj = draw()
        neg.append(render(n_adj))
        neg_ref.append(render(p_adj))
    return pos, neg, pos_ref, neg_ref


def write_synthetic_corpus(out_dir, seed: int, size: int) -> dict[str, int]:
    """Write train/dev/test splits (balanced styles) plus test reference TSVs.

    ``size`` is the total training sentence count; dev and test each get a
    tenth.  Returns per-file line counts.
    """
    if size < 100:
        raise InvalidArgument(f"synthetic corpus size must be >= 100, got {size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    counts = {}
    split_sizes = {"train": size // 2, "dev": max(size // 20, 25),
                   "test": max(size // 20, 25)}
    for split, n_per_style in split_sizes.items():
        pos, neg, pos_ref, neg_ref = generate_pairs(rng, n_per_style)
        for name, sents in (("pos", pos), ("neg", neg)):
            path = out_dir / f"{split}.{name}.txt"
            path.write_text("".join(" ".join(s) + "\n" for s in sents),
                            encoding="utf-8")
            counts[path.name] = len(sents)
        if split == "test":
            for name, sents, refs in (("pos", pos, pos_ref), ("neg", neg, neg_ref)):
                path = out_dir / f"test.{name}.ref.tsv"
                path.write_text(
                    "".join(" ".join(s) + "\t" + " ".join(r) + "\n"
                            for s, r in zip(sents, refs)),
                    encoding="utf-8")
                counts[path.name] = len(sents)
    return counts


def single_marker_examples(rng: np.random.Generator, n_per_style: int) -> list[Example]:
    """In-memory corpus where each sentence has exactly one style token;
    used by localization tests."""
    pos, neg, _, _ = generate_pairs(rng, n_per_style)
    return ([Example(s, 1) for s in pos] + [Example(s, 0) for s in neg])
