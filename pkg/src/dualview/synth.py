"""Synthetic review corpora with known sentiment and copy structure.

Each review is filler text with a topic word, a few sentiment words from
its class lexicon and, at the copy rate, a marker word followed by a
one-off token that cannot be in any vocabulary. The summary restates the
topic and the headline word of the gold class (the first word of its
lexicon), plus the one-off token when planted, so that token must be
copied from the review. A borderline review (at the ``ambiguity`` rate)
draws its sentiment words from a lexicon shared by two neighbouring
classes, its summary uses that pair's headline word, and its label is a
fair coin between the two. Every summary is a function of its review.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

MARKER = "brand"
LINK = "is"


@dataclass(frozen=True)
class SyntheticSpec:
    n_examples: int = 200
    num_classes: int = 5
    n_filler: int = 60
    n_topics: int = 8
    lexicon_size: int = 3
    sentiment_words: int = 3
    review_len: tuple[int, int] = (16, 24)
    copy_rate: float = 0.3
    # chance that a review is borderline between two neighbouring classes; the
    # review and the summary then say the same thing and the label is a coin flip
    ambiguity: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.copy_rate <= 1.0 or not 0.0 <= self.ambiguity <= 1.0:
            raise ValueError("rates must lie in [0, 1]")
        lo, hi = self.review_len
        if lo < 1 or hi < lo:
            raise ValueError(f"bad review length range {self.review_len}")
        if self.num_classes < 2 or self.lexicon_size < 1 or self.n_filler < 1 or self.n_topics < 1:
            raise ValueError("synthetic spec needs at least two classes and nonempty word lists")
        if lo < self.sentiment_words + 3:
            raise ValueError("reviews too short for the planted words")


@dataclass
class Lexicon:
    filler: list[str]
    topics: list[str]
    classes: list[list[str]] = field(default_factory=list)
    # borderline[a] is shared by classes a and a + 1; empty without ambiguity
    borderline: list[list[str]] = field(default_factory=list)

    def fixed_words(self) -> list[str]:
        sentiment = [w for c in self.classes + self.borderline for w in c]
        return self.filler + self.topics + sentiment + [MARKER, LINK, "."]


def _words(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i:03d}" for i in range(n)]


def make_lexicon(spec: SyntheticSpec) -> Lexicon:
    classes = [_words(f"senti{k + 1}x", spec.lexicon_size) for k in range(spec.num_classes)]
    borderline = ([_words(f"senti{a + 1}to{a + 2}x", spec.lexicon_size) for a in range(spec.num_classes - 1)]
                  if spec.ambiguity > 0 else [])
    return Lexicon(_words("w", spec.n_filler), _words("topic", spec.n_topics), classes, borderline)


def recommended_vocab_cap(spec: SyntheticSpec) -> int:
    """Room for the specials and every fixed word, none for one-off tokens."""
    return 4 + len(make_lexicon(spec).fixed_words())


def _one_off(rng: np.random.Generator, taken: set[str]) -> str:
    letters = np.array(list(string.ascii_lowercase))
    while True:
        w = "zz" + "".join(rng.choice(letters, size=6))
        if w not in taken:
            taken.add(w)
            return w


def generate(spec: SyntheticSpec) -> list[dict]:
    """Records with "reviewText", "summary", "overall" (1..K) and "planted" (token or None)."""
    rng = np.random.default_rng(spec.seed)
    lex = make_lexicon(spec)
    taken: set[str] = set()
    out = []
    for _ in range(spec.n_examples):
        label = int(rng.integers(spec.num_classes))
        n = int(rng.integers(spec.review_len[0], spec.review_len[1] + 1))
        words = [lex.filler[i] for i in rng.integers(spec.n_filler, size=n)]
        topic = lex.topics[int(rng.integers(spec.n_topics))]
        picks = rng.integers(spec.lexicon_size, size=spec.sentiment_words)
        sentiment = lex.classes[label]
        if rng.random() < spec.ambiguity:
            pair = int(rng.integers(spec.num_classes - 1))
            label = pair + int(rng.integers(2))
            sentiment = lex.borderline[pair]
        senti = [sentiment[i] for i in picks]
        summary_senti = sentiment[0]
        planted: Optional[str] = _one_off(rng, taken) if rng.random() < spec.copy_rate else None
        inserts = [[topic]] + [[w] for w in senti]
        if planted is not None:
            inserts.append([MARKER, planted])
        slots = sorted(rng.choice(n + 1, size=len(inserts), replace=True).tolist())
        order = rng.permutation(len(inserts))
        review: list[str] = []
        prev = 0
        for slot, k in zip(slots, order):
            review.extend(words[prev:slot])
            review.extend(inserts[k])
            prev = slot
        review.extend(words[prev:])
        summary = [topic, LINK, summary_senti] + ([planted] if planted else []) + ["."]
        out.append({"reviewText": " ".join(review), "summary": " ".join(summary), "overall": label + 1,
                    "planted": planted})
    return out


def write_jsonl(records: list[dict], path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def count_baseline(records: list[dict], spec: SyntheticSpec) -> float:
    """Accuracy of predicting the class whose lexicon words occur most often."""
    lex = make_lexicon(spec)
    owner = {w: k for k, ws in enumerate(lex.classes) for w in ws}
    hits = 0
    for r in records:
        counts = np.zeros(spec.num_classes)
        for w in r["reviewText"].split():
            if w in owner:
                counts[owner[w]] += 1
        hits += int(np.argmax(counts) + 1 == r["overall"])
    return hits / len(records) if records else 0.0
