"""Review ingestion: tokenizing, filtering, vocabularies and copy-aware ids."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .autodiff import ContractError

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
SPECIALS = (PAD, UNK, BOS, EOS)

MIN_REVIEW_LEN = 16
MAX_REVIEW_LEN = 800
MIN_SUMMARY_LEN = 4
SENTENCE_END = frozenset({".", "!", "?"})

DEFAULT_FIELDS = {"review": "reviewText", "summary": "summary", "rating": "overall"}

# a word keeps inner apostrophes and hyphens; any other non-space symbol is its own token
_TOKEN_RE = re.compile(r"\w+(?:['’\-]\w+)*|[^\w\s]")


class DataFormatError(ValueError):
    """Input file is mostly unparseable."""


@dataclass
class RawRecord:
    review_text: str
    summary_text: str
    rating: float | int


@dataclass
class TokenizedRecord:
    review: list[str]
    summary: list[str]
    rating: float | int


@dataclass
class Example:
    src_ids: list[int]
    src_ext_ids: list[int]
    oov_words: list[str]
    tgt_ids: list[int]
    tgt_ext_ids: list[int]
    label: int  # 1..K
    uid: str = ""

    def to_dict(self) -> dict:
        return {
            "uid": self.uid, "src_ids": self.src_ids, "src_ext_ids": self.src_ext_ids,
            "oov_words": self.oov_words, "tgt_ids": self.tgt_ids,
            "tgt_ext_ids": self.tgt_ext_ids, "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Example":
        return cls(d["src_ids"], d["src_ext_ids"], d["oov_words"], d["tgt_ids"],
                   d["tgt_ext_ids"], d["label"], d.get("uid", ""))


class Vocabulary:
    """Word/id mapping with PAD, UNK, BOS, EOS fixed at ids 0-3."""

    def __init__(self, words: Sequence[str]):
        words = list(words)
        if tuple(words[:4]) != SPECIALS:
            words = list(SPECIALS) + [w for w in words if w not in SPECIALS]
        self.itos: list[str] = words
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(words)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate words in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi

    def id(self, word: str) -> int:
        return self.stoi.get(word, UNK_ID)

    def word(self, idx: int, oov_words: Sequence[str] = ()) -> str:
        if idx < len(self.itos):
            return self.itos[idx]
        return oov_words[idx - len(self.itos)]

    def decode(self, ids: Iterable[int], oov_words: Sequence[str] = ()) -> list[str]:
        return [self.word(i, oov_words) for i in ids]


def tokenize(text: str) -> list[str]:
    """Lowercase and split into words and punctuation.

    >>> tokenize("Great Product!")
    ['great', 'product', '!']
    """
    return _TOKEN_RE.findall(text.lower())


def normalize_summary(words: list[str]) -> list[str]:
    if words and words[-1] in SENTENCE_END:
        return list(words)
    return list(words) + ["."]


def filter_record(rec: TokenizedRecord, num_classes: int = 5) -> Optional[str]:
    """Return None to keep the record, else a rejection reason."""
    n = len(rec.review)
    if n < MIN_REVIEW_LEN:
        return "review_too_short"
    if n > MAX_REVIEW_LEN:
        return "review_too_long"
    if len(rec.summary) < MIN_SUMMARY_LEN:
        return "summary_too_short"
    r = rec.rating
    if isinstance(r, bool) or not isinstance(r, (int, np.integer)) or not 1 <= r <= num_classes:
        return "bad_rating"
    return None


def build_vocab(corpus: Iterable[TokenizedRecord], cap: int = 50_000) -> Vocabulary:
    """Keep the ``cap - 4`` most frequent words of reviews and summaries pooled.

    ``cap`` counts the four special tokens. Equal counts fall back to
    lexicographic order.
    """
    if cap < 5:
        raise ValueError("cap must be at least 5")
    counts: Counter[str] = Counter()
    n = 0
    for rec in corpus:
        counts.update(rec.review)
        counts.update(rec.summary)
        n += 1
    if n == 0:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    for s in SPECIALS:
        counts.pop(s, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(list(SPECIALS) + [w for w, _ in ranked[: cap - len(SPECIALS)]])


def build_dynamic_vocab(src_words: Sequence[str], vocab: Vocabulary):
    """Map source words to fixed-vocabulary ids and copy-extended ids.

    Each distinct out-of-vocabulary word gets id ``len(vocab) + k`` in order
    of first occurrence.
    """
    if not src_words:
        raise ValueError("empty source")
    base = len(vocab)
    oov: dict[str, int] = {}
    src_ids, ext_ids = [], []
    for w in src_words:
        i = vocab.stoi.get(w)
        if i is None:
            k = oov.setdefault(w, len(oov))
            src_ids.append(UNK_ID)
            ext_ids.append(base + k)
        else:
            src_ids.append(i)
            ext_ids.append(i)
    return src_ids, ext_ids, list(oov)


def encode_target(tgt_words: Sequence[str], vocab: Vocabulary, oov_words: Sequence[str]):
    base = len(vocab)
    oov = {w: base + k for k, w in enumerate(oov_words)}
    ids, ext = [], []
    for w in tgt_words:
        i = vocab.stoi.get(w)
        if i is None:
            ids.append(UNK_ID)
            ext.append(oov.get(w, UNK_ID))
        else:
            ids.append(i)
            ext.append(i)
    return ids + [EOS_ID], ext + [EOS_ID]


def truncate(rec: TokenizedRecord, max_src: int = 400, max_tgt: int = 100) -> TokenizedRecord:
    """Cap review and summary lengths; must run before :func:`build_dynamic_vocab`."""
    return TokenizedRecord(rec.review[:max_src], rec.summary[:max_tgt], rec.rating)


def make_example(rec: TokenizedRecord, vocab: Vocabulary, max_src: int = 400,
                 max_tgt: int = 100, uid: str = "") -> Example:
    rec = truncate(rec, max_src, max_tgt)
    src, ext, oov = build_dynamic_vocab(rec.review, vocab)
    tgt, tgt_ext = encode_target(rec.summary, vocab, oov)
    return Example(src, ext, oov, tgt, tgt_ext, int(rec.rating), uid)


def split_dataset(records: Sequence, seed: int, sizes: tuple[int, int, int]):
    """Seeded shuffle, then consecutive train/valid/test slices of the given sizes."""
    if any(s < 0 for s in sizes) or sum(sizes) > len(records):
        raise ContractError(f"split sizes {sizes} need more than {len(records)} records")
    order = np.random.default_rng(seed).permutation(len(records))
    out, start = [], 0
    for s in sizes:
        out.append([records[i] for i in order[start:start + s]])
        start += s
    return tuple(out)


def _coerce_rating(value):
    if isinstance(value, bool):
        raise TypeError("boolean rating")
    if isinstance(value, str):
        value = float(value)
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, (int, float)):
        return value
    raise TypeError(f"rating of type {type(value).__name__}")


def read_jsonl(path, field_map: Optional[dict] = None, stats: Optional[dict] = None) -> Iterator[RawRecord]:
    """Yield records from a JSON-lines file, skipping malformed lines.

    Raises DataFormatError once the whole file has been read if more than
    half the lines were malformed.
    """
    fields = {**DEFAULT_FIELDS, **(field_map or {})}
    stats = stats if stats is not None else {}
    stats.setdefault("lines", 0)
    stats.setdefault("malformed", 0)
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            stats["lines"] += 1
            try:
                obj = json.loads(line)
                review = obj[fields["review"]]
                summary = obj[fields["summary"]]
                rating = _coerce_rating(obj[fields["rating"]])
                if not isinstance(review, str) or not isinstance(summary, str):
                    raise TypeError("non-string text")
                if not review.strip() or not summary.strip():
                    raise ValueError("empty text")
            except (ValueError, KeyError, TypeError) as exc:
                stats["malformed"] += 1
                logger.warning("skipping malformed line %d: %s", stats["lines"], exc)
                continue
            yield RawRecord(review, summary, rating)
    if stats["lines"] and stats["malformed"] * 2 > stats["lines"]:
        raise DataFormatError(f"{stats['malformed']} of {stats['lines']} lines malformed in {path}")


def tokenize_record(raw: RawRecord) -> TokenizedRecord:
    return TokenizedRecord(tokenize(raw.review_text), normalize_summary(tokenize(raw.summary_text)),
                           raw.rating)


def corpus_stats(train: Sequence[TokenizedRecord], counts: dict[str, int], num_classes: int) -> dict:
    """Dataset summary: split sizes, mean lengths, copy ratio, rating shares."""
    n = len(train)
    rl = sum(len(r.review) for r in train)
    sl = sum(len(r.summary) for r in train)
    copied = sum(sum(w in set(r.review) for w in r.summary) for r in train)
    hist = Counter(int(r.rating) for r in train)
    return {
        "counts": dict(counts),
        "avg_review_len": rl / n if n else 0.0,
        "avg_summary_len": sl / n if n else 0.0,
        "copy_ratio": copied / sl if sl else 0.0,
        "rating_share": {str(k): hist.get(k, 0) / n if n else 0.0 for k in range(1, num_classes + 1)},
    }


def format_stats(stats: dict) -> str:
    c = stats["counts"]
    ratings = "  ".join(f"{k}:{v:6.1%}" for k, v in stats["rating_share"].items())
    return "\n".join([
        f"train {c.get('train', 0)}  valid {c.get('valid', 0)}  test {c.get('test', 0)}",
        f"avg review length {stats['avg_review_len']:.1f}  avg summary length {stats['avg_summary_len']:.1f}",
        f"copy ratio {stats['copy_ratio']:.1%}",
        f"ratings {ratings}",
    ])
