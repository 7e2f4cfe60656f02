"""Dataset container file and padded batches.

Dataset file layout (all integers little-endian)::

    8 bytes   magic b"DVDATA\\0\\0"
    uint32    format version (1)
    uint64    header length N
    N bytes   UTF-8 JSON header: {"vocab": [...], "hp_digest": str,
              "counts": {"train": n, "valid": n, "test": n}, "stats": {...}}
    body      for each split in order train, valid, test and each example:
              uint32 length M, then M bytes of compact sorted-key JSON
              (see Example.to_dict)
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .text import BOS_ID, PAD_ID, UNK_ID, Example, Vocabulary, split_dataset

MAGIC = b"DVDATA\0\0"
VERSION = 1
SPLITS = ("train", "valid", "test")


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    vocab: Vocabulary
    train: list[Example]
    valid: list[Example]
    test: list[Example]
    hp_digest: str = ""
    stats: dict | None = None

    def split(self, name: str) -> list[Example]:
        return getattr(self, name)


def _dump(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def save_dataset(ds: Dataset, path) -> None:
    header = {
        "vocab": ds.vocab.itos,
        "hp_digest": ds.hp_digest,
        "counts": {s: len(ds.split(s)) for s in SPLITS},
        "stats": ds.stats or {},
    }
    hb = _dump(header)
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(hb)))
        fh.write(hb)
        for s in SPLITS:
            for ex in ds.split(s):
                b = _dump(ex.to_dict())
                fh.write(struct.pack("<I", len(b)))
                fh.write(b)


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise DatasetFormatError(f"{path} is not a dataset file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    pos = 20
    header = json.loads(data[pos:pos + hlen])
    pos += hlen
    splits = {}
    for s in SPLITS:
        items = []
        for _ in range(header["counts"][s]):
            (m,) = struct.unpack_from("<I", data, pos)
            pos += 4
            items.append(Example.from_dict(json.loads(data[pos:pos + m])))
            pos += m
        splits[s] = items
    if pos != len(data):
        raise DatasetFormatError(f"{len(data) - pos} trailing bytes in {path}")
    return Dataset(Vocabulary(header["vocab"]), splits["train"], splits["valid"], splits["test"],
                   header.get("hp_digest", ""), header.get("stats"))


@dataclass
class Batch:
    """Padded arrays for a list of examples. Labels are 0-based here."""

    src: np.ndarray          # (B, L) fixed-vocab ids, UNK for OOV
    src_ext: np.ndarray      # (B, L) copy-extended ids
    src_mask: np.ndarray     # (B, L) bool
    dec_in: np.ndarray       # (B, T) BOS + gold prefix, fixed-vocab ids
    tgt: np.ndarray          # (B, T) fixed-vocab gold ids
    tgt_ext: np.ndarray      # (B, T) copy-extended gold ids
    tgt_mask: np.ndarray     # (B, T) bool
    labels: np.ndarray       # (B,)
    n_oov: int
    examples: list[Example]

    def __len__(self) -> int:
        return len(self.examples)


def make_batch(examples: Sequence[Example], targets: Sequence[Sequence[int]] | None = None,
               vocab_size: int | None = None) -> Batch:
    """Pad ``examples`` into arrays.

    ``targets`` swaps in other copy-extended target sequences (e.g. generated
    summaries) while keeping each example's source; ``vocab_size`` is then
    needed to map extended ids back to UNK for the decoder input.
    """
    if not examples:
        raise ValueError("empty batch")
    B = len(examples)
    L = max(len(e.src_ids) for e in examples)
    if targets is None:
        pairs = [(e.tgt_ids, e.tgt_ext_ids) for e in examples]
    else:
        if vocab_size is None:
            raise ValueError("vocab_size is required with substitute targets")
        pairs = [([i if i < vocab_size else UNK_ID for i in t], list(t)) for t in targets]
    T = max(len(t) for t, _ in pairs)
    src = np.full((B, L), PAD_ID, dtype=np.int64)
    src_ext = np.full((B, L), PAD_ID, dtype=np.int64)
    src_mask = np.zeros((B, L), dtype=bool)
    dec_in = np.full((B, T), PAD_ID, dtype=np.int64)
    tgt = np.full((B, T), PAD_ID, dtype=np.int64)
    tgt_ext = np.full((B, T), PAD_ID, dtype=np.int64)
    tgt_mask = np.zeros((B, T), dtype=bool)
    for b, (e, (t, te)) in enumerate(zip(examples, pairs)):
        n = len(e.src_ids)
        src[b, :n] = e.src_ids
        src_ext[b, :n] = e.src_ext_ids
        src_mask[b, :n] = True
        m = len(t)
        tgt[b, :m] = t
        tgt_ext[b, :m] = te
        tgt_mask[b, :m] = True
        dec_in[b, 0] = BOS_ID
        dec_in[b, 1:m] = t[: m - 1]
    labels = np.array([e.label - 1 for e in examples], dtype=np.int64)
    n_oov = max(len(e.oov_words) for e in examples)
    return Batch(src, src_ext, src_mask, dec_in, tgt, tgt_ext, tgt_mask, labels, n_oov, list(examples))


def iterate_batches(examples: Sequence[Example], batch_size: int, rng: np.random.Generator | None = None):
    order = np.arange(len(examples)) if rng is None else rng.permutation(len(examples))
    for i in range(0, len(order), batch_size):
        yield make_batch([examples[j] for j in order[i:i + batch_size]])


def prepare_dataset(raw_records, hp, seed: int = 0, valid_size: int | None = None,
                    test_size: int | None = None, workers: int = 1) -> tuple[Dataset, dict]:
    """Tokenize, filter, split, build the vocabulary and encode.

    Split sizes default to 5% of the kept records each. Returns the dataset
    and a report with rejection counts and corpus statistics. ``workers`` > 1
    tokenizes in that many processes; the result does not depend on it.
    """
    from .text import DataFormatError, build_vocab, corpus_stats, filter_record, make_example, tokenize_record

    raw_records = list(raw_records)
    if workers > 1 and len(raw_records) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            tokenized = list(pool.map(tokenize_record, raw_records, chunksize=256))
    else:
        tokenized = [tokenize_record(raw) for raw in raw_records]
    kept, rejected = [], {}
    n_raw = len(raw_records)
    for rec in tokenized:
        reason = filter_record(rec, hp.num_classes)
        if reason is None:
            kept.append(rec)
        else:
            rejected[reason] = rejected.get(reason, 0) + 1
    if not kept:
        raise DataFormatError(f"no usable records among {n_raw} (rejected: {rejected})")
    n = len(kept)
    valid_size = n // 20 if valid_size is None else valid_size
    test_size = n // 20 if test_size is None else test_size
    train, valid, test = split_dataset(kept, seed, (n - valid_size - test_size, valid_size, test_size))
    vocab = build_vocab(train, hp.vocab_cap)

    def enc(split, name):
        return [make_example(r, vocab, hp.max_src_len, hp.max_tgt_len, uid=f"{name}-{i}")
                for i, r in enumerate(split)]

    counts = {"train": len(train), "valid": len(valid), "test": len(test)}
    stats = corpus_stats(train, counts, hp.num_classes)
    stats["raw_records"] = n_raw
    stats["rejected"] = dict(sorted(rejected.items()))
    stats["vocab_size"] = len(vocab)
    stats["num_classes"] = hp.num_classes
    ds = Dataset(vocab, enc(train, "train"), enc(valid, "valid"), enc(test, "test"), hp.digest(), stats)
    return ds, stats
