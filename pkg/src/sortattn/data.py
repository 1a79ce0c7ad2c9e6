"""Deterministic datasets: two synthetic tasks and an IDX image loader.

Every generator is a pure function of its seed. Token id 0 is reserved
for the encoder's classification slot, so the synthetic tasks draw
content tokens from 1..vocab-1. IDX pixel sequences keep raw byte
values 0..255 as token ids; a black pixel then shares embedding row 0
with the classification slot, which is harmless because readout is
positional, not content-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """A byte stream does not follow the declared binary layout."""


class Rng:
    """Splittable counter-based random stream (Philox) with explicit 64-bit seed.

    ``split(key)`` derives an independent child stream; the (seed, path)
    pair fully determines every draw, so parallel consumers can share a
    root seed without sharing state.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = _path
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=_path)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def split(self, key: int) -> "Rng":
        return Rng(self.seed, self.path + (int(key),))

    def integers(self, *args, **kwargs):
        return self.generator.integers(*args, **kwargs)

    def standard_normal(self, *args, **kwargs):
        return self.generator.standard_normal(*args, **kwargs)

    def permutation(self, *args, **kwargs):
        return self.generator.permutation(*args, **kwargs)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"


@dataclass
class LabeledSequence:
    tokens: np.ndarray
    label: int

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.label = int(self.label)


# Planted-majority boost: probability mass given to the majority token.
_MAJORITY_BOOST = 0.3


def gen_multiset_majority(
    seed: int, n_samples: int, seq_len: int, vocab: int, n_classes: int
) -> list[LabeledSequence]:
    """Bags of tokens with a planted majority; label = top token id mod n_classes.

    The planted class is drawn uniformly so labels are balanced. Samples
    whose token counts end in a tie for the maximum are regenerated, so
    the label is always a strict majority decision that simple
    recounting reproduces.
    """
    if seq_len < 1 or n_samples < 0:
        raise ValueError("need seq_len >= 1 and n_samples >= 0")
    ids = np.arange(1, vocab)  # id 0 is the reserved classification slot
    if n_classes < 2 or n_classes > vocab:
        raise ValueError(f"need 2 <= n_classes <= vocab, got {n_classes} and {vocab}")
    class_pools = [ids[ids % n_classes == c] for c in range(n_classes)]
    if any(len(pool) == 0 for pool in class_pools):
        raise ValueError(
            f"no token id in 1..{vocab - 1} maps to every class mod {n_classes}; "
            "increase vocab"
        )
    g = Rng(seed).generator
    out = []
    for _ in range(n_samples):
        while True:
            planted = int(g.choice(class_pools[int(g.integers(n_classes))]))
            probs = np.full(len(ids), (1.0 - _MAJORITY_BOOST) / (len(ids) - 1))
            probs[planted - 1] = _MAJORITY_BOOST
            tokens = g.choice(ids, size=seq_len, p=probs)
            counts = np.bincount(tokens, minlength=vocab)
            top = counts.max()
            if (counts == top).sum() == 1:
                break
        out.append(LabeledSequence(tokens=tokens, label=int(np.argmax(counts)) % n_classes))
    return out


# listops token ids; id 0 stays reserved for the classification slot.
PAD = 1
OPEN = 2
CLOSE = 3
OP_MAX = 4
OP_MIN = 5
OP_MED = 6
DIGIT_BASE = 7
LISTOPS_VOCAB = DIGIT_BASE + 10

_OP_NAMES = {OP_MAX: "MAX", OP_MIN: "MIN", OP_MED: "MED"}


def _listops_value(op: int, vals: list[int]) -> int:
    if op == OP_MAX:
        return max(vals)
    if op == OP_MIN:
        return min(vals)
    # floor median; for an even count, floor of the mean of the middle two
    s = sorted(vals)
    k = len(s)
    return s[k // 2] if k % 2 else (s[k // 2 - 1] + s[k // 2]) // 2


def gen_listops_lite(
    seed: int, n_samples: int, max_depth: int, max_len: int
) -> list[LabeledSequence]:
    """Nested prefix expressions over digits with MAX/MIN/MED, front-padded.

    Expressions serialize as bracketed prefix token lists, e.g.
    [MAX 2 [MIN 5 3] 9]; the label is the evaluated digit. Sequences are
    padded to ``max_len`` with the pad token before the expression.
    """
    if not 1 <= max_depth <= 3:
        raise ValueError(f"max_depth must be in 1..3, got {max_depth}")
    if not 5 <= max_len <= 64:
        raise ValueError(f"max_len must be in 5..64, got {max_len}")
    g = Rng(seed).generator

    def build(depth_left: int) -> tuple[list[int], int]:
        if depth_left == 0 or g.random() < 0.25:
            d = int(g.integers(10))
            return [DIGIT_BASE + d], d
        op = int(g.choice([OP_MAX, OP_MIN, OP_MED]))
        arity = int(g.integers(2, 4))
        tokens, vals = [OPEN, op], []
        for _ in range(arity):
            t, v = build(depth_left - 1)
            tokens.extend(t)
            vals.append(v)
        tokens.append(CLOSE)
        return tokens, _listops_value(op, vals)

    out = []
    for _ in range(n_samples):
        while True:
            # a bare digit is rare but legal as a whole expression
            if g.random() < 0.02:
                d = int(g.integers(10))
                tokens, value = [DIGIT_BASE + d], d
            else:
                tokens, value = build(max_depth)
            if len(tokens) <= max_len:
                break
        padded = np.full(max_len, PAD, dtype=np.int64)
        padded[max_len - len(tokens):] = tokens
        out.append(LabeledSequence(tokens=padded, label=value))
    return out


def listops_decode(tokens) -> str:
    """Human-readable form of a listops token sequence (padding dropped)."""
    words = []
    for t in np.asarray(tokens):
        t = int(t)
        if t == PAD:
            continue
        if t == OPEN:
            words.append("[")
        elif t == CLOSE:
            words.append("]")
        elif t in _OP_NAMES:
            words.append(_OP_NAMES[t])
        else:
            words.append(str(t - DIGIT_BASE))
    return " ".join(words)


_IDX_LABEL_MAGIC = 0x00000801
_IDX_IMAGE_MAGIC = 0x00000803


def read_idx(path) -> np.ndarray:
    """Read one IDX file: big-endian magic, dimension sizes, uint8 payload.

    Magic 0x00000801 is a label vector (1 dimension), 0x00000803 an
    image tensor (3 dimensions). Anything else is a FormatError naming
    the observed magic; so is a payload shorter than the header promises.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated before the 4-byte magic")
    magic = int.from_bytes(raw[0:4], "big")
    if magic == _IDX_LABEL_MAGIC:
        ndim = 1
    elif magic == _IDX_IMAGE_MAGIC:
        ndim = 3
    else:
        raise FormatError(f"{path}: unrecognized magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated inside the dimension header")
    dims = [int.from_bytes(raw[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim)]
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + count:
        raise FormatError(
            f"{path}: payload truncated, expected {count} bytes, found {len(raw) - header}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header, count=count).reshape(dims)


def load_idx(images_path, labels_path, limit: int | None = None) -> list[LabeledSequence]:
    """Pair an IDX image tensor with an IDX label vector, row-major pixel sequences."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected an image tensor (3 dimensions)")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: expected a label vector (1 dimension)")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}"
        )
    n = images.shape[0] if limit is None else min(int(limit), images.shape[0])
    return [
        LabeledSequence(tokens=images[i].reshape(-1).astype(np.int64), label=int(labels[i]))
        for i in range(n)
    ]


def batch_iterator(data: list[LabeledSequence], batch_size: int, seed: int):
    """Yield (tokens, labels) batches in a seeded shuffle; last batch may be short."""
    if not data:
        raise ValueError("batch_iterator: empty dataset")
    if batch_size < 1:
        raise ValueError(f"batch_iterator: batch_size must be >= 1, got {batch_size}")
    order = Rng(seed).generator.permutation(len(data))
    for start in range(0, len(data), batch_size):
        chunk = order[start:start + batch_size]
        tokens = np.stack([data[i].tokens for i in chunk])
        labels = np.array([data[i].label for i in chunk], dtype=np.int64)
        yield tokens, labels
