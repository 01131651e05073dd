"""Corpus preparation: vocabularies, id encoding, batching, and sampling.

Everything here is a pure function over immutable inputs; random generators
are always passed in (as a seed or numpy Generator), never global.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, EmptyCorpusError, FeatureCountError

PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN = "<blank>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)

# U+FFE8 by default so corpora containing ASCII "|" survive untouched.
DEFAULT_FEATURE_SEP = "￨"

_ASCII_WS = re.compile(r"[ \t\r\n\f\v]+")


def tokenize(line: str) -> list[str]:
    """Split on runs of ASCII whitespace; never yields empty tokens."""
    return [t for t in _ASCII_WS.split(line) if t]


class Vocab:
    """Bidirectional token/id map with the four reserved ids 0..3."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocab":
        if tuple(itos[:4]) != SPECIALS:
            raise ConfigError("vocab", f"reserved tokens malformed: {itos[:4]}")
        v = cls()
        v.itos = list(itos)
        v.stoi = {t: i for i, t in enumerate(v.itos)}
        return v


def build_vocab(lines: Iterable[str], max_size: int, min_freq: int = 1) -> Vocab:
    """Count whitespace tokens and keep the most frequent ones.

    Ordering is (frequency descending, first occurrence ascending); the total
    size including the four specials never exceeds max_size. Tokens matching
    a reserved string are ignored rather than remapped.
    """
    if max_size < 4:
        raise ConfigError("max_size", f"must be >= 4 to hold reserved ids, got {max_size}")
    counts: Counter = Counter()
    first_seen: dict[str, int] = {}
    seen_any = False
    pos = 0
    for line in lines:
        seen_any = True
        for tok in tokenize(line):
            if tok in SPECIALS:
                continue
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = pos
            pos += 1
    if not seen_any:
        raise EmptyCorpusError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], first_seen[t]),
    )
    return Vocab(ranked[: max_size - len(SPECIALS)])


@dataclass
class Example:
    """One sentence pair in id space; the target is bracketed by BOS/EOS."""

    src_ids: list[int]
    src_feat_ids: list[list[int]] = field(default_factory=list)
    tgt_ids: list[int] = field(default_factory=list)


def split_token(token: str, num_features: int, sep: str, line_no: Optional[int] = None):
    """Split `word<sep>feat1<sep>...` and demand exactly num_features fields."""
    fields = token.split(sep) if num_features or sep in token else [token]
    if len(fields) != 1 + num_features:
        where = f"line {line_no}: " if line_no is not None else ""
        raise FeatureCountError(
            f"{where}token {fields[0]!r} has {len(fields) - 1} feature(s), "
            f"expected {num_features}"
        )
    return fields[0], fields[1:]


def encode_line(
    line: str,
    vocab: Vocab,
    feat_vocabs: Sequence[Vocab] = (),
    side: str = "src",
    sep: str = DEFAULT_FEATURE_SEP,
    line_no: Optional[int] = None,
):
    """Encode one sentence into word ids plus per-feature id streams.

    Out-of-vocabulary items map to UNK. Target lines get BOS/EOS brackets
    and never carry features.
    """
    num_features = len(feat_vocabs) if side == "src" else 0
    word_ids: list[int] = []
    feat_ids: list[list[int]] = [[] for _ in range(num_features)]
    for tok in tokenize(line):
        word, feats = split_token(tok, num_features, sep, line_no)
        word_ids.append(vocab.lookup(word))
        for k, f in enumerate(feats):
            feat_ids[k].append(feat_vocabs[k].lookup(f))
    if side == "tgt":
        return [BOS_ID] + word_ids + [EOS_ID]
    return word_ids, feat_ids


def decode_ids(ids: Sequence[int], vocab: Vocab, strip_specials: bool = True) -> list[str]:
    toks = [vocab.token(i) for i in ids]
    if strip_specials:
        toks = [t for t in toks if t not in (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN)]
    return toks


@dataclass
class Batch:
    """Padded id matrices for a group of examples, plus true lengths."""

    src: np.ndarray                 # [batch, max_src_len] int64
    src_lengths: np.ndarray         # [batch] int64
    src_feats: list[np.ndarray]     # one [batch, max_src_len] per feature
    tgt_in: np.ndarray              # [batch, max_tgt_len-1]
    tgt_out: np.ndarray             # [batch, max_tgt_len-1]
    ntokens: int                    # non-PAD entries of tgt_out
    indices: np.ndarray             # positions of the examples in the input list

    @property
    def size(self) -> int:
        return self.src.shape[0]


def _pad_matrix(rows: list[list[int]], width: int) -> np.ndarray:
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def make_batch(examples: Sequence[Example], indices: Sequence[int]) -> Batch:
    src_len = max(len(e.src_ids) for e in examples)
    num_features = len(examples[0].src_feat_ids)
    src = _pad_matrix([e.src_ids for e in examples], src_len)
    feats = [
        _pad_matrix([e.src_feat_ids[k] for e in examples], src_len)
        for k in range(num_features)
    ]
    # Decode-only examples carry no target; the shifted matrices are empty.
    tgt_width = max(max(len(e.tgt_ids) for e in examples) - 1, 0)
    tgt_in = _pad_matrix([e.tgt_ids[:-1] for e in examples], tgt_width)
    tgt_out = _pad_matrix([e.tgt_ids[1:] for e in examples], tgt_width)
    return Batch(
        src=src,
        src_lengths=np.array([len(e.src_ids) for e in examples], dtype=np.int64),
        src_feats=feats,
        tgt_in=tgt_in,
        tgt_out=tgt_out,
        ntokens=int((tgt_out != PAD_ID).sum()),
        indices=np.asarray(indices, dtype=np.int64),
    )


def make_batches(
    examples: Sequence[Example],
    batch_size: int,
    rng_seed=None,
) -> list[Batch]:
    """Sort by source length, group consecutively, then shuffle batch order.

    Sorting minimizes padding waste inside a batch; the shuffle (seeded, or
    skipped when rng_seed is None) decorrelates batch order across epochs.
    """
    if batch_size < 1:
        raise ConfigError("batch_size", f"must be >= 1, got {batch_size}")
    if not examples:
        return []
    order = sorted(range(len(examples)), key=lambda i: len(examples[i].src_ids))
    groups = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if rng_seed is not None:
        rng = np.random.default_rng(rng_seed)
        rng.shuffle(groups)
    return [make_batch([examples[i] for i in g], g) for g in groups]


def sample_dataset(
    examples: Sequence[Example], fraction: float, rng_seed
) -> list[Example]:
    """Uniform sample without replacement of ceil(fraction * N) examples."""
    if not (0.0 < fraction <= 1.0):
        raise ConfigError("sample_fraction", f"must be in (0, 1], got {fraction}")
    n = len(examples)
    k = int(np.ceil(fraction * n))
    rng = np.random.default_rng(rng_seed)
    picked = rng.permutation(n)[:k]
    return [examples[i] for i in picked]


@dataclass
class VocabBundle:
    """All vocabularies a model needs, plus the feature separator in force."""

    src: Vocab
    tgt: Vocab
    feats: list[Vocab] = field(default_factory=list)
    feature_sep: str = DEFAULT_FEATURE_SEP

    def to_json(self) -> dict:
        return {
            "src": self.src.to_list(),
            "tgt": self.tgt.to_list(),
            "feats": [v.to_list() for v in self.feats],
            "feature_sep": self.feature_sep,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VocabBundle":
        return cls(
            src=Vocab.from_list(obj["src"]),
            tgt=Vocab.from_list(obj["tgt"]),
            feats=[Vocab.from_list(v) for v in obj.get("feats", [])],
            feature_sep=obj.get("feature_sep", DEFAULT_FEATURE_SEP),
        )


@dataclass
class ParallelDataset:
    """Vocabularies plus encoded train/valid examples; the unit preprocess writes."""

    vocabs: VocabBundle
    train: list[Example]
    valid: list[Example]
