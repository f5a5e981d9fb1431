"""Target-side text normalization and tokenization (chars, words, BPE).

BPE uses the classic convention: the end-of-word marker ``</w>`` is attached
to a word's final character before any merging, learning greedily merges the
most frequent adjacent symbol pair (word-frequency weighted, ties broken by
lexicographically smallest pair), and application replays merges by learned
priority until none applies.
"""

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import ParseError, ValidationError

EOW = "</w>"
WORD_BOUNDARY = "<wb>"
PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)
UNITS = ("chars", "words", "bpe")


def normalize_target(text: str) -> str:
    """Lowercase, drop punctuation except apostrophes, collapse whitespace."""
    text = text.replace("’", "'").lower()
    kept = [ch for ch in text
            if ch == "'" or not unicodedata.category(ch).startswith("P")]
    return " ".join("".join(kept).split())


@dataclass
class MergeTable:
    merges: list[tuple[str, str]]

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise ValidationError("merge table contains duplicate pairs")

    @property
    def num_merges(self) -> int:
        return len(self.merges)


def _word_symbols(word: str) -> tuple[str, ...]:
    if not word:
        raise ValidationError("cannot segment an empty word")
    if len(word) == 1:
        return (word + EOW,)
    return tuple(word[:-1]) + (word[-1] + EOW,)


def _merge_pair(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    a, b = pair
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def bpe_learn(corpus: Iterable[str], num_merges: int) -> MergeTable:
    """Learn merges from normalized text, most frequent pair first."""
    if num_merges < 0:
        raise ValidationError("num_merges must be non-negative")
    word_counts = Counter(w for line in corpus for w in line.split())
    vocab: dict[tuple[str, ...], int] = {
        _word_symbols(w): c for w, c in word_counts.items()}
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pairs: Counter = Counter()
        for syms, count in vocab.items():
            for a, b in zip(syms, syms[1:]):
                pairs[(a, b)] += count
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        vocab = {_merge_pair(syms, best): count for syms, count in vocab.items()}
    return MergeTable(merges)


def bpe_apply(word: str, merges: MergeTable) -> list[str]:
    """Segment one normalized word using learned merges."""
    symbols = _word_symbols(word)
    if not merges.merges:
        return list(symbols)
    rank = {p: i for i, p in enumerate(merges.merges)}
    while len(symbols) > 1:
        present = set(zip(symbols, symbols[1:]))
        ranks = [rank[p] for p in present if p in rank]
        if not ranks:
            break
        symbols = _merge_pair(symbols, merges.merges[min(ranks)])
    return list(symbols)


@dataclass
class VocabSpec:
    unit: str
    token_to_id: dict[str, int]
    merge_table: Optional[MergeTable] = None
    id_to_token: list[str] = field(init=False, repr=False)

    def __post_init__(self):
        if self.unit not in UNITS:
            raise ValidationError(f"unit must be one of {UNITS}, got '{self.unit}'")
        if self.unit == "bpe" and self.merge_table is None:
            raise ValidationError("bpe unit requires a merge table")
        for tok in RESERVED:
            if tok not in self.token_to_id:
                raise ValidationError(f"vocabulary is missing reserved token '{tok}'")
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(self.token_to_id))):
            raise ValidationError("token ids must be dense from 0 and unique")
        self.id_to_token = [""] * len(self.token_to_id)
        for tok, i in self.token_to_id.items():
            self.id_to_token[i] = tok

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]


def _text_tokens(text: str, unit: str, merges: Optional[MergeTable]) -> list[str]:
    words = text.split()
    if unit == "words":
        return words
    if unit == "chars":
        tokens: list[str] = []
        for w, word in enumerate(words):
            if w > 0:
                tokens.append(WORD_BOUNDARY)
            tokens.extend(word)
        return tokens
    assert merges is not None
    tokens = []
    for word in words:
        tokens.extend(bpe_apply(word, merges))
    return tokens


def build_vocab(corpus: Iterable[str], unit: str,
                merge_table: Optional[MergeTable] = None) -> VocabSpec:
    """Build a VocabSpec from normalized text; token order is sorted for
    reproducibility, after the reserved tokens (and <wb> in chars mode)."""
    if unit not in UNITS:
        raise ValidationError(f"unit must be one of {UNITS}, got '{unit}'")
    seen: set[str] = set()
    for line in corpus:
        seen.update(_text_tokens(line, unit, merge_table))
    seen.discard(WORD_BOUNDARY)
    tokens = list(RESERVED) + ([WORD_BOUNDARY] if unit == "chars" else []) + sorted(seen)
    return VocabSpec(unit=unit,
                     token_to_id={t: i for i, t in enumerate(tokens)},
                     merge_table=merge_table)


def tokenize(text: str, spec: VocabSpec) -> list[int]:
    """Map normalized text to ids, wrapped in <s> ... </s>."""
    ids = [spec.bos_id]
    unk = spec.unk_id
    for tok in _text_tokens(text, spec.unit, spec.merge_table):
        ids.append(spec.token_to_id.get(tok, unk))
    ids.append(spec.eos_id)
    return ids


def detokenize(ids: Sequence[int], spec: VocabSpec) -> str:
    """Back to plain text; inverse of tokenize for chars and words modes."""
    tokens = [spec.id_to_token[i] for i in ids
              if spec.id_to_token[i] not in (BOS, EOS, PAD)]
    if spec.unit == "words":
        return " ".join(tokens)
    if spec.unit == "chars":
        return "".join(" " if t == WORD_BOUNDARY else t for t in tokens)
    return "".join(tokens).replace(EOW, " ").strip()


# ---------------------------------------------------------------------------
# File formats: merge table ("left right" per line), vocab (token per line)
# ---------------------------------------------------------------------------

def write_merge_table(path: str, table: MergeTable) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for a, b in table.merges:
            f.write(f"{a} {b}\n")


def read_merge_table(path: str) -> MergeTable:
    merges = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"merge table line {lineno}: expected 'left right'")
            merges.append((parts[0], parts[1]))
    return MergeTable(merges)


def write_vocab(path: str, spec: VocabSpec) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for tok in spec.id_to_token:
            f.write(tok + "\n")


def read_vocab(path: str, unit: str,
               merge_table: Optional[MergeTable] = None) -> VocabSpec:
    with open(path, encoding="utf-8") as f:
        tokens = [ln.rstrip("\n") for ln in f if ln.rstrip("\n")]
    return VocabSpec(unit=unit,
                     token_to_id={t: i for i, t in enumerate(tokens)},
                     merge_table=merge_table)
