"""Vocabulary construction, tokenization, and subword decomposition tables."""

import hashlib
from collections import Counter

from .errors import DataError, SpecError

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
RESERVED_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
N_RESERVED = len(RESERVED_TOKENS)

TOKENIZE_MODES = ("space", "char")


def tokenize(text, mode="space"):
    """Split text into tokens: by whitespace, or per non-space character."""
    if mode == "space":
        return text.split()
    if mode == "char":
        return [c for c in text if not c.isspace()]
    raise SpecError(f"unknown tokenization mode {mode!r}, expected one of {TOKENIZE_MODES}")


class Vocabulary:
    """Bidirectional token<->id map with the five reserved tokens pinned to 0-4."""

    def __init__(self, tokens=(), counts=None):
        self.id_to_token = list(RESERVED_TOKENS)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        self.counts = dict(counts or {})
        for tok in tokens:
            if tok in self.token_to_id:
                raise DataError(f"duplicate token {tok!r} in vocabulary")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def get(self, token):
        """Token id, or [UNK] when out of vocabulary."""
        return self.token_to_id.get(token, UNK)

    def ids(self, tokens):
        t2i = self.token_to_id
        return [t2i.get(t, UNK) for t in tokens]

    def token(self, idx):
        return self.id_to_token[idx]

    @classmethod
    def build(cls, lines, min_count=1, mode="space"):
        """Count tokens over a line stream and keep those with count >= min_count.

        Non-reserved ids are assigned by descending count, lexicographic
        tie-break, which makes the build reproducible. An empty corpus
        yields the reserved tokens only.
        """
        if min_count < 1:
            raise SpecError(f"min_count must be >= 1, got {min_count}")
        counts = Counter()
        for line in lines:
            counts.update(tokenize(line, mode))
        for tok in RESERVED_TOKENS:
            counts.pop(tok, None)
        kept = [(t, c) for t, c in counts.items() if c >= min_count]
        kept.sort(key=lambda tc: (-tc[1], tc[0]))
        return cls([t for t, _ in kept], counts={t: c for t, c in kept})

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            toks = [line.rstrip("\n") for line in fh]
        while toks and toks[-1] == "":
            toks.pop()
        if toks[:N_RESERVED] != RESERVED_TOKENS:
            raise DataError(
                f"vocabulary file {path} must start with the reserved tokens "
                f"{RESERVED_TOKENS}, found {toks[:N_RESERVED]}"
            )
        return cls(toks[N_RESERVED:])

    def content_hash(self):
        payload = "\n".join(self.id_to_token).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


SUB_PAD, SUB_UNK = 0, 1


class SubwordTable:
    """Maps each token to an ordered list of subword-unit ids.

    The default decomposition is per-character; reserved tokens decompose to
    a single dedicated unit ([PAD] to the pad unit itself). User-supplied
    tables (radicals, pinyin, ...) are loaded from a two-column text file
    and fall back to characters for absent tokens.
    """

    def __init__(self, vocab, entries=None):
        entries = entries or {}
        units = ["<spad>", "<sunk>"]
        unit_ids = {"<spad>": SUB_PAD, "<sunk>": SUB_UNK}

        def intern(unit):
            if unit not in unit_ids:
                unit_ids[unit] = len(units)
                units.append(unit)
            return unit_ids[unit]

        for tok in RESERVED_TOKENS:
            intern(tok)
        for tok in vocab.id_to_token:
            for sub in entries.get(tok, ()):
                intern(sub)
            if tok not in entries and tok not in RESERVED_TOKENS:
                for ch in tok:
                    intern(ch)

        self.units = units
        self.unit_to_id = unit_ids
        self._by_token = {}
        for tok in vocab.id_to_token:
            if tok == "[PAD]":
                subs = [SUB_PAD]
            elif tok in RESERVED_TOKENS:
                subs = [unit_ids[tok]]
            elif tok in entries:
                subs = [unit_ids[s] for s in entries[tok]]
            else:
                subs = [unit_ids.get(ch, SUB_UNK) for ch in tok]
            if not subs:
                subs = [SUB_UNK]
            self._by_token[tok] = subs
        self.by_id = [self._by_token[t] for t in vocab.id_to_token]

    def __len__(self):
        return len(self.units)

    def decompose(self, token):
        """Subword ids for a token: table entry, else per-character fallback."""
        if not token:
            raise DataError("cannot decompose an empty token")
        subs = self._by_token.get(token)
        if subs is not None:
            return list(subs)
        return [self.unit_to_id.get(ch, SUB_UNK) for ch in token]

    @property
    def max_len(self):
        return max(len(s) for s in self.by_id)

    @classmethod
    def load(cls, path, vocab):
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[1].strip():
                    raise DataError(
                        f"{path}:{lineno}: expected '<token>\\t<sub1> <sub2> ...'"
                    )
                entries[parts[0]] = parts[1].split()
        return cls(vocab, entries)
