import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from timelinegpt.codec.sequence import TokenSequence
from timelinegpt.codec.tokens import MAX_ATT_DAYS, PAD, SPECIAL_TOKENS, TokenClass, token_class
from timelinegpt.util import atomic_write_text, sha256_bytes


@dataclass(frozen=True)
class ExpansionReport:
    added: int
    duplicates: int


class Vocabulary:
    """
    A dense bijection between token surface forms and ids 0..N-1 with the class of every id.
    The special tokens come first, then D0..D1080 by day, then every other token in lexicographic order.
    """

    def __init__(self, tokens: Sequence[str], frozen: bool = True):
        tokens = list(tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("Vocabulary tokens must be unique.")
        missing = [t for t in SPECIAL_TOKENS if t not in tokens]
        if missing:
            raise ValueError(f"Vocabulary is missing special token [{missing[0]}].")
        self._tokens: Tuple[str, ...] = tuple(tokens)
        self._ids: Dict[str, int] = {t: i for i, t in enumerate(tokens)}
        self._classes: Tuple[TokenClass, ...] = tuple(token_class(t) for t in tokens)
        self.frozen = frozen

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def __hash__(self):
        return hash(self._tokens)

    @property
    def tokens(self) -> Tuple[str, ...]:
        return self._tokens

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    def token_id(self, token: str) -> int:
        token_id = self._ids.get(token)
        if token_id is None:
            raise KeyError(f"Token [{token}] is not in the vocabulary.")
        return token_id

    def token(self, token_id: int) -> str:
        return self._tokens[token_id]

    def token_class(self, token_id: int) -> TokenClass:
        return self._classes[token_id]

    def ids_of_class(self, *classes: TokenClass) -> List[int]:
        return [i for i, c in enumerate(self._classes) if c in classes]

    def encode(self, tokens: Iterable[str], skip_unknown: bool = False) -> List[int]:
        """
        Maps tokens to ids.

        :param tokens: the token surface forms
        :param skip_unknown: drop out-of-vocabulary tokens instead of raising a KeyError
        :return: the id list
        """
        if skip_unknown:
            return [self._ids[t] for t in tokens if t in self._ids]
        return [self.token_id(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self._tokens[int(i)] for i in ids]

    def to_text(self) -> str:
        return "".join(f"{i}\t{t}\t{c.value}\n" for i, (t, c) in enumerate(zip(self._tokens, self._classes)))

    def sha256(self) -> str:
        return sha256_bytes(self.to_text().encode("utf-8"))

    def save(self, path):
        atomic_write_text(path, self.to_text())
        logging.info("Saved vocabulary size=%d path=%s sha256=%s", len(self), path, self.sha256())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Vocabulary file not found: {path}")
        tokens = []
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh):
                if not line.strip():
                    continue
                fields = line.rstrip("\n").split("\t")
                if len(fields) != 3 or int(fields[0]) != len(tokens):
                    raise ValueError(f"Malformed vocabulary line {line_no + 1} in {path}.")
                if token_class(fields[1]).value != fields[2]:
                    raise ValueError(f"Token [{fields[1]}] has class [{fields[2]}], "
                                     f"expected [{token_class(fields[1]).value}].")
                tokens.append(fields[1])
        return cls(tokens, frozen=True)


def _base_tokens() -> List[str]:
    return list(SPECIAL_TOKENS) + [f"D{d}" for d in range(MAX_ATT_DAYS + 1)]


def build_vocabulary(corpus: Iterable[TokenSequence]) -> Vocabulary:
    """
    Builds the vocabulary of a corpus. Ids depend only on the set of observed tokens, not on the corpus order.

    :param corpus: the encoded sequences, at least one
    :return: a frozen Vocabulary
    """
    observed = set()
    n_sequences = 0
    for seq in corpus:
        observed.update(seq.tokens)
        n_sequences += 1
    if n_sequences == 0:
        raise ValueError("Cannot build a vocabulary from an empty corpus.")
    base = _base_tokens()
    base_set = set(base)
    for token in observed:
        token_class(token)
    tokens = base + sorted(observed - base_set)
    logging.info("Built vocabulary size=%d sequences=%d", len(tokens), n_sequences)
    return Vocabulary(tokens, frozen=True)


def expand_vocabulary(vocab: Vocabulary, new_tokens: Iterable[str]) -> Tuple[Vocabulary, ExpansionReport]:
    """
    Appends new tokens to a frozen vocabulary, leaving every existing id untouched. Tokens already present are
    skipped and counted as duplicates.
    """
    if not vocab.frozen:
        raise RuntimeError("Only a frozen vocabulary can be expanded.")
    tokens = list(vocab.tokens)
    seen = set(tokens)
    added = duplicates = 0
    for token in new_tokens:
        if token in seen:
            duplicates += 1
            continue
        token_class(token)
        tokens.append(token)
        seen.add(token)
        added += 1
    logging.info("Expanded vocabulary added=%d duplicates=%d size=%d", added, duplicates, len(tokens))
    return Vocabulary(tokens, frozen=True), ExpansionReport(added=added, duplicates=duplicates)
