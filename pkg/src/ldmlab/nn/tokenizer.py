"""Word/punctuation tokenizer over a closed vocabulary with a hard token limit."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..errors import PromptTooLongError

_TOKEN_RE = re.compile(r"<[^<>\s]+>|[a-z0-9]+|[^\sa-z0-9]")

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")
PUNCTUATION = (".", ",", "-", ":", ";", "(", ")", "/", "'", "%", "?", "!")


@dataclass
class TokenizerSpec:
    vocabulary: dict[str, int]
    max_tokens: int = 77
    pad_id: int = 0
    begin_id: int = 1
    end_id: int = 2
    unk_id: int = 3
    id_to_token: list[str] = field(init=False, repr=False)

    def __post_init__(self):
        self.id_to_token = [None] * len(self.vocabulary)
        for tok, i in self.vocabulary.items():
            self.id_to_token[i] = tok

    @classmethod
    def from_words(cls, words, max_tokens=77):
        vocab = {}
        for tok in (*SPECIAL_TOKENS, *PUNCTUATION, *words):
            vocab.setdefault(tok, len(vocab))
        return cls(vocab, max_tokens=max_tokens)

    @classmethod
    def default(cls, max_tokens=77):
        from ..data.grammar import vocabulary_words

        return cls.from_words(vocabulary_words(), max_tokens=max_tokens)

    @property
    def vocab_size(self):
        return len(self.vocabulary)

    def add_token(self, token):
        if token in self.vocabulary:
            raise ValueError(f"token {token!r} already in vocabulary")
        self.vocabulary[token] = len(self.vocabulary)
        self.id_to_token.append(token)
        return self.vocabulary[token]

    def copy(self):
        return TokenizerSpec(dict(self.vocabulary), self.max_tokens, self.pad_id,
                             self.begin_id, self.end_id, self.unk_id)


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def count_tokens(text: str, spec: TokenizerSpec | None = None) -> int:
    """Token count including the begin and end markers."""
    return len(split_words(text)) + 2


def tokenize(text: str, spec: TokenizerSpec) -> list[int]:
    """Encode to ``[begin, *body, end]``; raises instead of truncating."""
    body = [spec.vocabulary.get(w, spec.unk_id) for w in split_words(text)]
    ids = [spec.begin_id, *body, spec.end_id]
    if len(ids) > spec.max_tokens:
        raise PromptTooLongError(len(ids), spec.max_tokens, text)
    return ids


def pad_ids(ids: list[int], spec: TokenizerSpec) -> list[int]:
    return ids + [spec.pad_id] * (spec.max_tokens - len(ids))
