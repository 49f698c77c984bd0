"""Character vocabulary shared by the LM and the CTC head."""

from __future__ import annotations

from typing import Iterable, Sequence

from .errors import VocabError

CONTEXT_OPEN = "<CONTEXT>"
CONTEXT_CLOSE = "</CONTEXT>"
TRANSCRIPT_OPEN = "<TRANSCRIPT>"
TRANSCRIPT_CLOSE = "</TRANSCRIPT>"
TAGS = (CONTEXT_OPEN, CONTEXT_CLOSE, TRANSCRIPT_OPEN, TRANSCRIPT_CLOSE)

CHARACTERS = " abcdefghijklmnopqrstuvwxyz':,.-"


class Vocabulary:
    """Tag tokens take ids 0-3; characters follow in ``CHARACTERS`` order.

    Tags are atomic entries: encoding ordinary text never produces them,
    even if the text spells ``<CONTEXT>`` out (``<`` is not a character).
    """

    def __init__(self, characters: str = CHARACTERS):
        self.tokens = list(TAGS) + list(characters)
        self.characters = characters
        self._index = {tok: i for i, tok in enumerate(self.tokens)}
        self.context_open, self.context_close, self.transcript_open, self.transcript_close = range(4)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def tag_ids(self) -> tuple[int, int, int, int]:
        return (0, 1, 2, 3)

    def check(self, text: str) -> None:
        bad = [c for c in text if c not in self.characters]
        if bad:
            raise VocabError(bad)

    def encode(self, text: str) -> list[int]:
        self.check(text)
        return [self._index[c] for c in text]

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.tokens[i] for i in ids)

    def text_only(self, ids: Sequence[int]) -> str:
        return "".join(self.tokens[i] for i in ids if i >= 4)

    def id(self, token: str) -> int:
        return self._index[token]


DEFAULT_VOCAB = Vocabulary()
