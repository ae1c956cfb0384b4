"""Minimal WordPiece tokenizer (uncased) over a locally built vocabulary.

The vocabulary is generated deterministically in-code: special tokens, a
common-word list (including the Cookie Theft content units), and full
character coverage with ## continuations, so every input tokenizes without
network access. Greedy longest-match-first, identical to the standard
WordPiece algorithm. Special tokens [CLS]/[SEP] are kept in the output.
"""

from __future__ import annotations

import re

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"

_COMMON_WORDS = """
the a an and or but of in on at to from with for is are was were be been
being have has had do does did will would can could he she it they them
his her its their there here this that these those what which who when
where how not no yes you i we me my your our one two three little big
boy girl mother woman man child children kitchen water sink jar cookie
cookies stool plate dish dishes curtain curtains window cabinet counter
floor garden outside take taking steal stealing fall falling wash washing
dry drying overflow overflowing reach reaching ask asking hand handing
stand standing wobble wobbling dry laugh see look go going run running
picture scene describe describing
""".split()

_CHARS = list("abcdefghijklmnopqrstuvwxyz0123456789'-")


def build_vocab() -> dict[str, int]:
    tokens = [PAD, UNK, CLS, SEP]
    seen = set(tokens)
    for w in _COMMON_WORDS + _CHARS + ["##" + c for c in _CHARS]:
        if w not in seen:
            seen.add(w)
            tokens.append(w)
    return {t: i for i, t in enumerate(tokens)}


class TokenLimitError(ValueError):
    pass


class WordPieceTokenizer:
    max_tokens = 512

    def __init__(self, vocab: dict[str, int] | None = None):
        self.vocab = vocab if vocab is not None else build_vocab()

    def _wordpiece(self, word: str) -> list[str]:
        pieces, start = [], 0
        while start < len(word):
            end = len(word)
            piece = None
            while end > start:
                cand = word[start:end]
                if start > 0:
                    cand = "##" + cand
                if cand in self.vocab:
                    piece = cand
                    break
                end -= 1
            if piece is None:
                return [UNK]
            pieces.append(piece)
            start = end
        return pieces

    def tokenize(self, text: str) -> list[str]:
        """Lowercase, split on non-word characters, wordpiece each word;
        wraps the result in [CLS] ... [SEP]."""
        out = [CLS]
        for word in re.findall(r"[\w'-]+", text.lower()):
            out.extend(self._wordpiece(word))
        out.append(SEP)
        if len(out) > self.max_tokens:
            raise TokenLimitError(
                f"{len(out)} tokens (with specials) exceeds the "
                f"{self.max_tokens}-token limit; split the text upstream")
        return out

    def encode(self, text: str) -> list[int]:
        return [self.vocab[t] for t in self.tokenize(text)]
