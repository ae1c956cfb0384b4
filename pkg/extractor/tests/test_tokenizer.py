import pytest

from adex.tokenizer import (CLS, SEP, UNK, TokenLimitError,
                            WordPieceTokenizer, build_vocab)


@pytest.fixture(scope="module")
def tok():
    return WordPieceTokenizer()


class TestTokenize:
    def test_specials_wrap_output(self, tok):
        pieces = tok.tokenize("cookie")
        assert pieces[0] == CLS and pieces[-1] == SEP
        assert pieces == [CLS, "cookie", SEP]

    def test_uncased(self, tok):
        assert tok.tokenize("Cookie JAR") == tok.tokenize("cookie jar")

    def test_oov_word_falls_back_to_pieces(self, tok):
        pieces = tok.tokenize("zyzzyva")
        inner = pieces[1:-1]
        assert len(inner) >= 2
        assert all(p in tok.vocab for p in inner)
        joined = inner[0] + "".join(p.removeprefix("##") for p in inner[1:])
        assert joined == "zyzzyva"

    def test_unmappable_character_is_unk(self, tok):
        assert tok.tokenize("né")[1:-1] == [UNK]

    def test_punctuation_dropped(self, tok):
        assert tok.tokenize("the boy, stealing!") == \
            tok.tokenize("the boy stealing")

    def test_limit_enforced(self, tok):
        ok = " ".join(["the"] * 510)
        assert len(tok.tokenize(ok)) == 512
        with pytest.raises(TokenLimitError, match="512"):
            tok.tokenize(" ".join(["the"] * 511))

    def test_encode_roundtrip_ids(self, tok):
        ids = tok.encode("wash the dishes")
        inv = {v: k for k, v in tok.vocab.items()}
        assert [inv[i] for i in ids] == \
            [CLS, "wash", "the", "dishes", SEP]


def test_vocab_is_deterministic():
    assert build_vocab() == build_vocab()
    assert list(build_vocab().values()) == sorted(build_vocab().values())
