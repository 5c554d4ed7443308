import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steercompose.core import ConfigError
from steercompose.prompt import (EmptySpanError, PromptSpec, UnbalancedTagError, Vocabulary, embed,
                                 parse_tagged_prompt, tokenize)


def test_worked_caption_example():
    words, idx = parse_tagged_prompt("a cartoon animation of a <ref> white fox <ref> in the forest")
    assert words == ["a", "cartoon", "animation", "of", "a", "white", "fox", "in", "the", "forest"]
    assert idx == {5, 6}


def test_untagged_caption():
    assert parse_tagged_prompt("a dog") == (["a", "dog"], set())


def test_multiple_spans_reindexed():
    words, idx = parse_tagged_prompt("<ref> cat <ref> and <ref> hat <ref>")
    assert words == ["cat", "and", "hat"] and idx == {0, 2}


def test_tags_glued_to_words():
    assert parse_tagged_prompt("a <ref>red fox<ref> here") == (["a", "red", "fox", "here"], {1, 2})


def test_unbalanced_tags():
    with pytest.raises(UnbalancedTagError):
        parse_tagged_prompt("a <ref> fox")


def test_empty_span():
    with pytest.raises(EmptySpanError):
        parse_tagged_prompt("a <ref> <ref> fox")


VOCAB = Vocabulary(("<unk>", "a", "dog"))


@pytest.mark.parametrize("words, ids", [(["a", "dog"], [1, 2]), (["zebra"], [0]), (["Dog"], [2])])
def test_tokenize(words, ids):
    assert tokenize(words, VOCAB) == ids


def test_vocabulary_file(tmp_path):
    p = tmp_path / "vocab.txt"
    p.write_text("<unk>\na\ndog\n", encoding="utf-8")
    assert Vocabulary.from_file(p).lookup("DOG") == 2
    empty = tmp_path / "empty.txt"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(ConfigError):
        Vocabulary.from_file(empty)


def test_embed_deterministic_and_seeded():
    a = embed([3, 1, 4], 8, seed=5)
    assert np.array_equal(a, embed([3, 1, 4], 8, seed=5))
    assert not np.array_equal(a, embed([3, 1, 4], 8, seed=6))
    assert embed([], 8).shape == (0, 8)


def test_embed_unit_variance():
    e = embed(list(range(40)) * 10, 64, seed=1)
    assert abs(e.var() - 1.0) < 0.05


word = st.text(alphabet="abcdefgh", min_size=1, max_size=5)


@given(st.lists(st.tuples(word, st.booleans()), min_size=1, max_size=12))
def test_parse_is_lossless_and_indices_point_into_spans(items):
    # render each tagged word as its own span
    text = " ".join(f"<ref> {w} <ref>" if tagged else w for w, tagged in items)
    words, idx = parse_tagged_prompt(text)
    assert words == [w for w, _ in items]
    assert idx == {i for i, (_, tagged) in enumerate(items) if tagged}


def test_prompt_spec_from_text():
    ps = PromptSpec.from_text("a <ref> red circle <ref>")
    assert ps.p == 3 and ps.object_token_indices == {1, 2} and all(t > 0 for t in ps.tokens)
