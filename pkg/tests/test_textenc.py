import itertools

import numpy as np
import pytest

from posescene import compositor, datagen, textenc
from posescene.errors import DataError


@pytest.fixture(scope="module")
def encoder():
    vocab = textenc.Vocabulary.build(
        datagen.all_surface_forms() + list(compositor.SCENE_PHRASES)
    )
    return textenc.TextEncoder(vocab)


def test_empty_caption_all_pad(encoder):
    ids = textenc.tokenize("", encoder.vocab)
    assert (ids == textenc.PAD_ID).all()


def test_tokenize_deterministic(encoder):
    a = textenc.tokenize("a person waves hello", encoder.vocab)
    b = textenc.tokenize("a person waves hello", encoder.vocab)
    assert np.array_equal(a, b)


def test_tokenize_case_and_punct_folding(encoder):
    a = textenc.tokenize("A person waves.", encoder.vocab)
    b = textenc.tokenize("a PERSON waves", encoder.vocab)
    assert np.array_equal(a, b)


def test_unknown_words_map_to_unk(encoder):
    ids = textenc.tokenize("xylophone zephyr", encoder.vocab)
    assert ids[0] == textenc.UNK_ID and ids[1] == textenc.UNK_ID


def test_truncation_and_padding(encoder):
    long = " ".join(["word"] * 40)
    ids = textenc.tokenize(long, encoder.vocab)
    assert ids.shape == (textenc.MAX_TOKENS,)
    short = textenc.tokenize("someone sits", encoder.vocab)
    assert short[2] == textenc.PAD_ID


def test_all_pad_pools_to_zero(encoder):
    emb = encoder.embed("")
    assert np.array_equal(emb.pooled, np.zeros(encoder.dim))


def test_pooled_unit_norm(encoder):
    for caption in datagen.all_surface_forms()[:50]:
        emb = encoder.embed(caption)
        assert np.isclose(np.linalg.norm(emb.pooled), 1.0)


def test_embedding_deterministic_from_vocab(encoder):
    again = textenc.TextEncoder(encoder.vocab)
    assert np.array_equal(again.table, encoder.table)
    e1 = encoder.embed("someone waves hello")
    e2 = again.embed("someone waves hello")
    assert np.array_equal(e1.pooled, e2.pooled)
    assert np.array_equal(e1.token_matrix, e2.token_matrix)


def test_distinct_captions_distinct_pooled(encoder):
    """Every distinct token sequence in the full template set pools to a
    distinct vector, so any one-word content change is visible."""
    forms = sorted(set(datagen.all_surface_forms()))
    keyed = {}
    for caption in forms:
        ids = tuple(textenc.tokenize(caption, encoder.vocab))
        keyed.setdefault(ids, caption)
    pooled = np.stack([encoder.embed(c).pooled for c in keyed.values()])
    sims = pooled @ pooled.T
    np.fill_diagonal(sims, 0.0)
    assert sims.max() < 1.0 - 1e-9


def test_vocab_file_round_trip(tmp_path, encoder):
    path = tmp_path / "vocab.txt"
    encoder.vocab.save(path)
    loaded = textenc.Vocabulary.load(path)
    assert loaded.tokens == encoder.vocab.tokens
    lines = path.read_text().splitlines()
    assert lines[textenc.PAD_ID] == textenc.PAD_TOKEN
    assert lines[textenc.UNK_ID] == textenc.UNK_TOKEN


def test_vocab_requires_reserved_tokens():
    with pytest.raises(DataError):
        textenc.Vocabulary(["hello", "world"])


def test_batch_embed_matches_single(encoder):
    captions = datagen.all_surface_forms()[:10]
    ids = np.stack([textenc.tokenize(c, encoder.vocab) for c in captions])
    mats, pooled = encoder.embed_batch(ids)
    for i, c in enumerate(captions):
        single = encoder.embed(c)
        assert np.allclose(mats[i], single.token_matrix)
        assert np.allclose(pooled[i], single.pooled)
