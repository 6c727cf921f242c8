"""Test the synthetic face basis, corpus generator and corpus files."""

import json

import numpy as np
import pytest

from stylemotion.core import FaceSplit
from stylemotion.errors import ContractError, DataError
from stylemotion.metrics import nearest_centroid_accuracy
from stylemotion.synth_data import (
    BASIS_FILE,
    INDEX_FILE,
    gen_basis,
    gen_clip_motion,
    gen_corpus,
    gen_phonemes,
    gen_style,
    motion_statistics,
    mouth_energy_ratio,
    read_corpus,
    read_dataset,
    separability,
    write_corpus,
    write_dataset,
)


def test_basis_is_orthonormal(basis):
    gram = basis.vertex_basis.T @ basis.vertex_basis
    assert np.abs(gram - np.eye(64)).max() <= 1e-5


def test_basis_is_deterministic():
    first, second = gen_basis(7, 100), gen_basis(7, 100)
    assert np.array_equal(first.vertex_basis, second.vertex_basis)
    assert np.array_equal(first.mean_shape, second.mean_shape)


def test_mouth_is_the_first_quarter():
    assert gen_basis(0, 101).mouth_vertex_ids == tuple(range(26))


def test_lower_columns_live_on_the_mouth(basis, split):
    ratios = mouth_energy_ratio(basis)
    assert (ratios[list(split.lower_indices)] >= 0.8).all()


def test_custom_split_columns_live_on_the_mouth():
    split = FaceSplit(tuple(range(20, 33)))
    ratios = mouth_energy_ratio(gen_basis(1, 80, split))
    assert (ratios[20:33] >= 0.8).all()


def test_basis_needs_enough_vertices():
    with pytest.raises(ContractError, match="64 vertices"):
        gen_basis(0, 63)


def test_corpus_counts_and_balance():
    corpus = gen_corpus(0, n_styles=4, clips_per_style=20, length=16, vocab=44)
    assert len(corpus.clips) == 80
    assert np.bincount(corpus.labels).tolist() == [20, 20, 20, 20]
    assert len({c.clip_id for c in corpus.clips}) == 80
    assert corpus.clips[21].clip_id == "s01_c001"


def test_corpus_ranges(corpus):
    for clip in corpus.clips:
        assert np.abs(clip.target.frames).max() <= 3.0
        assert 0 <= clip.phonemes.labels.min()
        assert clip.phonemes.labels.max() < 6
        assert len(clip) == 8


def test_corpus_is_deterministic():
    first = gen_corpus(5, n_styles=2, clips_per_style=3, length=12, vocab=8)
    second = gen_corpus(5, n_styles=2, clips_per_style=3, length=12, vocab=8)
    for a, b in zip(first.clips, second.clips, strict=True):
        assert a.clip_id == b.clip_id
        assert np.array_equal(a.target.frames, b.target.frames)
        assert np.array_equal(a.phonemes.labels, b.phonemes.labels)


def test_seeds_differ():
    first = gen_corpus(5, n_styles=2, clips_per_style=2, length=12, vocab=8)
    second = gen_corpus(6, n_styles=2, clips_per_style=2, length=12, vocab=8)
    frames = first.clips[0].target.frames
    assert not np.array_equal(frames, second.clips[0].target.frames)


def test_style_reference_is_another_clip_of_the_style(corpus):
    for i, clip in enumerate(corpus.clips):
        same = [
            other
            for j, other in enumerate(corpus.clips)
            if j != i and other.style_label == clip.style_label
        ]
        assert any(
            np.array_equal(clip.style_ref.frames, other.target.frames) for other in same
        )


@pytest.mark.parametrize(
    ("styles", "clips", "match"),
    [(1, 4, "n_styles >= 2"), (2, 1, "clips_per_style >= 2")],
)
def test_corpus_needs_styles_and_clips(styles, clips, match):
    with pytest.raises(ContractError, match=match):
        gen_corpus(0, n_styles=styles, clips_per_style=clips, length=8, vocab=6)


def test_mean_dwell():
    labels = gen_phonemes(20_000, 44, 4.0, np.random.default_rng(0))
    changes = np.count_nonzero(np.diff(labels)) + 1
    # Equal consecutive labels merge runs.
    assert 3.8 <= len(labels) / changes <= 4.5


def test_noise_free_mouth_follows_phonemes(split):
    """Without noise the lower face depends only on the phoneme stream."""
    visemes = np.random.default_rng(0).uniform(-1.5, 1.5, (6, 13))
    style = gen_style(0, visemes, np.random.default_rng(1), 0.0, split)
    labels = gen_phonemes(30, 6, 4.0, np.random.default_rng(2))
    first = gen_clip_motion(style, labels, split, np.random.default_rng(3))
    second = gen_clip_motion(style, labels, split, np.random.default_rng(4))
    lower = list(split.lower_indices)
    assert np.array_equal(first[:, lower], second[:, lower])


def test_styles_are_separable():
    corpus = gen_corpus(0, n_styles=4, clips_per_style=20, length=64, vocab=44)
    assert separability(corpus.clips) > 0


def test_nearest_centroid_on_raw_statistics():
    """Centroids of half the clips classify the other half."""
    corpus = gen_corpus(0, n_styles=4, clips_per_style=20, length=64, vocab=44)
    stats = np.stack([motion_statistics(c.target.frames) for c in corpus.clips])
    labels = corpus.labels
    fit = np.arange(len(labels)) % 2 == 0
    accuracy = nearest_centroid_accuracy(
        stats[fit], labels[fit], stats[~fit], labels[~fit]
    )
    assert accuracy >= 0.95


def test_motion_statistics():
    frames = np.zeros((4, 64))
    frames[:, 0] = [1, 1, 3, 3]
    stats = motion_statistics(frames)
    assert stats.shape == (128,)
    assert stats[0] == 2.0
    assert stats[64] == 1.0


def test_corpus_round_trip(tmp_path, corpus):
    write_corpus(tmp_path, corpus)
    loaded = read_corpus(tmp_path)
    assert (loaded.seed, loaded.vocab, loaded.fps) == (0, 6, corpus.fps)
    for a, b in zip(corpus.clips, loaded.clips, strict=True):
        assert a.clip_id == b.clip_id
        assert a.style_label == b.style_label
        assert np.array_equal(a.target.frames, b.target.frames)
        assert np.array_equal(a.phonemes.labels, b.phonemes.labels)
        assert np.array_equal(a.style_ref.frames, b.style_ref.frames)
    for a, b in zip(corpus.styles, loaded.styles, strict=True):
        assert np.array_equal(a.gains, b.gains)
        assert np.array_equal(a.mouth_response, b.mouth_response)


def test_corpus_round_trip_over_seeds(tmp_path):
    """A hundred seeded corpora read back bit for bit."""
    for seed in range(100):
        corpus = gen_corpus(seed, n_styles=2, clips_per_style=2, length=6, vocab=5)
        directory = tmp_path / f"corpus_{seed}"
        write_corpus(directory, corpus)
        loaded = read_corpus(directory)
        assert loaded.seed == seed
        for a, b in zip(corpus.clips, loaded.clips, strict=True):
            assert a.clip_id == b.clip_id
            assert a.target.frames.tobytes() == b.target.frames.tobytes()
            assert a.phonemes.labels.tobytes() == b.phonemes.labels.tobytes()
            assert a.style_ref.frames.tobytes() == b.style_ref.frames.tobytes()


def test_index_lists_each_clip_once(tmp_path, corpus):
    write_corpus(tmp_path, corpus)
    index = json.loads((tmp_path / INDEX_FILE).read_text(encoding="utf-8"))
    ids = [entry["clip_id"] for entry in index["clips"]]
    assert sorted(ids) == sorted(c.clip_id for c in corpus.clips)
    assert len(set(ids)) == len(ids)


def test_writing_twice_gives_identical_bytes(tmp_path, corpus, basis, split):
    write_dataset(tmp_path / "a", corpus, basis, split)
    write_dataset(tmp_path / "b", corpus, basis, split)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*"))
    assert files == sorted(
        p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*")
    )
    for name in files:
        if (tmp_path / "a" / name).is_file():
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()


def test_missing_clip_file(tmp_path, corpus):
    write_corpus(tmp_path, corpus)
    (tmp_path / "clips" / "s01_c002.mvec").unlink()
    with pytest.raises(DataError, match="s01_c002"):
        read_corpus(tmp_path)


def test_corrupt_entry_names_the_clip(tmp_path, corpus):
    write_corpus(tmp_path, corpus)
    path = tmp_path / INDEX_FILE
    index = json.loads(path.read_text(encoding="utf-8"))
    del index["clips"][3]["motion"]
    path.write_text(json.dumps(index), encoding="utf-8")
    with pytest.raises(DataError, match="s00_c003"):
        read_corpus(tmp_path)


def test_unknown_style_reference(tmp_path, corpus):
    write_corpus(tmp_path, corpus)
    path = tmp_path / INDEX_FILE
    index = json.loads(path.read_text(encoding="utf-8"))
    index["clips"][0]["style_ref"] = "s09_c000"
    path.write_text(json.dumps(index), encoding="utf-8")
    with pytest.raises(DataError, match="s09_c000"):
        read_corpus(tmp_path)


def test_missing_index(tmp_path):
    with pytest.raises(DataError, match="index"):
        read_corpus(tmp_path)


def test_dataset_round_trip(tmp_path, corpus, basis, split):
    write_dataset(tmp_path, corpus, basis, split)
    _, loaded_basis, loaded_split = read_dataset(tmp_path)
    assert np.array_equal(loaded_basis.vertex_basis, basis.vertex_basis)
    assert loaded_split == split


def test_dataset_without_basis(tmp_path, corpus, basis, split):
    write_dataset(tmp_path, corpus, basis, split)
    (tmp_path / BASIS_FILE).unlink()
    with pytest.raises(DataError, match=BASIS_FILE):
        read_dataset(tmp_path)
