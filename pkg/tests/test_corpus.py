import numpy as np
import pytest

from trajsynth import corpus as C
from trajsynth.errors import DataFormatError
from trajsynth.rng import substream


def test_encode_appends_boundary():
    vocab = C.Vocab(100)
    assert list(C.encode(np.array([5, 9, 2]), vocab)) == [5, 9, 2, 100]


def test_encode_dual_token_wraps():
    vocab = C.Vocab(100, C.BOT_AND_EOT)
    assert list(C.encode(np.array([7]), vocab)) == [101, 7, 100]
    assert vocab.size == 102


def test_encode_rejects_unknown_link_with_index():
    vocab = C.Vocab(10)
    with pytest.raises(DataFormatError, match="index 1"):
        C.encode(np.array([3, 42, 1]), vocab)


@pytest.mark.parametrize("tokens,expected", [
    ([5, 9, 2, 100], [5, 9, 2]),
    ([100], []),
    ([5, 100, 9], [5]),
])
def test_decode_cases(tokens, expected):
    vocab = C.Vocab(100)
    assert list(C.decode(np.array(tokens), vocab)) == expected


@pytest.mark.parametrize("mode", [C.EOT_ONLY, C.BOT_AND_EOT])
def test_encode_decode_round_trip_random(mode):
    vocab = C.Vocab(50, mode)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        traj = rng.integers(0, 50, size=rng.integers(1, 30))
        assert np.array_equal(C.decode(C.encode(traj, vocab), vocab), traj)


def test_split_sizes_and_determinism():
    corpus = [np.array([i]) for i in range(10)]
    train, test = C.split(corpus, 0.8, substream(4, "split"))
    assert len(train) == 8 and len(test) == 2
    train2, test2 = C.split(corpus, 0.8, substream(4, "split"))
    assert all(np.array_equal(a, b) for a, b in zip(train, train2))
    assert all(np.array_equal(a, b) for a, b in zip(test, test2))


def test_split_disjoint_and_exhaustive():
    corpus = [np.array([i]) for i in range(1000)]
    train, test = C.split(corpus, 0.8, substream(7, "split"))
    seen_train = {int(t[0]) for t in train}
    seen_test = {int(t[0]) for t in test}
    assert seen_train.isdisjoint(seen_test)
    assert seen_train | seen_test == set(range(1000))


def test_split_rejects_tiny_corpus():
    with pytest.raises(DataFormatError):
        C.split([np.array([0])], 0.8, substream(0, "split"))
    with pytest.raises(ValueError):
        C.split([np.array([0]), np.array([1])], 1.5, substream(0, "split"))


def test_packed_stream_counts():
    vocab = C.Vocab(10)
    corpus = [np.array([1, 2, 3]), np.array([4]), np.array([5, 6])]
    stream = C.pack_corpus(corpus, vocab, block_size=16)
    assert len(stream) == sum(len(t) + 1 for t in corpus)
    assert (stream.tokens == vocab.eot).sum() == len(corpus)
    assert list(stream.traj_offsets) == [0, 4, 6]


def test_pack_truncates_overlong_trajectories():
    vocab = C.Vocab(10)
    stream = C.pack_corpus([np.arange(10) % 10], vocab, block_size=6)
    assert stream.n_truncated == 1
    first = stream.tokens[:6]
    assert first[-1] == vocab.eot
    assert len(first) == 6


def test_next_token_batch_shift_by_one():
    vocab = C.Vocab(10)
    stream = C.pack_corpus([np.array([1, 2, 3])], vocab, block_size=3)
    inputs, targets = C.next_token_batch(stream, [0])
    assert list(inputs[0]) == [1, 2, 3]
    assert list(targets[0]) == [2, 3, vocab.eot]


def test_next_token_batch_full_stream_boundary():
    vocab = C.Vocab(10)
    corpus = [np.array([1, 2, 3]), np.array([4, 5, 6])]
    stream = C.pack_corpus(corpus, vocab, block_size=7)  # stream length - 1
    inputs, targets = C.next_token_batch(stream, [0])
    assert list(inputs[0]) == list(stream.tokens[:-1])
    assert list(targets[0]) == list(stream.tokens[1:])


def test_next_token_batch_targets_shift_property():
    vocab = C.Vocab(30)
    rng = np.random.default_rng(3)
    corpus = [rng.integers(0, 30, size=rng.integers(1, 12)) for _ in range(40)]
    stream = C.pack_corpus(corpus, vocab, block_size=8)
    valid = len(stream) - stream.block_size - 1
    for _ in range(200):
        p = int(rng.integers(0, valid + 1))
        inputs, targets = C.next_token_batch(stream, [p])
        assert np.array_equal(targets[0][:-1], inputs[0][1:])


def test_next_token_batch_rejects_out_of_range():
    vocab = C.Vocab(10)
    stream = C.pack_corpus([np.array([1, 2])], vocab, block_size=3)
    with pytest.raises(ValueError):
        C.next_token_batch(stream, [1])


def test_padded_blocks_mask_covers_stream_tail():
    vocab = C.Vocab(10)
    stream = C.pack_corpus([np.array([1, 2]), np.array([3])], vocab, block_size=4)
    inputs, targets, mask = C.padded_blocks(stream, [3], vocab.eot)
    # stream is [1 2 EOT 3 EOT]; offset 3 leaves one real transition
    assert list(inputs[0]) == [3, vocab.eot, vocab.eot, vocab.eot]
    assert list(targets[0]) == [vocab.eot, vocab.eot, vocab.eot, vocab.eot]
    assert list(mask[0]) == [1.0, 0.0, 0.0, 0.0]


def test_corpus_file_round_trip_and_hash_guard(tmp_path):
    path = tmp_path / "c.txt"
    corpus = [np.array([1, 2, 3]), np.array([9])]
    C.write_corpus(path, corpus, {"network_sha256": "abc123"})
    back, meta = C.read_corpus(path, expect_network_hash="abc123")
    assert all(np.array_equal(a, b) for a, b in zip(corpus, back))
    assert meta["n_trajectories"] == 2
    with pytest.raises(DataFormatError):
        C.read_corpus(path, expect_network_hash="different")


def test_corpus_file_rejects_bad_lines(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 2 x\n")
    with pytest.raises(DataFormatError):
        C.read_corpus(path)
