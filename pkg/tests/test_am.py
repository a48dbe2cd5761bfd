import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import finite_difference
from wpctc.am import StreamingAdapter, ToyModel, TrainConfig, TriStageSchedule, splice, train
from wpctc.ctc import is_feasible
from wpctc.errors import ConfigError, DataError
from wpctc.streaming import StreamConfig, stream
from wpctc.synth import SynthSpec, synth_generate


def small_corpus(**kw):
    spec = dict(words=["hello", "world", "open"], n_utts=1, min_words=3, max_words=3, noise=0.2, seed=1)
    spec.update(kw)
    return synth_generate(SynthSpec(**spec))


def char_targets(corpus, utt):
    return [corpus.units.index(c) for w in utt.words for c in w]


def test_splice_repeats_edges():
    x = np.arange(3.0)[:, None]
    np.testing.assert_array_equal(splice(x, 1), [[0, 0, 1], [0, 1, 2], [1, 2, 2]])
    np.testing.assert_array_equal(splice(x, 0), x)


def test_zero_weights_give_uniform_rows():
    m = ToyModel.init(5, 7, context=2, hidden=(4,))
    for p in m.params:
        p[...] = 0.0
    post = m.forward(np.random.default_rng(0).normal(size=(9, 5)))
    np.testing.assert_allclose(post.values, -math.log(7), atol=1e-12)


@pytest.mark.parametrize("k,expected", [(1, 100), (2, 50), (4, 25), (8, 13)])
def test_output_length(k, expected):
    m = ToyModel.init(4, 3, context=1, stride=k, hidden=(3,))
    post = m.forward(np.zeros((100, 4)))
    assert post.T == m.output_frames(100) == expected
    assert post.is_normalized()
    assert post.frame_shift_ms == 10.0 * k


def test_feature_dimension_checked():
    m = ToyModel.init(4, 3, hidden=(3,))
    with pytest.raises(DataError, match="x 4 features"):
        m.forward(np.zeros((5, 3)))


@pytest.mark.parametrize("stride", [1, 2])
def test_gradient_matches_finite_differences(stride):
    rng = np.random.default_rng(stride)
    m = ToyModel.init(3, 4, context=1, stride=stride, hidden=(5,), seed=stride)
    x = rng.normal(size=(12, 3))
    target = [1, 2, 3]
    _, grads, feasible = m.loss_and_grad(x, target)
    assert feasible
    flat = m.get_flat()

    def loss_at(v):
        m.set_flat(v)
        return m.loss_and_grad(x, target)[0]

    num = finite_difference(loss_at, flat)
    m.set_flat(flat)
    ana = np.concatenate([g.ravel() for g in grads])
    rel = np.linalg.norm(ana - num) / np.linalg.norm(num)
    assert rel < 1e-3


def test_overfit_single_utterance():
    corpus = small_corpus()
    utt = corpus.utterances[0]
    assert len(utt.words) == 3
    target = char_targets(corpus, utt)
    m = ToyModel.init(corpus.feat_dim, len(corpus.units), context=4, hidden=(64,), seed=0)
    res = train(m, [utt.features], [target], TrainConfig(epochs=500, batch_size=1, peak_lr=1e-2))
    loss, _, _ = m.loss_and_grad(utt.features, target)
    assert loss < 0.01
    assert res.epoch_losses[-1] < res.epoch_losses[0]


def test_schedule_shape():
    s = TriStageSchedule(peak=1e-3, warmup=10, hold=20, decay=30)
    lrs = [s(i) for i in range(70)]
    assert lrs[0] == pytest.approx(1e-5)
    assert all(a < b for a, b in zip(lrs[:10], lrs[1:11]))
    assert lrs[10:30] == [1e-3] * 20
    assert all(a > b for a, b in zip(lrs[30:59], lrs[31:60]))
    assert lrs[-1] == pytest.approx(5e-5)
    over = TriStageSchedule.over(1000)
    assert (over.warmup, over.hold, over.decay) == (100, 400, 500)
    assert over(300) == 1e-3


def test_checkpoint_roundtrip(tmp_path):
    m = ToyModel.init(6, 5, context=2, stride=4, hidden=(7, 3), seed=3)
    m.save(tmp_path / "m.ckpt")
    back = ToyModel.load(tmp_path / "m.ckpt")
    assert (back.feat_dim, back.n_out, back.context, back.stride, back.hidden) == (6, 5, 2, 4, (7, 3))
    np.testing.assert_array_equal(back.get_flat(), m.get_flat().astype(np.float32))
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:4] == b"TAMC"
    (tmp_path / "bad.ckpt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataError, match="not a toy-model checkpoint"):
        ToyModel.load(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(raw[:-4])
    with pytest.raises(DataError):
        ToyModel.load(tmp_path / "short.ckpt")
    (tmp_path / "ver.ckpt").write_bytes(raw[:4] + struct.pack("<I", 99) + raw[8:])
    with pytest.raises(DataError, match="version"):
        ToyModel.load(tmp_path / "ver.ckpt")


def test_infeasible_utterances_are_skipped(caplog):
    rng = np.random.default_rng(0)
    m = ToyModel.init(2, 3, context=0, stride=4, hidden=(3,))
    feats = [rng.normal(size=(8, 2)), rng.normal(size=(8, 2)), rng.normal(size=(40, 2))]
    targets = [[1, 2, 1], [1], [1, 2, 1]]
    res = train(m, feats, targets, TrainConfig(epochs=2, batch_size=2))
    assert res.skipped == 1
    assert "skipping 1 of 3" in caplog.text
    with pytest.raises(DataError, match="no trainable"):
        train(m, feats[:1], targets[:1], TrainConfig(epochs=1))
    with pytest.raises(ConfigError):
        train(m, feats, targets[:2])


def test_training_lowers_loss():
    corpus = synth_generate(SynthSpec(["ab", "ba", "abba"], n_utts=12, seed=2))
    feats = [u.features for u in corpus.utterances]
    targets = [char_targets(corpus, u) for u in corpus.utterances]
    m = ToyModel.init(corpus.feat_dim, len(corpus.units), context=2, stride=2, hidden=(16,))
    res = train(m, feats, targets, TrainConfig(epochs=15, batch_size=4, peak_lr=3e-3))
    assert res.epoch_losses[-1] < 0.5 * res.epoch_losses[0]


def infeasible_fraction(corpus, targets, stride):
    frames = [math.ceil(len(u.features) / stride) for u in corpus.utterances]
    return sum(not is_feasible(y, T) for y, T in zip(targets, frames)) / len(targets)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_feasibility_pressure(seed):
    words = ["hello", "world", "open", "close", "door", "window", "kitchen", "garden"]
    corpus = synth_generate(SynthSpec(words, n_utts=40, seed=seed))
    chars = [char_targets(corpus, u) for u in corpus.utterances]
    whole = [[words.index(w) + 1 for w in u.words] for u in corpus.utterances]
    strides = [1, 2, 4, 8, 16]
    fc = [infeasible_fraction(corpus, chars, k) for k in strides]
    fw = [infeasible_fraction(corpus, whole, k) for k in strides]
    assert fc == sorted(fc) and fw == sorted(fw)
    first = lambda f: next((k for k, v in zip(strides, f) if v > 0), math.inf)  # noqa: E731
    assert first(fc) < first(fw)


@pytest.mark.parametrize("cs,rc", [(8, 4), (10, 6), (12, 9)])
def test_streaming_adapter_matches_forward(cs, rc):
    m = ToyModel.init(3, 4, context=3, stride=1, hidden=(6,), seed=1)
    adapter = StreamingAdapter(m)
    assert adapter.right_reach == 3
    x = np.random.default_rng(0).normal(size=(41, 3))
    np.testing.assert_allclose(stream(x, adapter, StreamConfig(cs, rc)), m.forward(x).values, atol=1e-9)
