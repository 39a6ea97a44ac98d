import numpy as np
import pytest

from imgcot.errors import ContractError, IncompatibleVersionError, NumericError, VocabError
from imgcot.numerics import finite_diff_check_params, save_checkpoint
from imgcot.numerics.tensor import default_dtype
from imgcot.reasoner import (
    SPECIALS,
    Modality,
    ReasonerConfig,
    ReasonerNet,
    ReasonerSettings,
    Vocab,
    assemble_sample,
    batch_loss,
    infer,
    load_reasoner,
    mixed_loss,
    save_reasoner,
    text_lm_loss,
    token_logprobs,
    train_reasoner,
)

VOCAB = Vocab()


def _net(dim=8, layers=1, heads=2, seed=0):
    with default_dtype(np.float64):
        return ReasonerNet(ReasonerConfig(VOCAB.size, dim=dim, layers=layers, heads=heads, context=64, seed=seed))


def _sample(n=3, d=8, q="ab=", out="xy", seed=0):
    return assemble_sample(q, np.random.default_rng(seed).normal(size=(n, d)), out, VOCAB)


def _log_softmax(x):
    m = x.max(axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def _oracle_terms(net, sample):
    """Unnormalized per-position losses recomputed from hidden states and head weights."""
    ids = sample.input_ids[None]
    lat = np.zeros((1, sample.length, sample.dim))
    lat[0, sample.s_z:sample.e_z] = sample.latent
    h = net.hidden(ids, lat, sample.latent_mask[None]).data[0]
    mse_terms = []
    for i in range(sample.s_z, sample.e_z):
        pred = h[i - 1] @ net.latent_head.weight.data + net.latent_head.bias.data
        mse_terms.append(np.mean((pred - sample.latent[i - sample.s_z]) ** 2))
    ce_terms = []
    for i in range(sample.s_o, sample.e_o):
        logits = h[i - 1] @ net.text_head.weight.data + net.text_head.bias.data
        ce_terms.append(-_log_softmax(logits)[sample.input_ids[i]])
    return np.array(mse_terms), np.array(ce_terms)


# vocabulary and sample assembly ----------------------------------------------------


def test_vocab_round_trip_and_specials():
    text = "P(s)=i\nQ(i)=c ~{}"
    ids = VOCAB.encode(text)
    assert VOCAB.decode(ids) == text
    assert not any(VOCAB.is_special(i) for i in ids)
    assert {VOCAB.pad_id, VOCAB.bot_id, VOCAB.end_latent_id, VOCAB.eos_id, VOCAB.ellipsis_id} == set(range(len(SPECIALS)))
    assert VOCAB.decode([VOCAB.ellipsis_id]) == "..."
    with pytest.raises(VocabError) as info:
        VOCAB.encode("é!")
    assert info.value.chars == ["é"]


def test_sample_spans():
    s = assemble_sample("abcde", np.zeros((8, 4)), "x" * 11, VOCAB)
    assert (s.s_z, s.e_z, s.s_o, s.e_o, s.length) == (6, 14, 15, 27, 27)
    assert len(s.output) == 12 and s.output[-1] == VOCAB.eos_id
    assert s.denominator == 20
    ids = s.input_ids
    assert ids[5] == VOCAB.bot_id and ids[14] == VOCAB.end_latent_id and ids[26] == VOCAB.eos_id


def test_sample_modality_flags():
    s = assemble_sample("abcde", np.zeros((8, 4)), "x" * 11, VOCAB)
    flags = s.modality
    assert [i for i, m in enumerate(flags) if m is Modality.LATENT] == list(range(6, 14))
    assert sum(m is Modality.TEXT for m in flags) == 27 - 8


def test_sample_rejects_empty_latent_and_width_mismatch():
    with pytest.raises(ContractError):
        assemble_sample("q", np.zeros((0, 4)), "a", VOCAB)
    with pytest.raises(ContractError):
        assemble_sample("q", np.zeros((2, 4)), "a", VOCAB, dim=8)
    with pytest.raises(VocabError):
        assemble_sample("q\t", np.zeros((2, 4)), "a", VOCAB)


def test_latent_code_rows_are_used_verbatim():
    from imgcot.vqtok import LatentCode

    rows = np.arange(12.0).reshape(3, 4)
    s = assemble_sample("q", LatentCode(np.array([0, 1, 2]), rows), "a", VOCAB)
    assert np.array_equal(s.latent, rows)


# loss -------------------------------------------------------------------------------------


def test_loss_denominator_audit():
    net = _net()
    for seed in range(5):
        s = _sample(n=int(1 + seed % 4), out="ab" * seed, seed=seed)
        br = mixed_loss(net, s)
        mse_terms, ce_terms = _oracle_terms(net, s)
        assert br.value * s.denominator == pytest.approx(mse_terms.sum() + ce_terms.sum(), abs=1e-9)
        assert abs(br.value * s.denominator - (br.mse_sum + br.ce_sum)) < 1e-9
        np.testing.assert_allclose(br.mse_terms, mse_terms, atol=1e-12)
        np.testing.assert_allclose(br.ce_terms, ce_terms, atol=1e-12)


def test_batch_loss_is_mean_of_sample_losses():
    net = _net()
    samples = [_sample(n=2, out="a", seed=1), _sample(n=4, out="abcdef", q="long question", seed=2)]
    together = batch_loss(net, samples).value
    apart = np.mean([mixed_loss(net, s).value for s in samples])
    assert together == pytest.approx(apart, abs=1e-12)


def test_loss_zero_at_perfect_predictions():
    net = _net()
    for p in (net.latent_head.weight, net.latent_head.bias, net.text_head.weight):
        p.data[:] = 0.0
    net.text_head.bias.data[:] = 0.0
    net.text_head.bias.data[VOCAB.eos_id] = 1000.0
    s = assemble_sample("q=", np.zeros((4, 8)), "", VOCAB)
    assert mixed_loss(net, s).value == 0.0


def test_uniform_logits_contribute_log_vocab():
    net = _net()
    for p in (net.latent_head.weight, net.latent_head.bias, net.text_head.weight, net.text_head.bias):
        p.data[:] = 0.0
    s = assemble_sample("q=", np.zeros((8, 8)), "", VOCAB)
    assert s.denominator == 9
    assert mixed_loss(net, s).value == pytest.approx(np.log(VOCAB.size) / 9, abs=1e-12)


def test_loss_routing_with_zeroed_heads():
    s = _sample(n=3, out="xyz", seed=4)
    base = mixed_loss(_net(), s)
    net = _net()
    net.latent_head.weight.data[:] = 0.0
    net.latent_head.bias.data[:] = 0.0
    no_latent = mixed_loss(net, s)
    assert np.array_equal(no_latent.ce_terms, base.ce_terms)
    assert not np.allclose(no_latent.mse_terms, base.mse_terms)
    net = _net()
    net.text_head.weight.data[:] = 0.0
    net.text_head.bias.data[:] = 0.0
    no_text = mixed_loss(net, s)
    assert np.array_equal(no_text.mse_terms, base.mse_terms)
    np.testing.assert_allclose(no_text.ce_terms, np.log(VOCAB.size), atol=1e-12)


def test_loss_rejects_width_mismatch_and_empty_batch():
    with pytest.raises(ContractError):
        mixed_loss(_net(dim=8), _sample(d=4))
    with pytest.raises(ContractError):
        batch_loss(_net(), [])


def test_causality():
    net = _net(layers=2)
    rng = np.random.default_rng(0)
    ids = rng.integers(len(SPECIALS), VOCAB.size, size=(1, 12))
    lat = rng.normal(size=(1, 12, 8))
    mask = np.zeros((1, 12), dtype=bool)
    mask[0, 3:6] = True
    base = net.hidden(ids, lat, mask).data
    for j in range(1, 12):
        ids2, lat2 = ids.copy(), lat.copy()
        ids2[0, j] = (ids2[0, j] + 1 - len(SPECIALS)) % (VOCAB.size - len(SPECIALS)) + len(SPECIALS)
        lat2[0, j] += rng.normal(size=8)
        out = net.hidden(ids2, lat2, mask).data
        np.testing.assert_array_equal(out[0, :j], base[0, :j])
        assert not np.allclose(out[0, j], base[0, j])


def test_loss_gradient_matches_finite_differences():
    net = _net(dim=8, layers=1)
    samples = [_sample(n=2, out="ab", seed=5), _sample(n=3, out="c", q="q", seed=6)]
    err = finite_diff_check_params(lambda: batch_loss(net, samples).total, net.parameters(), coords=3,
                                   rng=np.random.default_rng(0))
    assert err < 1e-3


def test_text_lm_loss_matches_oracle():
    net = _net()
    seqs = [VOCAB.encode("abc"), VOCAB.encode("hello world")]
    expected = []
    for s in seqs:
        lp = token_logprobs(net, s)
        expected.append(-lp[1:].mean())
    assert float(text_lm_loss(net, seqs).data) == pytest.approx(np.mean(expected), abs=1e-12)
    with pytest.raises(ContractError):
        text_lm_loss(net, [VOCAB.encode("a")])


def test_token_logprobs_against_direct_log_softmax():
    net = _net()
    ids = VOCAB.encode("x = 7 + 2")
    lp = token_logprobs(net, ids)
    assert np.isnan(lp[0])
    h = net.hidden(ids[None], np.zeros((1, len(ids), 8)), np.zeros((1, len(ids)), dtype=bool)).data[0]
    direct = _log_softmax(h @ net.text_head.weight.data + net.text_head.bias.data)
    np.testing.assert_allclose(lp[1:], direct[np.arange(len(ids) - 1), ids[1:]], rtol=0, atol=1e-12)
    assert np.all(lp[1:] <= 0)


# training ---------------------------------------------------------------------------------


def test_memorizes_single_sample():
    net = _net(dim=16, layers=1, heads=2)
    s = assemble_sample("q=", np.random.default_rng(0).normal(size=(2, 16)) * 0.5, "42", VOCAB)
    result = train_reasoner([s], net, ReasonerSettings(epochs=300, batch_size=1, lr=1e-2, weight_decay=0.0, restarts=0))
    assert result.curve[-1] < 0.01
    assert mixed_loss(net, s).value < 0.01


def test_training_curve_length_and_determinism(tmp_path):
    samples = [_sample(n=2, out=str(i), seed=i) for i in range(5)]
    settings = ReasonerSettings(epochs=3, batch_size=2, lr=1e-3)
    r1 = train_reasoner(samples, _net(), settings, VOCAB, checkpoint_dir=tmp_path)
    r2 = train_reasoner(samples, _net(), settings)
    assert len(r1.curve) == 3
    assert r1.curve == r2.curve
    assert [p.name for p in r1.checkpoints] == [f"reasoner-epoch{e:03d}.ckpt" for e in range(3)]
    assert all(p.exists() for p in r1.checkpoints)


def test_training_halts_on_nan():
    net = _net()
    net.text_head.weight.data[0, 0] = np.nan
    with pytest.raises(NumericError):
        train_reasoner([_sample()], net, ReasonerSettings(epochs=1))


def test_training_rejects_bad_inputs():
    with pytest.raises(ContractError):
        train_reasoner([], _net())
    with pytest.raises(ContractError):
        train_reasoner([_sample(d=4)], _net(dim=8))
    with pytest.raises(ContractError):
        train_reasoner([_sample()], _net(), checkpoint_dir="/tmp")


# inference ----------------------------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 8])
def test_inference_emits_exactly_n_latents(n):
    net = _net()
    codebook = np.random.default_rng(0).normal(size=(6, 8))
    for q in ("a", "What is Q(x)?", ""):
        res = infer(net, q or "?", VOCAB, n, codebook, max_text_len=5)
        assert res.latent_tokens == n
        assert res.latents.shape == (n, 8)
        assert np.array_equal(res.latents, codebook[res.latent_indices])
        assert res.truncated or res.text_tokens < 5
        assert res.text_tokens <= 5


def test_inference_without_requantization():
    net = _net()
    res = infer(net, "q", VOCAB, 3, requantize=False, max_text_len=2)
    assert res.latent_indices is None and res.latents.shape == (3, 8)
    with pytest.raises(ContractError):
        infer(net, "q", VOCAB, 3, requantize=True)
    with pytest.raises(ContractError):
        infer(net, "q", VOCAB, 0, requantize=False)


def test_inference_stops_at_end_of_sequence():
    net = _net()
    net.text_head.weight.data[:] = 0.0
    net.text_head.bias.data[:] = 0.0
    net.text_head.bias.data[VOCAB.eos_id] = 10.0
    res = infer(net, "q", VOCAB, 2, requantize=False)
    assert res.text == "" and not res.truncated and res.text_tokens == 0


def test_inference_matches_teacher_forced_model():
    """The latent fed back during rollout reproduces the latent head's prediction under teacher forcing."""
    net = _net()
    res = infer(net, "abc", VOCAB, 3, requantize=False, max_text_len=4)
    s = assemble_sample("abc", res.latents, VOCAB.decode(res.output_ids), VOCAB)
    ids = s.input_ids[None]
    lat = np.zeros((1, s.length, 8))
    lat[0, s.s_z:s.e_z] = s.latent
    h = net.hidden(ids, lat, s.latent_mask[None]).data[0]
    pred = h[s.s_z - 1:s.e_z - 1] @ net.latent_head.weight.data + net.latent_head.bias.data
    np.testing.assert_allclose(pred, res.latents, atol=1e-10)


def test_checkpoint_round_trip(tmp_path):
    net = _net()
    codebook = np.arange(16.0).reshape(2, 8)
    path = tmp_path / "r.ckpt"
    save_reasoner(net, VOCAB, path, codebook)
    back, vocab, cb = load_reasoner(path)
    assert vocab == VOCAB and np.array_equal(cb, codebook)
    for (name, a), (_, b) in zip(net.named_parameters(), back.named_parameters()):
        assert a.data.tobytes() == b.data.tobytes(), name
    s = _sample()
    assert mixed_loss(back, s).value == mixed_loss(net, s).value
    other = tmp_path / "other.ckpt"
    save_checkpoint(other, {"w": np.ones(1)}, {"kind": "tokenizer"})
    with pytest.raises(IncompatibleVersionError):
        load_reasoner(other)
