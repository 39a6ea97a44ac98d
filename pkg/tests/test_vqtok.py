import numpy as np
import pytest

from imgcot.errors import ContractError, NumericError, ParseError
from imgcot.numerics import AdamW, Tensor, backward, finite_diff_check, finite_diff_check_params, load_checkpoint, mse
from imgcot.numerics.tensor import default_dtype
from imgcot.render import RenderConfig, render_text
from imgcot.vqtok import (
    Codebook,
    TokenizerConfig,
    TokenizerNet,
    encode_pages,
    init_codebook_kmeans,
    load_tokenizer,
    nearest_indices,
    patchify,
    quantize,
    quantize_tensor,
    reinit_dead_codes,
    save_tokenizer,
    tokenizer_losses,
    train_step,
    unpatchify,
)

from oracles import exhaustive_nearest, project

MICRO = TokenizerConfig(height=16, width=16, patch=8, n_latent=2, dim=8, codebook_size=6, enc_layers=1,
                        dec_layers=1, heads=2, seed=3)


def _book(entries):
    with default_dtype(np.float64):
        cb = Codebook(len(entries), len(entries[0]), np.random.default_rng(0))
    cb.entries.data[:] = np.asarray(entries, dtype=np.float64)
    return cb


def _micro_net():
    with default_dtype(np.float64):
        return TokenizerNet(MICRO)


def _pages(n, config=MICRO, seed=0):
    return np.random.default_rng(seed).integers(0, 256, size=(n, config.height, config.width)).astype(np.uint8)


# quantization ---------------------------------------------------------------------


def test_quantize_examples():
    cb = _book([[0.0, 0.0], [1.0, 1.0]])
    assert quantize(np.array([[0.9, 0.8]]), cb).indices.tolist() == [1]
    code = quantize(np.array([[0.0, 0.0]]), cb)
    assert code.indices.tolist() == [0]
    assert np.array_equal(code.embeddings[0], cb.entries.data[0])
    assert quantize(np.array([[0.5, 0.5]]), cb).indices.tolist() == [0]


def test_quantize_counts_usage_and_copies_rows():
    cb = _book([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    code = quantize(np.array([[0.9, 0.8], [0.1, 0.0], [1.2, 0.9]]), cb, page_id="p7")
    assert code.page_id == "p7"
    assert cb.usage.tolist() == [1, 2, 0]
    assert np.array_equal(code.embeddings, cb.entries.data[code.indices])
    quantize(np.zeros((1, 2)), cb, count=False)
    assert cb.usage.sum() == 3


def test_quantize_contracts():
    with pytest.raises(ContractError):
        quantize(np.zeros((2, 3)), _book([[0.0, 0.0]]))
    with pytest.raises(ContractError):
        nearest_indices(np.zeros((1, 2)), np.zeros((0, 2)))


def test_quantize_matches_exhaustive_oracle():
    rng = np.random.default_rng(0)
    for trial in range(200):
        k = int(rng.integers(1, 513))
        d = int(rng.integers(1, 9))
        entries = rng.normal(size=(k, d))
        if trial % 4 == 0:  # force exact ties through duplicated rows and integer grids
            entries = rng.integers(-2, 3, size=(k, d)).astype(float)
        h = rng.normal(size=(int(rng.integers(1, 9)), d))
        if trial % 4 == 0:
            h = rng.integers(-2, 3, size=h.shape).astype(float) + 0.5
        assert np.array_equal(nearest_indices(h, entries), exhaustive_nearest(h, entries))


def test_straight_through_jacobian_is_identity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n, d = 3, 4
        cb = _book(rng.normal(size=(5, d)))
        h0 = rng.normal(size=(n, d))
        jac = np.zeros((n * d, n * d))
        for out in range(n * d):
            h = Tensor(h0.copy(), requires_grad=True)
            z_hat, _, _ = quantize_tensor(h, cb, count=False)
            backward(project(z_hat, np.eye(n * d)[out]))
            jac[out] = h.grad.reshape(-1)
        assert np.array_equal(jac, np.eye(n * d))


def test_straight_through_forward_value_is_codebook_row():
    cb = _book(np.random.default_rng(2).normal(size=(7, 3)))
    h = Tensor(np.random.default_rng(3).normal(size=(4, 3)))
    z_hat, _, idx = quantize_tensor(h, cb, count=False)
    np.testing.assert_allclose(z_hat.data, cb.entries.data[idx], atol=1e-15)


def test_straight_through_finite_difference_affine():
    cb = _book(np.random.default_rng(4).normal(size=(6, 3)))
    w = np.random.default_rng(5).normal(size=6)
    err = finite_diff_check(lambda h: project(quantize_tensor(h, cb, count=False)[0], w),
                            [np.random.default_rng(6).normal(size=(2, 3))])
    assert err < 1e-8


# dead codes ---------------------------------------------------------------------------


def test_reinit_none_when_all_used():
    cb = _book(np.eye(3))
    cb.usage[:] = [2, 1, 5]
    assert reinit_dead_codes(cb, np.ones((4, 3))) == 0
    assert cb.usage.sum() == 0


def test_reinit_dead_codes_win_assignments():
    rng = np.random.default_rng(0)
    cb = _book(np.full((4, 2), 100.0) + np.arange(4)[:, None])
    batch = rng.normal(size=(10, 2))
    quantize(batch, cb)
    assert (cb.usage > 0).sum() == 1
    assert reinit_dead_codes(cb, batch, threshold=1, rng=rng) == 3
    assert cb.usage.sum() == 0
    idx = quantize(batch, cb, count=False).indices
    for j in range(1, 4):
        assert (idx == j).any(), j


def test_kmeans_init_with_few_vectors_keeps_remaining_rows():
    cb = _book(np.zeros((5, 2)) + 9.0)
    init_codebook_kmeans(cb, np.array([[0.0, 0.0], [1.0, 1.0]]), rng=np.random.default_rng(0))
    assert sorted(map(tuple, cb.entries.data[:2])) == [(0.0, 0.0), (1.0, 1.0)]
    assert (cb.entries.data[2:] == 9.0).all()


# network -----------------------------------------------------------------------------------


def test_encode_shapes_default_config():
    config = TokenizerConfig()
    assert config.n_patches == 64
    net = TokenizerNet(config)
    pages = np.stack([render_text("P(s)=i\nQ(i)=c")[0].pixels, render_text("a")[0].pixels])
    h = net.encode(pages)
    assert h.shape == (2, 8, 64)
    again = net.encode(pages[:1])
    np.testing.assert_array_equal(again.data[0], h.data[0])


def test_encode_rejects_wrong_page_size():
    net = TokenizerNet(TokenizerConfig())
    with pytest.raises(ContractError):
        net.encode(np.zeros((1, 32, 64), dtype=np.uint8))


def test_large_page_and_codebook_shapes():
    config = TokenizerConfig(height=512, width=512, patch=64, n_latent=8, dim=16, codebook_size=4096,
                             enc_layers=1, dec_layers=1, heads=2)
    net = TokenizerNet(config)
    assert net.codebook.size == 4096
    page = render_text("x = 7", RenderConfig(height=512, width=512))[0].pixels
    assert net.encode(page[None]).shape == (1, 8, 16)


def test_patchify_round_trip():
    pages = _pages(3)
    patches = patchify(pages, MICRO)
    assert patches.shape == (3, MICRO.n_patches, MICRO.patch_dim)
    assert 0.0 <= patches.min() and patches.max() <= 1.0
    assert np.array_equal(unpatchify(patches, MICRO), pages)


def test_decode_shape_and_determinism():
    net = _micro_net()
    z = np.random.default_rng(0).normal(size=(2, MICRO.n_latent, MICRO.dim))
    out = net.decode(z)
    assert out.shape == (2, 16, 16) and out.dtype == np.uint8
    assert np.array_equal(out, net.decode(z))
    with pytest.raises(ContractError):
        net.decode(np.zeros((1, MICRO.n_latent + 1, MICRO.dim)))


def test_decode_gradient_matches_finite_differences():
    net = _micro_net()
    target = patchify(_pages(1), MICRO)
    z0 = np.random.default_rng(1).normal(size=(1, MICRO.n_latent, MICRO.dim))
    assert finite_diff_check(lambda z: mse(net.decode_patches(z), Tensor(target)), [z0]) < 1e-3


def test_total_loss_gradient_wrt_encoder():
    net = _micro_net()
    patches = patchify(_pages(2), MICRO)
    params = [p for name, p in net.named_parameters() if name.startswith(("patch_embed", "latent_queries", "enc_"))]
    err = finite_diff_check_params(lambda: tokenizer_losses(net, patches, count=False)[0], params, coords=4,
                                   rng=np.random.default_rng(0))
    assert err < 1e-3


def test_loss_terms_vanish_at_their_optima():
    net = _micro_net()
    patches = patchify(_pages(1), MICRO)
    h = net.encode_patches(patches).data[0]
    net.codebook.entries.data[: MICRO.n_latent] = h
    _, rec, code, commit, _ = tokenizer_losses(net, patches, count=False)
    assert float(code.data) == pytest.approx(0.0, abs=1e-20)
    assert float(commit.data) == pytest.approx(0.0, abs=1e-20)
    assert float(rec.data) > 0
    assert float(mse(Tensor(patches), Tensor(patches)).data) == 0.0


def test_train_step_reports_and_nan_halts():
    net = _micro_net()
    opt = AdamW(net.parameters(), lr=1e-3)
    report, h = train_step(net, _pages(2), opt)
    assert report.rec > 0 and report.total >= report.rec
    assert h.shape == (2, MICRO.n_latent, MICRO.dim)
    net.enc_proj.weight.data[0, 0] = np.nan
    with pytest.raises(NumericError):
        train_step(net, _pages(2), opt)


def test_checkpoint_round_trip(tmp_path):
    net = _micro_net()
    net.codebook.usage[:] = [3, 0, 1, 0, 0, 2]
    path = tmp_path / "tok.ckpt"
    save_tokenizer(net, path)
    back = load_tokenizer(path)
    for (name, a), (_, b) in zip(net.named_parameters(), back.named_parameters()):
        assert a.data.tobytes() == b.data.tobytes(), name
    assert back.codebook.usage.tolist() == [3, 0, 1, 0, 0, 2]
    _, meta = load_checkpoint(path)
    assert (meta["k"], meta["d"]) == (MICRO.codebook_size, MICRO.dim)
    pages = _pages(2)
    assert [c.indices.tolist() for c in encode_pages(net, pages)] == [c.indices.tolist() for c in encode_pages(back, pages)]
    blob = path.read_bytes()
    path.write_bytes(b"NOTACKPT" + blob[8:])
    with pytest.raises(ParseError):
        load_tokenizer(path)
