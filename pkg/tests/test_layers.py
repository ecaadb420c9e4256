"""GRU cells, masked BiGRU, attention layers, checkpoint round trips."""

import numpy as np
import pytest

from racoln import autodiff as ad
from racoln.checkpoint import load_checkpoint, restore_params, save_checkpoint
from racoln.errors import CorpusError, InvalidArgument, InvalidState
from racoln.layers import (Attention, BiGRU, Embedding, GRUCell, Linear,
                           context_vector)


def _cell(d_in, d_h, seed=0):
    return GRUCell(d_in, d_h, np.random.default_rng(seed))


def _zero_cell(d_in, d_h):
    cell = _cell(d_in, d_h)
    for t in cell.params("c").values():
        t.data[...] = 0.0
    return cell


class TestGRUCell:
    def test_zero_parameters_halve_state(self):
        # z = sigmoid(0) = 0.5 and candidate = tanh(0) = 0, so h' = h/2
        cell = _zero_cell(3, 4)
        h = ad.Tensor(np.array([[0.4, -0.2, 0.8, 0.0]]))
        out = cell.step(h, ad.Tensor(np.array([[1.0, 2.0, 3.0]])))
        np.testing.assert_allclose(out.data, h.data * 0.5, rtol=1e-12)

    def test_matches_hand_computed_gates(self):
        cell = _cell(1, 2)
        p = {k.split(".")[1]: v.data for k, v in cell.params("c").items()}
        p["wxz"][...] = [[0.3, -0.2]]
        p["whz"][...] = [[0.1, 0.0], [0.2, -0.1]]
        p["bz"][...] = [0.05, -0.05]
        p["wxr"][...] = [[-0.4, 0.6]]
        p["whr"][...] = [[0.0, 0.3], [-0.2, 0.1]]
        p["br"][...] = [0.0, 0.2]
        p["wxn"][...] = [[0.5, 0.5]]
        p["whn"][...] = [[0.25, -0.3], [0.15, 0.05]]
        p["bn"][...] = [-0.1, 0.1]
        x = np.array([[0.7]])
        h = np.array([[0.3, -0.6]])

        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        z = sig(x @ p["wxz"] + h @ p["whz"] + p["bz"])
        r = sig(x @ p["wxr"] + h @ p["whr"] + p["br"])
        n = np.tanh(x @ p["wxn"] + r * (h @ p["whn"]) + p["bn"])
        expected = z * h + (1 - z) * n

        out = cell.step(ad.Tensor(h), ad.Tensor(x))
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)

    def test_output_bounded_when_state_is(self):
        rng = np.random.default_rng(3)
        cell = _cell(4, 5, seed=1)
        h = ad.Tensor(rng.uniform(-0.99, 0.99, (8, 5)))
        out = cell.step(h, ad.Tensor(rng.normal(size=(8, 4))))
        assert np.abs(out.data).max() < 1.0

    def test_shape_mismatch_rejected(self):
        cell = _cell(3, 4)
        with pytest.raises(InvalidArgument):
            cell.step(ad.Tensor(np.zeros((1, 4))), ad.Tensor(np.zeros((1, 5))))

    @pytest.mark.parametrize("seed", range(8))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        cell = _cell(3, 4, seed=seed)
        x = ad.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        h0 = ad.Tensor(rng.normal(size=(2, 4)), requires_grad=True)

        def f():
            h = cell.step(h0, x)
            h = cell.step(h, x)
            return ad.reduce_sum(ad.square(h))

        params = list(cell.params("c").values()) + [x, h0]
        assert ad.gradient_check(f, params) < 1e-4


class TestBiGRU:
    def test_single_step_row_equals_final(self):
        rng = np.random.default_rng(0)
        net = BiGRU(3, 4, rng)
        seq = ad.Tensor(rng.normal(size=(2, 1, 3)))
        h_all, h_final = net.encode(seq, np.ones((2, 1), dtype=bool))
        np.testing.assert_allclose(h_all.data[:, 0, :], h_final.data, rtol=1e-12)

    def test_padding_invariance(self):
        rng = np.random.default_rng(1)
        net = BiGRU(3, 4, rng)
        base = rng.normal(size=(1, 3, 3))
        mask3 = np.ones((1, 3), dtype=bool)
        h_all3, final3 = net.encode(ad.Tensor(base), mask3)
        padded = np.concatenate([base, rng.normal(size=(1, 2, 3))], axis=1)
        mask5 = np.array([[True, True, True, False, False]])
        h_all5, final5 = net.encode(ad.Tensor(padded), mask5)
        np.testing.assert_allclose(final5.data, final3.data, rtol=1e-12)
        np.testing.assert_allclose(h_all5.data[:, :3], h_all3.data, rtol=1e-12)
        np.testing.assert_allclose(h_all5.data[:, 3:], 0.0)

    def test_matches_manual_unrolled_loop(self):
        rng = np.random.default_rng(2)
        net = BiGRU(2, 3, rng)
        seq = rng.normal(size=(1, 3, 2))
        h_all, h_final = net.encode(ad.Tensor(seq), np.ones((1, 3), dtype=bool))

        def run(cell, steps):
            h = ad.Tensor(np.zeros((1, 3)))
            out = {}
            for t in steps:
                h = cell.step(h, ad.Tensor(seq[:, t]))
                out[t] = h.data
            return out, h.data

        f_states, f_last = run(net.fwd, [0, 1, 2])
        b_states, b_last = run(net.bwd, [2, 1, 0])
        for t in range(3):
            np.testing.assert_allclose(
                h_all.data[:, t],
                np.concatenate([f_states[t], b_states[t]], axis=-1), rtol=1e-12)
        np.testing.assert_allclose(
            h_final.data, np.concatenate([f_last, b_last], axis=-1), rtol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        net = BiGRU(2, 3, rng)
        seq = ad.Tensor(rng.normal(size=(2, 3, 2)), requires_grad=True)
        mask = np.array([[True, True, False], [True, True, True]])

        def f():
            h_all, h_final = net.encode(seq, mask)
            return ad.add(ad.reduce_sum(ad.square(h_all)),
                          ad.reduce_sum(ad.square(h_final)))

        assert ad.gradient_check(f, [seq] + list(net.params("g").values())) < 1e-4


class TestAttention:
    def test_single_position_gets_all_mass(self):
        rng = np.random.default_rng(0)
        attn = Attention(4, rng)
        alpha = attn.scores(ad.Tensor(rng.normal(size=(2, 1, 4))),
                            np.ones((2, 1), dtype=bool))
        np.testing.assert_allclose(alpha.data, 1.0, rtol=1e-12)

    def test_identical_rows_uniform(self):
        rng = np.random.default_rng(1)
        attn = Attention(4, rng)
        row = rng.normal(size=(1, 1, 4))
        h_all = ad.Tensor(np.tile(row, (1, 4, 1)))
        alpha = attn.scores(h_all, np.ones((1, 4), dtype=bool))
        np.testing.assert_allclose(alpha.data, 0.25, rtol=1e-10)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(2)
        attn = Attention(3, rng, tau=0.7)
        h = rng.normal(size=(2, 5, 3))
        mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
        alpha = attn.scores(ad.Tensor(h), mask)

        v = np.tanh(h @ attn.ww.data + attn.bw.data)
        scores = (v @ attn.u.data)[..., 0] / 0.7
        expected = np.zeros_like(scores)
        for b in range(2):
            live = mask[b]
            e = np.exp(scores[b, live] - scores[b, live].max())
            expected[b, live] = e / e.sum()
        np.testing.assert_allclose(alpha.data, expected, rtol=1e-10)

    def test_distribution_under_any_mask(self):
        rng = np.random.default_rng(3)
        attn = Attention(4, rng)
        for _ in range(25):
            steps = int(rng.integers(1, 7))
            mask = rng.random((3, steps)) < 0.6
            mask[np.arange(3), rng.integers(0, steps, 3)] = True
            alpha = attn.scores(ad.Tensor(rng.normal(size=(3, steps, 4))), mask)
            np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-12)
            assert (alpha.data[~mask] == 0).all()

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(4)
        attn = Attention(3, rng)
        h = ad.Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
        mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)

        def f():
            alpha = attn.scores(h, mask)
            return ad.reduce_sum(ad.square(context_vector(h, alpha)))

        assert ad.gradient_check(f, [h] + list(attn.params("a").values())) < 1e-4


class TestContextVector:
    def test_one_hot_selects_row(self):
        rng = np.random.default_rng(0)
        h = ad.Tensor(rng.normal(size=(1, 4, 3)))
        alpha = ad.Tensor(np.array([[0.0, 0.0, 1.0, 0.0]]))
        out = context_vector(h, alpha)
        np.testing.assert_allclose(out.data[0], h.data[0, 2], rtol=1e-12)

    def test_uniform_is_mean(self):
        rng = np.random.default_rng(1)
        h = ad.Tensor(rng.normal(size=(2, 5, 3)))
        alpha = ad.Tensor(np.full((2, 5), 0.2))
        out = context_vector(h, alpha)
        np.testing.assert_allclose(out.data, h.data.mean(axis=1), rtol=1e-12)

    def test_matches_explicit_loop(self):
        rng = np.random.default_rng(2)
        h = rng.normal(size=(2, 4, 3))
        alpha = rng.dirichlet(np.ones(4), size=2)
        out = context_vector(ad.Tensor(h), ad.Tensor(alpha))
        expected = np.zeros((2, 3))
        for b in range(2):
            for t in range(4):
                expected[b] += alpha[b, t] * h[b, t]
        np.testing.assert_allclose(out.data, expected, rtol=1e-10)


class TestEmbedding:
    def test_pad_row_zero_after_clamp(self):
        rng = np.random.default_rng(0)
        emb = Embedding(7, 4, rng)
        assert (emb.table.data[0] == 0).all()
        emb.table.grad = np.ones_like(emb.table.data)
        emb.table.data[0] = 9.0
        emb.clamp_pad()
        assert (emb.table.data[0] == 0).all()
        assert (emb.table.grad[0] == 0).all()

    def test_soft_lookup_with_one_hot_equals_row(self):
        rng = np.random.default_rng(1)
        emb = Embedding(6, 3, rng)
        dists = np.zeros((2, 2, 6))
        dists[0, 0, 4] = 1.0
        dists[0, 1, 1] = 1.0
        dists[1, 0, 2] = 1.0
        dists[1, 1, 5] = 1.0
        out = emb.soft(ad.Tensor(dists))
        np.testing.assert_allclose(out.data[0, 0], emb.table.data[4], rtol=1e-12)
        np.testing.assert_allclose(out.data[1, 1], emb.table.data[5], rtol=1e-12)


def test_linear_and_embedding_gradcheck():
    rng = np.random.default_rng(11)
    emb = Embedding(5, 3, rng)
    lin = Linear(3, 2, rng)
    ids = rng.integers(0, 5, size=(4,))

    def f():
        return ad.reduce_sum(ad.square(lin(emb(ids))))

    params = [emb.table] + list(lin.params("l").values())
    assert ad.gradient_check(f, params) < 1e-4


class TestCheckpoint:
    def test_round_trip_with_metadata(self, tmp_path):
        rng = np.random.default_rng(0)
        params = {"layer.w": ad.Tensor(rng.normal(size=(3, 2)), requires_grad=True),
                  "layer.b": ad.Tensor(rng.normal(size=(2,)), requires_grad=True),
                  "scalar": ad.Tensor(1.5)}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, meta={"role": "eval_classifier", "seed": "3"})
        loaded, meta = load_checkpoint(path)
        assert meta == {"role": "eval_classifier", "seed": "3"}
        assert set(loaded) == set(params)
        for k in params:
            np.testing.assert_array_equal(loaded[k], params[k].data)
            assert loaded[k].dtype == np.float64

    def test_restore_into_model(self, tmp_path):
        src = GRUCell(2, 3, np.random.default_rng(0))
        dst = GRUCell(2, 3, np.random.default_rng(9))
        path = tmp_path / "cell.ckpt"
        save_checkpoint(path, src.params("gru"))
        loaded, _ = load_checkpoint(path)
        restore_params(dst.params("gru"), loaded)
        for k, t in src.params("gru").items():
            np.testing.assert_array_equal(dst.params("gru")[k].data, t.data)

    def test_restore_rejects_mismatch(self, tmp_path):
        cell = GRUCell(2, 3, np.random.default_rng(0))
        path = tmp_path / "cell.ckpt"
        save_checkpoint(path, cell.params("gru"))
        loaded, _ = load_checkpoint(path)
        other = GRUCell(2, 4, np.random.default_rng(0))
        with pytest.raises(InvalidArgument):
            restore_params(other.params("gru"), loaded)

    def test_missing_file_is_invalid_state(self, tmp_path):
        with pytest.raises(InvalidState):
            load_checkpoint(tmp_path / "nope.ckpt")

    def test_corrupt_file_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CorpusError):
            load_checkpoint(p)
