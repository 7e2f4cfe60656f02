import numpy as np
import pytest

from dualview import autodiff as ad
from dualview.autodiff import Tensor, grad_check
from dualview.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from dualview.config import Ablations, HyperParams
from dualview.model import ModelParams, forward, multi_task_loss, param_shapes

from conftest import micro_hp


def grads_of(params, loss):
    """Backpropagate ``loss`` from a fresh recording and return a copy of every gradient."""
    params.zero_grads()
    with ad.Tape() as tape:
        out = loss()
    ad.backward(out, tape)
    return {k: None if t.grad is None else t.grad.copy() for k, t in params.items()}


class TestLayout:
    def test_shapes(self):
        hp = micro_hp()
        shapes = param_shapes(hp, 20)
        assert shapes["embedding"] == (20, 4)
        assert shapes["enc.l1.fwd.W_x"] == (4, 12) and shapes["enc.l2.fwd.W_x"] == (8, 12)
        assert shapes["dec.gru.W_h"] == (8, 24)
        assert shapes["dec.out.W_proj"] == (16, 8) and shapes["dec.out.W_vocab"] == (8, 20)
        assert shapes["cls.src.glimpse.W_q"] == (5, 6) and shapes["cls.sum.attend.W_q"] == (8, 6)
        assert shapes["cls.sum.ffn.W2"] == (7, 3)

    def test_views_have_disjoint_parameters(self):
        params = ModelParams.init(micro_hp(), 20, seed=0)
        src = [k for k in params if k.startswith("cls.src.")]
        assert len(src) == len([k for k in params if k.startswith("cls.sum.")]) == 13
        for k in src:
            assert params[k] is not params[k.replace("cls.src.", "cls.sum.")]

    def test_seeded_init(self):
        a = ModelParams.init(micro_hp(), 20, seed=4)
        b = ModelParams.init(micro_hp(), 20, seed=4)
        c = ModelParams.init(micro_hp(), 20, seed=5)
        assert all(np.array_equal(a[k].values, b[k].values) for k in a)
        assert not np.array_equal(a["embedding"].values, c["embedding"].values)
        assert all(np.abs(t.values).max() <= 0.1 for t in a.values())


class TestMultiTaskLoss:
    def test_default_weights(self):
        assert HyperParams().gammas == (0.8, 0.1, 0.1, 0.1)

    def test_weighted_sum(self):
        out = multi_task_loss(Tensor(1.0), Tensor(2.0), Tensor(3.0), Tensor(4.0), (0.8, 0.1, 0.1, 0.1))
        assert out.item() == pytest.approx(0.8 + 0.2 + 0.3 + 0.4)

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            multi_task_loss(Tensor(1.0), Tensor(1.0), Tensor(1.0), Tensor(1.0), (1, -0.1, 0, 0))


class TestForward:
    def test_components_and_total(self, tiny_model, micro_batch):
        params, hp, _ = tiny_model
        out = forward(params, micro_batch, hp)
        c = out.components()
        g = hp.gammas
        assert c["total"] == pytest.approx(g[0] * c["gen"] + g[1] * c["src"] + g[2] * c["sum"] + g[3] * c["inc"])
        assert out.p_src.shape == out.p_sum.shape == (2, hp.num_classes)

    def test_full_model_gradient(self, tiny_model, micro_batch):
        params, hp, _ = tiny_model
        rng = np.random.default_rng(0)
        f = lambda: forward(params, micro_batch, hp).total  # noqa: E731
        worst = 0.0
        for t in params.values():
            coords = rng.choice(t.values.size, size=min(6, t.values.size), replace=False)
            worst = max(worst, grad_check(f, t, coords=coords))
        assert worst < 1e-3

    def test_generation_only_leaves_classifiers_untouched(self, tiny_model, micro_batch):
        params, hp, _ = tiny_model
        full = grads_of(params, lambda: forward(params, micro_batch, hp, gammas=(1.0, 0.0, 0.0, 0.0)).total)
        gen = grads_of(params, lambda: forward(params, micro_batch, hp).loss_gen)
        for name, g in full.items():
            if name.startswith("cls."):
                assert g is None or not g.any(), name
            else:
                assert np.array_equal(g, gen[name]), name

    def test_no_inconsistency_flag(self, tiny_model, micro_batch):
        params, hp, _ = tiny_model
        on = forward(params, micro_batch, hp).components()
        off = forward(params, micro_batch, hp, Ablations(no_inconsistency=True)).components()
        manual = forward(params, micro_batch, hp, gammas=hp.gammas[:3] + (0.0,)).components()
        assert off == manual
        assert {k: off[k] for k in ("gen", "src", "sum", "inc")} == {k: on[k] for k in ("gen", "src", "sum", "inc")}
        g = hp.gammas
        assert off["total"] == pytest.approx(g[0] * on["gen"] + g[1] * on["src"] + g[2] * on["sum"])

    def test_no_inconsistency_has_no_kl_gradient(self, tiny_model, micro_batch):
        params, hp, _ = tiny_model
        off = grads_of(params, lambda: forward(params, micro_batch, hp, Ablations(no_inconsistency=True)).total)
        g = hp.gammas
        manual = grads_of(params, lambda: (lambda o: o.loss_gen * g[0] + o.loss_src * g[1] + o.loss_sum * g[2])(
            forward(params, micro_batch, hp)))
        for name in params:
            np.testing.assert_allclose(off[name], manual[name], rtol=1e-12, atol=1e-15)

    def test_maxpool_flag_changes_only_classifiers(self, tiny_model, micro_batch):
        params, hp, _ = tiny_model
        on = forward(params, micro_batch, hp)
        off = forward(params, micro_batch, hp, Ablations(maxpool_classifier=True))
        assert off.loss_gen.item() == on.loss_gen.item()
        assert not np.array_equal(off.p_src.values, on.p_src.values)

    def test_no_copy_flag_changes_only_generation(self, tiny_model, micro_batch):
        params, hp, _ = tiny_model
        on = forward(params, micro_batch, hp)
        off = forward(params, micro_batch, hp, Ablations(no_copy=True))
        assert np.array_equal(off.p_src.values, on.p_src.values)
        assert np.array_equal(off.p_sum.values, on.p_sum.values)
        assert off.loss_gen.item() != on.loss_gen.item()

    def test_no_residual_uses_first_layer(self, tiny_model, micro_batch):
        from dualview.encoder import encode

        params, hp, _ = tiny_model
        out = forward(params, micro_batch, hp, Ablations(no_residual=True))
        enc = encode(micro_batch.src, micro_batch.src_mask, params, residual=False)
        assert np.array_equal(out.memory.values, enc.U.values)

    def test_dropout_only_with_rng(self, tiny_model, micro_batch):
        params, hp, _ = tiny_model
        hp = hp.replace(dropout=0.5)
        a = forward(params, micro_batch, hp).components()
        assert a == forward(params, micro_batch, hp).components()
        b = forward(params, micro_batch, hp, rng=np.random.default_rng(0)).components()
        assert a["gen"] == b["gen"] and a["src"] != b["src"]


class TestCheckpoint:
    def test_round_trip(self, tmp_path, tiny_model):
        params, hp, _ = tiny_model
        tensors = {k: t.values for k, t in params.items()}
        digest = save_checkpoint(tmp_path / "m.ckpt", tensors, hp, {"note": "x"})
        back, hp2, meta = load_checkpoint(tmp_path / "m.ckpt")
        assert hp2 == hp and meta == {"note": "x"} and list(back) == list(tensors)
        for k in tensors:
            assert back[k].tobytes() == tensors[k].tobytes()
        assert digest == save_checkpoint(tmp_path / "n.ckpt", tensors, hp, {"note": "x"})

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"garbage-bytes-here-and-more")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "x.ckpt")
