import dataclasses
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glassoformer_lab.model import (
    GROUP, PLAIN, FaultWindow, GLassoformer, ModelConfig, eval_loss, loss_and_grads, mask_future,
    param_count_formula,
)
from glassoformer_lab.numerics import Tensor, numerical_gradient
from glassoformer_lab.rgsm import PenaltySpec, RgsmState, plain_adam_step

from conftest import TOY_MODEL


def random_window(c: ModelConfig, seed=0, scale=1.0) -> FaultWindow:
    r = np.random.default_rng(seed)
    x = r.normal(size=(c.n_signals + 1, c.seq_len)) * scale
    x[-1] = np.linspace(-1, 1, c.seq_len)
    x_de = x.copy()
    x_de[:-1, c.t_f + 1:] = 0.0
    return FaultWindow(x, x_de, r.normal(size=c.horizon) * 0.1, c.t_f)


def zero_params(model):
    for t in model.params.values():
        t.data[...] = 0.0


# -- embedding -----------------------------------------------------------------

def test_embed_zero_input_gives_zero(toy_model):
    c = toy_model.config
    out = toy_model.embed(Tensor(np.zeros((c.n_signals + 1, c.seq_len))), "enc")
    assert out.shape == (c.seq_len, c.d_model)
    assert not out.data.any()


def test_embed_k1_identity_kernels():
    c = ModelConfig(n_signals=2, seq_len=6, t_f=2, d_model=4, n_heads=1, kernel_size=1)
    m = GLassoformer.init(c, 0)
    m.params["enc_embed.value"].data[:] = np.eye(2)[:, :, None]
    m.params["enc_embed.stamp"].data[:] = 1.0
    x = np.random.default_rng(0).normal(size=(3, 6))
    out = m.embed(Tensor(x), "enc").data
    elu = lambda v: np.where(v < 0, np.exp(np.minimum(v, 0)) - 1, v)  # noqa: E731
    assert np.allclose(out[:, :2], elu(x[:2]).T)
    assert np.allclose(out[:, 2:], np.tile(elu(x[2])[:, None], (1, 2)))


def test_embed_is_causal(toy_model):
    c = toy_model.config
    x = np.random.default_rng(1).normal(size=(c.n_signals + 1, c.seq_len))
    base = toy_model.embed(Tensor(x), "dec").data
    x[:, 9:] += 1.0
    assert np.array_equal(toy_model.embed(Tensor(x), "dec").data[:9], base[:9])


# -- encoder / decoder ---------------------------------------------------------

def test_all_zero_parameters_give_zero_hidden(toy_model):
    zero_params(toy_model)
    w = random_window(toy_model.config)
    h = toy_model.encoder_forward(Tensor(w.x_en))
    assert not h.data.any()


def test_layer_count_respected():
    c1 = dataclasses.replace(TOY_MODEL, enc_layers=1)
    m1, m2 = GLassoformer.init(c1, 0), GLassoformer.init(TOY_MODEL, 0)
    w = random_window(TOY_MODEL)
    assert not np.allclose(m1.encoder_forward(Tensor(w.x_en)).data, m2.encoder_forward(Tensor(w.x_en)).data)


def test_encoder_output_hash_is_stable():
    w = random_window(TOY_MODEL, 4)
    a = GLassoformer.init(TOY_MODEL, 7).encoder_forward(Tensor(w.x_en)).data.tobytes()
    b = GLassoformer.init(TOY_MODEL, 7).encoder_forward(Tensor(w.x_en)).data.tobytes()
    assert a == b


def test_zero_inputs_and_hidden_give_zero_prediction(toy_model):
    c = toy_model.config
    z = Tensor(np.zeros((c.seq_len, c.d_model)))
    y = toy_model.decoder_forward(Tensor(np.zeros((c.n_signals + 1, c.seq_len))), z)
    assert y.shape == (c.horizon,)
    assert not y.data.any()


def test_decoder_on_encoder_stream_is_finite(toy_model):
    w = random_window(toy_model.config, 2)
    h = toy_model.encoder_forward(Tensor(w.x_en))
    y = toy_model.decoder_forward(Tensor(w.x_en), h)
    assert np.isfinite(y.data).all()


def test_every_parameter_receives_gradient(toy_model):
    w = random_window(toy_model.config, 3)
    _, grads = loss_and_grads(toy_model, [w])
    for name, g in grads.items():
        assert np.any(g != 0), name


# -- loss ----------------------------------------------------------------------

def test_forward_loss_definitions(toy_model):
    w = random_window(toy_model.config, 5)
    y_hat = toy_model.predict(w)
    exact = FaultWindow(w.x_en, w.x_de, y_hat, w.t_f)
    assert toy_model.forward_loss(exact)[1].item() == 0.0
    shifted = FaultWindow(w.x_en, w.x_de, y_hat - 0.1, w.t_f)
    assert toy_model.forward_loss(shifted)[1].item() == pytest.approx(0.01, abs=1e-15)


def test_loss_matches_recomputation(toy_model):
    ws = [random_window(toy_model.config, s) for s in range(4)]
    ref = np.mean([np.mean((toy_model.predict(w) - w.y) ** 2) for w in ws])
    assert eval_loss(toy_model, ws) == pytest.approx(ref, rel=1e-14)


# -- gradients -------------------------------------------------------------------

def test_end_to_end_gradient_check(toy_model):
    ws = [random_window(toy_model.config, s, scale=0.5) for s in range(2)]
    _, grads = loss_and_grads(toy_model, ws)
    r = np.random.default_rng(0)
    names = list(toy_model.params)
    worst = 0.0
    for _ in range(50):
        name = names[r.integers(len(names))]
        p = toy_model.params[name]
        i = int(r.integers(p.size))

        def f(_x):
            return Tensor(np.array(eval_loss(toy_model, ws)))
        num = numerical_gradient(f, p, 1e-5, coords=[i]).reshape(-1)[i]
        ana = grads[name].reshape(-1)[i]
        worst = max(worst, abs(ana - num) / max(1e-6, abs(num), abs(ana)))
    assert worst < 1e-4


# -- causality -----------------------------------------------------------------

def test_post_tf_decoder_values_do_not_matter(toy_model):
    c = toy_model.config
    w = random_window(c, 6)
    base = toy_model.predict(w)
    x_de = w.x_de.copy()
    x_de[:-1, c.t_f + 1:] = np.random.default_rng(0).normal(size=(c.n_signals, c.seq_len - c.t_f - 1))
    x_en = w.x_en.copy()
    x_en[:-1, c.t_f + 1:] += 5.0
    assert np.array_equal(toy_model.predict(FaultWindow(x_en, x_de, w.y, w.t_f)), base)


def test_mask_future_keeps_stamp():
    x = np.ones((3, 5))
    out = mask_future(Tensor(x), 1).data
    assert np.array_equal(out[:2], [[1, 1, 0, 0, 0]] * 2)
    assert np.array_equal(out[2], np.ones(5))


# -- shapes and counts -----------------------------------------------------------

@given(st.integers(1, 4), st.sampled_from([8, 12]), st.integers(0, 7), st.sampled_from([2, 4, 6]),
       st.integers(1, 3))
def test_shape_contract(F, L, t_f, d, H):
    c = ModelConfig(n_signals=F, seq_len=L, t_f=t_f, d_model=d, n_heads=H, enc_layers=1)
    m = GLassoformer.init(c, 0)
    y = m.predict(random_window(c, 1))
    assert y.shape == (L - t_f,)
    assert m.count_params() == param_count_formula(c)


def test_count_params_single_matrix():
    class One:
        params = OrderedDict(w=Tensor(np.zeros((3, 4))))
    assert GLassoformer.count_params(One()) == 12


def test_default_count_matches_formula_and_doubling():
    c = ModelConfig()
    assert GLassoformer.init(c, 0).count_params() == param_count_formula(c) == 116_320
    c2 = dataclasses.replace(c, d_model=64)
    assert GLassoformer.init(c2, 0).count_params() == param_count_formula(c2)
    d, K, F, L, H = 32, 3, 5, 64, 4
    # embeddings (2 sides), 4 attention blocks, 2 encoder convs, head projection
    delta = 2 * (d // 2) * (F * K + K) + 4 * (3 * H * d * L + L * d) + 2 * 3 * d * d * K + d
    assert param_count_formula(c2) - param_count_formula(c) == delta


def test_breakdown_sums_to_total(toy_model):
    assert sum(toy_model.param_breakdown().values()) == toy_model.count_params()


def test_group_labels_cover_sparse_wq_only(toy_model):
    labels = toy_model.labels()
    groups = {n for n, lab in labels.items() if lab.kind == GROUP}
    c = toy_model.config
    expected = {f"{b}.wq{h}" for b in ("enc0.attn", "enc1.attn", "dec0.self") for h in range(c.n_heads)}
    assert groups == expected
    assert all(labels[f"dec.cross.wq{h}"].kind == PLAIN for h in range(c.n_heads))
    assert set(labels) == set(toy_model.params)


def test_bias_flag_adds_parameters():
    c = dataclasses.replace(TOY_MODEL, bias=True)
    m = GLassoformer.init(c, 0)
    assert m.count_params() == param_count_formula(c) > param_count_formula(TOY_MODEL)


# -- overfit sanity ----------------------------------------------------------------

def test_overfits_single_batch():
    c = TOY_MODEL
    m = GLassoformer.init(c, 2)
    ws = [random_window(c, s) for s in range(2)]
    state = RgsmState({n: t.data for n, t in m.params.items()}, PenaltySpec("none", 0.0, []), beta=0.0,
                      lr=3e-3, mode="adam")
    first = None
    for _ in range(200):
        f, g = loss_and_grads(m, ws)
        first = f if first is None else first
        plain_adam_step(state, g)
    final = eval_loss(m, ws)
    assert final < first
    assert final < 1e-4


def test_sparse_forward_equals_dense_on_pruned_model(toy_model):
    for blk in toy_model.sparse_blocks():
        for h in range(toy_model.config.n_heads):
            toy_model.params[f"{blk}.wq{h}"].data[:, ::3] = 0.0
    w = random_window(toy_model.config, 8)
    masks = toy_model.masks(1e-5)
    assert np.max(np.abs(toy_model.predict(w, "sparse", masks) - toy_model.predict(w))) < 1e-12


def test_init_is_seed_deterministic():
    assert GLassoformer.init(TOY_MODEL, 3).fingerprint() == GLassoformer.init(TOY_MODEL, 3).fingerprint()
    assert GLassoformer.init(TOY_MODEL, 3).fingerprint() != GLassoformer.init(TOY_MODEL, 4).fingerprint()
