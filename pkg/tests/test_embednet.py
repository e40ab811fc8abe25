import numpy as np
import pytest

import binmap.autograd as ag
from binmap import codec, embednet as en
from binmap.autograd import Tensor
from binmap.geometry import GridSpec

RR = np.random.default_rng(31)


@pytest.fixture(scope="module")
def setup8():
    cfg = en.NetConfig()
    return cfg, en.init_params(cfg, seed=5)


@pytest.fixture(scope="module")
def setup16():
    cfg = en.NetConfig(downsample=16)
    return cfg, en.init_params(cfg, seed=5)


def test_embed_preserves_spatial_shape(setup8):
    cfg, store = setup8
    for hw in (16, 32, 48):
        x = Tensor(RR.normal(size=(1, 1, hw, hw)).astype(np.float32))
        e = en.embed(x, store, "f", cfg)
        assert e.shape == (1, cfg.embed_dim, hw, hw)


def test_embed_rejects_indivisible_dims(setup8):
    cfg, store = setup8
    with pytest.raises(ValueError):
        en.embed(Tensor(np.zeros((1, 1, 20, 20), np.float32)), store, "f", cfg)


def test_embed_zero_weights_zero_output(setup8):
    cfg, _ = setup8
    store = en.init_params(cfg, seed=9)
    for name, t in store.items():
        if name.endswith(".w") or name.endswith(".b"):
            t.data[:] = 0
    x = Tensor(RR.normal(size=(1, 1, 32, 32)).astype(np.float32))
    assert np.all(en.embed(x, store, "g", cfg).data == 0)


def test_embed_deterministic(setup8):
    cfg, store = setup8
    x = Tensor(RR.normal(size=(1, 1, 32, 32)).astype(np.float32))
    e1 = en.embed(x, store, "g", cfg)
    e2 = en.embed(Tensor(x.data.copy()), store, "g", cfg)
    assert np.array_equal(e1.data, e2.data)


def test_f_and_g_have_independent_weights(setup8):
    _, store = setup8
    assert not np.array_equal(store["f.enc0.c1.w"].data, store["g.enc0.c1.w"].data)


def test_code_shape_downsample_8(setup8):
    cfg, store = setup8
    x = Tensor(RR.normal(size=(1, cfg.embed_dim, 48, 48)).astype(np.float32))
    probs, bits = en.compress_forward(x, store, cfg)
    assert bits.shape == (1, cfg.code_channels, 6, 6)
    assert probs.shape == bits.shape


def test_code_shape_downsample_16(setup16):
    cfg, store = setup16
    x = Tensor(RR.normal(size=(1, cfg.embed_dim, 48, 48)).astype(np.float32))
    _, bits = en.compress_forward(x, store, cfg)
    assert bits.shape == (1, cfg.code_channels, 3, 3)


def test_at_most_one_bit_per_group(setup8):
    cfg, store = setup8
    x = Tensor(RR.normal(size=(2, cfg.embed_dim, 32, 32)).astype(np.float32) * 3)
    _, bits = en.compress_forward(x, store, cfg)
    v = bits.data.reshape(2, cfg.groups, cfg.group_size, 4, 4)
    assert v.sum(axis=2).max() <= 1


def test_decode_shape(setup8):
    cfg, store = setup8
    sym = RR.integers(0, cfg.group_size + 1, size=(cfg.groups, 5, 7)).astype(np.uint8)
    code = codec.desymbolize(codec.SymbolMap(sym, cfg.groups, cfg.group_size))
    out = en.decode(code, store, cfg)
    assert out.shape == (1, cfg.embed_dim, 40, 56)


def test_decode_is_function_of_bits_only(setup8):
    cfg, store = setup8
    bits = np.zeros((cfg.code_channels, 4, 4), np.uint8)
    bits[3, 1, 2] = 1
    bits[9, 0, 0] = 1
    c1 = codec.GroupedCode(bits.copy(), cfg.groups, cfg.group_size)
    c2 = codec.GroupedCode(bits.copy(), cfg.groups, cfg.group_size)
    assert np.array_equal(en.decode(c1, store, cfg).data, en.decode(c2, store, cfg).data)


def test_decode_after_codec_roundtrip_bit_exact(setup8):
    cfg, store = setup8
    emb = Tensor(RR.normal(size=(1, cfg.embed_dim, 32, 32)).astype(np.float32))
    code = en.compress_encode(emb, store, cfg)
    cm = codec.encode_map(code, GridSpec(32, 32, 0.05), cfg.downsample)
    code2 = codec.decode_map(codec.parse(codec.serialize(cm)))
    d1 = en.decode(code, store, cfg)
    d2 = en.decode(code2, store, cfg)
    assert np.array_equal(d1.data, d2.data)


def test_end_to_end_gradients_flow(setup8):
    from .conftest import genericize
    cfg, _ = setup8
    store = genericize(en.init_params(cfg, seed=5), seed=3)
    x = Tensor(RR.normal(size=(1, 1, 32, 32)).astype(np.float32))
    store.zero_grads()
    g_emb = en.embed(x, store, "g", cfg)
    probs, bits = en.compress_forward(g_emb, store, cfg)
    dec = en.decode(bits, store, cfg)
    loss = ag.add(ag.mse(dec, Tensor(np.ones(dec.shape, np.float32))),
                  ag.scale(ag.entropy_sum(ag.mean_over(probs, (0, 2, 3))), 0.1))
    loss.backward()
    n_nonzero = 0
    for name, p in store.items():
        if name.startswith(("g.", "comp.")):
            assert p.grad is not None, name
            assert np.all(np.isfinite(p.grad)), name
            n_nonzero += int(np.any(p.grad != 0))
    # straight-through keeps the whole chain alive
    assert n_nonzero > 40


def test_param_checkpoint_includes_config(tmp_path, setup16):
    cfg, store = setup16
    path = tmp_path / "m.ckpt"
    en.save_params(path, store, cfg)
    store2, cfg2 = en.load_params(path)
    assert cfg2 == cfg
    assert store2.names() == store.names()


def test_net_config_validation():
    with pytest.raises(ValueError):
        en.NetConfig(downsample=4)
    with pytest.raises(ValueError):
        en.NetConfig(groups=0)


def test_trainable_subsets(setup8):
    cfg, store = setup8
    store.set_trainable(("f.", "g.", "comp."), True)
    store.set_trainable(("comp.",), False)
    names = set(store.trainable())
    assert all(not n.startswith("comp.") for n in names)
    assert any(n.startswith("f.") for n in names)
    store.set_trainable(("f.", "g.", "comp."), True)
