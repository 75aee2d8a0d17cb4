import dataclasses

import numpy as np
import pytest

from fdct import nn
from fdct.denoiser import (ConfigError, DenoiserConfig, FhdConfig, LdfConfig, UnetConfig,
                           architecture_dict, denoise, dilated_attention, feed_forward,
                           ffd_forward, fhd_forward, fld_forward, init_params, ldf_fuse,
                           mhda_block, mhsa, ssla, unet_forward)
from fdct.frequency import decompose
from fdct.nn import Initializer, ParameterStore, Tensor
from fdct.training import restoration_loss
from oracles import attention_loop, central_diff, layer_norm_rows, rel_err


def attention_params(dim, seed=0, norm=True, ffn=False):
    store = ParameterStore()
    init = Initializer(store, seed)
    if norm:
        init.norm("attn.norm", dim)
        store["attn.norm.g"].data = np.random.default_rng(seed + 1).uniform(0.5, 1.5, dim)
        store["attn.norm.b"].data = np.random.default_rng(seed + 2).normal(0, 0.1, dim)
    for proj in "qkvo":
        init.linear(f"attn.{proj}", dim, dim)
        store[f"attn.{proj}.b"].data = np.random.default_rng(seed + ord(proj)).normal(0, 0.1, dim)
    if ffn:
        init.norm("ffn.norm", dim)
        init.linear("ffn.fc1", dim, 2 * dim)
        init.linear("ffn.fc2", 2 * dim, dim)
    return store


def loop_oracle(tokens, store, n_heads, keys=None, queries=None, prefix="attn"):
    """Residual attention output for ``queries`` using the brute-force oracle."""
    g = lambda k: store[f"{prefix}.{k}"].data  # noqa: E731
    y = layer_norm_rows(tokens, g("norm.g"), g("norm.b")) if f"{prefix}.norm.g" in store else tokens
    heads = attention_loop(y, g("q.w"), g("q.b"), g("k.w"), g("k.b"), g("v.w"), g("v.b"),
                           n_heads, keys, queries)
    rows = list(range(len(tokens))) if queries is None else queries
    return tokens[rows] + heads @ g("o.w") + g("o.b")


# -- global attention ---------------------------------------------------------------

def test_mhsa_matches_pairwise_loop_oracle(rng):
    tokens = rng.normal(size=(6, 8))
    store = attention_params(8)
    out = mhsa(Tensor(tokens), store.prefixed("attn"), 2).data
    np.testing.assert_allclose(out, loop_oracle(tokens, store, 2), atol=1e-6, rtol=0)


def test_mhsa_without_norm(rng):
    tokens = rng.normal(size=(5, 6))
    store = attention_params(6, norm=False)
    out = mhsa(Tensor(tokens), store.prefixed("attn"), 3).data
    np.testing.assert_allclose(out, loop_oracle(tokens, store, 3), atol=1e-6, rtol=0)


def test_mhsa_single_token(rng):
    tokens = rng.normal(size=(1, 4))
    store = attention_params(4, norm=False)
    out, weights = mhsa(Tensor(tokens), store.prefixed("attn"), 2, return_weights=True)
    assert np.all(weights == 1.0)
    v = tokens @ store["attn.v.w"].data + store["attn.v.b"].data
    want = v @ store["attn.o.w"].data + store["attn.o.b"].data
    np.testing.assert_allclose(out.data - tokens, want, atol=1e-12)


def test_mhsa_weights_are_distributions(rng):
    store = attention_params(8)
    _, w = mhsa(Tensor(rng.normal(size=(11, 8)) * 5), store.prefixed("attn"), 4,
                return_weights=True)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)


def test_mhsa_head_divisibility():
    with pytest.raises(ConfigError):
        mhsa(Tensor(np.zeros((3, 5))), attention_params(5).prefixed("attn"), 2)


# -- sliding sparse local attention ------------------------------------------------

def test_ssla_full_window_matches_dense_at_centre(rng):
    grid = rng.normal(size=(5, 5, 6))
    store = attention_params(6, seed=3)
    out = ssla(Tensor(grid), 5, 1, store.prefixed("attn"), 2).data
    want = loop_oracle(grid.reshape(25, 6), store, 2, queries=[12])
    np.testing.assert_allclose(out[2, 2], want[0], atol=1e-6, rtol=0)


def test_ssla_wide_window_equals_mhsa_everywhere(rng):
    grid = rng.normal(size=(4, 5, 6))
    store = attention_params(6, seed=4)
    local = ssla(Tensor(grid), 9, 1, store.prefixed("attn"), 3).data
    dense = mhsa(Tensor(grid.reshape(20, 6)), store.prefixed("attn"), 3).data
    np.testing.assert_allclose(local.reshape(20, 6), dense, atol=1e-6, rtol=0)


def test_ssla_single_cell(rng):
    grid = rng.normal(size=(1, 1, 4))
    store = attention_params(4, norm=False)
    out = ssla(Tensor(grid), 3, 2, store.prefixed("attn"), 2).data
    v = grid[0, 0] @ store["attn.v.w"].data + store["attn.v.b"].data
    want = v @ store["attn.o.w"].data + store["attn.o.b"].data
    np.testing.assert_allclose(out[0, 0] - grid[0, 0], want, atol=1e-12)


def generic_params(cfg, seed):
    """Initial parameters with random biases, so no ReLU input sits exactly at 0."""
    params = init_params(cfg, seed)
    r = np.random.default_rng(seed + 100)
    for name in params.names():
        if name.endswith(".b"):
            params[name].data = r.normal(0.0, 0.1, params[name].shape)
    return params


def influence_set(fn, grid, centre):
    """Grid cells whose perturbation changes ``fn(grid)`` at ``centre`` (bitwise)."""
    base = fn(grid)[centre]
    # a random direction; a constant shift would vanish under layer norm
    bump = np.random.default_rng(0).normal(size=grid.shape[-1])
    hit = set()
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            g = grid.copy()
            g[i, j] += bump
            if not np.array_equal(fn(g)[centre], base):
                hit.add((i, j))
    return hit


def test_ssla_dilated_neighbourhood(rng):
    grid = rng.normal(size=(5, 5, 4))
    store = attention_params(4, seed=5)
    fn = lambda g: ssla(Tensor(g), 3, 2, store.prefixed("attn"), 2).data  # noqa: E731
    assert influence_set(fn, grid, (2, 2)) == {(i, j) for i in (0, 2, 4) for j in (0, 2, 4)}


@pytest.mark.parametrize("rate,extent", [(1, 3), (2, 5), (3, 7)])
def test_receptive_field_extent(rate, extent, rng):
    grid = rng.normal(size=(9, 9, 4))
    store = attention_params(4, seed=6)
    fn = lambda g: ssla(Tensor(g), 3, rate, store.prefixed("attn"), 2).data  # noqa: E731
    hit = influence_set(fn, grid, (4, 4))
    rows = [i for i, _ in hit]
    cols = [j for _, j in hit]
    assert max(rows) - min(rows) + 1 == extent
    assert max(cols) - min(cols) + 1 == extent
    assert len(hit) == 9


def test_mixed_rates_bounded_by_seven(rng):
    grid = rng.normal(size=(11, 11, 6))
    store = attention_params(6, seed=7)
    fn = lambda g: dilated_attention(Tensor(g), store.prefixed("attn"), 3, 3,  # noqa: E731
                                     (1, 2, 3)).data
    hit = influence_set(fn, grid, (5, 5))
    assert max(max(abs(i - 5), abs(j - 5)) for i, j in hit) == 3
    # nothing at Chebyshev distance 4
    assert all(max(abs(i - 5), abs(j - 5)) <= 3 for i, j in hit)


def test_local_weights_are_distributions_over_valid_cells(rng):
    store = attention_params(6, seed=8)
    collected = []
    dilated_attention(Tensor(rng.normal(size=(5, 6, 6)) * 4), store.prefixed("attn"), 3, 3,
                      (1, 2, 3), weights_out=collected)
    assert len(collected) == 3
    for att, mask in collected:
        assert np.all(att >= 0)
        np.testing.assert_allclose(att.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(att[~np.broadcast_to(mask[:, :, None, :], att.shape)] == 0.0)


def test_mhda_single_rate_equals_ssla_plus_feed_forward(rng):
    grid = rng.normal(size=(4, 4, 6))
    store = attention_params(6, seed=9, ffn=True)
    p = store.prefixed("")
    block = mhda_block(Tensor(grid), p, 3, 3, (2,)).data
    manual = feed_forward(ssla(Tensor(grid), 3, 2, p.sub("attn"), 3), p.sub("ffn")).data
    assert np.array_equal(block, manual)
    assert block.shape == grid.shape


def test_dilation_partition_validation():
    store = attention_params(6)
    with pytest.raises(ConfigError):
        dilated_attention(Tensor(np.zeros((3, 3, 6))), store.prefixed("attn"), 3, 3, (1, 2))
    with pytest.raises(ValueError):
        dilated_attention(Tensor(np.zeros((3, 3, 6))), store.prefixed("attn"), 3, 2, (1,))


# -- branches --------------------------------------------------------------------

def test_fhd_shape_determinism_and_time_sensitivity(small_den_cfg, rng):
    x = rng.normal(size=(16, 12))
    for seed in range(10):
        params = init_params(small_den_cfg, seed)
        a = fhd_forward(x, 3, params, small_den_cfg.fhd).data
        assert a.shape == x.shape
        assert np.array_equal(a, fhd_forward(x, 3, params, small_den_cfg.fhd).data)
        assert not np.array_equal(a, fhd_forward(x, 4, params, small_den_cfg.fhd).data)


def test_fhd_rejects_indivisible_input(small_den_cfg):
    with pytest.raises(ValueError):
        fhd_forward(np.zeros((10, 16)), 1, init_params(small_den_cfg, 0), small_den_cfg.fhd)


def test_unet_shapes_and_independent_branches(small_den_cfg, rng):
    params = init_params(small_den_cfg, 0)
    x = rng.normal(size=(16, 8))
    low = fld_forward(x, 2, params, small_den_cfg.unet).data
    full = ffd_forward(x, 2, params, small_den_cfg.unet).data
    assert low.shape == full.shape == x.shape
    assert not np.array_equal(low, full)
    with pytest.raises(ValueError):
        fld_forward(np.zeros((6, 8)), 1, params, small_den_cfg.unet)


def test_unet_gradient(small_den_cfg, rng):
    params = generic_params(small_den_cfg, 1)
    x, target = rng.normal(size=(2, 8, 8))
    names = [n for n in params.names() if n.startswith("fld.")]

    def loss_value():
        out = unet_forward(x, 2, params, small_den_cfg.unet, "fld")
        return restoration_loss(out, target)

    grads = dict(zip(names, nn.backward(loss_value(), [params[n] for n in names])))
    for name in names:
        t = params[name]
        orig = t.data.copy()

        def f(v):
            t.data = v
            val = float(loss_value().data)
            t.data = orig
            return val
        coords = np.random.default_rng(len(name)).choice(orig.size, min(4, orig.size),
                                                         replace=False)
        num = central_diff(f, orig, h=1e-5, coords=coords)
        assert rel_err(grads[name].ravel()[coords], num.ravel()[coords]) < 1e-4, name


# -- fusion ----------------------------------------------------------------------

def averaging_ldf(kernel=3):
    cfg = LdfConfig(hidden_channels=1, n_layers=3, kernel=kernel, direct_path=False)
    store = ParameterStore()
    mid = kernel // 2
    w0 = np.zeros((1, 3, kernel, kernel))
    w0[0, :, mid, mid] = 1 / 3
    store.add("ldf.c0.w", w0)
    store.add("ldf.c0.b", np.zeros(1))
    ident = np.zeros((1, 1, kernel, kernel))
    ident[0, 0, mid, mid] = 1.0
    store.add("ldf.c1.w", ident)
    store.add("ldf.c1.b", np.zeros(1))
    store.add("ldf.out.w", ident.copy())
    store.add("ldf.out.b", np.zeros(1))
    return cfg, store


def test_ldf_constructed_weights_average_inputs(rng):
    cfg, store = averaging_ldf()
    # positive inputs so the hidden ReLUs pass everything through
    h, lo, fu = rng.uniform(0.1, 2.0, size=(3, 8, 8))
    out = ldf_fuse(h, lo, fu, store, cfg).data
    assert out.shape == h.shape
    np.testing.assert_allclose(out, (h + lo + fu) / 3, atol=1e-6)


def test_ldf_direct_path_adds_weighted_inputs(rng):
    cfg, store = averaging_ldf()
    cfg = dataclasses.replace(cfg, direct_path=True)
    store.add("ldf.direct", np.array([0.2, 0.3, 0.5]))
    h, lo, fu = rng.uniform(0.1, 2.0, size=(3, 8, 8))
    out = ldf_fuse(h, lo, fu, store, cfg, scale=0.1).data
    np.testing.assert_allclose(out, 0.1 * (h + lo + fu) / 3 + 0.2 * h + 0.3 * lo + 0.5 * fu,
                               atol=1e-12)


def test_ldf_gradient_reaches_every_branch(small_den_cfg, rng):
    params = generic_params(small_den_cfg, 2)
    inputs = rng.normal(size=(3, 8, 8))
    target = rng.normal(size=(8, 8))

    def build(h, lo, fu):
        return restoration_loss(ldf_fuse(h, lo, fu, params, small_den_cfg.ldf, 0.3), target)

    leaves = [Tensor(a, requires_grad=True) for a in inputs]
    grads = nn.backward(build(*leaves), leaves)
    for i in range(3):
        def f(x, i=i):
            args = [x if j == i else inputs[j] for j in range(3)]
            return float(build(*args).data)
        num = central_diff(f, inputs[i], h=1e-6)
        assert np.abs(grads[i]).max() > 0
        assert rel_err(grads[i], num) < 1e-4


def test_ldf_shape_validation(small_den_cfg):
    params = init_params(small_den_cfg, 0)
    with pytest.raises(ValueError):
        ldf_fuse(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 8)), params, small_den_cfg.ldf)


# -- full denoiser -----------------------------------------------------------------

def test_denoise_is_the_composition(small_den_cfg, rng):
    params = init_params(small_den_cfg, 0)
    x = rng.normal(size=(16, 16))
    s = small_den_cfg.residual_scale
    trip = decompose(x, small_den_cfg.sigma)
    manual = ldf_fuse(fhd_forward(trip.high, 5, params, small_den_cfg.fhd, s),
                      fld_forward(trip.low, 5, params, small_den_cfg.unet, s),
                      ffd_forward(trip.full, 5, params, small_den_cfg.unet, s),
                      params, small_den_cfg.ldf, s)
    assert np.array_equal(denoise(x, 5, params, small_den_cfg).data, manual.data)


def test_ffd_only_bypasses_fusion(small_den_cfg, rng):
    cfg = dataclasses.replace(small_den_cfg, use_fhd=False, use_fld=False)
    params = init_params(cfg, 0)
    x = rng.normal(size=(16, 16))
    want = ffd_forward(x, 2, params, cfg.unet, cfg.residual_scale).data
    assert np.array_equal(denoise(x, 2, params, cfg).data, want)


def test_sum_fusion_adds_high_and_low(small_den_cfg, rng):
    cfg = dataclasses.replace(small_den_cfg, fusion="sum")
    params = init_params(cfg, 0)
    x = rng.normal(size=(16, 16))
    trip = decompose(x, cfg.sigma)
    s = cfg.residual_scale
    want = (fhd_forward(trip.high, 1, params, cfg.fhd, s).data
            + fld_forward(trip.low, 1, params, cfg.unet, s).data)
    assert np.array_equal(denoise(x, 1, params, cfg).data, want)


def test_disabled_branch_is_fed_zeros(small_den_cfg, rng):
    cfg = dataclasses.replace(small_den_cfg, use_fhd=False)
    params = init_params(cfg, 0)
    x = rng.normal(size=(16, 16))
    trip = decompose(x, cfg.sigma)
    s = cfg.residual_scale
    want = ldf_fuse(np.zeros_like(x), fld_forward(trip.low, 1, params, cfg.unet, s),
                    ffd_forward(trip.full, 1, params, cfg.unet, s), params, cfg.ldf, s)
    assert np.array_equal(denoise(x, 1, params, cfg).data, want.data)


def test_denoise_shape_and_determinism(rng):
    cfg = DenoiserConfig(fhd=FhdConfig(embed_dim=12, n_heads=3, time_dim=8),
                         unet=UnetConfig(base_channels=4, time_embedding_dim=8))
    x = rng.normal(size=(32, 32))
    a = denoise(x, 7, init_params(cfg, 11), cfg).data
    b = denoise(x, 7, init_params(cfg, 11), cfg).data
    assert a.shape == (32, 32)
    assert np.array_equal(a, b)


def test_end_to_end_gradient(small_den_cfg, rng):
    params = generic_params(small_den_cfg, 3)
    x, target = rng.normal(size=(2, 16, 16))
    names = params.names()

    def loss_value():
        return restoration_loss(denoise(x, 4, params, small_den_cfg), target)

    grads = dict(zip(names, nn.backward(loss_value(), params.tensors())))
    pick = np.random.default_rng(0)
    for name in names:
        t = params[name]
        orig = t.data.copy()

        def f(v):
            t.data = v
            val = float(loss_value().data)
            t.data = orig
            return val
        coords = pick.choice(orig.size, min(2, orig.size), replace=False)
        num = central_diff(f, orig, h=1e-5, coords=coords).ravel()[coords]
        ana = grads[name].ravel()[coords]
        scale = max(np.abs(num).max(), np.abs(ana).max(), 1e-7)
        assert np.abs(num - ana).max() / scale < 1e-3, name


@pytest.mark.parametrize("kwargs", [
    {"fhd": {"embed_dim": 10, "n_heads": 3}},
    {"fhd": {"window": 4}},
    {"fhd": {"module_layout": ("MHSA", "CONV")}},
    {"fhd": {"n_heads": 4, "embed_dim": 8}},
    {"fhd": {"skip_links": ((3, 2),)}},
    {"unet": {"depth": 0}},
    {"ldf": {"kernel": 2}},
    {"fusion": "concat"},
    {"use_fhd": False, "use_fld": False, "use_ffd": False},
    {"fusion": "sum", "use_fld": False},
    {"sigma": 0.0},
    {"residual_scale": 0.0},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        sub = {"fhd": FhdConfig, "unet": UnetConfig, "ldf": LdfConfig}
        built = {k: sub[k](**v) if k in sub else v for k, v in kwargs.items()}
        DenoiserConfig(**built)


def test_architecture_dict_is_flat():
    arch = architecture_dict(DenoiserConfig())
    assert arch["fhd.embed_dim"] == 48
    assert arch["fhd.module_layout"][1] == "MHDA"
    assert arch["fhd.skip_links"][0] == [1, 10]
    assert all(not isinstance(v, dict) for v in arch.values())
