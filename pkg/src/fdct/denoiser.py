"""Frequency-split denoising network.

Three branches see the Gaussian low/high/full split of a sinogram: a
transformer for the high band (global MHSA modules interleaved with dilated
sliding-window attention) and two U-Nets for the low and full bands.  A small
convolutional network fuses the three outputs.

Every forward takes numpy inputs and returns a :class:`~fdct.nn.Tensor` so
training can backpropagate through it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import nn
from .frequency import decompose
from .nn import ParameterStore, ParameterView, Tensor

MHSA = "MHSA"
MHDA = "MHDA"
# attention module j = 1..10: MHSA at {1,4,5,6,9,10}, MHDA at {2,3,7,8}
DEFAULT_LAYOUT = (MHSA, MHDA, MHDA, MHSA, MHSA, MHSA, MHDA, MHDA, MHSA, MHSA)
DEFAULT_SKIPS = ((1, 10), (2, 9), (3, 8), (4, 7))
_MASKED = -1e30  # exp() underflows to exactly 0; stays finite for the debug check


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FhdConfig:
    patch_size: int = 4
    embed_dim: int = 48
    n_heads: int = 6
    module_layout: tuple[str, ...] = DEFAULT_LAYOUT
    window: int = 3
    dilations: tuple[int, ...] = (1, 2, 3)
    skip_links: tuple[tuple[int, int], ...] = DEFAULT_SKIPS
    mlp_ratio: int = 4
    time_dim: int = 32

    def __post_init__(self):
        if self.embed_dim % self.n_heads:
            raise ConfigError("fhd.embed_dim must be divisible by fhd.n_heads")
        if self.window % 2 == 0:
            raise ConfigError("fhd.window must be odd")
        if any(k not in (MHSA, MHDA) for k in self.module_layout):
            raise ConfigError(f"fhd.module_layout entries must be {MHSA} or {MHDA}")
        if MHDA in self.module_layout and self.n_heads % len(self.dilations):
            raise ConfigError("fhd.n_heads must be divisible by the number of dilations")
        n = len(self.module_layout)
        for src, dst in self.skip_links:
            if not 1 <= src < dst <= n:
                raise ConfigError(f"fhd.skip_links entry {(src, dst)} out of order/range")
        if len({dst for _, dst in self.skip_links}) != len(self.skip_links):
            raise ConfigError("fhd.skip_links targets must be unique")


@dataclass(frozen=True)
class UnetConfig:
    depth: int = 2
    base_channels: int = 16
    time_embedding_dim: int = 32

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1 or self.time_embedding_dim < 2:
            raise ConfigError("unet fields must be positive (time_embedding_dim >= 2)")


@dataclass(frozen=True)
class LdfConfig:
    hidden_channels: int = 32
    n_layers: int = 3
    kernel: int = 3
    direct_path: bool = True

    def __post_init__(self):
        if self.n_layers < 1 or self.hidden_channels < 1:
            raise ConfigError("ldf.n_layers and ldf.hidden_channels must be >= 1")
        if self.kernel % 2 == 0:
            raise ConfigError("ldf.kernel must be odd")


@dataclass(frozen=True)
class DenoiserConfig:
    sigma: float = 0.08
    fhd: FhdConfig = field(default_factory=FhdConfig)
    unet: UnetConfig = field(default_factory=UnetConfig)
    ldf: LdfConfig = field(default_factory=LdfConfig)
    use_fhd: bool = True
    use_fld: bool = True
    use_ffd: bool = True
    fusion: str = "ldf"  # or "sum": low + high, LDF and FFD bypassed
    # learned corrections are emitted in units of this (sinogram noise scale)
    residual_scale: float = 0.01

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if not self.residual_scale > 0:
            raise ConfigError("residual_scale must be > 0")
        if self.fusion not in ("ldf", "sum"):
            raise ConfigError(f"fusion must be 'ldf' or 'sum', got {self.fusion!r}")
        if not (self.use_fhd or self.use_fld or self.use_ffd):
            raise ConfigError("at least one branch must be enabled")
        if self.fusion == "sum" and not (self.use_fhd and self.use_fld):
            raise ConfigError("sum fusion needs both the high and low branches")

    @property
    def multiple(self) -> int:
        """Spatial dimensions must be divisible by this."""
        return math.lcm(self.fhd.patch_size, 2 ** self.unet.depth)


def architecture_dict(cfg: DenoiserConfig) -> dict:
    """Flat ``{dotted.field: value}`` view used to compare architectures."""
    out = {}

    def walk(obj, prefix):
        for f in fields(obj):
            v = getattr(obj, f.name)
            key = f"{prefix}{f.name}"
            if hasattr(v, "__dataclass_fields__"):
                walk(v, key + ".")
            elif isinstance(v, tuple):
                out[key] = [list(x) if isinstance(x, tuple) else x for x in v]
            else:
                out[key] = v
    walk(cfg, "")
    return out


# -- parameter construction --------------------------------------------------

def _init_attention(init: nn.Initializer, name: str, dim: int) -> None:
    init.norm(f"{name}.norm", dim)
    for proj in ("q", "k", "v", "o"):
        init.linear(f"{name}.{proj}", dim, dim)


def _init_ffn(init: nn.Initializer, name: str, dim: int, ratio: int) -> None:
    init.norm(f"{name}.norm", dim)
    init.linear(f"{name}.fc1", dim, dim * ratio)
    init.linear(f"{name}.fc2", dim * ratio, dim)


def init_fhd(init: nn.Initializer, cfg: FhdConfig, prefix: str = "fhd") -> None:
    c, p = cfg.embed_dim, cfg.patch_size
    init.linear(f"{prefix}.embed", p * p, c)
    init.linear(f"{prefix}.time1", cfg.time_dim, c)
    init.linear(f"{prefix}.time2", c, c)
    targets = {dst for _, dst in cfg.skip_links}
    for j, _ in enumerate(cfg.module_layout, 1):
        if j in targets:
            init.linear(f"{prefix}.skip{j}", 2 * c, c)
        _init_attention(init, f"{prefix}.m{j}.attn", c)
        _init_ffn(init, f"{prefix}.m{j}.ffn", c, cfg.mlp_ratio)
    init.norm(f"{prefix}.head_norm", c)
    init.linear(f"{prefix}.head", c, p * p)


def init_unet(init: nn.Initializer, cfg: UnetConfig, prefix: str) -> None:
    b, td = cfg.base_channels, cfg.time_embedding_dim
    init.linear(f"{prefix}.time", td, td)
    ch_in = 1
    for lvl in range(cfg.depth):
        ch = b * 2 ** lvl
        init.conv(f"{prefix}.enc{lvl}.c1", ch_in, ch, 3)
        init.conv(f"{prefix}.enc{lvl}.c2", ch, ch, 3)
        init.linear(f"{prefix}.enc{lvl}.t", td, ch)
        ch_in = ch
    ch = b * 2 ** cfg.depth
    init.conv(f"{prefix}.mid.c1", ch_in, ch, 3)
    init.conv(f"{prefix}.mid.c2", ch, ch, 3)
    init.linear(f"{prefix}.mid.t", td, ch)
    for lvl in reversed(range(cfg.depth)):
        skip = b * 2 ** lvl
        init.conv(f"{prefix}.dec{lvl}.c1", ch + skip, skip, 3)
        init.conv(f"{prefix}.dec{lvl}.c2", skip, skip, 3)
        init.linear(f"{prefix}.dec{lvl}.t", td, skip)
        ch = skip
    init.conv(f"{prefix}.out", ch, 1, 1)


def init_ldf(init: nn.Initializer, cfg: LdfConfig, prefix: str = "ldf") -> None:
    ch = 3
    for i in range(cfg.n_layers - 1):
        init.conv(f"{prefix}.c{i}", ch, cfg.hidden_channels, cfg.kernel)
        ch = cfg.hidden_channels
    init.conv(f"{prefix}.out", ch, 1, cfg.kernel)
    if cfg.direct_path:
        # starts as 0.5 * (high + low) + 0.5 * full, i.e. close to the input
        init.store.add(f"{prefix}.direct", np.full(3, 0.5))


def init_params(cfg: DenoiserConfig, seed: int) -> ParameterStore:
    """Parameters for all four networks, each from its own seeded stream."""
    store = ParameterStore()
    seeds = np.random.SeedSequence(seed).spawn(4)
    init_fhd(nn.Initializer(store, seeds[0]), cfg.fhd)
    init_unet(nn.Initializer(store, seeds[1]), cfg.unet, "fld")
    init_unet(nn.Initializer(store, seeds[2]), cfg.unet, "ffd")
    init_ldf(nn.Initializer(store, seeds[3]), cfg.ldf)
    return store


# -- building blocks ---------------------------------------------------------

def _lin(x: Tensor, p: ParameterView, name: str) -> Tensor:
    return nn.linear(x, p[f"{name}.w"], p[f"{name}.b"])


def _norm(x: Tensor, p: ParameterView, name: str) -> Tensor:
    return nn.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])


def timestep_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal embedding ``[sin(t f_i), cos(t f_i)]`` of length ``dim``."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = float(t) * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb


def position_encoding(h: int, w: int, dim: int) -> np.ndarray:
    """Fixed 2-D sinusoidal encoding, rows in the first half of channels."""
    half = dim // 2
    rows = np.stack([timestep_embedding(i, half) for i in range(h)])
    cols = np.stack([timestep_embedding(j, dim - half) for j in range(w)])
    return np.concatenate([np.broadcast_to(rows[:, None], (h, w, half)),
                           np.broadcast_to(cols[None, :], (h, w, dim - half))],
                          axis=-1)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    n, c = x.shape
    return x.reshape(n, n_heads, c // n_heads).transpose(1, 0, 2)


def mhsa(tokens: Tensor, p: ParameterView, n_heads: int,
         return_weights: bool = False):
    """Global multi-head self-attention with a residual connection.

    ``tokens`` is ``(N, C)``.  Queries, keys and values come from the
    layer-normalised tokens when ``p`` holds a ``norm`` entry, otherwise from
    the tokens themselves.
    """
    tokens = nn.as_tensor(tokens)
    n, c = tokens.shape
    if c % n_heads:
        raise ConfigError(f"embed dim {c} not divisible by {n_heads} heads")
    y = _norm(tokens, p, "norm") if "norm.g" in p else tokens
    q = _split_heads(_lin(y, p, "q"), n_heads)
    k = _split_heads(_lin(y, p, "k"), n_heads)
    v = _split_heads(_lin(y, p, "v"), n_heads)
    scores = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(c // n_heads))
    weights = nn.softmax(scores, axis=-1)
    heads = (weights @ v).transpose(1, 0, 2).reshape(n, c)
    out = tokens + _lin(heads, p, "o")
    return (out, weights.data) if return_weights else out


def _local_heads(q: Tensor, k: Tensor, v: Tensor, window: int, rate: int,
                 n_heads: int, weights_out: list | None = None) -> Tensor:
    h, w, c = q.shape
    d = c // n_heads
    kk = window * window
    ku, mask = nn.unfold(k, window, rate)
    vu, _ = nn.unfold(v, window, rate)
    qh = q.reshape(h * w, n_heads, 1, d)
    kh = ku.reshape(h * w, kk, n_heads, d).transpose(0, 2, 3, 1)
    vh = vu.reshape(h * w, kk, n_heads, d).transpose(0, 2, 1, 3)
    bias = np.where(mask, 0.0, _MASKED).reshape(h * w, 1, 1, kk)
    scores = (qh @ kh) * (1.0 / math.sqrt(d)) + bias
    att = nn.softmax(scores, axis=-1)
    if weights_out is not None:
        weights_out.append((att.data.reshape(h, w, n_heads, kk), mask))
    return (att @ vh).reshape(h, w, c)


def dilated_attention(grid: Tensor, p: ParameterView, n_heads: int, window: int,
                      rates: tuple[int, ...], weights_out: list | None = None) -> Tensor:
    """Sliding sparse local attention with heads split evenly across ``rates``.

    Returns ``grid + proj(attention)`` for a ``(H, W, C)`` grid.
    """
    grid = nn.as_tensor(grid)
    if window % 2 == 0:
        raise ValueError(f"window must be odd, got {window}")
    _, _, c = grid.shape
    parts = len(rates)
    if n_heads % parts or c % n_heads:
        raise ConfigError(f"{n_heads} heads / {c} channels cannot be split "
                          f"across {parts} dilation rates")
    y = _norm(grid, p, "norm") if "norm.g" in p else grid
    q, k, v = _lin(y, p, "q"), _lin(y, p, "k"), _lin(y, p, "v")
    if parts == 1:
        o = _local_heads(q, k, v, window, rates[0], n_heads, weights_out)
    else:
        cp, hp = c // parts, n_heads // parts
        outs = []
        for i, r in enumerate(rates):
            sl = (slice(None), slice(None), slice(i * cp, (i + 1) * cp))
            outs.append(_local_heads(q[sl], k[sl], v[sl], window, r, hp, weights_out))
        o = nn.concat(outs, axis=-1)
    return grid + _lin(o, p, "o")


def ssla(grid, window: int, rate: int, p: ParameterView, n_heads: int,
         weights_out: list | None = None) -> Tensor:
    """Single-rate sliding sparse local attention (with residual)."""
    return dilated_attention(grid, p, n_heads, window, (rate,), weights_out)


def feed_forward(x: Tensor, p: ParameterView) -> Tensor:
    h = nn.gelu(_lin(_norm(x, p, "norm"), p, "fc1"))
    return x + _lin(h, p, "fc2")


def mhsa_block(tokens: Tensor, p: ParameterView, n_heads: int) -> Tensor:
    return feed_forward(mhsa(tokens, p.sub("attn"), n_heads), p.sub("ffn"))


def mhda_block(grid: Tensor, p: ParameterView, n_heads: int, window: int,
               rates: tuple[int, ...]) -> Tensor:
    att = dilated_attention(grid, p.sub("attn"), n_heads, window, rates)
    return feed_forward(att, p.sub("ffn"))


def _check_dims(x: np.ndarray, multiple: int, what: str) -> None:
    if x.ndim != 2 or x.shape[0] % multiple or x.shape[1] % multiple:
        raise ValueError(f"{what}: spatial dims {x.shape} must be divisible by {multiple}")


# -- branches ----------------------------------------------------------------

def fhd_forward(g_high: np.ndarray, t: float, params: ParameterStore | ParameterView,
                cfg: FhdConfig, scale: float = 1.0) -> Tensor:
    """High-band transformer; returns ``g_high + scale * correction``."""
    p = params.sub("fhd") if isinstance(params, ParameterView) else params.prefixed("fhd")
    g_high = np.asarray(g_high, dtype=np.float64)
    ps = cfg.patch_size
    _check_dims(g_high, ps, "fhd_forward")
    H, W = g_high.shape
    h, w, c = H // ps, W // ps, cfg.embed_dim

    x = Tensor(g_high.reshape(h, ps, w, ps).transpose(0, 2, 1, 3).reshape(h, w, ps * ps))
    tok = _lin(x, p, "embed") + position_encoding(h, w, c)
    temb = Tensor(timestep_embedding(t, cfg.time_dim)[None, :])
    time_tok = _lin(nn.gelu(_lin(temb, p, "time1")), p, "time2")

    skip_from = {dst: src for src, dst in cfg.skip_links}
    outputs: dict[int, Tensor] = {}
    for j, kind in enumerate(cfg.module_layout, 1):
        if j in skip_from:
            tok = _lin(nn.concat([tok, outputs[skip_from[j]]], axis=-1), p, f"skip{j}")
        mp = p.sub(f"m{j}")
        if kind == MHSA:
            seq = nn.concat([tok.reshape(h * w, c), time_tok], axis=0)
            seq = mhsa_block(seq, mp, cfg.n_heads)
            tok = seq[: h * w].reshape(h, w, c)
        else:
            tok = mhda_block(tok + time_tok.reshape(1, 1, c), mp, cfg.n_heads,
                             cfg.window, cfg.dilations)
        outputs[j] = tok
    out = _lin(_norm(tok, p, "head_norm"), p, "head")
    out = out.reshape(h, w, ps, ps).transpose(0, 2, 1, 3).reshape(H, W)
    return out * scale + g_high


def unet_forward(x: np.ndarray, t: float, params: ParameterStore | ParameterView,
                 cfg: UnetConfig, prefix: str, scale: float = 1.0) -> Tensor:
    """U-Net returning ``x + scale * correction``."""
    p = params.sub(prefix) if isinstance(params, ParameterView) else params.prefixed(prefix)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(x, 2 ** cfg.depth, f"{prefix} U-Net")
    temb = Tensor(timestep_embedding(t, cfg.time_embedding_dim)[None, :])
    temb = nn.relu(_lin(temb, p, "time"))

    def stage(h: Tensor, name: str) -> Tensor:
        h = nn.conv2d(h, p[f"{name}.c1.w"], p[f"{name}.c1.b"])
        h = h + _lin(temb, p, f"{name}.t").reshape(-1, 1, 1)
        h = nn.relu(h)
        return nn.relu(nn.conv2d(h, p[f"{name}.c2.w"], p[f"{name}.c2.b"]))

    h = Tensor(x[None])
    skips = []
    for lvl in range(cfg.depth):
        h = stage(h, f"enc{lvl}")
        skips.append(h)
        h = nn.avg_pool2(h)
    h = stage(h, "mid")
    for lvl in reversed(range(cfg.depth)):
        h = nn.concat([nn.upsample2(h), skips[lvl]], axis=0)
        h = stage(h, f"dec{lvl}")
    out = nn.conv2d(h, p["out.w"], p["out.b"])
    return out.reshape(x.shape) * scale + x


def fld_forward(g_low, t, params, cfg: UnetConfig, scale: float = 1.0) -> Tensor:
    return unet_forward(g_low, t, params, cfg, "fld", scale)


def ffd_forward(g_full, t, params, cfg: UnetConfig, scale: float = 1.0) -> Tensor:
    return unet_forward(g_full, t, params, cfg, "ffd", scale)


def ldf_fuse(high, low, full, params: ParameterStore | ParameterView,
             cfg: LdfConfig, scale: float = 1.0) -> Tensor:
    """Fuse three same-shape branch outputs into one sinogram.

    The convolution stack output is multiplied by ``scale``; with
    ``cfg.direct_path`` a learned per-branch linear combination is added.
    """
    p = params.sub("ldf") if isinstance(params, ParameterView) else params.prefixed("ldf")
    branches = [nn.as_tensor(b) for b in (high, low, full)]
    shape = branches[0].shape
    if any(b.shape != shape for b in branches) or len(shape) != 2:
        raise ValueError(f"ldf_fuse needs three equal 2-D shapes, got "
                         f"{[b.shape for b in branches]}")
    X = nn.concat([b.reshape(1, *shape) for b in branches], axis=0)
    h = X
    for i in range(cfg.n_layers - 1):
        h = nn.relu(nn.conv2d(h, p[f"c{i}.w"], p[f"c{i}.b"]))
    out = nn.conv2d(h, p["out.w"], p["out.b"]).reshape(shape)
    if scale != 1.0:
        out = out * scale
    if cfg.direct_path:
        out = out + (X * p["direct"].reshape(3, 1, 1)).sum(axis=0)
    return out


def denoise(x_t: np.ndarray, t: float, params: ParameterStore,
            cfg: DenoiserConfig) -> Tensor:
    """Restore a clean-sinogram estimate from ``x_t``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    _check_dims(x_t, cfg.multiple, "denoise")
    split = decompose(x_t, cfg.sigma)
    s = cfg.residual_scale
    if cfg.fusion == "sum":
        return (fhd_forward(split.high, t, params, cfg.fhd, s)
                + fld_forward(split.low, t, params, cfg.unet, s))
    enabled = [cfg.use_fhd, cfg.use_fld, cfg.use_ffd]
    if sum(enabled) == 1:
        if cfg.use_ffd:
            return ffd_forward(split.full, t, params, cfg.unet, s)
        if cfg.use_fld:
            return fld_forward(split.low, t, params, cfg.unet, s)
        return fhd_forward(split.high, t, params, cfg.fhd, s)
    zeros = np.zeros_like(x_t)
    high = fhd_forward(split.high, t, params, cfg.fhd, s) if cfg.use_fhd else zeros
    low = fld_forward(split.low, t, params, cfg.unet, s) if cfg.use_fld else zeros
    full = ffd_forward(split.full, t, params, cfg.unet, s) if cfg.use_ffd else zeros
    return ldf_fuse(high, low, full, params, cfg.ldf, s)
