"""Embedding and compression networks.

Three networks share one parameter store:
  * `f.*` / `g.*`: U-Net embedders for online sweeps and maps. Identical
    architecture, independent weights. Encoder: four blocks of
    [3x3 s1, 3x3 s1, 3x3 s2]; decoder: four blocks of [3x3 deconv s2,
    3x3 s1] with additive skip connections; final depth = embed_dim at the
    input resolution.
  * `comp.enc.*`: fully convolutional residual encoder (two residual blocks
    per scale, stride-2 3x3 between scales) ending in grouped-softmax
    binarization. The 16x variant appends one extra scale.
  * `comp.dec.*`: transposed-convolution decoder recovering the full
    resolution embedding from the binary code.

PReLU activations throughout; He-normal kernel init, slope 0.25, zero biases.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .codec import GroupedCode
from .rng import Rng


@dataclass
class NetConfig:
    embed_channels: tuple = (8, 16, 32, 64)
    embed_dim: int = 8
    comp_channels: tuple = (8, 16, 32, 64)
    downsample: int = 8
    groups: int = 8
    group_size: int = 8
    in_channels: int = 1
    logit_cap: float = 2.5  # bounds binarizer logits; keeps softmax gradients alive

    def __post_init__(self):
        if self.downsample not in (8, 16):
            raise ValueError("downsample factor must be 8 or 16")
        if min(self.embed_channels) < 1 or min(self.comp_channels) < 1:
            raise ValueError("channel counts must be >= 1")
        if self.groups < 1 or self.group_size < 1:
            raise ValueError("groups and group size must be >= 1")

    @property
    def code_channels(self) -> int:
        return self.groups * self.group_size

    @property
    def comp_scales(self) -> tuple:
        scales = tuple(self.comp_channels)
        if self.downsample == 16:
            scales = scales + (scales[-1],)
        return scales


class ParamStore:
    """Ordered named parameter tensors; insertion order fixes checkpoint and
    optimizer-state layout."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params.keys())

    def as_dict(self) -> "OrderedDict[str, Tensor]":
        return self._params

    def trainable(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((n, p) for n, p in self._params.items() if p.requires_grad)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def set_trainable(self, prefixes, flag: bool) -> None:
        for name, p in self._params.items():
            if any(name.startswith(pre) for pre in prefixes):
                p.requires_grad = flag

    def snapshot(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self._params.items())

    def restore(self, arrays) -> None:
        for n, arr in arrays.items():
            self._params[n].data = arr.copy()


# ---------------------------------------------------------------------------
# initialization


def _he_conv(rng: Rng, cout: int, cin: int, k: int = 3) -> np.ndarray:
    std = np.sqrt(2.0 / (cin * k * k))
    return (rng.normal((cout, cin, k, k)) * std).astype(np.float32)


def _add_conv(store: ParamStore, rng: Rng, name: str, cin: int, cout: int,
              act: bool = True) -> None:
    store.add(name + ".w", _he_conv(rng, cout, cin))
    store.add(name + ".b", np.zeros(cout, dtype=np.float32))
    if act:
        store.add(name + ".slope", np.full(cout, 0.25, dtype=np.float32))


def _add_deconv(store: ParamStore, rng: Rng, name: str, cin: int, cout: int,
                act: bool = True) -> None:
    # deconv kernels use the conv layout (cin, cout, k, k); see ops.deconv2d
    std = np.sqrt(2.0 / (cin * 9))
    store.add(name + ".w", (rng.normal((cin, cout, 3, 3)) * std).astype(np.float32))
    store.add(name + ".b", np.zeros(cout, dtype=np.float32))
    if act:
        store.add(name + ".slope", np.full(cout, 0.25, dtype=np.float32))


def _init_embedder(store: ParamStore, prefix: str, cfg: NetConfig, rng: Rng) -> None:
    cs = cfg.embed_channels
    cin = cfg.in_channels
    for i, c in enumerate(cs):
        _add_conv(store, rng, f"{prefix}.enc{i}.c1", cin, c)
        _add_conv(store, rng, f"{prefix}.enc{i}.c2", c, c)
        _add_conv(store, rng, f"{prefix}.enc{i}.down", c, c)
        cin = c
    for i in reversed(range(len(cs))):
        _add_deconv(store, rng, f"{prefix}.dec{i}.up", cin, cs[i])
        cout = cs[i - 1] if i > 0 else cfg.embed_dim
        _add_conv(store, rng, f"{prefix}.dec{i}.c1", cs[i], cout, act=(i > 0))
        cin = cout


def _init_compressor(store: ParamStore, cfg: NetConfig, rng: Rng) -> None:
    scales = cfg.comp_scales
    _add_conv(store, rng, "comp.enc.entry", cfg.embed_dim, scales[0])
    for s, c in enumerate(scales):
        for j in range(2):
            _add_conv(store, rng, f"comp.enc.s{s}.rb{j}.c1", c, c)
            # residual branches start at zero so the encoder opens as the
            # identity and activations stay at the entry scale
            _add_conv(store, rng, f"comp.enc.s{s}.rb{j}.c2", c, c, act=False)
            store[f"comp.enc.s{s}.rb{j}.c2.w"].data[:] = 0.0
            store.add(f"comp.enc.s{s}.rb{j}.act", np.full(c, 0.25, dtype=np.float32))
        if s < len(scales) - 1:
            _add_conv(store, rng, f"comp.enc.s{s}.down", c, scales[s + 1])
    _add_conv(store, rng, "comp.enc.head", scales[-1], cfg.code_channels, act=False)
    # small head init keeps the binarizer logits inside the clip band
    store["comp.enc.head.w"].data *= 0.25

    _add_conv(store, rng, "comp.dec.entry", cfg.code_channels, scales[-1])
    for s in reversed(range(1, len(scales))):
        _add_deconv(store, rng, f"comp.dec.up{s}", scales[s], scales[s - 1])
    _add_conv(store, rng, "comp.dec.final", scales[0], cfg.embed_dim, act=False)


def init_params(cfg: NetConfig, seed: int) -> ParamStore:
    """Fresh parameter store for f, g, and the compression encoder/decoder."""
    store = ParamStore()
    rng = Rng(seed)
    _init_embedder(store, "f", cfg, rng.spawn(1))
    _init_embedder(store, "g", cfg, rng.spawn(2))
    _init_compressor(store, cfg, rng.spawn(3))
    return store


# ---------------------------------------------------------------------------
# forward passes


def _conv(store: ParamStore, name: str, x: Tensor, stride: int = 1,
          act: bool = True) -> Tensor:
    y = ag.conv2d(x, store[name + ".w"], store[name + ".b"], stride=stride)
    if act:
        y = ag.prelu(y, store[name + ".slope"])
    return y


def _deconv(store: ParamStore, name: str, x: Tensor, act: bool = True) -> Tensor:
    y = ag.deconv2d(x, store[name + ".w"], store[name + ".b"])
    if act:
        y = ag.prelu(y, store[name + ".slope"])
    return y


def embed(x, store: ParamStore, prefix: str, cfg: NetConfig) -> Tensor:
    """U-Net embedding: (B, in_channels, H, W) -> (B, embed_dim, H, W).

    H and W must be divisible by 16 (four stride-2 levels).
    """
    x = ag.as_tensor(x)
    if x.ndim != 4:
        raise ValueError("embed expects a (B, C, H, W) tensor")
    H, W = x.shape[2], x.shape[3]
    if H % 16 or W % 16:
        raise ValueError(f"spatial dims ({H}, {W}) must be divisible by 16")
    cs = cfg.embed_channels
    skips = []
    for i in range(len(cs)):
        x = _conv(store, f"{prefix}.enc{i}.c1", x)
        x = _conv(store, f"{prefix}.enc{i}.c2", x)
        skips.append(x)
        x = _conv(store, f"{prefix}.enc{i}.down", x, stride=2)
    for i in reversed(range(len(cs))):
        x = _deconv(store, f"{prefix}.dec{i}.up", x)
        x = ag.add(x, skips[i])
        x = _conv(store, f"{prefix}.dec{i}.c1", x, act=(i > 0))
    return x


def compress_forward(map_emb, store: ParamStore, cfg: NetConfig) -> tuple[Tensor, Tensor]:
    """Residual encoder + grouped softmax + straight-through binarizer.

    Returns (probs, bits), both (B, G*K, H/d, W/d); gradients flow through
    the binarizer unchanged.
    """
    x = ag.as_tensor(map_emb)
    scales = cfg.comp_scales
    x = _conv(store, "comp.enc.entry", x)
    for s in range(len(scales)):
        for j in range(2):
            h = _conv(store, f"comp.enc.s{s}.rb{j}.c1", x)
            h = _conv(store, f"comp.enc.s{s}.rb{j}.c2", h, act=False)
            x = ag.prelu(ag.add(x, h), store[f"comp.enc.s{s}.rb{j}.act"])
        if s < len(scales) - 1:
            x = _conv(store, f"comp.enc.s{s}.down", x, stride=2)
    logits = _conv(store, "comp.enc.head", x, act=False)
    if cfg.logit_cap > 0:
        logits = ag.clip_st(logits, cfg.logit_cap)
    probs = ag.grouped_softmax(logits, cfg.group_size)
    bits = ag.binarize_st(probs, cfg.group_size)
    return probs, bits


def decode(code, store: ParamStore, cfg: NetConfig) -> Tensor:
    """Decode binary codes back to a full-resolution embedding.

    `code` may be a GroupedCode (single map) or a (B, G*K, h, w) tensor of
    0/1 bit activations (training path).
    """
    if isinstance(code, GroupedCode):
        x = ag.as_tensor(code.bits.astype(np.float32)[None])
    else:
        x = ag.as_tensor(code)
    scales = cfg.comp_scales
    x = _conv(store, "comp.dec.entry", x)
    for s in reversed(range(1, len(scales))):
        x = _deconv(store, f"comp.dec.up{s}", x)
    return _conv(store, "comp.dec.final", x, act=False)


def compress_encode(map_emb, store: ParamStore, cfg: NetConfig) -> GroupedCode:
    """Binarize a single map embedding into a GroupedCode."""
    x = ag.as_tensor(map_emb)
    if x.ndim == 3:
        x = ag.as_tensor(x.data[None])
    if x.shape[0] != 1:
        raise ValueError("compress_encode works on a single map")
    _, bits = compress_forward(Tensor(x.data), store, cfg)
    return GroupedCode(bits.data[0].astype(np.uint8), cfg.groups, cfg.group_size)


# ---------------------------------------------------------------------------
# checkpointing (config stored as pseudo-entries so files are self-contained)


def store_to_arrays(store: ParamStore, cfg: NetConfig) -> "OrderedDict[str, np.ndarray]":
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    out["__cfg.embed_channels"] = np.asarray(cfg.embed_channels, dtype=np.float32)
    out["__cfg.embed_dim"] = np.asarray([cfg.embed_dim], dtype=np.float32)
    out["__cfg.comp_channels"] = np.asarray(cfg.comp_channels, dtype=np.float32)
    out["__cfg.downsample"] = np.asarray([cfg.downsample], dtype=np.float32)
    out["__cfg.groups"] = np.asarray([cfg.groups], dtype=np.float32)
    out["__cfg.group_size"] = np.asarray([cfg.group_size], dtype=np.float32)
    out["__cfg.in_channels"] = np.asarray([cfg.in_channels], dtype=np.float32)
    out["__cfg.logit_cap"] = np.asarray([cfg.logit_cap], dtype=np.float32)
    for name, p in store.items():
        out[name] = p.data
    return out


def arrays_to_store(arrays) -> tuple[ParamStore, NetConfig]:
    cfg = NetConfig(
        embed_channels=tuple(int(v) for v in arrays["__cfg.embed_channels"]),
        embed_dim=int(arrays["__cfg.embed_dim"][0]),
        comp_channels=tuple(int(v) for v in arrays["__cfg.comp_channels"]),
        downsample=int(arrays["__cfg.downsample"][0]),
        groups=int(arrays["__cfg.groups"][0]),
        group_size=int(arrays["__cfg.group_size"][0]),
        in_channels=int(arrays["__cfg.in_channels"][0]),
        logit_cap=float(arrays.get("__cfg.logit_cap", [2.5])[0]),
    )
    store = ParamStore()
    for name, arr in arrays.items():
        if not name.startswith("__cfg."):
            store.add(name, arr)
    return store, cfg


def save_params(path, store: ParamStore, cfg: NetConfig) -> None:
    ag.save_checkpoint(path, store_to_arrays(store, cfg))


def load_params(path) -> tuple[ParamStore, NetConfig]:
    return arrays_to_store(ag.load_checkpoint(path))
