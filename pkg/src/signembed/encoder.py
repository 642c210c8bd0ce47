"""Dual-encoder network in plain numpy with hand-written backward passes.

Video tower: per-frame two-layer MLP projection of the flattened pose frame,
learned positional embeddings, pre-norm transformer blocks, final layer norm,
masked mean pooling over the true length, optional linear projection.
Text tower: token + positional embeddings, then the same block stack.

Parameters live in a flat ``dict[str, ndarray]``; every ``*_backward``
returns gradients under the same keys. The dtype of the parameters picks the
arithmetic: float64 for gradient verification, float32 for training.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError

LN_EPS = 1e-5
GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    vocab_size: int
    embed_dim: int = 64
    video_layers: int = 12
    text_layers: int = 6
    heads: int = 4
    ff_dim: int = 0  # 0 means 4 * embed_dim
    max_video_len: int = 256
    max_text_len: int = 64
    use_multimodal_projection: bool = False
    similarity: str = "dot"  # or "cosine"

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValidationError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        for name in ("input_dim", "vocab_size", "embed_dim", "heads", "max_video_len", "max_text_len"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.video_layers < 0 or self.text_layers < 0:
            raise ValidationError("layer counts must be non-negative")
        if self.similarity not in ("dot", "cosine"):
            raise ValidationError(f"unknown similarity {self.similarity!r}")

    @property
    def ff(self) -> int:
        return self.ff_dim or 4 * self.embed_dim

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ init


def _block_shapes(prefix: str, d: int, ff: int) -> dict[str, tuple]:
    s = {}
    for ln in ("ln1", "ln2"):
        s[f"{prefix}.{ln}.g"] = (d,)
        s[f"{prefix}.{ln}.b"] = (d,)
    for w in ("q", "k", "v", "o"):
        s[f"{prefix}.attn.w{w}"] = (d, d)
        if w != "k":
            # A key bias only shifts each score row by a constant: softmax ignores it.
            s[f"{prefix}.attn.b{w}"] = (d,)
    s[f"{prefix}.ff.w1"] = (d, ff)
    s[f"{prefix}.ff.b1"] = (ff,)
    s[f"{prefix}.ff.w2"] = (ff, d)
    s[f"{prefix}.ff.b2"] = (d,)
    return s


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    d, ff = config.embed_dim, config.ff
    s: dict[str, tuple] = {
        "video.proj.w1": (config.input_dim, d),
        "video.proj.b1": (d,),
        "video.proj.w2": (d, d),
        "video.proj.b2": (d,),
        "video.pos": (config.max_video_len, d),
    }
    for i in range(config.video_layers):
        s.update(_block_shapes(f"video.blocks.{i}", d, ff))
    s["video.ln_f.g"] = (d,)
    s["video.ln_f.b"] = (d,)
    s["text.tok"] = (config.vocab_size, d)
    s["text.pos"] = (config.max_text_len, d)
    for i in range(config.text_layers):
        s.update(_block_shapes(f"text.blocks.{i}", d, ff))
    s["text.ln_f.g"] = (d,)
    s["text.ln_f.b"] = (d,)
    if config.use_multimodal_projection:
        s["mm.video"] = (d, d)
        s["mm.text"] = (d, d)
    return s


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Seeded initialization: fan-in scaled normals, unit gains, zero biases."""
    rng = np.random.default_rng(seed)
    n_layers = max(config.video_layers, config.text_layers, 1)
    params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            p = np.ones(shape)
        elif len(shape) == 1:
            p = np.zeros(shape)
        elif leaf == "pos":
            p = rng.normal(0.0, 0.1, shape)
        elif leaf == "tok":
            p = rng.normal(0.0, 1.0, shape)
        else:
            std = 1.0 / math.sqrt(shape[0])
            if leaf in ("wo", "w2") and ".blocks." in name:
                std /= math.sqrt(2 * n_layers)
            p = rng.normal(0.0, std, shape)
        params[name] = p.astype(dtype)
    return params


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(p.size for p in params.values()))


def cast_params(params, dtype) -> dict[str, np.ndarray]:
    return {k: v.astype(dtype) for k, v in params.items()}


# ------------------------------------------------------------ primitives


def linear(x, w, b):
    return x @ w + b


def linear_backward(x, w, dy):
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, dw, dy.reshape(-1, dy.shape[-1]).sum(axis=0)


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + 0.044715 * x**3)))


def gelu_backward(x, dy):
    t = np.tanh(GELU_C * (x + 0.044715 * x**3))
    dt = (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layer_norm_backward(cache, g, dy):
    xhat, inv = cache
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    flat = dy.reshape(-1, dy.shape[-1])
    return dx, (flat * xhat.reshape(flat.shape)).sum(axis=0), flat.sum(axis=0)


def _split_heads(x, h):
    b, t, d = x.shape
    return x.reshape(b, t, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def attention(p, pre, x, mask, heads):
    """Multi-head self-attention; ``mask`` (batch x time) hides padded keys."""
    q = _split_heads(linear(x, p[pre + "wq"], p[pre + "bq"]), heads)
    k = _split_heads(x @ p[pre + "wk"], heads)
    v = _split_heads(linear(x, p[pre + "wv"], p[pre + "bv"]), heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    scores = np.where(mask[:, None, None, :], scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    probs = e / e.sum(axis=-1, keepdims=True)
    ctx = _merge_heads(probs @ v)
    out = linear(ctx, p[pre + "wo"], p[pre + "bo"])
    return out, (x, q, k, v, probs, ctx, scale)


def attention_backward(p, pre, cache, dout, grads):
    x, q, k, v, probs, ctx, scale = cache
    heads = q.shape[1]
    dctx, grads[pre + "wo"], grads[pre + "bo"] = linear_backward(ctx, p[pre + "wo"], dout)
    dctx = _split_heads(dctx, heads)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dx = np.zeros_like(x)
    for name, dh in (("q", dq), ("k", dk), ("v", dv)):
        dxi, grads[pre + "w" + name], db = linear_backward(x, p[pre + "w" + name], _merge_heads(dh))
        if name != "k":
            grads[pre + "b" + name] = db
        dx += dxi
    return dx


def block(p, pre, x, mask, heads):
    a, ln1 = layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
    att, att_cache = attention(p, pre + "attn.", a, mask, heads)
    h = x + att
    c, ln2 = layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
    u = linear(c, p[pre + "ff.w1"], p[pre + "ff.b1"])
    gu = gelu(u)
    f = linear(gu, p[pre + "ff.w2"], p[pre + "ff.b2"])
    return h + f, (ln1, att_cache, ln2, c, u, gu)


def block_backward(p, pre, cache, dy, grads):
    ln1, att_cache, ln2, c, u, gu = cache
    dgu, grads[pre + "ff.w2"], grads[pre + "ff.b2"] = linear_backward(gu, p[pre + "ff.w2"], dy)
    du = gelu_backward(u, dgu)
    dc, grads[pre + "ff.w1"], grads[pre + "ff.b1"] = linear_backward(c, p[pre + "ff.w1"], du)
    dh_ln, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = layer_norm_backward(ln2, p[pre + "ln2.g"], dc)
    dh = dy + dh_ln
    da = attention_backward(p, pre + "attn.", att_cache, dh, grads)
    dx_ln, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = layer_norm_backward(ln1, p[pre + "ln1.g"], da)
    return dh + dx_ln


# ---------------------------------------------------------------- towers


def _length_mask(lengths, t):
    return np.arange(t)[None, :] < np.asarray(lengths)[:, None]


def _tower(p, tower, x, lengths, n_layers, heads):
    """Shared stack: blocks, final norm, masked mean pooling."""
    mask = _length_mask(lengths, x.shape[1])
    caches = []
    for i in range(n_layers):
        x, c = block(p, f"{tower}.blocks.{i}.", x, mask, heads)
        caches.append(c)
    y, lnf = layer_norm(x, p[f"{tower}.ln_f.g"], p[f"{tower}.ln_f.b"])
    n = np.asarray(lengths, dtype=y.dtype)[:, None]
    z = np.where(mask[..., None], y, 0.0).sum(axis=1) / n
    return z, (caches, lnf, mask, n)


def _tower_backward(p, tower, cache, dz, n_layers, grads):
    caches, lnf, mask, n = cache
    dy = np.where(mask[..., None], (dz / n)[:, None, :], 0.0).astype(dz.dtype)
    dx, grads[f"{tower}.ln_f.g"], grads[f"{tower}.ln_f.b"] = layer_norm_backward(lnf, p[f"{tower}.ln_f.g"], dy)
    for i in reversed(range(n_layers)):
        dx = block_backward(p, f"{tower}.blocks.{i}.", caches[i], dx, grads)
    return dx


def _check_lengths(lengths, t, max_len, what):
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.ndim != 1 or np.any(lengths < 1):
        raise ValidationError(f"{what} lengths must be >= 1")
    if np.any(lengths > t) or t > max_len:
        raise ValidationError(f"{what} length exceeds the padded input or max length {max_len}")
    return lengths


def video_forward(params, config: ModelConfig, frames, lengths):
    """Embed a padded batch ``frames`` (batch x time x input_dim)."""
    dtype = params["video.pos"].dtype
    frames = np.asarray(frames, dtype=dtype)
    if frames.ndim != 3 or frames.shape[2] != config.input_dim:
        raise ValidationError(f"video input must be batch x time x {config.input_dim}, got {frames.shape}")
    lengths = _check_lengths(lengths, frames.shape[1], config.max_video_len, "video")
    mask = _length_mask(lengths, frames.shape[1])
    if not np.all(np.isfinite(frames[mask])):
        raise ValidationError("video input contains non-finite values")
    frames = np.where(mask[..., None], frames, 0.0).astype(dtype)
    t = frames.shape[1]
    u = linear(frames, params["video.proj.w1"], params["video.proj.b1"])
    gu = gelu(u)
    x = linear(gu, params["video.proj.w2"], params["video.proj.b2"]) + params["video.pos"][:t]
    z, tcache = _tower(params, "video", x, lengths, config.video_layers, config.heads)
    pooled = z
    if config.use_multimodal_projection:
        z = z @ params["mm.video"]
    return z, (frames, u, gu, t, tcache, pooled)


def video_backward(params, config: ModelConfig, cache, dz):
    frames, u, gu, t, tcache, pooled = cache
    grads = {}
    if config.use_multimodal_projection:
        grads["mm.video"] = pooled.T @ dz
        dz = dz @ params["mm.video"].T
    dx = _tower_backward(params, "video", tcache, dz, config.video_layers, grads)
    dpos = np.zeros_like(params["video.pos"])
    dpos[:t] = dx.sum(axis=0)
    grads["video.pos"] = dpos
    dgu, grads["video.proj.w2"], grads["video.proj.b2"] = linear_backward(gu, params["video.proj.w2"], dx)
    du = gelu_backward(u, dgu)
    _, grads["video.proj.w1"], grads["video.proj.b1"] = linear_backward(frames, params["video.proj.w1"], du)
    return grads


def text_forward(params, config: ModelConfig, ids, lengths):
    """Embed a padded batch of token ids (batch x time)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ValidationError("token ids must be batch x time")
    lengths = _check_lengths(lengths, ids.shape[1], config.max_text_len, "text")
    if np.any(ids < 0) or np.any(ids >= config.vocab_size):
        raise ValidationError(f"token id outside vocabulary of size {config.vocab_size}")
    t = ids.shape[1]
    x = params["text.tok"][ids] + params["text.pos"][:t]
    z, tcache = _tower(params, "text", x, lengths, config.text_layers, config.heads)
    pooled = z
    if config.use_multimodal_projection:
        z = z @ params["mm.text"]
    return z, (ids, t, tcache, pooled)


def text_backward(params, config: ModelConfig, cache, dz):
    ids, t, tcache, pooled = cache
    grads = {}
    if config.use_multimodal_projection:
        grads["mm.text"] = pooled.T @ dz
        dz = dz @ params["mm.text"].T
    dx = _tower_backward(params, "text", tcache, dz, config.text_layers, grads)
    dpos = np.zeros_like(params["text.pos"])
    dpos[:t] = dx.sum(axis=0)
    grads["text.pos"] = dpos
    dtok = np.zeros_like(params["text.tok"])
    np.add.at(dtok, ids.ravel(), dx.reshape(-1, dx.shape[-1]))
    grads["text.tok"] = dtok
    return grads


# ------------------------------------------------------------ similarity


def l2_normalize(z):
    norm = np.sqrt((z * z).sum(axis=-1, keepdims=True))
    return z / norm, norm


def l2_normalize_backward(u, norm, du):
    return (du - u * (u * du).sum(axis=-1, keepdims=True)) / norm


def similarity(zv, zt, mode: str = "dot"):
    """Pairwise scores between rows of ``zv`` and ``zt``; returns (S, cache)."""
    if mode == "cosine":
        uv, nv = l2_normalize(zv)
        ut, nt = l2_normalize(zt)
        return uv @ ut.T, (mode, uv, nv, ut, nt)
    return zv @ zt.T, (mode, zv, zt)


def similarity_backward(cache, ds):
    if cache[0] == "cosine":
        _, uv, nv, ut, nt = cache
        return l2_normalize_backward(uv, nv, ds @ ut), l2_normalize_backward(ut, nt, ds.T @ uv)
    _, zv, zt = cache
    return ds @ zt, ds.T @ zv


def similarity_matrix(params, config: ModelConfig, frames, video_lengths, ids, text_lengths):
    """N x N scores between a video batch and a text batch of equal size."""
    if len(video_lengths) != len(text_lengths):
        raise ValidationError("video and text batches must have equal size")
    zv, _ = video_forward(params, config, frames, video_lengths)
    zt, _ = text_forward(params, config, ids, text_lengths)
    return similarity(zv, zt, config.similarity)[0]


# --------------------------------------------------------------- batching


def pad_frames(seqs, dtype=np.float64):
    """Stack variable-length (time x dim) arrays into a zero-padded batch."""
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.zeros((len(seqs), int(lengths.max()), seqs[0].shape[1]), dtype=dtype)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


def pad_tokens(token_seqs):
    lengths = np.array([t.length for t in token_seqs], dtype=np.int64)
    width = int(lengths.max())
    ids = np.stack([t.ids[:width] for t in token_seqs])
    return ids, lengths
