"""Convolution-enhanced transformer encoder layer.

Two sublayers, each behind a pre-norm and a residual connection:

* P-MSA: patch tokens are cut into consecutive non-overlapping blocks of
  M tokens, a copy of the class token is prepended to every block,
  multi-head scaled dot-product attention runs per block with shared
  weights, and the per-block class outputs are merged back into one by
  arithmetic mean.
* I-FFN: patch tokens are laid back onto their spatial grid, refined by
  a pair of factorized depthwise convolutions with batchnorm and GELU,
  and flattened again; the class token passes through untouched (its
  residual receives zero from this branch).
"""

import math

import numpy as np

from . import ops
from .errors import ContractError, DivisibilityError
from .nn import BatchNorm2d, Conv2d, LayerNorm, Linear
from .tokenization import TokenSequence


class EncoderParams:
    """Weights of one encoder layer at width `dim`."""

    def __init__(self, rng, dim, heads, partition_size, ffn_kernel, append_cls=True, dtype=np.float32):
        if dim % heads:
            raise ContractError(f"dim {dim} not divisible by heads {heads}")
        k = ffn_kernel
        self.dim = dim
        self.heads = heads
        self.partition_size = partition_size
        self.append_cls = append_cls
        self.ln1 = LayerNorm(dim, dtype)
        self.qkv = Linear(rng, dim, 3 * dim, bias=False, dtype=dtype)
        self.attn_out = Linear(rng, dim, dim, bias=True, dtype=dtype)
        self.ln2 = LayerNorm(dim, dtype)
        self.dw_row = Conv2d(rng, dim, dim, (k, 1), (1, 1), ((k - 1) // 2, 0), groups=dim, bias=True, dtype=dtype)
        self.dw_col = Conv2d(rng, dim, dim, (1, k), (1, 1), (0, (k - 1) // 2), groups=dim, bias=True, dtype=dtype)
        self.bn_ffn = BatchNorm2d(dim, dtype)

    def named_parameters(self, prefix):
        for name, layer in (
            ("ln1", self.ln1), ("qkv", self.qkv), ("attn_out", self.attn_out),
            ("ln2", self.ln2), ("dw_row", self.dw_row), ("dw_col", self.dw_col),
            ("bn_ffn", self.bn_ffn),
        ):
            yield from layer.named_parameters(f"{prefix}.{name}")

    def named_buffers(self, prefix):
        yield from self.bn_ffn.named_buffers(f"{prefix}.bn_ffn")


def effective_block(m, n):
    """Blocks of M consecutive patch tokens; M of 0 (or > N) means one
    global block. Raises when a true partition does not divide N."""
    if m == 0 or m >= n:
        return n
    if n % m:
        raise DivisibilityError(f"patch count {n} not divisible by partition size {m}")
    return m


def partition(tokens: TokenSequence, m):
    """Split into N/M blocks of M consecutive patch tokens, the class
    token copied to the front of each; returns the list of blocks."""
    n = tokens.patch_count
    b = tokens.tokens.shape[0]
    m = effective_block(m, n)
    stacked = _partition_stacked(tokens.tokens, n, m)
    return [
        ops.reshape(blk, (b, m + 1, tokens.stage_dim))
        for blk in ops.split(stacked, [1] * (n // m), 1)
    ]


def _partition_stacked(x, n, m):
    """[B, N+1, D] -> [B, nb, M+1, D] with the class token broadcast."""
    b, _t, d = x.shape
    nb = n // m
    cls, patches = ops.split(x, [1, n], 1)
    blocks = ops.reshape(patches, (b, nb, m, d))
    cls_b = ops.broadcast_to(ops.reshape(cls, (b, 1, 1, d)), (b, nb, 1, d))
    return ops.concat([cls_b, blocks], 2)


def _heads_view(x, heads):
    """[..., T, D] -> [..., h, T, D/h]."""
    b, nb, t, d = x.shape
    hd = d // heads
    return ops.transpose(ops.reshape(x, (b, nb, t, heads, hd)), (0, 1, 3, 2, 4))


def _attention(q, k, v, heads):
    """Multi-head scaled dot-product attention over the last two axes of
    [B, nb, T, D] operands."""
    b, nb, t, d = q.shape
    hd = d // heads
    qh = _heads_view(q, heads)
    kh = _heads_view(k, heads)
    vh = _heads_view(v, heads)
    scores = ops.scale(ops.matmul(qh, ops.transpose(kh, (0, 1, 2, 4, 3))), 1.0 / math.sqrt(hd))
    ctx = ops.matmul(ops.softmax(scores, -1), vh)
    return ops.reshape(ops.transpose(ctx, (0, 1, 3, 2, 4)), (b, nb, t, d))


def pmsa(tokens: TokenSequence, params: EncoderParams) -> TokenSequence:
    """Partitioned multi-head self-attention branch.

    Output patch tokens are re-assembled in original order; the per-block
    class outputs are merged by arithmetic mean. With class appending
    disabled the class slot of the result is zero (the branch leaves the
    class token to the residual path).
    """
    x = tokens.tokens
    b, t, d = x.shape
    n = t - 1
    m = effective_block(params.partition_size, n)
    nb = n // m
    global_attn = m == n

    if params.append_cls or global_attn:
        q, k, v = ops.split(params.qkv(x), [d, d, d], -1)
        qb = _partition_stacked(q, n, m)
        kb = _partition_stacked(k, n, m)
        vb = _partition_stacked(v, n, m)
        ctx = _attention(qb, kb, vb, params.heads)  # [B, nb, M+1, D]
        cls_out, patch_out = ops.split(ctx, [1, m], 2)
        merged_cls = ops.mean(cls_out, axis=1)  # [B, 1, D]
        patches = ops.reshape(patch_out, (b, n, d))
        out = params.attn_out(ops.concat([merged_cls, patches], 1))
    else:
        cls, px = ops.split(x, [1, n], 1)
        q, k, v = ops.split(params.qkv(px), [d, d, d], -1)
        blocks = lambda z: ops.reshape(z, (b, nb, m, d))
        ctx = _attention(blocks(q), blocks(k), blocks(v), params.heads)
        patches = params.attn_out(ops.reshape(ctx, (b, n, d)))
        out = ops.concat([ops.scale(cls, 0.0), patches], 1)

    return TokenSequence(out, tokens.grid, tokens.stage_dim)


def iffn(tokens: TokenSequence, params: EncoderParams, training=False) -> TokenSequence:
    """Interactive feed-forward branch; preserves shape and the class token."""
    x = tokens.tokens
    b, t, d = x.shape
    n = t - 1
    rows, cols = tokens.grid
    if rows * cols != n:
        raise ContractError(f"grid {tokens.grid} does not match patch count {n}")

    cls, patches = ops.split(x, [1, n], 1)
    img = ops.transpose(ops.reshape(patches, (b, rows, cols, d)), (0, 3, 1, 2))
    y = params.dw_col(params.dw_row(img))
    y = params.bn_ffn(y, training)
    y = ops.gelu(y)
    flat = ops.reshape(ops.transpose(y, (0, 2, 3, 1)), (b, n, d))
    out = ops.concat([cls, flat], 1)
    return TokenSequence(out, tokens.grid, tokens.stage_dim)


def encode(tokens: TokenSequence, params: EncoderParams, training=False) -> TokenSequence:
    """Full layer: x + PMSA(LN(x)), then patch-only residual of IFFN(LN(y))."""
    x = tokens.tokens
    n = tokens.patch_count

    attn = pmsa(TokenSequence(params.ln1(x), tokens.grid, tokens.stage_dim), params)
    y = ops.add(x, attn.tokens)

    ffn = iffn(TokenSequence(params.ln2(y), tokens.grid, tokens.stage_dim), params, training)
    y_cls, y_patches = ops.split(y, [1, n], 1)
    _f_cls, f_patches = ops.split(ffn.tokens, [1, n], 1)
    z = ops.concat([y_cls, ops.add(y_patches, f_patches)], 1)
    return TokenSequence(z, tokens.grid, tokens.stage_dim)
