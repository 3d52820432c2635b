"""Image tokenization: factorized convolutions, pooling, projection.

An image batch becomes a token sequence in five moves: a horizontal
depthwise-separable conv halves the height, a vertical one halves the
width, a 3x3/stride-2 max-pool halves both again, the surviving grid is
flattened row-major and projected, and a learned positional embedding
plus a class token complete the sequence. Ablation variants swap the
factorized pair for a single full conv or drop pool/BN/activation.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ContractError
from .nn import BatchNorm2d, Conv2d, Linear
from .tensor import Tensor, normal, zeros

VARIANTS = ("factorized7", "full7", "full5")
ACTIVATIONS = ("gelu", "relu", "none")


@dataclass
class TokenSequence:
    """Class token + patch tokens with their spatial grid.

    tokens: [B, N+1, D]; index 0 along the token axis is always the class
    token; grid rows*cols == N.
    """

    tokens: Tensor
    grid: tuple
    stage_dim: int

    def __post_init__(self):
        rows, cols = self.grid
        n = self.tokens.shape[1] - 1
        if rows * cols != n:
            raise ContractError(f"grid {self.grid} does not cover {n} patch tokens")
        if self.tokens.shape[2] != self.stage_dim:
            raise ContractError(f"token dim {self.tokens.shape[2]} != stage_dim {self.stage_dim}")

    @property
    def patch_count(self):
        return self.tokens.shape[1] - 1


def _conv_out(size, k, s, p):
    return (size + 2 * p - k) // s + 1


def token_grid(h, w, variant="factorized7", use_maxpool=True):
    """Realized (rows, cols) of the tokenizer feature map for an input."""
    if variant == "factorized7":
        gh = _conv_out(h, 7, 2, 3)
        gw = _conv_out(w, 7, 2, 3)
    else:
        k = 7 if variant == "full7" else 5
        p = (k - 1) // 2
        gh = _conv_out(h, k, 2, p)
        gw = _conv_out(w, k, 2, p)
    if use_maxpool:
        gh = _conv_out(gh, 3, 2, 1)
        gw = _conv_out(gw, 3, 2, 1)
    return gh, gw


class TokenizerParams:
    """Weights for the tokenization pipeline of one model."""

    def __init__(self, rng, config, dtype=np.float32):
        d0 = config.d0
        d1 = config.stage_dims[0]
        cin = config.in_channels
        self.variant = config.tokenizer_variant
        self.use_maxpool = config.use_maxpool_tok
        self.use_bn = config.use_bn_tok
        self.activation = config.activation

        if self.variant == "factorized7":
            half = d0 // 2
            self.conv_h_dw = Conv2d(rng, cin, cin, (7, 1), (2, 1), (3, 0), groups=cin, dtype=dtype)
            self.conv_h_pw = Conv2d(rng, cin, half, (1, 1), dtype=dtype)
            self.conv_v_dw = Conv2d(rng, half, half, (1, 7), (1, 2), (0, 3), groups=half, dtype=dtype)
            self.conv_v_pw = Conv2d(rng, half, d0, (1, 1), dtype=dtype)
            bn_dims = (half, d0)
        else:
            k = 7 if self.variant == "full7" else 5
            p = (k - 1) // 2
            self.conv_full = Conv2d(rng, cin, d0, (k, k), (2, 2), (p, p), dtype=dtype)
            bn_dims = (d0, d0)
        self.bn_h = BatchNorm2d(bn_dims[0], dtype) if self.use_bn else None
        self.bn_v = BatchNorm2d(bn_dims[1], dtype) if self.use_bn else None

        gh, gw = token_grid(*config.input_hw, self.variant, self.use_maxpool)
        n = gh * gw
        self.proj = Linear(rng, d0, d1, dtype=dtype)
        self.pos = normal(rng, (n, d1), 0.02, dtype)
        self.cls = zeros((d1,), dtype, requires_grad=True)

    def named_parameters(self):
        if self.variant == "factorized7":
            convs = [
                ("tokenizer.conv_h_dw", self.conv_h_dw),
                ("tokenizer.conv_h_pw", self.conv_h_pw),
                ("tokenizer.conv_v_dw", self.conv_v_dw),
                ("tokenizer.conv_v_pw", self.conv_v_pw),
            ]
        else:
            convs = [("tokenizer.conv_full", self.conv_full)]
        for prefix, layer in convs:
            yield from layer.named_parameters(prefix)
        if self.use_bn:
            for prefix, bn in (("tokenizer.bn_h", self.bn_h), ("tokenizer.bn_v", self.bn_v)):
                yield from bn.named_parameters(prefix)
        yield from self.proj.named_parameters("tokenizer.proj")
        yield "tokenizer.pos", self.pos, True
        yield "tokenizer.cls", self.cls, False

    def named_buffers(self):
        if self.use_bn:
            yield from self.bn_h.named_buffers("tokenizer.bn_h")
            yield from self.bn_v.named_buffers("tokenizer.bn_v")


def _activate(x, kind):
    if kind == "gelu":
        return ops.gelu(x)
    if kind == "relu":
        return ops.relu(x)
    return x


def conv_features(images, params, training):
    """The pre-flatten feature map [B, D0, rows, cols]."""
    x = images
    if params.variant == "factorized7":
        x = params.conv_h_pw(params.conv_h_dw(x))
        if params.use_bn:
            x = params.bn_h(x, training)
        x = _activate(x, params.activation)
        x = params.conv_v_pw(params.conv_v_dw(x))
        if params.use_bn:
            x = params.bn_v(x, training)
        x = _activate(x, params.activation)
    else:
        x = params.conv_full(x)
        if params.use_bn:
            x = params.bn_h(x, training)
        x = _activate(x, params.activation)
        # second conv stage is the identity in full-kernel variants
        if params.use_bn:
            x = params.bn_v(x, training)
        x = _activate(x, params.activation)
    if params.use_maxpool:
        x = ops.maxpool2d(x, (3, 3), (2, 2), (1, 1))
    return x


def tokenize(images, params, training=False):
    """[B, C, H, W] -> TokenSequence([B, N+1, D1], grid)."""
    b, _c, h, w = images.shape
    if h % 2 or w % 2:
        raise ConfigError(f"input {h}x{w} must have even sides")
    gh, gw = token_grid(h, w, params.variant, params.use_maxpool)
    n = gh * gw
    if params.pos.shape[0] != n:
        raise ConfigError(
            f"positional table holds {params.pos.shape[0]} rows but input {h}x{w} yields {n} patches"
        )

    fmap = conv_features(images, params, training)
    d0 = fmap.shape[1]
    flat = ops.transpose(ops.reshape(fmap, (b, d0, n)), (0, 2, 1))  # row-major grid order
    tok = ops.add(params.proj(flat), params.pos)
    d1 = params.pos.shape[1]
    cls = ops.broadcast_to(ops.reshape(params.cls, (1, 1, d1)), (b, 1, d1))
    seq = ops.concat([cls, tok], 1)
    return TokenSequence(seq, (gh, gw), d1)
