"""Model configuration, tokens merging, and full-model assembly.

The pyramid has two encoder stages joined by a merging layer that
max-pools groups of merge_k consecutive patch tokens (the class token is
exempt from pooling) and linearly expands every token to the next stage
width. Classification reads the class token through a layernorm + linear
head.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .encoder import EncoderParams, encode
from .errors import ConfigError
from .nn import LayerNorm, Linear
from .rng import INIT, seeded_generator
from .tensor import Tensor
from .tokenization import ACTIVATIONS, VARIANTS, TokenizerParams, TokenSequence, token_grid, tokenize


@dataclass
class ModelConfig:
    """Complete architectural hyperparameter record."""

    input_hw: tuple = (56, 56)
    in_channels: int = 3
    d0: int = 32
    stage_dims: tuple = (224, 256)
    depths: tuple = (8, 8)
    partition_size: int = 7
    ffn_kernel: int = 3
    merge_k: int = 4
    num_classes: int = 10
    heads: tuple = None  # default: stage_dim // 32 per stage
    use_partition: bool = True
    append_cls: bool = True
    use_merging: bool = True
    use_maxpool_tok: bool = True
    use_bn_tok: bool = True
    activation: str = "gelu"
    tokenizer_variant: str = "factorized7"

    def stage_heads(self):
        if self.heads is not None:
            return tuple(self.heads)
        return tuple(max(d // 32, 0) for d in self.stage_dims)

    def stage_partition(self):
        return self.partition_size if self.use_partition else 0


def default_config(num_classes=10):
    return ModelConfig(num_classes=num_classes)


def micro_config():
    """Smallest end-to-end configuration used by the gradient checker."""
    return ModelConfig(
        input_hw=(8, 8), d0=8, stage_dims=(8, 8), depths=(1, 1),
        partition_size=2, heads=(2, 2), num_classes=2,
    )


def stage_patch_counts(config):
    """(stage2 N, stage2 grid, stage3 N, stage3 grid) for a config."""
    gh, gw = token_grid(*config.input_hw, config.tokenizer_variant, config.use_maxpool_tok)
    n2 = gh * gw
    if config.use_merging:
        s = math.isqrt(config.merge_k)
        g3 = (gh // s, gw // s)
        n3 = g3[0] * g3[1]
    else:
        g3 = (gh, gw)
        n3 = n2
    return n2, (gh, gw), n3, g3


def validate_config(config) -> list:
    """Every violated ModelConfig invariant, as human-readable strings."""
    v = []
    h, w = config.input_hw
    if h <= 0 or w <= 0 or h % 2 or w % 2:
        v.append(f"input_hw {config.input_hw} must be positive and even")
    if config.in_channels < 1:
        v.append("in_channels must be >= 1")
    if config.d0 < 2 or config.d0 % 2:
        v.append(f"d0 {config.d0} must be an even channel count >= 2")
    if config.tokenizer_variant not in VARIANTS:
        v.append(f"tokenizer_variant {config.tokenizer_variant!r} not one of {VARIANTS}")
    if config.activation not in ACTIVATIONS:
        v.append(f"activation {config.activation!r} not one of {ACTIVATIONS}")
    if len(config.stage_dims) != 2:
        v.append("stage_dims must list exactly two stage widths")
    elif config.stage_dims[0] > config.stage_dims[1]:
        v.append(f"stage_dims {config.stage_dims} must be nondecreasing")
    if len(config.depths) != 2 or any(d < 1 for d in config.depths):
        v.append(f"depths {config.depths} must be two positive counts")
    if config.num_classes < 2:
        v.append("num_classes must be >= 2")
    if config.ffn_kernel < 1 or config.ffn_kernel % 2 == 0:
        v.append(f"ffn_kernel {config.ffn_kernel} must be odd")
    if config.partition_size < 0:
        v.append("partition_size must be >= 0 (0 selects global attention)")

    div = 4 if config.use_maxpool_tok else 2
    if h % div or w % div:
        v.append(f"input {h}x{w} must be divisible by {div} for the tokenizer downsampling")
        return v  # grid-dependent checks below would be meaningless

    heads = config.stage_heads()
    for d, hh, stage in zip(config.stage_dims, heads, (2, 3)):
        if hh < 1:
            v.append(f"stage {stage} width {d} is below the default head rule (D//32); set heads explicitly")
        elif d % hh:
            v.append(f"stage {stage} width {d} not divisible by {hh} heads")

    n2, g2, n3, g3 = stage_patch_counts(config)
    if config.use_merging:
        s = math.isqrt(config.merge_k)
        if s * s != config.merge_k:
            v.append(f"merge_k {config.merge_k} must be a perfect square to keep a rectangular grid")
        else:
            if g2[0] % s or g2[1] % s:
                v.append(f"stage-2 grid {g2} not divisible by the merge factor {s} per axis")
            if n2 % config.merge_k:
                v.append(f"patch count {n2} not divisible by merge_k {config.merge_k}")
    m = config.stage_partition()
    if m > 0:
        for n, stage in ((n2, 2), (n3, 3)):
            m_eff = min(m, n)
            if n % m_eff:
                v.append(f"stage-{stage} patch count {n} not divisible by partition size {m_eff}")
    return v


class MergeParams:
    """Tokens-merging layer (or the dimension-only bridge when pooling is
    ablated away)."""

    def __init__(self, rng, d_in, d_out, merge_k, pooled, dtype=np.float32):
        self.proj = Linear(rng, d_in, d_out, dtype=dtype)
        self.merge_k = merge_k
        self.pooled = pooled

    def named_parameters(self):
        yield from self.proj.named_parameters("merge.proj")


def merge(tokens: TokenSequence, params: MergeParams) -> TokenSequence:
    """Pool merge_k consecutive patch tokens (max, class token exempt),
    then linearly expand every token to the next stage width."""
    x = tokens.tokens
    n = tokens.patch_count
    d_out = params.proj.weight.shape[1]
    if params.pooled:
        cls, patches = ops.split(x, [1, n], 1)
        pooled = ops.maxpool1d_seq(patches, params.merge_k)
        s = math.isqrt(params.merge_k)
        grid = (tokens.grid[0] // s, tokens.grid[1] // s)
        out = params.proj(ops.concat([cls, pooled], 1))
    else:
        grid = tokens.grid
        out = params.proj(x)
    return TokenSequence(out, grid, d_out)


class Head:
    """Classifier over the class token: layernorm + linear."""

    def __init__(self, rng, dim, num_classes, dtype=np.float32):
        self.ln = LayerNorm(dim, dtype)
        self.fc = Linear(rng, dim, num_classes, dtype=dtype)

    def __call__(self, tokens: TokenSequence):
        cls = ops.split(tokens.tokens, [1, tokens.patch_count], 1)[0]
        cls = ops.reshape(cls, (tokens.tokens.shape[0], tokens.stage_dim))
        return self.fc(self.ln(cls))

    def named_parameters(self):
        yield from self.ln.named_parameters("head.ln")
        yield from self.fc.named_parameters("head.fc")


class ModelParams:
    """All weights of one assembled model plus its producing config."""

    def __init__(self, config, tokenizer, stage2, merge_params, stage3, head):
        self.config = config
        self.tokenizer = tokenizer
        self.stage2 = stage2
        self.merge = merge_params
        self.stage3 = stage3
        self.head = head

    def named_parameters(self):
        yield from self.tokenizer.named_parameters()
        for i, enc in enumerate(self.stage2):
            yield from enc.named_parameters(f"stage2.{i}")
        yield from self.merge.named_parameters()
        for i, enc in enumerate(self.stage3):
            yield from enc.named_parameters(f"stage3.{i}")
        yield from self.head.named_parameters()

    def named_buffers(self):
        yield from self.tokenizer.named_buffers()
        for i, enc in enumerate(self.stage2):
            yield from enc.named_buffers(f"stage2.{i}")
        for i, enc in enumerate(self.stage3):
            yield from enc.named_buffers(f"stage3.{i}")

    def parameter_count(self):
        return sum(p.size for _n, p, _d in self.named_parameters())


def build_model(config: ModelConfig, seed=0, dtype=np.float32) -> ModelParams:
    """Allocate and initialize all parameters; same seed, same bits."""
    violations = validate_config(config)
    if violations:
        raise ConfigError(violations)
    rng = seeded_generator(seed, INIT)
    d2, d3 = config.stage_dims
    h2, h3 = config.stage_heads()
    m = config.stage_partition()

    tok = TokenizerParams(rng, config, dtype)
    stage2 = [
        EncoderParams(rng, d2, h2, m, config.ffn_kernel, config.append_cls, dtype)
        for _ in range(config.depths[0])
    ]
    merge_params = MergeParams(rng, d2, d3, config.merge_k, config.use_merging, dtype)
    stage3 = [
        EncoderParams(rng, d3, h3, m, config.ffn_kernel, config.append_cls, dtype)
        for _ in range(config.depths[1])
    ]
    head = Head(rng, d3, config.num_classes, dtype)
    return ModelParams(config, tok, stage2, merge_params, stage3, head)


def forward(model: ModelParams, images, training=False):
    """images [B, C, H, W] -> logits [B, num_classes]."""
    if not isinstance(images, Tensor):
        images = Tensor(images)
    seq = tokenize(images, model.tokenizer, training)
    for enc in model.stage2:
        seq = encode(seq, enc, training)
    seq = merge(seq, model.merge)
    for enc in model.stage3:
        seq = encode(seq, enc, training)
    return model.head(seq)
