"""Closed-form parameter and multiply-accumulate accounting.

Counts mirror what the forward pass actually computes at batch 1:
conv layers contribute Co*(Ci/groups)*kh*kw*H'*W' MACs, linears
tokens*Din*Dout, attention its qkv/out projections plus 2*blocks*T^2*D
score/value MACs (T = tokens per block). Elementwise work (norms,
activations, pooling) is not counted. FLOPs are reported as 2*MACs since
"FLOPs" conventions differ between papers.

Partition sizes that do not divide a stage's patch count are priced with
a ragged tail block (floor(N/M) blocks of M plus one of N mod M) so
ablation comparisons stay computable; such configs still fail
validate_config for building/training.
"""

import math
from dataclasses import dataclass

from .errors import ConfigError
from .pyramid import stage_patch_counts, validate_config
from .tokenization import token_grid


@dataclass
class LayerCost:
    name: str
    params: int
    macs: int


@dataclass
class CostReport:
    params_total: int
    params_by_module: dict
    macs_total: int
    flops_total: int
    breakdown: list

    def pretty(self):
        lines = [f"{'layer':<28}{'params':>12}{'MACs':>14}"]
        for e in self.breakdown:
            lines.append(f"{e.name:<28}{e.params:>12}{e.macs:>14}")
        lines.append(f"{'total':<28}{self.params_total:>12}{self.macs_total:>14}")
        lines.append(f"FLOPs (2*MACs): {self.flops_total}")
        return "\n".join(lines)


def _attention_scores_macs(n, m, d, append_cls):
    """Score+value MACs of one partitioned attention layer."""
    if m == 0 or m >= n:
        t = n + 1  # global attention always includes the class token
        return 2 * t * t * d
    full, rest = divmod(n, m)
    if append_cls:
        macs = full * (m + 1) ** 2
        if rest:
            macs += (rest + 1) ** 2
    else:
        macs = full * m * m
        if rest:
            macs += rest * rest
    return 2 * macs * d


def _encoder_entries(prefix, n, grid, d, m, k, append_cls):
    rows, cols = grid
    include_cls = append_cls or m == 0 or m >= n
    t_proj = n + 1 if include_cls else n
    entries = [
        LayerCost(f"{prefix}.ln1", 2 * d, 0),
        LayerCost(f"{prefix}.qkv", d * 3 * d, t_proj * d * 3 * d),
        LayerCost(f"{prefix}.attn_scores", 0, _attention_scores_macs(n, m, d, append_cls)),
        LayerCost(f"{prefix}.attn_out", d * d + d, t_proj * d * d),
        LayerCost(f"{prefix}.ln2", 2 * d, 0),
        LayerCost(f"{prefix}.dw_row", d * k + d, d * k * rows * cols),
        LayerCost(f"{prefix}.dw_col", d * k + d, d * k * rows * cols),
        LayerCost(f"{prefix}.bn_ffn", 2 * d, 0),
    ]
    return entries


def count_costs(config) -> CostReport:
    """Parameter/MAC ledger for one forward pass at batch 1."""
    fatal = [v for v in validate_config(config) if "partition size" not in v]
    if fatal:
        raise ConfigError(fatal)

    h, w = config.input_hw
    cin = config.in_channels
    d0 = config.d0
    d2, d3 = config.stage_dims
    k = config.ffn_kernel
    m = config.stage_partition()
    entries = []

    # tokenizer
    if config.tokenizer_variant == "factorized7":
        half = d0 // 2
        entries.append(LayerCost("tokenizer.conv_h_dw", cin * 7, cin * 7 * (h // 2) * w))
        entries.append(LayerCost("tokenizer.conv_h_pw", cin * half, half * cin * (h // 2) * w))
        conv_hw = (h // 2, w // 2)
        entries.append(LayerCost("tokenizer.conv_v_dw", half * 7, half * 7 * conv_hw[0] * conv_hw[1]))
        entries.append(LayerCost("tokenizer.conv_v_pw", half * d0, d0 * half * conv_hw[0] * conv_hw[1]))
        bn_dims = (half, d0)
    else:
        kk = 7 if config.tokenizer_variant == "full7" else 5
        conv_hw = (h // 2, w // 2)
        entries.append(LayerCost("tokenizer.conv_full", cin * d0 * kk * kk, d0 * cin * kk * kk * conv_hw[0] * conv_hw[1]))
        bn_dims = (d0, d0)
    if config.use_bn_tok:
        entries.append(LayerCost("tokenizer.bn_h", 2 * bn_dims[0], 0))
        entries.append(LayerCost("tokenizer.bn_v", 2 * bn_dims[1], 0))

    n2, g2, n3, g3 = stage_patch_counts(config)
    entries.append(LayerCost("tokenizer.proj", d0 * d2 + d2, n2 * d0 * d2))
    entries.append(LayerCost("tokenizer.pos", n2 * d2, 0))
    entries.append(LayerCost("tokenizer.cls", d2, 0))

    for i in range(config.depths[0]):
        entries.extend(_encoder_entries(f"stage2.{i}", n2, g2, d2, m, k, config.append_cls))

    merge_tokens = (n3 + 1) if config.use_merging else (n2 + 1)
    entries.append(LayerCost("merge.proj", d2 * d3 + d3, merge_tokens * d2 * d3))

    for i in range(config.depths[1]):
        entries.extend(_encoder_entries(f"stage3.{i}", n3, g3, d3, m, k, config.append_cls))

    entries.append(LayerCost("head.ln", 2 * d3, 0))
    entries.append(LayerCost("head.fc", d3 * config.num_classes + config.num_classes, d3 * config.num_classes))

    by_module = {}
    for e in entries:
        mod = e.name.split(".")[0]
        by_module[mod] = by_module.get(mod, 0) + e.params
    params_total = sum(e.params for e in entries)
    macs_total = sum(e.macs for e in entries)
    return CostReport(params_total, by_module, macs_total, 2 * macs_total, entries)
