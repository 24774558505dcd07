"""Multi-head self-attention forward pass and attention-to-affinity mapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AttentionParams:
    """Per-head projections plus the affine layer applied to the concatenated heads.

    Shapes: ``w_query``/``w_key`` are [n, d, d_k], ``w_value`` is [n, d, d_v],
    ``w_out`` is [n * d_v, d_out] and ``b_out`` is [d_out].
    """

    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        self.w_query = np.asarray(self.w_query, dtype=np.float64)
        self.w_key = np.asarray(self.w_key, dtype=np.float64)
        self.w_value = np.asarray(self.w_value, dtype=np.float64)
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        self.b_out = np.asarray(self.b_out, dtype=np.float64)
        if self.w_query.ndim != 3 or self.w_query.shape != self.w_key.shape:
            raise ValueError(f"query/key projections must share shape [n, d, d_k], got {self.w_query.shape} and {self.w_key.shape}")
        n, d, _ = self.w_query.shape
        if self.w_value.ndim != 3 or self.w_value.shape[:2] != (n, d):
            raise ValueError(f"value projection must be [{n}, {d}, d_v], got {self.w_value.shape}")
        d_v = self.w_value.shape[2]
        if self.w_out.ndim != 2 or self.w_out.shape[0] != n * d_v:
            raise ValueError(f"output weights must be [{n * d_v}, d_out], got {self.w_out.shape}")
        if self.b_out.shape != (self.w_out.shape[1],):
            raise ValueError(f"output bias must be [{self.w_out.shape[1]}], got {self.b_out.shape}")

    @property
    def num_heads(self) -> int:
        return self.w_query.shape[0]

    @property
    def d_model(self) -> int:
        return self.w_query.shape[1]

    @property
    def d_k(self) -> int:
        return self.w_query.shape[2]

    @property
    def d_v(self) -> int:
        return self.w_value.shape[2]

    @classmethod
    def random(cls, num_heads, d_model, d_k, d_v, d_out, rng=None):
        rng = np.random.default_rng(rng)
        scale = 1.0 / np.sqrt(d_model)
        return cls(
            rng.normal(0, scale, (num_heads, d_model, d_k)),
            rng.normal(0, scale, (num_heads, d_model, d_k)),
            rng.normal(0, scale, (num_heads, d_model, d_v)),
            rng.normal(0, 1.0 / np.sqrt(num_heads * d_v), (num_heads * d_v, d_out)),
            np.zeros(d_out),
        )


@dataclass
class AttentionStack:
    """Pre-softmax attention scores, shape [hw, hw, m]."""

    scores: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        hw = self.height * self.width
        if self.scores.ndim != 3 or self.scores.shape[:2] != (hw, hw):
            raise ValueError(f"attention stack must be [{hw}, {hw}, m] for a {self.height}x{self.width} grid, got {self.scores.shape}")

    @property
    def num_heads(self) -> int:
        return self.scores.shape[2]

    @classmethod
    def concat(cls, stacks):
        """Stack heads from several blocks along the head axis."""
        stacks = list(stacks)
        h, w = stacks[0].height, stacks[0].width
        if any((s.height, s.width) != (h, w) for s in stacks):
            raise ValueError("all stacks must share the same spatial grid")
        return cls(np.concatenate([s.scores for s in stacks], axis=2), h, w)


@dataclass
class HeadCombiner:
    """Affine map over the head axis: one scalar weight per head plus a bias."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.bias = float(self.bias)

    @classmethod
    def uniform(cls, num_heads: int) -> "HeadCombiner":
        return cls(np.full(num_heads, 1.0 / num_heads), 0.0)


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def mhsa_forward(tokens, params: AttentionParams, height=None, width=None):
    """Run one attention block over ``tokens`` of shape [hw, d].

    Returns ``(output, stack)`` where ``output`` is the affine map of the
    concatenated per-head outputs and ``stack`` holds the pre-softmax scores.
    ``height``/``width`` default to a 1 x hw grid.
    """
    x = np.asarray(tokens, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"tokens must be [hw, d] with hw >= 1, got {x.shape}")
    if x.shape[1] != params.d_model:
        raise ValueError(f"token dim {x.shape[1]} does not match projections (d={params.d_model})")
    hw = x.shape[0]
    if height is None and width is None:
        height, width = 1, hw
    elif height is None or width is None or height * width != hw:
        raise ValueError(f"grid {height}x{width} does not hold {hw} tokens")

    n = params.num_heads
    scores = np.empty((hw, hw, n))
    heads = []
    # heads are evaluated and concatenated in index order
    for i in range(n):
        q = x @ params.w_query[i]
        k = x @ params.w_key[i]
        v = x @ params.w_value[i]
        s = q @ k.T / np.sqrt(params.d_k)
        scores[:, :, i] = s
        heads.append(softmax(s, axis=1) @ v)
    out = np.concatenate(heads, axis=1) @ params.w_out + params.b_out
    return out, AttentionStack(scores, height, width)


def symmetrize_combine(stack: AttentionStack, comb: HeadCombiner) -> np.ndarray:
    """Affinity logits ``bias + sum_h w_h (S_h + S_h^T)``; exactly symmetric."""
    if comb.weights.shape[0] != stack.num_heads:
        raise ValueError(f"combiner has {comb.weights.shape[0]} weights but the stack has {stack.num_heads} heads")
    s = stack.scores
    sym = s + s.transpose(1, 0, 2)
    a = sym @ comb.weights + comb.bias
    upper = np.triu(a)
    return upper + np.triu(a, 1).T
