"""Three-branch attention bookkeeping over a deterministic toy layer.

Attention maps are stored token-major: row ``j`` is token ``j``'s weight over
all grid cells.  The softmax runs over the token axis (each cell distributes
one unit of attention across tokens), so per-cell columns sum to 1; row
replacement splices whole token rows between branches and never renormalizes.

Step thresholds gate on a countdown step index: replacement and Q/K routing
are active while ``t >= threshold``, matching a loop that counts its step
index down toward 1.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ShapeMismatch
from .grid import FeatureGrid, Mask
from .rng import CounterRng, derive_seed

EMBED_DIM = 8
LATENT_CHANNELS = 8
WEIGHT_SEED = 0x7A11E57


@dataclass(frozen=True)
class PromptTokens:
    tokens: tuple[str, ...]
    embeddings: np.ndarray  # (tokens, EMBED_DIM), unit rows


@dataclass
class BranchState:
    latent: np.ndarray  # (cells, channels)
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class RoutedQkv:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray


def token_embedding(token: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Unit-norm vector derived from a hash of the token text."""
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    vec = CounterRng(seed).normals(dim)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        vec = np.ones(dim)
        norm = np.linalg.norm(vec)
    return vec / norm


def tokenize_prompt(prompt: str, dim: int = EMBED_DIM) -> PromptTokens:
    """Lowercase whitespace tokenization with hash-derived embeddings."""
    tokens = tuple(prompt.lower().split())
    if not tokens:
        tokens = ("",)
    emb = np.stack([token_embedding(t, dim) for t in tokens])
    return PromptTokens(tokens=tokens, embeddings=emb)


def align_tokens(src: PromptTokens, tgt: PromptTokens) -> dict[int, int]:
    """Greedy left-to-right exact-string alignment, injective on sources."""
    used: set[int] = set()
    mapping: dict[int, int] = {}
    for j, token in enumerate(tgt.tokens):
        for i, candidate in enumerate(src.tokens):
            if i not in used and candidate == token:
                mapping[j] = i
                used.add(i)
                break
    return mapping


def replace_attention(
    m_src: np.ndarray,
    m_ref: np.ndarray,
    align: dict[int, int],
    t: int,
    t_c: int,
) -> np.ndarray:
    """Copy aligned token rows of the source map into the reference map
    while the gate is open (t >= t_c); otherwise pass the reference through."""
    if m_src.shape[1] != m_ref.shape[1]:
        raise DimensionMismatch(f"cell counts differ: {m_src.shape[1]} vs {m_ref.shape[1]}")
    out = m_ref.copy()
    if t < t_c:
        return out
    for j, i in align.items():
        if 0 <= j < m_ref.shape[0] and 0 <= i < m_src.shape[0]:
            out[j] = m_src[i]
    return out


def route_qkv(
    src: BranchState,
    ref: BranchState,
    tgt: BranchState,
    t: int,
    t_s: int,
) -> tuple[RoutedQkv, RoutedQkv, RoutedQkv]:
    """Attention inputs per branch after cross-branch replacement.

    The reference borrows the source's query and key while the gate is open;
    the target always reads the reference's key and value.  Matrices are
    passed by reference so routing is observable by object identity.
    """
    for a, b in ((src, ref), (src, tgt)):
        if a.q.shape[1] != b.q.shape[1] or a.k.shape[1] != b.k.shape[1]:
            raise DimensionMismatch("branch Q/K widths differ")
    routed_src = RoutedQkv(src.q, src.k, src.v)
    if t >= t_s:
        routed_ref = RoutedQkv(src.q, src.k, ref.v)
    else:
        routed_ref = RoutedQkv(ref.q, ref.k, ref.v)
    routed_tgt = RoutedQkv(tgt.q, ref.k, ref.v)
    return routed_src, routed_ref, routed_tgt


def masked_fuse(z_tgt: FeatureGrid, z_ref: FeatureGrid, mask: Mask, t: int, fuse_steps: int) -> FeatureGrid:
    """Background protection: inside the first ``fuse_steps`` iterations
    (1-based t), keep the target inside the mask and the reference outside."""
    if z_tgt.data.shape != z_ref.data.shape:
        raise ShapeMismatch("branch latents have different shapes")
    if mask.bits.shape != z_tgt.data.shape[:2]:
        raise ShapeMismatch("mask shape differs from latents")
    if t > fuse_steps:
        return z_tgt
    keep = mask.bits[:, :, None]
    return FeatureGrid(np.where(keep, z_tgt.data, z_ref.data))


_WEIGHTS_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def layer_weights(channels: int = LATENT_CHANNELS, embed: int = EMBED_DIM):
    """Fixed seeded projection matrices (W_q, W_k, W_v) for the toy layer."""
    key = (channels, embed)
    if key not in _WEIGHTS_CACHE:
        rng = CounterRng(derive_seed(WEIGHT_SEED, "attention-weights", channels, embed))
        scale = 1.0 / np.sqrt(embed)
        w_q = rng.normals((channels, embed)) * scale
        w_k = rng.normals((embed, embed)) * scale
        w_v = rng.normals((embed, channels)) * scale
        _WEIGHTS_CACHE[key] = (w_q, w_k, w_v)
    return _WEIGHTS_CACHE[key]


def make_branch_state(latent_cells: np.ndarray, prompt: PromptTokens) -> BranchState:
    """Project a flattened latent and prompt embeddings into Q/K/V."""
    w_q, w_k, w_v = layer_weights(latent_cells.shape[1], prompt.embeddings.shape[1])
    return BranchState(
        latent=latent_cells,
        q=latent_cells @ w_q,
        k=prompt.embeddings @ w_k,
        v=prompt.embeddings @ w_v,
    )


def attention_map(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Token-major attention: softmax over tokens of Q K^T / sqrt(dim)."""
    if q.shape[1] != k.shape[1]:
        raise DimensionMismatch("Q and K inner dims differ")
    scores = q @ k.T / np.sqrt(k.shape[1])  # (cells, tokens)
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return probs.T.copy()  # (tokens, cells)


def attend(attn_token_major: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Attention-weighted value mix per cell: (cells, channels)."""
    return attn_token_major.T @ v


def toy_attention_forward(branch: BranchState, prompt: PromptTokens) -> tuple[np.ndarray, np.ndarray]:
    """One unrouted attention pass: returns the token-major map and the
    residually updated latent.  Fully deterministic for fixed inputs."""
    if branch.k.shape[0] != len(prompt.tokens):
        raise DimensionMismatch("branch K rows must match prompt tokens")
    attn = attention_map(branch.q, branch.k)
    updated = branch.latent + attend(attn, branch.v)
    return attn, updated


def flatten_latent(grid: FeatureGrid) -> np.ndarray:
    return grid.data.reshape(-1, grid.depth_dim)


def unflatten_latent(cells: np.ndarray, like: FeatureGrid) -> FeatureGrid:
    return FeatureGrid(cells.reshape(like.data.shape))
