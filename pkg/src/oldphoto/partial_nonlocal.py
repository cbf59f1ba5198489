"""Mask-aware nonlocal attention.

Each position attends only to intact (mask 0) positions, so holes are filled
from surrounding context:

    s[i, j] = (1 - m_j) exp(theta(F_i) . phi(F_j)) / sum_k (1 - m_k) exp(theta(F_i) . phi(F_k))
    O_i     = nu( sum_j s[i, j] mu(F_j) )

and the global result is merged with a local branch as
``(1 - m) * local + m * global``.

Feature maps are ``(B, C, H, W)`` tensors; masks are ``(B, 1, H, W)`` with 1 on
defects. Unbatched ``(C, H, W)`` / ``(H, W)`` inputs are accepted as well.
"""
import math

import numpy as np
import torch
from torch import nn

from .errors import InvalidInputError, RefusalError

ORACLE_MAX_POSITIONS = 256


class PartialNonlocalParams(nn.Module):
    """The four 1x1 embeddings. ``inner`` defaults to half the channels."""

    def __init__(self, channels, inner=None):
        super().__init__()
        inner = inner or max(1, channels // 2)
        if inner > channels:
            raise InvalidInputError(f"embedding width {inner} exceeds channels {channels}")
        self.channels = channels
        self.inner = inner
        self.theta = nn.Conv2d(channels, inner, 1)
        self.phi = nn.Conv2d(channels, inner, 1)
        self.mu = nn.Conv2d(channels, inner, 1)
        self.nu = nn.Conv2d(inner, channels, 1)


def _batched(F):
    F = torch.as_tensor(F)
    if F.dim() == 3:
        return F.unsqueeze(0), True
    if F.dim() != 4:
        raise InvalidInputError(f"feature map must be (C,H,W) or (B,C,H,W), got {tuple(F.shape)}")
    return F, False


def _check_finite(F):
    if not torch.isfinite(F).all():
        raise InvalidInputError("feature map contains non-finite values")


def as_mask(m, like):
    """Coerce a mask to ``(B, 1, H, W)`` matching feature map ``like``."""
    b, _, h, w = like.shape
    m = torch.as_tensor(m, dtype=like.dtype, device=like.device)
    if m.dim() == 1 and m.numel() == h * w:
        m = m.view(1, 1, h, w)
    elif m.dim() == 2:
        m = m.view(1, 1, *m.shape)
    elif m.dim() == 3:
        m = m.unsqueeze(1)
    if m.dim() != 4 or m.shape[1] != 1 or m.shape[-2:] != (h, w) or m.shape[0] not in (1, b):
        raise InvalidInputError(f"mask shape {tuple(m.shape)} does not match features {tuple(like.shape)}")
    return m.expand(b, 1, h, w)


def pairwise_logits(F, params):
    F, _ = _batched(F)
    _check_finite(F)
    q = params.theta(F).flatten(2)  # B, Cg, HW
    k = params.phi(F).flatten(2)
    return torch.bmm(q.transpose(1, 2), k)


def pairwise_affinity(F, params):
    """``f[i, j] = exp(theta(F_i) . phi(F_j))``; may overflow for large activations."""
    F, squeeze = _batched(F)
    f = torch.exp(pairwise_logits(F, params))
    return f[0] if squeeze else f


def masked_affinity(f, m):
    """Normalise affinities over unmasked keys; all-masked rows become zero."""
    f = torch.as_tensor(f)
    squeeze = f.dim() == 2
    if squeeze:
        f = f.unsqueeze(0)
    m = torch.as_tensor(m, dtype=f.dtype, device=f.device)
    if m.dim() == 1:
        m = m.unsqueeze(0)
    m = m.reshape(m.shape[0], -1)
    if f.dim() != 3 or f.shape[1] != f.shape[2] or m.shape[1] != f.shape[2] or m.shape[0] not in (1, f.shape[0]):
        raise InvalidInputError(f"affinity {tuple(f.shape)} and mask {tuple(m.shape)} are incompatible")
    w = f * (1.0 - m).unsqueeze(1)
    denom = w.sum(-1, keepdim=True)
    s = w / torch.where(denom > 0, denom, torch.ones_like(denom))
    return s[0] if squeeze else s


def masked_softmax(logits, keep):
    """Max-subtracted equivalent of :func:`masked_affinity` on ``exp(logits)``.

    ``keep`` is ``(B, HW)`` boolean, True for intact positions.
    """
    keep = keep.unsqueeze(1)
    masked = logits.masked_fill(~keep, float("-inf"))
    mx = masked.amax(-1, keepdim=True)
    mx = torch.where(torch.isfinite(mx), mx, torch.zeros_like(mx)).detach()
    e = torch.exp(masked - mx)
    denom = e.sum(-1, keepdim=True)
    return e / torch.where(denom > 0, denom, torch.ones_like(denom))


def attention_weights(F, m, params):
    F, _ = _batched(F)
    m = as_mask(m, F)
    keep = m.flatten(1) < 0.5
    return masked_softmax(pairwise_logits(F, params), keep)


def partial_nonlocal_forward(F, m, params):
    """``O_i = nu(sum_j s[i, j] mu(F_j))`` with no residual term."""
    F, squeeze = _batched(F)
    b, _, h, w = F.shape
    s = attention_weights(F, m, params)
    v = params.mu(F).flatten(2)  # B, Cg, HW
    y = torch.bmm(v, s.transpose(1, 2)).view(b, -1, h, w)
    out = params.nu(y)
    return out[0] if squeeze else out


def fuse_branches(local_out, global_out, m):
    local_out, squeeze = _batched(local_out)
    global_out, _ = _batched(global_out)
    if local_out.shape != global_out.shape:
        raise InvalidInputError(
            f"branch shapes differ: {tuple(local_out.shape)} vs {tuple(global_out.shape)}")
    m = as_mask(m, local_out)
    # exact selection for binary m: x * 1 + y * 0 == x for finite y
    out = (1.0 - m) * local_out + m * global_out
    return out[0] if squeeze else out


class PartialNonlocalBlock(nn.Module):
    """Module wrapper; adds the input back when ``residual`` is set."""

    def __init__(self, channels, inner=None, residual=True):
        super().__init__()
        self.params = PartialNonlocalParams(channels, inner)
        self.residual = residual

    def forward(self, F, m):
        out = partial_nonlocal_forward(F, m, self.params)
        return out + F if self.residual else out


# --------------------------------------------------------------------------
# reference implementation


def _conv1x1_numpy(conv):
    w = conv.weight.detach().cpu().double().numpy()[:, :, 0, 0]
    b = conv.bias.detach().cpu().double().numpy() if conv.bias is not None else np.zeros(w.shape[0])
    return w.tolist(), b.tolist()


def _apply1x1(wb, vec):
    w, b = wb
    out = []
    for o in range(len(w)):
        acc = b[o]
        for c in range(len(vec)):
            acc += w[o][c] * vec[c]
        out.append(acc)
    return out


def oracle_partial_nonlocal(F, m, params):
    """Scalar-loop evaluation of the block for one unbatched ``(C, H, W)`` map.

    Returns a float64 numpy array. Intended as an independent check of
    :func:`partial_nonlocal_forward`.
    """
    F = np.asarray(torch.as_tensor(F).detach().cpu().double())
    if F.ndim != 3:
        raise InvalidInputError("oracle takes a single (C,H,W) feature map")
    c, h, w = F.shape
    n = h * w
    if n > ORACLE_MAX_POSITIONS:
        raise RefusalError(f"oracle refuses {n} positions (limit {ORACLE_MAX_POSITIONS})")
    mask = np.asarray(torch.as_tensor(m).detach().cpu().double()).reshape(-1).tolist()
    if len(mask) != n:
        raise InvalidInputError("mask size does not match feature map")
    theta, phi = _conv1x1_numpy(params.theta), _conv1x1_numpy(params.phi)
    mu, nu = _conv1x1_numpy(params.mu), _conv1x1_numpy(params.nu)

    cols = []
    for y in range(h):
        for x in range(w):
            cols.append([float(F[ch, y, x]) for ch in range(c)])
    th = [_apply1x1(theta, v) for v in cols]
    ph = [_apply1x1(phi, v) for v in cols]
    mv = [_apply1x1(mu, v) for v in cols]
    inner = len(mv[0])

    out = np.zeros((c, h, w))
    for i in range(n):
        weights = []
        for j in range(n):
            dot = 0.0
            for d in range(len(th[i])):
                dot += th[i][d] * ph[j][d]
            weights.append((1.0 - mask[j]) * math.exp(dot))
        total = 0.0
        for j in range(n):
            total += weights[j]
        agg = [0.0] * inner
        if total > 0:
            for j in range(n):
                for d in range(inner):
                    agg[d] += weights[j] / total * mv[j][d]
        o = _apply1x1(nu, agg)
        for ch in range(c):
            out[ch, i // w, i % w] = o[ch]
    return out
