"""Shared text encoder: embeddings, two stacked bidirectional GRUs, residual mix.

Vectors are rows here, so a layer computes ``x @ W + b`` with ``W`` stored
as (input, output).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor


@dataclass
class GruCellParams:
    """Input weights (p, 3q), recurrent weights (q, 3q), bias (3q,).

    Gate blocks along the last axis are ordered reset, update, candidate.
    """

    W_x: Tensor
    W_h: Tensor
    b: Tensor

    @classmethod
    def from_params(cls, params, prefix: str) -> "GruCellParams":
        return cls(params[f"{prefix}.W_x"], params[f"{prefix}.W_h"], params[f"{prefix}.b"])

    @property
    def state_size(self) -> int:
        return self.W_h.shape[0]


def gru_step(xp: Tensor, h: Tensor, W_h: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """One GRU update from a precomputed input projection ``xp = x @ W_x + b``.

    r = sigmoid(xp_r + h W_hr), c = sigmoid(xp_c + h W_hc),
    g = tanh(xp_g + (r * h) W_hg), out = c * h + (1 - c) * g.
    Rows whose ``mask`` is False carry ``h`` through unchanged.
    """
    q = h.shape[-1]
    if xp.shape[-1] != 3 * q or W_h.shape != (q, 3 * q):
        raise DimensionError(f"GRU shapes disagree: xp {xp.shape}, h {h.shape}, W_h {W_h.shape}")
    xv, hv, W = xp.values, h.values, W_h.values
    W_rc, W_g = W[:, : 2 * q], W[:, 2 * q:]
    rc = xv[..., : 2 * q] + hv @ W_rc
    rc = 0.5 * (1.0 + np.tanh(0.5 * rc))  # overflow-free sigmoid
    r, c = rc[..., :q], rc[..., q:]
    rh = r * hv
    g = np.tanh(xv[..., 2 * q:] + rh @ W_g)
    new = c * hv + (1.0 - c) * g
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64)[..., None]
        out = m * new + (1.0 - m) * hv
    else:
        m = None
        out = new

    def bw(dout):
        if m is not None:
            dnew = m * dout
            dh = (1.0 - m) * dout
        else:
            dnew = dout
            dh = np.zeros_like(hv)
        dc = dnew * (hv - g)
        dh = dh + dnew * c
        dag = dnew * (1.0 - c) * (1.0 - g * g)
        drh = dag @ W_g.T
        dr = drh * hv
        dh = dh + drh * r
        dar = dr * r * (1.0 - r)
        dac = dc * c * (1.0 - c)
        da_rc = np.concatenate([dar, dac], axis=-1)
        dh = dh + da_rc @ W_rc.T
        dxp = np.concatenate([da_rc, dag], axis=-1)
        dW = None
        if W_h.requires_grad:
            h2 = hv.reshape(-1, q)
            dW = np.concatenate([h2.T @ da_rc.reshape(-1, 2 * q), rh.reshape(-1, q).T @ dag.reshape(-1, q)],
                                axis=1)
        return dxp, dh, dW

    return ad.custom(out, (xp, h, W_h), bw, "gru_step")


def gru_cell(x: Tensor, s_prev: Tensor, theta: GruCellParams, mask=None) -> Tensor:
    if x.shape[-1] != theta.W_x.shape[0]:
        raise DimensionError(f"GRU input width {x.shape[-1]} != {theta.W_x.shape[0]}")
    return gru_step(x @ theta.W_x + theta.b, s_prev, theta.W_h, mask)


def gru_scan(xp: Tensor, h0: Tensor, W_h: Tensor, mask: np.ndarray, reverse: bool = False) -> Tensor:
    """All :func:`gru_step` updates along axis 1 of ``xp`` (B, L, 3q) as one recorded op.

    Backward runs the time loop in numpy and forms the recurrent-weight
    gradient with one product at the end.
    """
    B, L, _ = xp.shape
    q = h0.shape[-1]
    if xp.shape[-1] != 3 * q or W_h.shape != (q, 3 * q):
        raise DimensionError(f"GRU shapes disagree: xp {xp.shape}, h0 {h0.shape}, W_h {W_h.shape}")
    W = W_h.values
    W_rc, W_g = W[:, : 2 * q], W[:, 2 * q:]
    xv = xp.values
    m = np.asarray(mask, dtype=np.float64)[..., None]  # (B, L, 1)
    prev = np.empty((B, L, q))
    rc_all = np.empty((B, L, 2 * q))
    g_all = np.empty((B, L, q))
    out = np.empty((B, L, q))
    h = h0.values
    steps = range(L - 1, -1, -1) if reverse else range(L)
    for t in steps:
        prev[:, t] = h
        rc = 0.5 * (1.0 + np.tanh(0.5 * (xv[:, t, : 2 * q] + h @ W_rc)))
        g = np.tanh(xv[:, t, 2 * q:] + (rc[:, :q] * h) @ W_g)
        c = rc[:, q:]
        mt = m[:, t]
        h = mt * (c * h + (1.0 - c) * g) + (1.0 - mt) * h
        rc_all[:, t] = rc
        g_all[:, t] = g
        out[:, t] = h

    def bw(dout):
        dxp = np.zeros((B, L, 3 * q))
        dh = np.zeros((B, q))
        for t in reversed(steps):
            hp, rc, g = prev[:, t], rc_all[:, t], g_all[:, t]
            r, c = rc[:, :q], rc[:, q:]
            mt = m[:, t]
            d = dh + dout[:, t]
            dnew = mt * d
            dh = (1.0 - mt) * d + dnew * c
            dag = dnew * (1.0 - c) * (1.0 - g * g)
            drh = dag @ W_g.T
            dh += drh * r
            da_rc = np.concatenate([drh * hp * r * (1.0 - r), dnew * (hp - g) * c * (1.0 - c)], axis=-1)
            dh += da_rc @ W_rc.T
            dxp[:, t, : 2 * q] = da_rc
            dxp[:, t, 2 * q:] = dag
        dW = None
        if W_h.requires_grad:
            hp2 = prev.reshape(-1, q)
            rh2 = (rc_all[..., :q] * prev).reshape(-1, q)
            dW = np.concatenate([hp2.T @ dxp[..., : 2 * q].reshape(-1, 2 * q),
                                 rh2.T @ dxp[..., 2 * q:].reshape(-1, q)], axis=1)
        return dxp, dh, dW

    return ad.custom(out, (xp, h0, W_h), bw, "gru_scan")


def run_gru(inputs: Tensor, mask: np.ndarray, theta: GruCellParams, h0: Tensor | None = None,
            reverse: bool = False) -> Tensor:
    """Scan a GRU over axis 1 of ``inputs`` (B, L, p); returns states (B, L, q)."""
    B, L = inputs.shape[0], inputs.shape[1]
    if L < 1:
        raise ContractError("GRU over an empty sequence")
    xp = inputs @ theta.W_x + theta.b
    h = h0 if h0 is not None else Tensor(np.zeros((B, theta.state_size)))
    return gru_scan(xp, h, theta.W_h, mask, reverse)


def bigru_layer(inputs: Tensor, mask: np.ndarray, theta_fwd: GruCellParams, theta_bwd: GruCellParams) -> Tensor:
    """Position i holds [forward state i; backward state i]; zero initial states."""
    fwd = run_gru(inputs, mask, theta_fwd)
    bwd = run_gru(inputs, mask, theta_bwd, reverse=True)
    return ad.concat([fwd, bwd], axis=-1)


def residual_combine(H: Tensor, U: Tensor, lam: float) -> Tensor:
    if H.shape != U.shape:
        raise DimensionError(f"residual shapes differ: {H.shape} vs {U.shape}")
    if lam == 1.0:
        return H
    if lam == 0.0:
        return U
    return H * lam + U * (1.0 - lam)


@dataclass
class EncoderOutput:
    U: Tensor               # (B, L, d) first-layer states
    H: Optional[Tensor]     # (B, L, d) second-layer states; None without the residual stack
    memory: Tensor          # (B, L, d)
    decoder_init: Tensor    # (B, d)
    mask: np.ndarray        # (B, L)


def encode(src: np.ndarray, mask: np.ndarray, params, lam: float = 0.5, residual: bool = True) -> EncoderOutput:
    """Encode padded source ids (B, L).

    With ``residual`` False the memory bank is the first BiGRU layer alone.
    The decoder starts from the forward half at the last real position and
    the backward half at the first position of the memory bank; padded
    positions carry the forward state, so index L-1 is the last real one.
    """
    src = np.asarray(src)
    if src.ndim != 2 or src.shape[1] == 0 or not np.asarray(mask).any(axis=1).all():
        raise ContractError("encode needs a nonempty source for every example")
    x = ad.gather_rows(params["embedding"], src)
    U = bigru_layer(x, mask, GruCellParams.from_params(params, "enc.l1.fwd"),
                    GruCellParams.from_params(params, "enc.l1.bwd"))
    if residual:
        H = bigru_layer(U, mask, GruCellParams.from_params(params, "enc.l2.fwd"),
                        GruCellParams.from_params(params, "enc.l2.bwd"))
        memory = residual_combine(H, U, lam)
    else:
        H = None
        memory = U
    half = memory.shape[-1] // 2
    last = memory.shape[1] - 1
    init = ad.concat([memory[:, last, :half], memory[:, 0, half:]], axis=-1)
    return EncoderOutput(U, H, memory, init, np.asarray(mask, dtype=bool))
