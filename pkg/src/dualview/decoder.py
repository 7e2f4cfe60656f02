"""Pointer-generator summary decoder, its loss, and beam search."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .encoder import EncoderOutput, GruCellParams, gru_cell, run_gru
from .text import BOS_ID, EOS_ID, PAD_ID, UNK_ID

LOG_FLOOR = 1e-12


@dataclass
class DecoderStep:
    state: Tensor     # (B, d)
    attn: Tensor      # (B, L)
    context: Tensor   # (B, d)
    p_gen: Tensor     # (B, 1)
    vocab_dist: Tensor  # (B, V)
    dist: Tensor      # (B, V + n_oov), or (B, V) without copying


def _attend(states: Tensor, mem_proj: Tensor, memory: Tensor, mask: np.ndarray, params):
    """Additive attention of decoder states (B, d) or (B, T, d) over the memory (B, L, d)."""
    q = states @ params["dec.attn.W_s"] + params["dec.attn.b"]
    if states.ndim == 2:
        feats = ad.tanh(mem_proj + q.reshape(q.shape[0], 1, q.shape[1]))
        m = mask
    else:
        B, T, A = q.shape
        L = mem_proj.shape[1]
        feats = ad.tanh(mem_proj.reshape(B, 1, L, A) + q.reshape(B, T, 1, A))
        m = mask[:, None, :]
    attn = ad.softmax(feats @ params["dec.attn.v"], axis=-1, mask=m)
    if states.ndim == 2:
        ctx = (attn.reshape(attn.shape[0], 1, attn.shape[1]) @ memory)
        ctx = ctx.reshape(ctx.shape[0], ctx.shape[2])
    else:
        ctx = attn @ memory
    return attn, ctx


def _vocab_dist(states: Tensor, ctx: Tensor, params) -> Tensor:
    hidden = ad.concat([states, ctx], axis=-1) @ params["dec.out.W_proj"] + params["dec.out.b_proj"]
    return ad.softmax(hidden @ params["dec.out.W_vocab"] + params["dec.out.b_vocab"], axis=-1)


def _p_gen(ctx: Tensor, states: Tensor, emb: Tensor, params) -> Tensor:
    z = ad.concat([ctx, states, emb], axis=-1) @ params["dec.gen.v"] + params["dec.gen.b"]
    return ad.sigmoid(z.reshape(z.shape + (1,)))


def final_distribution(vocab_dist, attn, p_gen, src_ext_ids, n_oov: int) -> Tensor:
    """Mix generation and copying over the fixed plus per-example OOV ids.

    ``dist[w] = p_gen * vocab_dist[w] + (1 - p_gen) * sum(attn[i] for i with src_ext_ids[i] == w)``,
    with ``vocab_dist`` taken as zero on OOV ids.
    """
    vocab_dist, attn, p_gen = ad.as_tensor(vocab_dist), ad.as_tensor(attn), ad.as_tensor(p_gen)
    V = vocab_dist.shape[-1]
    gen = vocab_dist * p_gen
    if n_oov:
        gen = ad.concat([gen, Tensor(np.zeros(gen.shape[:-1] + (n_oov,)))], axis=-1)
    copy = ad.scatter_add_last(attn * (1.0 - p_gen), src_ext_ids, V + n_oov)
    return gen + copy


def decode_step(y_prev: np.ndarray, s_prev: Tensor, enc: EncoderOutput, src_ext: np.ndarray, n_oov: int,
                params, copy: bool = True, mem_proj: Optional[Tensor] = None) -> DecoderStep:
    """Advance the decoder one token for every row of the batch.

    ``y_prev`` may hold copy-extended ids; those are read as UNK.
    """
    V = params["dec.out.W_vocab"].shape[1]
    y_prev = np.where(np.asarray(y_prev) >= V, UNK_ID, y_prev)
    emb = ad.gather_rows(params["embedding"], y_prev)
    s = gru_cell(emb, s_prev, GruCellParams.from_params(params, "dec.gru"))
    if mem_proj is None:
        mem_proj = enc.memory @ params["dec.attn.W_h"]
    attn, ctx = _attend(s, mem_proj, enc.memory, enc.mask, params)
    pv = _vocab_dist(s, ctx, params)
    if copy:
        pg = _p_gen(ctx, s, emb, params)
        dist = final_distribution(pv, attn, pg, src_ext, n_oov)
    else:
        pg = Tensor(np.ones((s.shape[0], 1)))
        dist = pv
    return DecoderStep(s, attn, ctx, pg, pv, dist)


@dataclass
class TeacherForced:
    states: Tensor      # (B, T, d)
    gold_prob: Tensor   # (B, T) probability of each gold token
    attn: Tensor        # (B, T, L)
    p_gen: Tensor       # (B, T, 1)


def teacher_forced(dec_in: np.ndarray, tgt_ext: np.ndarray, tgt_mask: np.ndarray, enc: EncoderOutput,
                   src_ext: np.ndarray, params, copy: bool = True, tgt: Optional[np.ndarray] = None) -> TeacherForced:
    """Decode every gold position at once.

    The recurrence only reads previous tokens, so states come from one GRU
    scan and attention/output layers run over all steps together. Only the
    gold token's probability is formed, which equals the full mixed
    distribution evaluated at that id. Without copying ``tgt`` (fixed-vocab
    gold ids) is scored instead of ``tgt_ext``.
    """
    V = params["dec.out.W_vocab"].shape[1]
    emb = ad.gather_rows(params["embedding"], dec_in)
    S = run_gru(emb, tgt_mask, GruCellParams.from_params(params, "dec.gru"), h0=enc.decoder_init)
    mem_proj = enc.memory @ params["dec.attn.W_h"]
    attn, ctx = _attend(S, mem_proj, enc.memory, enc.mask, params)
    pv = _vocab_dist(S, ctx, params)
    if not copy:
        gold = tgt if tgt is not None else np.where(tgt_ext >= V, UNK_ID, tgt_ext)
        prob = ad.take_last(pv, gold)
        return TeacherForced(S, prob, attn, Tensor(np.ones(prob.shape + (1,))))
    pg = _p_gen(ctx, S, emb, params)
    in_vocab = tgt_ext < V
    gen = ad.take_last(pv, np.where(in_vocab, tgt_ext, 0)) * in_vocab
    same = (src_ext[:, None, :] == tgt_ext[:, :, None]) & enc.mask[:, None, :]
    copy_mass = (attn * same).sum(axis=-1)
    pg2 = pg.reshape(pg.shape[:-1])
    prob = gen * pg2 + copy_mass * (1.0 - pg2)
    return TeacherForced(S, prob, attn, pg)


def generation_loss(gold_prob: Tensor, tgt_mask: np.ndarray, token_mean: bool = True) -> Tensor:
    """Negative log-likelihood of the gold summaries, averaged over the batch.

    Within an example the per-token terms are averaged (``token_mean``) or
    summed. Probabilities below 1e-12 are floored and counted under
    ``autodiff.diagnostics["gen_log_floor"]``.
    """
    m = np.asarray(tgt_mask, dtype=np.float64)
    safe = ad.add(ad.mul(gold_prob, m), 1.0 - m)  # padded steps contribute log 1 = 0
    nll = -ad.safe_log(safe, LOG_FLOOR, "gen_log_floor").sum(axis=-1)
    if token_mean:
        nll = nll * (1.0 / m.sum(axis=-1))
    return nll.mean()


# ---------------------------------------------------------------- beam search


@dataclass(order=True)
class Hypothesis:
    score: float
    tokens: list[int] = field(compare=False)
    finished: bool = field(default=False, compare=False)


def _rank(h: Hypothesis, length_penalty: float) -> float:
    if length_penalty <= 0:
        return h.score
    return h.score / max(len(h.tokens), 1) ** length_penalty


def beam_search_core(step_fn: Callable, init_state: np.ndarray, width: int, max_depth: int,
                     bos: int = BOS_ID, eos: int = EOS_ID, length_penalty: float = 0.0,
                     greedy_guard: bool = True) -> Hypothesis:
    """Beam search over log-probabilities from ``step_fn(last_tokens, states) -> (logp, states)``.

    ``states`` is an array whose rows follow the hypotheses. A hypothesis
    finishes at ``eos`` or at ``max_depth``; the best finished one is
    returned. With ``greedy_guard`` the greedy decode is also run and wins
    if it scores higher, so the result never falls below greedy.
    """
    if width < 1:
        raise ContractError("beam width must be >= 1")
    best = _beam(step_fn, init_state, width, max_depth, bos, eos, length_penalty)
    if greedy_guard and width > 1:
        greedy = _beam(step_fn, init_state, 1, max_depth, bos, eos, length_penalty)
        if _rank(greedy, length_penalty) > _rank(best, length_penalty):
            best = greedy
    return best


def _beam(step_fn, init_state, width, max_depth, bos, eos, length_penalty) -> Hypothesis:
    live_tokens: list[list[int]] = [[]]
    live_scores = np.zeros(1)
    states = np.asarray(init_state)[None] if np.ndim(init_state) == 1 else np.asarray(init_state)
    finished: list[Hypothesis] = []
    for depth in range(1, max_depth + 1):
        last = np.array([seq[-1] if seq else bos for seq in live_tokens])
        logp, new_states = step_fn(last, states)
        cand = live_scores[:, None] + logp
        flat = cand.reshape(-1)
        order = np.argsort(-flat, kind="stable")
        n_vocab = cand.shape[1]
        keep_rows, keep_tokens, keep_scores = [], [], []
        for idx in order:
            score = flat[idx]
            if not np.isfinite(score):
                break
            row, tok = divmod(int(idx), n_vocab)
            seq = live_tokens[row] + [tok]
            if tok == eos:
                finished.append(Hypothesis(float(score), seq, True))
            elif depth == max_depth:
                finished.append(Hypothesis(float(score), seq, False))
                keep_tokens.append(seq)
                if len(keep_tokens) >= width:
                    break
                continue
            else:
                keep_rows.append(row)
                keep_tokens.append(seq)
                keep_scores.append(score)
            if len(keep_tokens) >= width:
                break
        if depth == max_depth or not keep_rows:
            break
        live_tokens = keep_tokens
        live_scores = np.array(keep_scores)
        states = new_states[keep_rows]
        if length_penalty <= 0 and finished:
            # log-probs only decrease, so no live hypothesis can overtake
            if max(h.score for h in finished) >= live_scores.max():
                break
    if not finished:
        return Hypothesis(float(live_scores.max()), live_tokens[int(live_scores.argmax())], False)
    return max(finished, key=lambda h: (_rank(h, length_penalty), -len(h.tokens)))


def beam_search(enc: EncoderOutput, src_ext: np.ndarray, n_oov: int, params, width: int = 5,
                max_depth: int = 120, copy: bool = True, suppress_unk: bool = True,
                length_penalty: float = 0.0, greedy_guard: bool = True) -> Hypothesis:
    """Decode one example (batch of one in ``enc``) into copy-extended ids ending in EOS."""
    mem_proj = enc.memory @ params["dec.attn.W_h"]

    def step(last, states):
        n = len(last)
        sub = EncoderOutput(enc.U, enc.H, _tile(enc.memory, n), enc.decoder_init, np.repeat(enc.mask, n, axis=0))
        out = decode_step(last, Tensor(states), sub, np.repeat(src_ext, n, axis=0), n_oov, params,
                          copy=copy, mem_proj=_tile(mem_proj, n))
        with np.errstate(divide="ignore"):
            logp = np.log(out.dist.values)
        logp[:, PAD_ID] = -np.inf
        logp[:, BOS_ID] = -np.inf
        if suppress_unk:
            logp[:, UNK_ID] = -np.inf
        return logp, out.state.values

    with ad.no_record():
        return beam_search_core(step, enc.decoder_init.values[0], width, max_depth,
                                length_penalty=length_penalty, greedy_guard=greedy_guard)


def _tile(t: Tensor, n: int) -> Tensor:
    return t if n == 1 else Tensor(np.repeat(t.values, n, axis=0))


def strip_eos(tokens: Sequence[int]) -> list[int]:
    return list(tokens[:-1]) if tokens and tokens[-1] == EOS_ID else list(tokens)


def greedy_sequence_logprob(step_fn, init_state, max_depth, bos=BOS_ID, eos=EOS_ID) -> Hypothesis:
    return _beam(step_fn, init_state, 1, max_depth, bos, eos, 0.0)

