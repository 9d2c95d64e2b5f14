"""Decoder with dynamic video memories.

The decoder cross-attends to a per-step memory matrix instead of the
static encoded video. After each emitted token the memory is updated
twice: an add pass exposes not-yet-seen clip features (gated by the
decoder state and the attention-history context), and an erase pass
decays rows that were heavily attended and semantically covered by the
generated words. Decoding is strictly sequential -- also under teacher
forcing -- because every step conditions on the memory its predecessors
produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoder import attention_block, feed_forward
from .errors import ContractViolation


def history_weights(window):
    """Exponential decay weights w_j = e^(1-j/W) / sum_k e^(1-k/W), j=0..W."""
    if window < 0:
        raise ContractViolation(f"history_weights: window {window} < 0")
    if window == 0:
        return np.ones(1)
    j = np.arange(window + 1, dtype=np.float64)
    w = np.exp(1.0 - j / window)
    return w / w.sum()


def aggregate_history(entries, weights):
    """Weighted sum of history entries, newest getting weights[0].

    `entries` is ordered oldest to newest. Shorter histories use the
    leading weights renormalized to sum 1.
    """
    n = len(entries)
    if n == 0:
        raise ContractViolation("aggregate_history: empty history")
    if n > len(weights):
        raise ContractViolation(
            f"aggregate_history: {n} entries exceed window {len(weights) - 1}")
    w = weights[:n]
    w = w / w.sum()
    return ad.weighted_sum(entries, list(w[::-1]))


@dataclass
class VideoMemoryState:
    memory: ad.Tensor               # (L', d)
    exposure: ad.Tensor             # (L', 1) in [0, 1]
    alpha_history: list = field(default_factory=list)   # oldest..newest, <= W+1
    hidden_history: list = field(default_factory=list)
    step: int = 0
    window: int = 0

    def push_history(self, alpha, hidden):
        self.alpha_history.append(alpha)
        self.hidden_history.append(hidden)
        if len(self.alpha_history) > self.window + 1:
            self.alpha_history.pop(0)
            self.hidden_history.pop(0)


def init_memory(v_enc, start_window, history_window=0, full_exposure=False):
    """Memory at step 0: clip i exposed at 1 - i/S (0-based), zero past S.

    `full_exposure` starts every clip at u=1 with the memory equal to the
    encoded video (progressive exposure disabled).
    """
    if start_window < 1:
        raise ContractViolation(f"init_memory: start window {start_window} < 1")
    length = v_enc.data.shape[0]
    if full_exposure:
        u0 = np.ones((length, 1))
        return VideoMemoryState(memory=v_enc, exposure=ad.constant(u0),
                                window=history_window)
    i = np.arange(length, dtype=np.float64)
    u0 = np.where(i <= start_window, 1.0 - i / start_window, 0.0).reshape(length, 1)
    memory = ad.mul(v_enc, ad.constant(u0))
    return VideoMemoryState(memory=memory, exposure=ad.constant(u0),
                            window=history_window)


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

class DecodeState:
    """One in-flight generation: memory plus per-layer self-attention caches."""

    def __init__(self, mem, layers):
        self.mem = mem
        self.self_k = [None] * layers
        self.self_v = [None] * layers
        self.position = 0


def decode_step(state, token_id, v_enc, mp):
    """Advance one position; returns (logits (1,V), h_t (1,d), alpha_t (1,L')).

    alpha_t is the cross-attention weight vector averaged over all heads
    and all layers. Self-attention keys/values are cached incrementally;
    cross keys/values are recomputed from the current memory every step.
    """
    cfg = mp.cfg
    w = mp.weights
    if state.position > cfg.max_steps:
        raise ContractViolation(f"decode_step: position {state.position} exceeds cap")
    x = ad.embedding_gather(w["embed.tok"], np.asarray([token_id]))
    x = ad.add(x, ad.embedding_gather(w["embed.pos_dec"], np.asarray([state.position])))
    alphas = []
    for i in range(cfg.layers):
        base = f"dec.l{i}"
        # masked self-attention, incremental: query only the new position
        q = ad.affine(x, w[f"{base}.self.wq"], w[f"{base}.self.bq"])
        k_new = ad.affine(x, w[f"{base}.self.wk"], w[f"{base}.self.bk"])
        v_new = ad.affine(x, w[f"{base}.self.wv"], w[f"{base}.self.bv"])
        if state.self_k[i] is None:
            keys, vals = k_new, v_new
        else:
            keys = ad.concat_rows([state.self_k[i], k_new])
            vals = ad.concat_rows([state.self_v[i], v_new])
        state.self_k[i], state.self_v[i] = keys, vals
        attn, _, _ = ad.multi_head_attention(q, keys, vals, cfg.heads)
        attn = ad.affine(attn, w[f"{base}.self.wo"], w[f"{base}.self.bo"])
        x = ad.layer_norm(ad.add(x, attn), w[f"{base}.ln1.g"], w[f"{base}.ln1.b"])
        # cross-attention over the current memory
        cross, alpha, _ = attention_block(mp, f"{base}.cross", x, state.mem.memory,
                                          cfg.heads)
        alphas.append(alpha)
        x = ad.layer_norm(ad.add(x, cross), w[f"{base}.ln2.g"], w[f"{base}.ln2.b"])
        x = ad.layer_norm(ad.add(x, feed_forward(mp, base, x)),
                          w[f"{base}.ln3.g"], w[f"{base}.ln3.b"])
    h = x
    alpha_t = ad.weighted_sum(alphas, [1.0 / len(alphas)] * len(alphas))
    logits = ad.affine(h, w["out.w"], w["out.b"])
    state.position += 1
    return logits, h, alpha_t


def memory_add(state, alpha_tilde, h_t, v_enc, mp):
    """Gated exposure: returns (intermediate memory, new exposure, gate, probs)."""
    w = mp.weights
    length = v_enc.data.shape[0]
    g_add = ad.sigmoid(ad.affine(h_t, w["gate.add.w"], w["gate.add.b"]))        # (1,1)
    context = ad.matmul(alpha_tilde, v_enc)                                     # (1,d)
    paired = ad.concat_last([v_enc, ad.tile_rows(context, length)])             # (L,2d)
    p_add = ad.sigmoid(ad.affine(paired, w["gate.vis.w"], w["gate.vis.b"]))     # (L,1)
    room = ad.affine_const(state.exposure, -1.0, 1.0)                           # 1 - u
    coeff = ad.mul(ad.mul(room, p_add), g_add)
    m_hat = ad.add(state.memory, ad.mul(v_enc, coeff))
    u_next = ad.add(state.exposure, coeff)
    return m_hat, u_next, g_add, p_add


def memory_erase(m_hat, alpha_tilde, h_tilde, h_t, mp):
    """Gated decay: returns (new memory, gate, probs)."""
    w = mp.weights
    length = m_hat.data.shape[0]
    g_ers = ad.sigmoid(ad.affine(h_t, w["gate.ers.w"], w["gate.ers.b"]))        # (1,1)
    paired = ad.concat_last([m_hat, ad.tile_rows(h_tilde, length)])             # (L,2d)
    p_ers = ad.sigmoid(ad.affine(paired, w["gate.sem.w"], w["gate.sem.b"]))     # (L,1)
    alpha_col = ad.transpose(alpha_tilde)                                       # (L,1)
    keep = ad.affine_const(ad.mul(ad.mul(alpha_col, p_ers), g_ers), -1.0, 1.0)  # 1 - g*a*p
    return ad.mul(m_hat, keep), g_ers, p_ers


@dataclass
class DecodeTrace:
    """Per-step diagnostics of one generation."""

    tokens: list = field(default_factory=list)
    alpha: list = field(default_factory=list)        # np rows, (L',)
    alpha_tilde: list = field(default_factory=list)
    gate_add: list = field(default_factory=list)
    gate_erase: list = field(default_factory=list)
    mean_exposure: list = field(default_factory=list)

    def n_steps(self):
        return len(self.tokens)

    def alpha_matrix(self):
        return np.stack(self.alpha) if self.alpha else np.zeros((0, 0))

    def centroids(self):
        """Attention centroid sum_i i*alpha_i per step."""
        mat = self.alpha_matrix()
        idx = np.arange(mat.shape[1], dtype=np.float64)
        return mat @ idx

    def to_rows(self):
        """step, token id, g^a, g^e, mean-u, then the alpha entries."""
        rows = []
        for t in range(self.n_steps()):
            rows.append([t, self.tokens[t], self.gate_add[t], self.gate_erase[t],
                         self.mean_exposure[t]] + list(self.alpha[t]))
        return rows


def advance_memory(state, alpha_t, h_t, v_enc, mp, pme=True, omd=True):
    """Push histories, run add and erase, and step the memory forward.

    Returns (gate_add_value, gate_erase_value) for tracing; disabled
    mechanisms report gate 0.
    """
    mem = state.mem
    mem.push_history(alpha_t, h_t)
    weights = history_weights(mem.window)
    alpha_tilde = aggregate_history(mem.alpha_history, weights)
    g_add_val, g_ers_val = 0.0, 0.0
    if pme:
        m_hat, u_next, g_add, _ = memory_add(mem, alpha_tilde, h_t, v_enc, mp)
        g_add_val = float(g_add.data)
        mem.exposure = u_next
    else:
        m_hat = mem.memory
    if omd:
        h_tilde = aggregate_history(mem.hidden_history, weights)
        m_next, g_ers, _ = memory_erase(m_hat, alpha_tilde, h_tilde, h_t, mp)
        g_ers_val = float(g_ers.data)
    else:
        m_next = m_hat
    mem.memory = m_next
    mem.step += 1
    return alpha_tilde, g_add_val, g_ers_val


def _start_state(v_enc, mp, start_window, history_window, pme):
    mem = init_memory(v_enc, start_window, history_window, full_exposure=not pme)
    return DecodeState(mem, mp.cfg.layers)


def resolve_start_window(cfg, length):
    """Configured start window, or ceil(L/3) when set to auto (0)."""
    if cfg.start_window > 0:
        return cfg.start_window
    return max(1, int(np.ceil(length / 3.0)))


def generate_paragraph(v_enc, mp, bos_id, eos_id, max_len, mode="greedy",
                       rng=None, collect_logps=False, pme=None, omd=None):
    """Free-running decoding; returns (tokens, trace[, per-step logp tensors]).

    `tokens` excludes the terminating end token; the trace includes the
    step that emitted it. Sampling mode draws from the full softmax and
    needs `rng`.
    """
    if max_len < 1:
        raise ContractViolation(f"generate_paragraph: max_len {max_len} < 1")
    if mode not in ("greedy", "sample"):
        raise ContractViolation(f"generate_paragraph: unknown mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ContractViolation("generate_paragraph: sample mode needs rng")
    cfg = mp.cfg
    pme = cfg.pme if pme is None else pme
    omd = cfg.omd if omd is None else omd
    length = v_enc.data.shape[0]
    state = _start_state(v_enc, mp, resolve_start_window(cfg, length),
                         cfg.history_window, pme)
    trace = DecodeTrace()
    logps = []
    tokens = []
    prev = bos_id
    for _ in range(max_len):
        logits, h, alpha = decode_step(state, prev, v_enc, mp)
        if mode == "greedy":
            tok = int(np.argmax(logits.data[0]))
        else:
            z = logits.data[0] - logits.data[0].max()
            p = np.exp(z)
            p /= p.sum()
            tok = int(rng.choice(p.size, p=p))
        if collect_logps:
            logp_row = ad.log_softmax_last(logits)
            logps.append(ad.gather_last(logp_row, np.asarray([tok])))
        alpha_tilde, g_a, g_e = advance_memory(state, alpha, h, v_enc, mp, pme, omd)
        trace.tokens.append(tok)
        trace.alpha.append(alpha.data[0].copy())
        trace.alpha_tilde.append(alpha_tilde.data[0].copy())
        trace.gate_add.append(g_a)
        trace.gate_erase.append(g_e)
        trace.mean_exposure.append(float(state.mem.exposure.data.mean()))
        if tok == eos_id:
            break
        tokens.append(tok)
        prev = tok
    if collect_logps:
        return tokens, trace, logps
    return tokens, trace


def teacher_force(v_enc, target_ids, mp, bos_id, pme=None, omd=None):
    """Sequential teacher forcing over the evolving memory.

    `target_ids` should end with the end-of-sequence id. Returns the
    stacked (T, V) logit rows plus the trace (token column holds the
    forced targets).
    """
    if not target_ids:
        raise ContractViolation("teacher_force: empty target sequence")
    cfg = mp.cfg
    pme = cfg.pme if pme is None else pme
    omd = cfg.omd if omd is None else omd
    length = v_enc.data.shape[0]
    state = _start_state(v_enc, mp, resolve_start_window(cfg, length),
                         cfg.history_window, pme)
    trace = DecodeTrace()
    rows = []
    prev = bos_id
    for target in target_ids:
        logits, h, alpha = decode_step(state, prev, v_enc, mp)
        rows.append(logits)
        alpha_tilde, g_a, g_e = advance_memory(state, alpha, h, v_enc, mp, pme, omd)
        trace.tokens.append(target)
        trace.alpha.append(alpha.data[0].copy())
        trace.alpha_tilde.append(alpha_tilde.data[0].copy())
        trace.gate_add.append(g_a)
        trace.gate_erase.append(g_e)
        trace.mean_exposure.append(float(state.mem.exposure.data.mean()))
        prev = target
    return ad.concat_rows(rows), trace
