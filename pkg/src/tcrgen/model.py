"""Gated three-channel embedding fusion + Pre-LN encoder/decoder.

The source stream (MHC ++ SEP ++ peptide) passes through a shared encoder;
the target stream (SOS ++ receptor) through a causal decoder whose layers
also cross-attend over the final encoder output. Both streams share one
embedding fusion: token, physicochemical, and positional channels are
concatenated, gated elementwise by a learned sigmoid gate, and projected.

Everything is plain numpy in float64 with hand-written backward passes;
``loss_and_grad`` returns exact analytic gradients for every parameter.
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import nn
from .errors import DisabledChannel, EmptyBatch, ShapeMismatch
from .physchem import DescriptorTable
from .vocab import build_vocab

VOCAB_SIZE = 26


@dataclass
class ModelConfig:
    d_t: int = 64
    d_p: int = 32
    d_s: int = 32
    n_head: int = 4
    n_enc: int = 2
    n_dec: int = 2
    d_ff: int = 0          # 0 -> 4 * d
    max_src_len: int = 55
    max_tgt_len: int = 28  # SOS + 26 residues + EOS
    phys_enabled: bool = True
    seed: int = 0

    @property
    def d(self) -> int:
        return self.d_t + (self.d_p if self.phys_enabled else 0) + self.d_s

    @property
    def d_h(self) -> int:
        return self.d // self.n_head

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff else 4 * self.d

    def validate(self):
        if self.d % self.n_head != 0:
            raise ValueError(f"model width {self.d} not divisible by {self.n_head} heads")
        if self.d_s % 2 != 0:
            raise ValueError("positional width must be even")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def init_params(cfg: ModelConfig) -> dict:
    """Seeded scaled-normal init (std 0.02); LayerNorm scale 1, offset 0."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d, dff = cfg.d, cfg.ff_width
    params = {}

    def w(name, shape):
        params[name] = rng.normal(0.0, 0.02, size=shape)

    def zeros(name, shape):
        params[name] = np.zeros(shape)

    def ln(pfx):
        params[pfx + ".g"] = np.ones(d)
        zeros(pfx + ".b", d)

    def attn(pfx):
        for nm in ("w_q", "w_k", "w_v", "w_o"):
            w(f"{pfx}.{nm}", (d, d))
        for nm in ("b_q", "b_k", "b_v", "b_o"):
            zeros(f"{pfx}.{nm}", d)

    def ff(pfx):
        w(pfx + ".w1", (d, dff))
        zeros(pfx + ".b1", dff)
        w(pfx + ".w2", (dff, d))
        zeros(pfx + ".b2", d)

    w("fuse.e_tok", (VOCAB_SIZE, cfg.d_t))
    if cfg.phys_enabled:
        w("fuse.w_phys", (5, cfg.d_p))
    w("fuse.w_g", (d, d))
    zeros("fuse.b_g", d)
    w("fuse.w_f", (d, d))
    zeros("fuse.b_f", d)
    for i in range(cfg.n_enc):
        ln(f"enc.{i}.ln1")
        attn(f"enc.{i}.attn")
        ln(f"enc.{i}.ln2")
        ff(f"enc.{i}.ff")
    ln("enc.final_ln")
    for i in range(cfg.n_dec):
        ln(f"dec.{i}.ln1")
        attn(f"dec.{i}.self")
        ln(f"dec.{i}.ln2")
        attn(f"dec.{i}.cross")
        ln(f"dec.{i}.ln3")
        ff(f"dec.{i}.ff")
    ln("dec.final_ln")
    w("head.w", (d, VOCAB_SIZE))
    zeros("head.b", VOCAB_SIZE)
    return params


def param_count(params: dict) -> int:
    return sum(int(np.prod(p.shape)) for p in params.values())


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# embedding fusion

def fuse_forward(params, cfg, pos_table, phys_rows, ids):
    """ids (B, L) -> fused embeddings (B, L, d)."""
    e_tok = params["fuse.e_tok"][ids]
    length = ids.shape[1]
    pos = np.broadcast_to(pos_table[:length], e_tok.shape[:2] + (cfg.d_s,))
    if cfg.phys_enabled:
        phi = phys_rows[ids]
        e_phys = phi @ params["fuse.w_phys"]
        z = np.concatenate([e_tok, e_phys, pos], axis=-1)
    else:
        phi = None
        z = np.concatenate([e_tok, pos], axis=-1)
    u = z @ params["fuse.w_g"] + params["fuse.b_g"]
    gate = nn.sigmoid(u)
    m = gate * z
    h = m @ params["fuse.w_f"] + params["fuse.b_f"]
    return h, (ids, phi, z, gate, m)


def fuse_backward(cache, dout, params, cfg, grads):
    ids, phi, z, gate, m = cache
    d = z.shape[-1]
    d2 = dout.reshape(-1, d)
    grads["fuse.w_f"] += m.reshape(-1, d).T @ d2
    grads["fuse.b_f"] += d2.sum(axis=0)
    dm = dout @ params["fuse.w_f"].T
    dz = dm * gate
    du = dm * z * gate * (1.0 - gate)
    du2 = du.reshape(-1, d)
    grads["fuse.w_g"] += z.reshape(-1, d).T @ du2
    grads["fuse.b_g"] += du2.sum(axis=0)
    dz = dz + du @ params["fuse.w_g"].T
    d_tok = dz[..., :cfg.d_t]
    np.add.at(grads["fuse.e_tok"], ids, d_tok)
    if cfg.phys_enabled:
        d_phys = dz[..., cfg.d_t:cfg.d_t + cfg.d_p]
        grads["fuse.w_phys"] += (
            phi.reshape(-1, phi.shape[-1]).T @ d_phys.reshape(-1, cfg.d_p))
    # positional channel is a fixed table: no gradient


# ---------------------------------------------------------------------------
# encoder / decoder stacks

def encoder_forward(params, cfg, x, key_mask):
    """Pre-LN self-attention + feed-forward stack over the source stream."""
    layer_caches = []
    attn_maps = []
    for i in range(cfg.n_enc):
        pfx = f"enc.{i}"
        h1, cl1 = nn.ln_forward(params, pfx + ".ln1", x)
        a, ca, w = nn.mha_forward(params, pfx + ".attn", h1, h1, key_mask, cfg.n_head)
        x = x + a
        h2, cl2 = nn.ln_forward(params, pfx + ".ln2", x)
        f, cf = nn.ff_forward(params, pfx + ".ff", h2)
        x = x + f
        layer_caches.append((cl1, ca, cl2, cf))
        attn_maps.append(w)
    out, cfin = nn.ln_forward(params, "enc.final_ln", x)
    return out, (layer_caches, cfin), attn_maps


def encoder_backward(cache, dout, grads, cfg):
    layer_caches, cfin = cache
    dx = nn.ln_backward(cfin, dout, grads)
    for cl1, ca, cl2, cf in reversed(layer_caches):
        dh2 = nn.ff_backward(cf, dx, grads)
        dx = dx + nn.ln_backward(cl2, dh2, grads)
        dq, dkv = nn.mha_backward(ca, dx, grads)
        dx = dx + nn.ln_backward(cl1, dq + dkv, grads)
    return dx


def decoder_forward(params, cfg, x, h_src, self_mask, cross_mask):
    """Causal self-attention, cross-attention over h_src, feed-forward."""
    layer_caches = []
    attn_maps = []
    for i in range(cfg.n_dec):
        pfx = f"dec.{i}"
        h1, cl1 = nn.ln_forward(params, pfx + ".ln1", x)
        a, ca, w_self = nn.mha_forward(params, pfx + ".self", h1, h1, self_mask, cfg.n_head)
        x = x + a
        h2, cl2 = nn.ln_forward(params, pfx + ".ln2", x)
        c, cc, w_cross = nn.mha_forward(params, pfx + ".cross", h2, h_src, cross_mask, cfg.n_head)
        x = x + c
        h3, cl3 = nn.ln_forward(params, pfx + ".ln3", x)
        f, cf = nn.ff_forward(params, pfx + ".ff", h3)
        x = x + f
        layer_caches.append((cl1, ca, cl2, cc, cl3, cf))
        attn_maps.append((w_self, w_cross))
    out, cfin = nn.ln_forward(params, "dec.final_ln", x)
    logits, chead = nn.linear_forward(out, params["head.w"], params["head.b"])
    return logits, (layer_caches, cfin, chead), attn_maps


def decoder_backward(cache, dlogits, grads, cfg):
    layer_caches, cfin, chead = cache
    dx, dwh, dbh = nn.linear_backward(chead, dlogits)
    grads["head.w"] += dwh
    grads["head.b"] += dbh
    dx = nn.ln_backward(cfin, dx, grads)
    dh_src = None
    for cl1, ca, cl2, cc, cl3, cf in reversed(layer_caches):
        dh3 = nn.ff_backward(cf, dx, grads)
        dx = dx + nn.ln_backward(cl3, dh3, grads)
        dq, dkv = nn.mha_backward(cc, dx, grads)
        dh_src = dkv if dh_src is None else dh_src + dkv
        dx = dx + nn.ln_backward(cl2, dq, grads)
        dq, dkv = nn.mha_backward(ca, dx, grads)
        dx = dx + nn.ln_backward(cl1, dq + dkv, grads)
    return dx, dh_src


# ---------------------------------------------------------------------------
# loss

def smoothed_cross_entropy(logits, labels, loss_mask, label_smoothing):
    """Mean label-smoothed CE over unmasked positions, plus dlogits.

    The smoothed target puts 1-eps on the true symbol and eps/V uniformly on
    the whole alphabet; masked positions enter neither numerator nor
    denominator.
    """
    b, length, v = logits.shape
    n = int(loss_mask.sum())
    if n == 0:
        raise EmptyBatch("no unmasked target positions")
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(b)[:, None], np.arange(length)[None, :]
    logp_true = logp[rows[0], rows[1], labels]
    eps = label_smoothing
    per_tok = -(1.0 - eps) * logp_true - (eps / v) * logp.sum(axis=-1)
    loss = float((per_tok * loss_mask).sum() / n)
    q = np.full_like(logp, eps / v)
    q[rows[0], rows[1], labels] += 1.0 - eps
    dlogits = (np.exp(logp) - q) * (loss_mask[..., None] / n)
    return loss, dlogits


def token_nll(logits, labels, loss_mask):
    """Per-token negative log-likelihood (no smoothing), masked positions 0."""
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    b, length = labels.shape
    nll = -logp[np.arange(b)[:, None], np.arange(length)[None, :], labels]
    return nll * loss_mask


def pack_batch(pairs, pad_id):
    """Stack (src_ids, tgt_full_ids) pairs into padded batch arrays.

    tgt_full is SOS ++ residues ++ EOS; decoder input drops the last token,
    labels drop the first. Returns (src, tgt_in, labels, loss_mask).
    """
    if not pairs:
        raise EmptyBatch("empty batch")
    src_lens = {len(s) for s, _ in pairs}
    if len(src_lens) != 1:
        raise ShapeMismatch(f"sources must share one length, got {sorted(src_lens)}")
    src = np.stack([np.asarray(s, dtype=np.int64) for s, _ in pairs])
    max_t = max(len(t) for _, t in pairs) - 1
    b = len(pairs)
    tgt_in = np.full((b, max_t), pad_id, dtype=np.int64)
    labels = np.full((b, max_t), pad_id, dtype=np.int64)
    for i, (_, t) in enumerate(pairs):
        t = np.asarray(t, dtype=np.int64)
        tgt_in[i, :len(t) - 1] = t[:-1]
        labels[i, :len(t) - 1] = t[1:]
    loss_mask = (labels != pad_id).astype(np.float64)
    return src, tgt_in, labels, loss_mask


class Model:
    """Parameter bundle plus the fixed tables the forward pass needs."""

    def __init__(self, cfg: ModelConfig, params: dict | None = None,
                 table: DescriptorTable | None = None):
        cfg.validate()
        self.cfg = cfg
        self.vocab = build_vocab()
        self.pos_table = nn.sinusoidal_table(
            max(cfg.max_src_len, cfg.max_tgt_len), cfg.d_s)
        if cfg.phys_enabled:
            self.phys_rows = (table if table is not None else DescriptorTable()
                              ).zscored_rows(self.vocab)
        else:
            self.phys_rows = None
        self.params = init_params(cfg) if params is None else params

    # masks ---------------------------------------------------------------
    def _src_key_mask(self, src):
        return (src == self.vocab.pad_id)[:, None, None, :]

    def _tgt_self_mask(self, tgt_in):
        length = tgt_in.shape[1]
        causal = np.triu(np.ones((length, length), dtype=bool), k=1)
        pad = (tgt_in == self.vocab.pad_id)[:, None, None, :]
        return causal[None, None] | pad

    # forward -------------------------------------------------------------
    def embed(self, ids):
        return fuse_forward(self.params, self.cfg, self.pos_table,
                            self.phys_rows, ids)

    def encode(self, src):
        src_embed, fuse_cache = self.embed(src)
        key_mask = self._src_key_mask(src)
        h_src, enc_cache, attn = encoder_forward(self.params, self.cfg,
                                                 src_embed, key_mask)
        return h_src, key_mask, (fuse_cache, enc_cache), attn

    def decode(self, tgt_in, h_src, cross_mask):
        tgt_embed, fuse_cache = self.embed(tgt_in)
        self_mask = self._tgt_self_mask(tgt_in)
        logits, dec_cache, attn = decoder_forward(self.params, self.cfg,
                                                  tgt_embed, h_src,
                                                  self_mask, cross_mask)
        return logits, (fuse_cache, dec_cache), attn

    def forward(self, src, tgt_in):
        """(B, Ls) x (B, Lt) token ids -> logits (B, Lt, 26) plus trace."""
        h_src, cross_mask, enc_trace, enc_attn = self.encode(src)
        logits, dec_trace, dec_attn = self.decode(tgt_in, h_src, cross_mask)
        trace = (enc_trace, dec_trace)
        return logits, trace, {"encoder": enc_attn, "decoder": dec_attn}

    def backward(self, trace, dlogits):
        (src_fuse, enc_cache), (tgt_fuse, dec_cache) = trace
        grads = zeros_like_params(self.params)
        d_tgt_embed, dh_src = decoder_backward(dec_cache, dlogits, grads, self.cfg)
        d_src_embed = encoder_backward(enc_cache, dh_src, grads, self.cfg)
        fuse_backward(tgt_fuse, d_tgt_embed, self.params, self.cfg, grads)
        fuse_backward(src_fuse, d_src_embed, self.params, self.cfg, grads)
        return grads

    # losses ----------------------------------------------------------------
    def loss_and_grad(self, src, tgt_in, labels, loss_mask,
                      label_smoothing=0.1):
        logits, trace, _ = self.forward(src, tgt_in)
        loss, dlogits = smoothed_cross_entropy(logits, labels, loss_mask,
                                               label_smoothing)
        return loss, self.backward(trace, dlogits)

    def loss_only(self, src, tgt_in, labels, loss_mask, label_smoothing=0.1):
        logits, _, _ = self.forward(src, tgt_in)
        loss, _ = smoothed_cross_entropy(logits, labels, loss_mask,
                                         label_smoothing)
        return loss

    def nll_sums(self, src, tgt_in, labels, loss_mask):
        """(total unsmoothed NLL, token count) over the batch."""
        logits, _, _ = self.forward(src, tgt_in)
        nll = token_nll(logits, labels, loss_mask)
        return float(nll.sum()), int(loss_mask.sum())

    def param_count(self) -> int:
        return param_count(self.params)


def attn_phys_decomposition(model: Model, table: DescriptorTable,
                            residue_i: str, residue_j: str) -> float:
    """Chemistry term of the attention-logit decomposition for a residue pair.

    Diagnostic only; equals the dot product of the two projected z-scored
    descriptors and is symmetric in its arguments.
    """
    if not model.cfg.phys_enabled:
        raise DisabledChannel("physicochemical channel is disabled")
    w = model.params["fuse.w_phys"]
    ei = table.zscore(residue_i) @ w
    ej = table.zscore(residue_j) @ w
    return float(ej @ ei)
