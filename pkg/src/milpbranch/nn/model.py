"""Temporo-attentional branching policy.

Each bipartite state goes through feature embeddings and two attention passes
(constraints attend to variables, then variables attend to the updated
constraints). The per-variable embeddings of the last L states run through a
single-layer GRU, and an MLP scores every variable. The softmax is taken over
the fractional candidates only.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..features import CONS_FEATS, EDGE_FEATS, SCHEMA_VERSION, VAR_FEATS, PreNormStats
from . import autodiff as ad
from .autodiff import Segments, Tensor

CHECKPOINT_FORMAT = "milpbranch-policy"


class EmptyCandidates(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    heads: int = 2
    seq_len: int = 4
    d_attn: int | None = None       # d' ; defaults to d
    d_hidden: int | None = None     # d'' ; defaults to d
    share_weights: bool = False
    dropout: float = 0.0
    self_loops: bool = True
    concat_heads: bool = False

    def __post_init__(self):
        if self.heads < 1 or self.seq_len < 1 or self.d < 1:
            raise ValueError("d, heads and seq_len must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def dp(self) -> int:
        return self.d_attn or self.d

    @property
    def dh(self) -> int:
        return self.d_hidden or self.d

    @property
    def cons_out(self) -> int:
        return self.dp * self.heads if self.concat_heads else self.dp

    @property
    def var_out(self) -> int:
        return self.d * self.heads if self.concat_heads else self.d


def _glorot(rng, shape):
    fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], 1)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    d, dp, dh = cfg.d, cfg.dp, cfg.dh
    shapes = {
        "emb.cons.W": (d, CONS_FEATS), "emb.cons.b": (d,),
        "emb.var.W": (d, VAR_FEATS), "emb.var.b": (d,),
        "emb.edge.W": (d, EDGE_FEATS), "emb.edge.b": (d,),
    }
    prefixes = ["gat."] if cfg.share_weights else [f"gat.h{h}." for h in range(cfg.heads)]
    for pre in prefixes:
        shapes.update({
            pre + "theta_c": (dp, d), pre + "theta_v": (dp, d), pre + "theta_e": (dp, d),
            pre + "psi_v": (d, d), pre + "psi_c": (d, cfg.cons_out), pre + "psi_e": (d, d),
        })
    for h in range(cfg.heads):
        shapes[f"gat.h{h}.a_c"] = (3 * dp,)
        shapes[f"gat.h{h}.a_v"] = (3 * d,)
    for gate in ("z", "r", "h"):
        shapes[f"gru.W_{gate}"] = (dh, cfg.var_out)
        shapes[f"gru.U_{gate}"] = (dh, dh)
        shapes[f"gru.b_{gate}"] = (dh,)
    shapes.update({"mlp.W1": (dh, dh), "mlp.b1": (dh,), "mlp.W2": (1, dh), "mlp.b2": (1,)})

    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith((".b", ".b1", ".b2")) or name.startswith("gru.b_"):
            value = np.zeros(shape)
        elif len(shape) == 1:
            value = rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(shape[0])
        else:
            value = _glorot(rng, shape)
        params[name] = Tensor(value, requires_grad=True)
    return params


class GraphBatch:
    """Several bipartite states stacked into one disjoint graph."""

    def __init__(self, states, self_loops: bool = True):
        self.states = states
        self.num_cons = [s.m for s in states]
        self.num_vars = [s.n for s in states]
        self.cons_offsets = np.concatenate([[0], np.cumsum(self.num_cons)]).astype(np.int64)
        self.var_offsets = np.concatenate([[0], np.cumsum(self.num_vars)]).astype(np.int64)
        M, N = int(self.cons_offsets[-1]), int(self.var_offsets[-1])
        self.M, self.N = M, N

        self.C = np.concatenate([s.cons_feats for s in states], axis=0).reshape(M, CONS_FEATS)
        self.V = np.concatenate([s.var_feats for s in states], axis=0).reshape(N, VAR_FEATS)
        self.E = np.concatenate([s.edge_feats for s in states], axis=0).reshape(-1, EDGE_FEATS)
        self.edge_cons = np.concatenate(
            [s.edge_index[0] + off for s, off in zip(states, self.cons_offsets)]).astype(np.int64)
        self.edge_var = np.concatenate(
            [s.edge_index[1] + off for s, off in zip(states, self.var_offsets)]).astype(np.int64)
        nnz = self.edge_cons.size
        self.self_loops = self_loops

        # constraint pass: entries are [self loops..., edges...] regrouped by constraint
        ids1 = np.concatenate([np.arange(M), self.edge_cons]) if self_loops else self.edge_cons
        self.perm1 = np.argsort(ids1, kind="stable")
        self.seg1 = Segments(ids1[self.perm1], M)
        # variable pass: same layout, grouped by variable
        ids2 = np.concatenate([np.arange(N), self.edge_var]) if self_loops else self.edge_var
        self.perm2 = np.argsort(ids2, kind="stable")
        self.seg2 = Segments(ids2[self.perm2], N)
        self.nnz = nnz


class PolicyModel:
    def __init__(self, config: ModelConfig | None = None, seed: int = 0,
                 prenorm: PreNormStats | None = None, params: dict | None = None):
        self.config = config or ModelConfig()
        self.params = params if params is not None else init_params(self.config, seed)
        self.prenorm = prenorm or PreNormStats.identity()
        self.schema_version = SCHEMA_VERSION

    # -- parameters ------------------------------------------------------

    def _p(self, name: str, head: int) -> Tensor:
        if self.config.share_weights and not name.startswith(("a_c", "a_v")):
            return self.params["gat." + name]
        return self.params[f"gat.h{head}.{name}"]

    def param_names(self):
        return sorted(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    # -- forward pieces --------------------------------------------------

    def gat_forward(self, batch: GraphBatch, train: bool = False, rng=None, attention=None) -> Tensor:
        """Variable embeddings (N x var_out) after both attention passes.

        When ``attention`` is a list, per-head ``(alpha, beta)`` arrays are
        appended to it, each ordered by ``batch.seg1`` / ``batch.seg2``.
        """
        cfg, P = self.config, self.params
        dp, d = cfg.dp, cfg.d
        drop = cfg.dropout if train else 0.0

        C = ad.leaky_relu(ad.linear(Tensor(batch.C), P["emb.cons.W"], P["emb.cons.b"]))
        V = ad.leaky_relu(ad.linear(Tensor(batch.V), P["emb.var.W"], P["emb.var.b"]))
        E = ad.leaky_relu(ad.linear(Tensor(batch.E), P["emb.edge.W"], P["emb.edge.b"]))
        ec, ev = batch.edge_cons, batch.edge_var

        def attend(own, other, edge, own_idx, other_idx, a, width, perm, seg):
            s_own = ad.matvec(ad.leaky_relu(own), ad.take(a, 0, width))
            s_other = ad.matvec(ad.leaky_relu(other), ad.take(a, width, 2 * width))
            s_edge = ad.matvec(ad.leaky_relu(edge), ad.take(a, 2 * width, 3 * width))
            edge_logit = ad.gather(s_own, own_idx) + ad.gather(s_other, other_idx) + s_edge
            neighbor_msg = ad.gather(other, other_idx)
            if batch.self_loops:
                # the self entry puts its own message in the neighbor slot; no edge term
                self_logit = s_own + ad.matvec(ad.leaky_relu(own), ad.take(a, width, 2 * width))
                logits = ad.concat([self_logit, edge_logit])
                msgs = ad.concat([own, neighbor_msg])
            else:
                logits, msgs = edge_logit, neighbor_msg
            weights = ad.segment_softmax(ad.gather(logits, perm), seg)
            probs = weights.data
            if drop > 0.0:
                mask = (rng.random(weights.shape) >= drop) / (1.0 - drop)
                weights = ad.mul(weights, Tensor(mask))
            out = ad.segment_sum(ad.scale_rows(ad.gather(msgs, perm), weights), seg)
            return out, probs

        heads_c, alphas = [], []
        for h in range(cfg.heads):
            own = ad.linear(C, self._p("theta_c", h))
            other = ad.linear(V, self._p("theta_v", h))
            edge = ad.linear(E, self._p("theta_e", h))
            out, alpha = attend(own, other, edge, ec, ev, self.params[f"gat.h{h}.a_c"], dp,
                                batch.perm1, batch.seg1)
            heads_c.append(out)
            alphas.append(alpha)
        C_new = self._combine(heads_c)

        heads_v, betas = [], []
        for h in range(cfg.heads):
            own = ad.linear(V, self._p("psi_v", h))
            other = ad.linear(C_new, self._p("psi_c", h))
            edge = ad.linear(E, self._p("psi_e", h))
            out, beta = attend(own, other, edge, ev, ec, self.params[f"gat.h{h}.a_v"], d,
                               batch.perm2, batch.seg2)
            heads_v.append(out)
            betas.append(beta)
        if attention is not None:
            attention.extend(zip(alphas, betas))
        return ad.check_finite(self._combine(heads_v), "variable embeddings")

    def _combine(self, heads):
        if self.config.concat_heads:
            return ad.concat(heads, axis=1) if len(heads) > 1 else heads[0]
        acc = heads[0]
        for t in heads[1:]:
            acc = acc + t
        return ad.scale(acc, 1.0 / len(heads)) if len(heads) > 1 else acc

    def gru_step(self, x: Tensor, h: Tensor) -> Tensor:
        P = self.params
        z = ad.sigmoid(ad.linear(x, P["gru.W_z"], P["gru.b_z"]) + ad.linear(h, P["gru.U_z"]))
        r = ad.sigmoid(ad.linear(x, P["gru.W_r"], P["gru.b_r"]) + ad.linear(h, P["gru.U_r"]))
        cand = ad.tanh(ad.linear(x, P["gru.W_h"], P["gru.b_h"]) + ad.linear(ad.mul(r, h), P["gru.U_h"]))
        return ad.mul(ad.one_minus(z), h) + ad.mul(z, cand)

    def gru_forward(self, sequence) -> list:
        """Run the GRU from a zero state; returns the hidden state after every step."""
        if len(sequence) < 1:
            raise ValueError("GRU needs a sequence of length >= 1")
        h = Tensor(np.zeros((sequence[0].shape[0], self.config.dh)))
        out = []
        for x in sequence:
            h = self.gru_step(ad.constant(x), h)
            out.append(h)
        return out

    def score(self, hidden: Tensor) -> Tensor:
        P = self.params
        hid = ad.leaky_relu(ad.linear(hidden, P["mlp.W1"], P["mlp.b1"]))
        return ad.reshape(ad.linear(hid, P["mlp.W2"], P["mlp.b2"]), (-1,))

    # -- windows ---------------------------------------------------------

    def window_logits(self, windows, train=False, rng=None):
        """Logits for every step of every window.

        ``windows`` is a list of equal-length lists of normalized states (all
        states in one window share the same variable count). Returns
        ``(logits per step, row offsets per window)``; step ``l`` logits are a
        vector over the variables of all windows, window ``b`` occupying rows
        ``offsets[b]:offsets[b+1]``.
        """
        L = len(windows[0])
        if any(len(w) != L for w in windows):
            raise ValueError("windows in one batch must have equal length")
        flat = [s for w in windows for s in w]
        batch = GraphBatch(flat, self.config.self_loops)
        emb = self.gat_forward(batch, train=train, rng=rng)
        sizes = [w[0].n for w in windows]
        for w, n in zip(windows, sizes):
            if any(s.n != n for s in w):
                raise ValueError("states within a window must have the same variables")
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        steps = []
        for l in range(L):
            idx = np.concatenate([batch.var_offsets[b * L + l] + np.arange(n)
                                  for b, n in enumerate(sizes)])
            steps.append(ad.gather(emb, idx))
        hidden = self.gru_forward(steps)
        return [self.score(h) for h in hidden], offsets

    def window_loss(self, windows, actions, train=False, rng=None) -> Tensor:
        """Mean over windows and steps of the negative log-likelihood of the
        expert actions; ``actions[b][l]`` labels ``windows[b][l]``."""
        logits, offsets = self.window_logits(windows, train=train, rng=rng)
        L = len(windows[0])
        R = int(offsets[-1])
        entry_idx, entry_grp, label_pos = [], [], []
        pos = 0
        for b, w in enumerate(windows):
            for l, state in enumerate(w):
                cands = state.candidates
                act = int(actions[b][l])
                where = np.flatnonzero(cands == act)
                if where.size != 1:
                    raise ValueError(f"expert action x{act} is not a candidate")
                entry_idx.append(l * R + offsets[b] + cands)
                entry_grp.append(np.full(cands.size, b * L + l))
                label_pos.append(pos + int(where[0]))
                pos += cands.size
        seg = Segments(np.concatenate(entry_grp), len(windows) * L)
        all_logits = ad.concat(logits) if L > 1 else logits[0]
        logp = ad.segment_log_softmax(ad.gather(all_logits, np.concatenate(entry_idx)), seg)
        return ad.neg(ad.mean(ad.gather(logp, np.array(label_pos))))

    # -- inference -------------------------------------------------------

    def normalize(self, state):
        from ..features import prenorm_apply
        return prenorm_apply(self.prenorm, state)

    def embed(self, state) -> np.ndarray:
        """Attention embeddings of one already-normalized state."""
        with ad.no_grad():
            return self.gat_forward(GraphBatch([state], self.config.self_loops)).data

    def logits_from_embeddings(self, embeddings) -> np.ndarray:
        with ad.no_grad():
            hidden = self.gru_forward([Tensor(e) for e in embeddings])[-1]
            return self.score(hidden).data

    def policy_forward(self, states):
        """Probabilities over the last state's candidates and raw logits for
        all its variables. ``states`` are normalized, oldest first."""
        states = list(states)[-self.config.seq_len:]
        cands = states[-1].candidates
        if cands.size == 0:
            raise EmptyCandidates("the last state has no fractional candidates")
        logits = self.logits_from_embeddings([self.embed(s) for s in states])
        return candidate_probs(logits, cands), logits

    def select(self, states) -> int:
        probs, logits = self.policy_forward(states)
        return pick(logits, states[-1].candidates)

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "schema_version": self.schema_version,
            "hyper": asdict(self.config),
            "prenorm": self.prenorm.to_dict(),
            "params": {name: {"shape": list(t.shape), "data": t.data.ravel().tolist()}
                       for name, t in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicyModel":
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a policy checkpoint")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"checkpoint feature schema {doc.get('schema_version')} != {SCHEMA_VERSION}")
        params = {name: Tensor(np.array(p["data"], dtype=np.float64).reshape(p["shape"]),
                               requires_grad=True)
                  for name, p in doc["params"].items()}
        return cls(ModelConfig(**doc["hyper"]), prenorm=PreNormStats.from_dict(doc["prenorm"]),
                   params=params)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "PolicyModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def copy(self) -> "PolicyModel":
        params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return PolicyModel(self.config, prenorm=self.prenorm, params=params)


def candidate_probs(logits, candidates) -> np.ndarray:
    """Softmax over the candidate entries; every other variable gets 0."""
    probs = np.zeros_like(logits)
    sel = logits[candidates]
    e = np.exp(sel - sel.max())
    probs[candidates] = e / e.sum()
    return probs


def pick(logits, candidates) -> int:
    """Argmax over candidates, lowest index on exact ties."""
    cands = np.sort(np.asarray(candidates))
    return int(cands[int(np.argmax(logits[cands]))])


def loss_and_grad(model: PolicyModel, windows, actions, clip_norm: float | None = 5.0,
                  train: bool = False, rng=None):
    """Loss value and a ``{name: gradient}`` dict, clipped to ``clip_norm``."""
    model.zero_grad()
    loss = model.window_loss(windows, actions, train=train, rng=rng)
    loss.backward()
    grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for name, t in model.params.items()}
    if clip_norm is not None:
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > clip_norm:
            grads = {k: g * (clip_norm / norm) for k, g in grads.items()}
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise ad.NonFinite("non-finite gradient")
    return float(loss.data), grads
