"""Shared encoder plus task heads, with hand-written backward passes.

Encoder, per sentence of n tokens (all float64)::

    X  = emb[ids] + positions[:n]
    H  = X @ Wp + bp
    A  = softmax((H Wq)(H Wk)^T / sqrt(d))
    H1 = H + (A @ H Wv) @ Wo
    T  = H1 + tanh(H1 @ W1 + b1) @ W2 + b2

Token vectors are the rows of T; the sentence vector is their mean.

Heads:

* tagging / classification: one affine map to label logits (per token / on the
  sentence vector).
* mlm: affine map from masked token vectors to vocabulary logits.
* dependency: bilinear arc scores ``T_i U C_j + u . C_j`` over candidate heads
  ``C = [root; T]``, and an affine relation classifier on ``[T_i; C_head]``.

Losses are mean cross-entropies over each head's prediction units; a task
with two heads (SID: slots + intent, UD: POS + arcs) sums its head losses
with equal weight.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from ..corpus import Sentence
from ..metrics import SidPrediction
from .vocab import Vocab

HEAD_KINDS = ("tagging", "classification", "mlm", "dependency")

# dataset kind -> (head suffix, head kind, Sentence field holding the gold labels)
TASK_HEADS = {
    "sid": (("slots", "tagging", "slot_tags"), ("intent", "classification", "intent")),
    "ud": (("pos", "tagging", "pos_tags"), ("dep", "dependency", "deprels")),
    "ner": (("ner", "tagging", "ner_tags"),),
    "mlm": (("mlm", "mlm", None),),
}


class UnknownTask(KeyError):
    pass


class EmptyBatch(ValueError):
    pass


class EmptySentence(ValueError):
    pass


@dataclass
class ModelConfig:
    dim: int = 64
    ff_dim: int = 128
    use_positions: bool = True

    def __post_init__(self):
        if self.dim <= 0 or self.ff_dim <= 0:
            raise ValueError(f"hidden sizes must be positive (dim={self.dim}, ff_dim={self.ff_dim})")


@dataclass
class Head:
    task: str
    kind: str
    field: Optional[str]
    labels: Optional[Vocab]
    params: dict[str, np.ndarray]


@dataclass
class Moments:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class ModelState:
    config: ModelConfig
    vocab: Vocab
    params: dict[str, np.ndarray]
    heads: dict[str, Head] = field(default_factory=dict)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    step_count: int = 0
    moments: dict[str, Moments] = field(default_factory=dict)

    def named_parameters(self) -> dict[str, np.ndarray]:
        out = {f"enc.{k}": v for k, v in self.params.items()}
        for hname in sorted(self.heads):
            for k, v in self.heads[hname].params.items():
                out[f"head.{hname}.{k}"] = v
        return out

    def task_heads(self, task: str) -> list[str]:
        return sorted(h for h, head in self.heads.items() if head.task == task)

    @property
    def tasks(self) -> list[str]:
        return sorted({h.task for h in self.heads.values()})

    def encoder_checksum(self) -> str:
        digest = hashlib.sha256()
        for k in sorted(self.params):
            digest.update(k.encode())
            digest.update(np.ascontiguousarray(self.params[k]).tobytes())
        return digest.hexdigest()

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for k, v in self.named_parameters().items():
            digest.update(k.encode())
            digest.update(np.ascontiguousarray(v).tobytes())
        return digest.hexdigest()


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(config: ModelConfig, vocab: Vocab, seed: Union[int, np.random.Generator]) -> ModelState:
    """Fresh encoder; heads are added per task with :func:`add_task_heads`.

    Embedding rows act on one-hot inputs, so their fan-in is 1.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d, f = config.dim, config.ff_dim
    params = {
        "emb": _uniform(rng, (len(vocab), d), 1),
        "Wp": _uniform(rng, (d, d), d),
        "bp": _uniform(rng, (d,), d),
        "Wq": _uniform(rng, (d, d), d),
        "Wk": _uniform(rng, (d, d), d),
        "Wv": _uniform(rng, (d, d), d),
        "Wo": _uniform(rng, (d, d), d),
        "W1": _uniform(rng, (d, f), d),
        "b1": _uniform(rng, (f,), d),
        "W2": _uniform(rng, (f, d), f),
        "b2": _uniform(rng, (d,), f),
    }
    return ModelState(config=config, vocab=vocab, params=params, rng=rng)


def new_head(state: ModelState, task: str, kind: str, field_name: Optional[str], labels: Optional[Vocab]) -> Head:
    d, rng = state.config.dim, state.rng
    if kind in ("tagging", "classification"):
        n = len(labels)
        params = {"W": _uniform(rng, (d, n), d), "b": _uniform(rng, (n,), d)}
    elif kind == "mlm":
        n = len(state.vocab)
        params = {"W": _uniform(rng, (d, n), d), "b": _uniform(rng, (n,), d)}
    elif kind == "dependency":
        n = len(labels)
        params = {
            "root": _uniform(rng, (d,), 1),
            "U": _uniform(rng, (d, d), d),
            "u": _uniform(rng, (d,), d),
            "Wl": _uniform(rng, (2 * d, n), 2 * d),
            "bl": _uniform(rng, (n,), 2 * d),
        }
    else:
        raise ValueError(f"unknown head kind {kind!r}")
    return Head(task=task, kind=kind, field=field_name, labels=labels, params=params)


def add_task_heads(state: ModelState, task: str, task_kind: str, labels: dict[str, Vocab]) -> list[str]:
    """Create the heads a task of ``task_kind`` needs; existing heads are kept as they are.

    ``labels`` maps a Sentence field name (e.g. ``slot_tags``) to its label vocabulary.
    """
    created = []
    for suffix, kind, field_name in TASK_HEADS[task_kind]:
        name = f"{task}.{suffix}"
        if name in state.heads:
            continue
        state.heads[name] = new_head(state, task, kind, field_name, labels.get(field_name))
        created.append(name)
    return created


def label_vocabs(task_kind: str, sentences: Iterable[Sentence]) -> dict[str, Vocab]:
    sentences = list(sentences)
    out = {}
    for _, kind, field_name in TASK_HEADS[task_kind]:
        if field_name is None:
            continue
        if kind == "classification":
            out[field_name] = Vocab.labels(getattr(s, field_name) for s in sentences)
        else:
            out[field_name] = Vocab.labels(x for s in sentences for x in getattr(s, field_name))
    return out


# ---------------------------------------------------------------------------
# encoder


def positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    rate = 1.0 / np.power(10000.0, (2 * (np.arange(d) // 2)) / d)
    angles = pos * rate[None, :]
    out = np.empty((n, d))
    out[:, 0::2] = np.sin(angles[:, 0::2])
    out[:, 1::2] = np.cos(angles[:, 1::2])
    return out


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def encode_ids(state: ModelState, ids: Sequence[int]) -> tuple[np.ndarray, dict]:
    if len(ids) == 0:
        raise EmptySentence("cannot encode an empty sentence")
    p = state.params
    ids = np.asarray(ids, dtype=np.int64)
    n, d = len(ids), state.config.dim
    x = p["emb"][ids]
    if state.config.use_positions:
        x = x + positions(n, d)
    h = x @ p["Wp"] + p["bp"]
    q, k, v = h @ p["Wq"], h @ p["Wk"], h @ p["Wv"]
    scale = 1.0 / np.sqrt(d)
    a = _softmax((q @ k.T) * scale)
    z = a @ v
    h1 = h + z @ p["Wo"]
    f = np.tanh(h1 @ p["W1"] + p["b1"])
    t = h1 + f @ p["W2"] + p["b2"]
    cache = dict(ids=ids, x=x, h=h, q=q, k=k, v=v, a=a, z=z, h1=h1, f=f, scale=scale)
    return t, cache


def encode(state: ModelState, sentence: Sentence) -> tuple[np.ndarray, np.ndarray]:
    """Token vectors (n x d) and their mean."""
    t, _ = encode_ids(state, state.vocab.encode(sentence.words))
    return t, t.mean(axis=0)


def _encoder_backward(state: ModelState, cache: dict, dt: np.ndarray, grads: dict[str, np.ndarray]) -> None:
    p = state.params
    h, h1, f, a = cache["h"], cache["h1"], cache["f"], cache["a"]
    grads["enc.W2"] += f.T @ dt
    grads["enc.b2"] += dt.sum(axis=0)
    dpre = (dt @ p["W2"].T) * (1.0 - f * f)
    grads["enc.W1"] += h1.T @ dpre
    grads["enc.b1"] += dpre.sum(axis=0)
    dh1 = dt + dpre @ p["W1"].T
    grads["enc.Wo"] += cache["z"].T @ dh1
    dz = dh1 @ p["Wo"].T
    da = dz @ cache["v"].T
    dv = a.T @ dz
    ds = a * (da - (da * a).sum(axis=1, keepdims=True)) * cache["scale"]
    dq = ds @ cache["k"]
    dk = ds.T @ cache["q"]
    grads["enc.Wq"] += h.T @ dq
    grads["enc.Wk"] += h.T @ dk
    grads["enc.Wv"] += h.T @ dv
    dh = dh1 + dq @ p["Wq"].T + dk @ p["Wk"].T + dv @ p["Wv"].T
    grads["enc.Wp"] += cache["x"].T @ dh
    grads["enc.bp"] += dh.sum(axis=0)
    np.add.at(grads["enc.emb"], cache["ids"], dh @ p["Wp"].T)


# ---------------------------------------------------------------------------
# batches and masking


@dataclass
class Batch:
    task: str
    sentences: list[Sentence]
    # MLM only: masked input ids, masked positions and original ids per sentence
    mlm_inputs: Optional[list[np.ndarray]] = None
    mlm_positions: Optional[list[np.ndarray]] = None
    mlm_targets: Optional[list[np.ndarray]] = None

    @property
    def n_targets(self) -> int:
        if self.mlm_targets is None:
            return sum(len(s) for s in self.sentences)
        return sum(len(t) for t in self.mlm_targets)


def mask_tokens(
    sentence: Sentence,
    vocab: Vocab,
    mask_prob: float = 0.15,
    seed: Union[int, np.random.Generator] = 0,
    task: str = "MLM",
) -> Batch:
    """Select each position with ``mask_prob``; selected inputs become MASK (80%),
    a random vocabulary token (10%) or stay unchanged (10%)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ids = np.asarray(vocab.encode(sentence.words), dtype=np.int64)
    n = len(ids)
    selected = rng.random(n) < mask_prob
    action = rng.random(n)
    n_regular = len(vocab) - 3
    replacement = rng.integers(3, 3 + n_regular, size=n) if n_regular > 0 else np.full(n, vocab.unk)
    inputs = ids.copy()
    use_mask = selected & (action < 0.8)
    use_random = selected & (action >= 0.8) & (action < 0.9)
    inputs[use_mask] = vocab.mask
    inputs[use_random] = replacement[use_random]
    pos = np.flatnonzero(selected)
    return Batch(task, [sentence], [inputs], [pos], [ids[pos]])


def mask_batch(
    sentences: Sequence[Sentence], vocab: Vocab, mask_prob: float, rng: np.random.Generator, task: str = "MLM"
) -> Batch:
    parts = [mask_tokens(s, vocab, mask_prob, rng, task) for s in sentences]
    return Batch(
        task,
        list(sentences),
        [b.mlm_inputs[0] for b in parts],
        [b.mlm_positions[0] for b in parts],
        [b.mlm_targets[0] for b in parts],
    )


# ---------------------------------------------------------------------------
# losses


def _units(head: Head, batch: Batch) -> int:
    if head.kind == "classification":
        return len(batch.sentences)
    if head.kind == "mlm":
        return sum(len(t) for t in batch.mlm_targets)
    return sum(len(s) for s in batch.sentences)


def _gold(head: Head, sentence: Sentence) -> np.ndarray:
    value = getattr(sentence, head.field)
    if head.kind == "classification":
        return np.array([head.labels.index(value)])
    return np.array(head.labels.encode(value), dtype=np.int64)


def _xent(logits: np.ndarray, gold: np.ndarray, weight: float) -> tuple[float, np.ndarray]:
    """Summed cross-entropy times ``weight`` and its gradient w.r.t. the logits."""
    logp = _log_softmax(logits)
    rows = np.arange(len(gold))
    loss = -logp[rows, gold].sum() * weight
    dlogits = np.exp(logp)
    dlogits[rows, gold] -= 1.0
    return loss, dlogits * weight


def _arc_scores(t: np.ndarray, params: dict) -> tuple[np.ndarray, np.ndarray]:
    cand = np.vstack([params["root"][None, :], t])
    scores = t @ params["U"] @ cand.T + (cand @ params["u"])[None, :]
    return scores, cand


def _head_loss(
    head: Head, hname: str, t: np.ndarray, sentence: Sentence, batch: Batch, idx: int, weight: float,
    grads: Optional[dict], need_grad: bool,
) -> tuple[float, Optional[np.ndarray]]:
    """Loss of one head on one sentence; returns (loss, d loss / d token vectors)."""
    p = head.params
    n, d = t.shape
    dt = np.zeros_like(t) if need_grad else None
    if head.kind == "tagging":
        logits = t @ p["W"] + p["b"]
        loss, dlog = _xent(logits, _gold(head, sentence), weight)
        if need_grad:
            grads[f"head.{hname}.W"] += t.T @ dlog
            grads[f"head.{hname}.b"] += dlog.sum(axis=0)
            dt += dlog @ p["W"].T
    elif head.kind == "classification":
        pooled = t.mean(axis=0)
        logits = (pooled @ p["W"] + p["b"])[None, :]
        loss, dlog = _xent(logits, _gold(head, sentence), weight)
        if need_grad:
            grads[f"head.{hname}.W"] += np.outer(pooled, dlog[0])
            grads[f"head.{hname}.b"] += dlog[0]
            dt += (dlog[0] @ p["W"].T)[None, :] / n
    elif head.kind == "mlm":
        pos, gold = batch.mlm_positions[idx], batch.mlm_targets[idx]
        if len(pos) == 0:
            return 0.0, dt
        sel = t[pos]
        logits = sel @ p["W"] + p["b"]
        loss, dlog = _xent(logits, gold, weight)
        if need_grad:
            grads[f"head.{hname}.W"] += sel.T @ dlog
            grads[f"head.{hname}.b"] += dlog.sum(axis=0)
            np.add.at(dt, pos, dlog @ p["W"].T)
    elif head.kind == "dependency":
        scores, cand = _arc_scores(t, p)
        gold_heads = np.asarray(sentence.heads, dtype=np.int64)
        arc_loss, dscores = _xent(scores, gold_heads, weight)
        g = np.hstack([t, cand[gold_heads]])
        rel_logits = g @ p["Wl"] + p["bl"]
        rel_loss, drel = _xent(rel_logits, _gold(head, sentence), weight)
        loss = arc_loss + rel_loss
        if need_grad:
            tu = t @ p["U"]
            grads[f"head.{hname}.U"] += t.T @ dscores @ cand
            grads[f"head.{hname}.u"] += cand.T @ dscores.sum(axis=0)
            dcand = dscores.T @ tu + np.outer(dscores.sum(axis=0), p["u"])
            dt += dscores @ cand @ p["U"].T
            grads[f"head.{hname}.Wl"] += g.T @ drel
            grads[f"head.{hname}.bl"] += drel.sum(axis=0)
            dg = drel @ p["Wl"].T
            dt += dg[:, :d]
            np.add.at(dcand, gold_heads, dg[:, d:])
            grads[f"head.{hname}.root"] += dcand[0]
            dt += dcand[1:]
    else:
        raise ValueError(f"unknown head kind {head.kind!r}")
    return float(loss), dt


def task_loss(state: ModelState, batch: Batch, need_grad: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss of ``batch`` for its task and gradients for the encoder and the task's heads.

    Sentences are processed in batch order and gradients accumulated in that
    order, so results are bitwise reproducible.
    """
    hnames = state.task_heads(batch.task)
    if not hnames:
        raise UnknownTask(f"model has no heads for task {batch.task!r}")
    if not batch.sentences:
        raise EmptyBatch(f"empty batch for task {batch.task!r}")
    heads = [state.heads[h] for h in hnames]
    if any(h.kind == "mlm" for h in heads) and batch.mlm_targets is None:
        raise ValueError("MLM batches need masked inputs; build them with mask_batch")
    weights = {}
    for hname, head in zip(hnames, heads):
        units = _units(head, batch)
        weights[hname] = 1.0 / units if units else 0.0
    grads: dict[str, np.ndarray] = {}
    if need_grad:
        grads = {f"enc.{k}": np.zeros_like(v) for k, v in state.params.items()}
        for hname, head in zip(hnames, heads):
            for k, v in head.params.items():
                grads[f"head.{hname}.{k}"] = np.zeros_like(v)
    total = 0.0
    for i, sentence in enumerate(batch.sentences):
        ids = batch.mlm_inputs[i] if batch.mlm_inputs is not None else state.vocab.encode(sentence.words)
        t, cache = encode_ids(state, ids)
        dt = np.zeros_like(t) if need_grad else None
        for hname, head in zip(hnames, heads):
            if weights[hname] == 0.0:
                continue
            loss, dth = _head_loss(head, hname, t, sentence, batch, i, weights[hname], grads, need_grad)
            total += loss
            if need_grad:
                dt += dth
        if need_grad:
            _encoder_backward(state, cache, dt, grads)
    return total, grads


# ---------------------------------------------------------------------------
# prediction


def greedy_heads(arc_scores: np.ndarray) -> np.ndarray:
    """Per-token argmax over candidate heads (column 0 = root), never choosing the token itself.

    No cycle repair is done.
    """
    scores = np.array(arc_scores, dtype=np.float64, copy=True)
    n = scores.shape[0]
    scores[np.arange(n), np.arange(n) + 1] = -np.inf
    return scores.argmax(axis=1)


@dataclass
class DependencyPrediction:
    heads: list[int]
    deprels: list[str]


def head_logits(state: ModelState, hname: str, t: np.ndarray) -> np.ndarray:
    head = state.heads[hname]
    p = head.params
    if head.kind == "classification":
        return t.mean(axis=0) @ p["W"] + p["b"]
    if head.kind in ("tagging", "mlm"):
        return t @ p["W"] + p["b"]
    raise ValueError(f"head {hname!r} of kind {head.kind!r} has no plain logits")


def predict_dependency(state: ModelState, hname: str, t: np.ndarray) -> DependencyPrediction:
    head = state.heads[hname]
    scores, cand = _arc_scores(t, head.params)
    heads = greedy_heads(scores)
    rel_logits = np.hstack([t, cand[heads]]) @ head.params["Wl"] + head.params["bl"]
    return DependencyPrediction([int(h) for h in heads], head.labels.decode(rel_logits.argmax(axis=1)))


def predict(state: ModelState, sentence: Sentence, task: str, mask_positions: Optional[Sequence[int]] = None):
    """Argmax decoding for every head of ``task``; ties go to the lowest index.

    Returns a SidPrediction for SID tasks, a dict ``{field: prediction}``
    otherwise. For MLM tasks the tokens at ``mask_positions`` are replaced by
    MASK and the predicted tokens at those positions are returned.
    """
    hnames = state.task_heads(task)
    if not hnames:
        raise UnknownTask(f"model has no heads for task {task!r}")
    ids = state.vocab.encode(sentence.words)
    if mask_positions is not None:
        ids = list(ids)
        for i in mask_positions:
            ids[i] = state.vocab.mask
    t, _ = encode_ids(state, ids)
    out = {}
    for hname in hnames:
        head = state.heads[hname]
        if head.kind == "tagging":
            out[head.field] = head.labels.decode(head_logits(state, hname, t).argmax(axis=1))
        elif head.kind == "classification":
            out[head.field] = head.labels.itos[int(head_logits(state, hname, t).argmax())]
        elif head.kind == "dependency":
            dep = predict_dependency(state, hname, t)
            out["heads"], out["deprels"] = dep.heads, dep.deprels
        elif head.kind == "mlm":
            pos = list(mask_positions or [])
            logits = head_logits(state, hname, t)[pos]
            out["tokens"] = state.vocab.decode(logits.argmax(axis=1)) if pos else []
    if set(out) == {"slot_tags", "intent"}:
        return SidPrediction(slot_tags=out["slot_tags"], intent=out["intent"])
    return out
