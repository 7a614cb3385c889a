"""Small GPT-2 style decoder with tied LM head and a separate 2-way classification head."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .seeding import rng as substream

log = logging.getLogger(__name__)

LAYER_TYPES = ("embedding", "attention", "mlp", "layernorm", "head")
MASKABLE_TYPES = ("attention", "mlp", "layernorm")
MODES = ("full", "circuit", "complement")
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, msg: str, step: int):
        super().__init__(f"{msg} (step {step})")
        self.step = step


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 200
    context_len: int = 32
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    seed: int = 0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if k != "seed" and (not isinstance(v, int) or v < 1):
                raise ConfigError(f"{k} must be a positive integer, got {v!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")


class ParamStore:
    """Ordered name -> array registry; every tensor carries a layer type tag.

    The LM head is tied to ``wte`` and has no tensor of its own.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.arrays: dict[str, np.ndarray] = {}
        self.types: dict[str, str] = {}

    def add(self, name: str, arr: np.ndarray, layer_type: str) -> None:
        if name in self.arrays:
            raise KeyError(f"duplicate parameter {name}")
        if layer_type not in LAYER_TYPES:
            raise ValueError(f"unknown layer type {layer_type}")
        self.arrays[name] = np.ascontiguousarray(arr, dtype=np.float64)
        self.types[name] = layer_type

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def names(self, types: Iterable[str] | None = None) -> list[str]:
        if types is None:
            return list(self.arrays)
        types = set(types)
        return [n for n in self.arrays if self.types[n] in types]

    @property
    def maskable(self) -> list[str]:
        return self.names(MASKABLE_TYPES)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {n: a.shape for n, a in self.arrays.items()}

    def count(self, types: Iterable[str] | None = None) -> int:
        return sum(self.arrays[n].size for n in self.names(types))

    def copy(self) -> ParamStore:
        out = ParamStore(self.cfg)
        for n, a in self.arrays.items():
            out.add(n, a.copy(), self.types[n])
        return out

    def registry_hash(self) -> str:
        """Hash of the layout only (names, types, shapes), not the values."""
        h = hashlib.sha256()
        for n, a in self.arrays.items():
            h.update(f"{n}|{self.types[n]}|{a.shape};".encode())
        return h.hexdigest()

    def content_hash(self) -> str:
        h = hashlib.sha256(self.registry_hash().encode())
        for a in self.arrays.values():
            h.update(a.astype("<f8").tobytes())
        return h.hexdigest()

    def equal(self, other: ParamStore) -> bool:
        return (self.registry_hash() == other.registry_hash()
                and all(np.array_equal(a, other.arrays[n]) for n, a in self.arrays.items()))


def build_model(cfg: ModelConfig) -> ParamStore:
    """Fresh parameters: weights ~ N(0, 0.02), biases 0, LayerNorm gains 1."""
    r = substream(cfg.seed, "model")
    d, f = cfg.d_model, cfg.d_ff

    def normal(*shape):
        return r.normal(0.0, 0.02, size=shape)

    p = ParamStore(cfg)
    p.add("wte", normal(cfg.vocab_size, d), "embedding")
    p.add("wpe", normal(cfg.context_len, d), "embedding")
    for i in range(cfg.n_layers):
        b = f"h{i}."
        p.add(b + "ln_1.weight", np.ones(d), "layernorm")
        p.add(b + "ln_1.bias", np.zeros(d), "layernorm")
        for proj in ("q", "k", "v", "o"):
            p.add(b + f"attn.{proj}.weight", normal(d, d), "attention")
            p.add(b + f"attn.{proj}.bias", np.zeros(d), "attention")
        p.add(b + "ln_2.weight", np.ones(d), "layernorm")
        p.add(b + "ln_2.bias", np.zeros(d), "layernorm")
        p.add(b + "mlp.up.weight", normal(d, f), "mlp")
        p.add(b + "mlp.up.bias", np.zeros(f), "mlp")
        p.add(b + "mlp.down.weight", normal(f, d), "mlp")
        p.add(b + "mlp.down.bias", np.zeros(d), "mlp")
    p.add("ln_f.weight", np.ones(d), "layernorm")
    p.add("ln_f.bias", np.zeros(d), "layernorm")
    p.add("cls_head.weight", normal(d, 2), "head")
    p.add("cls_head.bias", np.zeros(2), "head")
    return p


# variants


@dataclass
class ModelVariant:
    """Parameters viewed through a circuit mask.

    ``circuit`` mode zeroes maskable parameters whose bit is 0, ``complement``
    mode zeroes those whose bit is 1; non-maskable tensors are always read
    as stored.
    """

    params: ParamStore
    circuit: object | None = None  # extraction.CircuitMask
    mode: str = "full"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode != "full" and self.circuit is None:
            raise ValueError(f"mode {self.mode!r} needs a circuit mask")

    def keep(self, name: str) -> np.ndarray | None:
        """Boolean keep-mask for ``name``, or None when the tensor is read unmasked."""
        if self.mode == "full" or name not in self.circuit.bits:
            return None
        bits = self.circuit.bits[name]
        return bits if self.mode == "circuit" else ~bits

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for n, a in self.params.arrays.items():
            k = self.keep(n)
            out[n] = a if k is None else np.where(k, a, 0.0)
        return out

    def materialize(self) -> ModelVariant:
        """A full-mode variant over a physically zeroed copy."""
        p = ParamStore(self.params.cfg)
        for n, a in self.arrays().items():
            p.add(n, a.copy(), self.params.types[n])
        return ModelVariant(p)


# forward


def _pad_batch(seqs: Sequence[Sequence[int]], cfg: ModelConfig,
               width: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad with ``PAD_ID`` to ``width`` (default: longest sequence)."""
    if width is None:
        width = max((len(s) for s in seqs), default=1)
    ids = np.zeros((len(seqs), width), dtype=np.int64)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    for i, s in enumerate(seqs):
        if len(s) == 0:
            raise ValueError("empty token sequence")
        if len(s) > cfg.context_len:
            raise ValueError(f"sequence of length {len(s)} exceeds context_len={cfg.context_len}")
        ids[i, :len(s)] = s
        lengths[i] = len(s)
    if ids.max() >= cfg.vocab_size or ids.min() < 0:
        raise IndexError(f"token id out of range for vocab_size={cfg.vocab_size}")
    return ids, lengths


def _causal_mask(t: int) -> np.ndarray:
    return np.tril(np.ones((t, t), dtype=bool))


def backbone(P: Mapping[str, Tensor], ids: np.ndarray, cfg: ModelConfig) -> Tensor:
    """Final-LayerNorm hidden states [B, T, d] for padded ``ids`` [B, T]."""
    B, T = ids.shape
    H, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    x = nx.embedding(P["wte"], ids) + nx.embedding(P["wpe"], np.arange(T))
    mask = _causal_mask(T)
    scale = 1.0 / math.sqrt(dh)
    for i in range(cfg.n_layers):
        b = f"h{i}."
        h = nx.layer_norm(x, P[b + "ln_1.weight"], P[b + "ln_1.bias"])

        def heads(name):
            y = h @ P[b + f"attn.{name}.weight"] + P[b + f"attn.{name}.bias"]
            return nx.transpose(y.reshape(B, T, H, dh), (0, 2, 1, 3))

        q, k, v = heads("q"), heads("k"), heads("v")
        att = nx.softmax_rows((q @ nx.transpose(k)) * scale, mask)
        y = nx.transpose(att @ v, (0, 2, 1, 3)).reshape(B, T, cfg.d_model)
        x = x + (y @ P[b + "attn.o.weight"] + P[b + "attn.o.bias"])
        h = nx.layer_norm(x, P[b + "ln_2.weight"], P[b + "ln_2.bias"])
        h = nx.gelu(h @ P[b + "mlp.up.weight"] + P[b + "mlp.up.bias"])
        x = x + (h @ P[b + "mlp.down.weight"] + P[b + "mlp.down.bias"])
    return nx.layer_norm(x, P["ln_f.weight"], P["ln_f.bias"])


def lm_head(P: Mapping[str, Tensor], hidden: Tensor) -> Tensor:
    return hidden @ nx.transpose(P["wte"])


def cls_head(P: Mapping[str, Tensor], hidden: Tensor, lengths: np.ndarray) -> Tensor:
    last = nx.take(hidden, (np.arange(len(lengths)), lengths - 1))
    return last @ P["cls_head.weight"] + P["cls_head.bias"]


def as_tensors(arrays: Mapping[str, np.ndarray], grad: Iterable[str] = ()) -> dict[str, Tensor]:
    grad = set(grad)
    return {n: Tensor(a, requires_grad=n in grad) for n, a in arrays.items()}


def forward_lm(variant: ModelVariant, tokens: Sequence[int]) -> Tensor:
    """Next-token logits [len(tokens), V] for one sequence."""
    cfg = variant.params.cfg
    # fixed width: every matmul has the same shape whatever len(tokens) is,
    # so earlier positions are bit-identical when a suffix is appended
    ids, _ = _pad_batch([tokens], cfg, cfg.context_len)
    P = as_tensors(variant.arrays())
    logits = lm_head(P, backbone(P, ids, cfg))
    return Tensor(logits.data[0, :len(tokens)])


def forward_cls(variant: ModelVariant, tokens: Sequence[int]) -> Tensor:
    """Two class logits read from the last position."""
    return Tensor(cls_logits_batch(variant.arrays(), [tokens], variant.params.cfg)[0])


def cls_logits_batch(arrays: Mapping[str, np.ndarray], seqs: Sequence[Sequence[int]],
                     cfg: ModelConfig, batch: int = 256) -> np.ndarray:
    out = []
    P = as_tensors(arrays)
    for s in range(0, len(seqs), batch):
        ids, lengths = _pad_batch(seqs[s:s + batch], cfg)
        out.append(cls_head(P, backbone(P, ids, cfg), lengths).data)
    return np.concatenate(out) if out else np.zeros((0, 2))


def accuracy(variant: ModelVariant, seqs: Sequence[Sequence[int]], labels: Sequence[int]) -> float:
    if not len(seqs):
        raise ValueError("empty evaluation set")
    logits = cls_logits_batch(variant.arrays(), seqs, variant.params.cfg)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def _target_positions(prompts, targets):
    seqs, rows, cols, tgt = [], [], [], []
    for i, (p, t) in enumerate(zip(prompts, targets)):
        if len(t) == 0:
            raise ValueError("target must be nonempty")
        seqs.append(list(p) + list(t)[:-1])
        for j, tok in enumerate(t):
            rows.append(i)
            cols.append(len(p) - 1 + j)
            tgt.append(tok)
    return seqs, np.array(rows), np.array(cols), np.array(tgt)


def target_logits(P: Mapping[str, Tensor], prompts, targets, cfg: ModelConfig):
    """LM logits at every target position (teacher forced) plus row owner and target ids."""
    seqs, rows, cols, tgt = _target_positions(prompts, targets)
    ids, _ = _pad_batch(seqs, cfg)
    hidden = backbone(P, ids, cfg)
    picked = nx.take(hidden, (rows, cols))
    return lm_head(P, picked), rows, tgt


def nll_batch(arrays: Mapping[str, np.ndarray], prompts, targets, cfg: ModelConfig,
              batch: int = 256) -> np.ndarray:
    """Summed target-token NLL for each (prompt, target) pair."""
    out = np.zeros(len(prompts))
    P = as_tensors(arrays)
    for s in range(0, len(prompts), batch):
        logits, rows, tgt = target_logits(P, prompts[s:s + batch], targets[s:s + batch], cfg)
        lp = nx.log_softmax_np(logits.data)[np.arange(len(tgt)), tgt]
        np.add.at(out, rows + s, -lp)
    return out


def nll_of_target(variant: ModelVariant, prompt: Sequence[int], target: Sequence[int]) -> float:
    """-log p(target | prompt), summed over target tokens."""
    if len(target) == 0:
        raise ValueError("target must be nonempty")
    return float(nll_batch(variant.arrays(), [prompt], [target], variant.params.cfg)[0])


# training


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 32
    lr: float = 0.2
    momentum: float = 0.9
    optimizer: str = "sgd"  # "sgd" (momentum) or "adam"
    warmup: int = 0
    cls_weight: float = 1.0
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 100


@dataclass
class TrainResult:
    params: ParamStore
    history: list[dict] = field(default_factory=list)


def lr_at(step: int, tc: TrainConfig) -> float:
    if tc.warmup and step < tc.warmup:
        return tc.lr * (step + 1) / tc.warmup
    span = max(1, tc.steps - tc.warmup)
    return 0.5 * tc.lr * (1.0 + math.cos(math.pi * (step - tc.warmup) / span))


def joint_loss(P, cfg, lm_seqs, cls_seqs, cls_labels, cls_weight):
    """Mean next-token CE over ``lm_seqs`` + weighted classification CE, one forward pass."""
    seqs = list(lm_seqs) + list(cls_seqs)
    ids, lengths = _pad_batch(seqs, cfg)
    hidden = backbone(P, ids, cfg)
    n_lm = len(lm_seqs)
    parts = {}
    total = None
    if n_lm:
        rows, cols = [], []
        for i in range(n_lm):
            rows += [i] * (lengths[i] - 1)
            cols += list(range(lengths[i] - 1))
        rows, cols = np.array(rows), np.array(cols)
        logits = lm_head(P, nx.take(hidden, (rows, cols)))
        lm = nx.cross_entropy(logits, ids[rows, cols + 1])
        parts["lm"] = lm.item()
        total = lm
    if len(cls_seqs):
        idx = np.arange(n_lm, len(seqs))
        last = nx.take(hidden, (idx, lengths[idx] - 1))
        logits = last @ P["cls_head.weight"] + P["cls_head.bias"]
        cl = nx.cross_entropy(logits, cls_labels)
        parts["cls"] = cl.item()
        total = cl * cls_weight if total is None else total + cl * cls_weight
    return total, parts


def train_base(params: ParamStore, corpus: Sequence[Sequence[int]],
               cls_data: Sequence[tuple[Sequence[int], int]], tc: TrainConfig = TrainConfig()
               ) -> TrainResult:
    """Jointly fit the LM objective on ``corpus`` and the classifier on ``cls_data``.

    Returns a new ParamStore; ``params`` is not modified.
    """
    if not len(corpus):
        raise ValueError("corpus is empty")
    cfg = params.cfg
    out = params.copy()
    names = out.names()
    state = {n: np.zeros_like(out[n]) for n in names}
    state2 = {n: np.zeros_like(out[n]) for n in names}
    r = substream(tc.seed, "train")
    history = []
    cls_seqs = [s for s, _ in cls_data]
    cls_labels = np.array([y for _, y in cls_data], dtype=np.int64)
    for step in range(tc.steps):
        lm_idx = r.integers(len(corpus), size=tc.batch)
        cls_idx = r.integers(len(cls_seqs), size=tc.batch) if len(cls_seqs) else np.zeros(0, int)
        P = as_tensors(out.arrays, names)
        try:
            loss, parts = joint_loss(P, cfg, [corpus[i] for i in lm_idx],
                                     [cls_seqs[i] for i in cls_idx], cls_labels[cls_idx],
                                     tc.cls_weight)
            loss.backward()
        except nx.NumericError as exc:
            raise TrainingError(f"training diverged: {exc}", step) from exc
        grads = {n: P[n].grad for n in names}
        gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if not math.isfinite(gnorm):
            raise TrainingError("non-finite gradient", step)
        clip = min(1.0, tc.grad_clip / (gnorm + 1e-12)) if tc.grad_clip else 1.0
        lr = lr_at(step, tc)
        for n in names:
            g = grads[n] * clip
            if tc.optimizer == "adam":
                b1, b2 = 0.9, 0.999
                state[n] = b1 * state[n] + (1 - b1) * g
                state2[n] = b2 * state2[n] + (1 - b2) * g * g
                mh = state[n] / (1 - b1 ** (step + 1))
                vh = state2[n] / (1 - b2 ** (step + 1))
                out.arrays[n] = out.arrays[n] - lr * mh / (np.sqrt(vh) + 1e-8)
            else:
                state[n] = tc.momentum * state[n] + g
                out.arrays[n] = out.arrays[n] - lr * state[n]
        if step % tc.log_every == 0 or step == tc.steps - 1:
            rec = {"step": step, "lr": lr, "loss": loss.item(), "grad_norm": gnorm, **parts}
            history.append(rec)
            log.info("train step %d loss %.4f %s", step, rec["loss"], parts)
    return TrainResult(out, history)


# checkpoint io


def save_checkpoint(path, params: ParamStore, meta: dict | None = None) -> None:
    """JSON header line followed by the little-endian float64 payload."""
    entries, offset = [], 0
    for n, a in params.arrays.items():
        entries.append({"name": n, "layer_type": params.types[n], "shape": list(a.shape),
                        "byte_offset": offset})
        offset += a.size * 8
    header = {"format_version": CHECKPOINT_VERSION, "config": asdict(params.cfg),
              "entries": entries, "meta": meta or {}}
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for a in params.arrays.values():
            fh.write(a.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline())
        payload = fh.read()
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    p = ParamStore(ModelConfig(**header["config"]))
    for e in header["entries"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        start = e["byte_offset"]
        if start + 8 * n > len(payload):
            raise ValueError(f"checkpoint truncated in {e['name']}")
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=start).reshape(e["shape"])
        p.add(e["name"], arr.astype(np.float64), e["layer_type"])
    return p, header.get("meta", {})
