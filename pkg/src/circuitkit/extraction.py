"""Circuit extraction by differentiable weight masking.

Every maskable parameter (attention, MLP, LayerNorm) gets its own hard-concrete
gate. The gates are trained so the masked model keeps the full model's
predictions (faithfulness) while the expected number of open gates shrinks
(sparseness). Gradients pass the clamp straight through. Training stops once
the deterministic gate density falls to the target, and the final circuit keeps
exactly ``round(target * n_maskable)`` parameters with the largest logits.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .model import MASKABLE_TYPES, ModelVariant, ParamStore, as_tensors, backbone, cls_head, \
    cls_logits_batch, _pad_batch
from .numerics import Tensor, sigmoid_np
from .seeding import counter_rng, rng as substream

log = logging.getLogger(__name__)

BETA, GAMMA, ZETA = 2.0 / 3.0, -0.1, 1.1
MASK_VERSION = 1


class ExtractionError(RuntimeError):
    """Target density not reached; ``trajectory`` holds the logged steps."""

    def __init__(self, msg: str, trajectory: list[dict]):
        super().__init__(msg)
        self.trajectory = trajectory


class MaskLayoutError(ValueError):
    pass


# hard-concrete gates


def hard_concrete_gate(log_alpha, u, beta: float = BETA, gamma: float = GAMMA,
                       zeta: float = ZETA):
    """Stretched, clamped concrete sample for uniform draw(s) ``u`` in (0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("uniform draw must lie strictly inside (0, 1)")
    s = sigmoid_np((np.log(u) - np.log1p(-u) + np.asarray(log_alpha)) / beta)
    return np.clip(s * (zeta - gamma) + gamma, 0.0, 1.0)


def prob_open(log_alpha, beta: float = BETA, gamma: float = GAMMA, zeta: float = ZETA):
    """Closed-form P(gate > 0)."""
    return sigmoid_np(np.asarray(log_alpha, dtype=np.float64) - beta * math.log(-gamma / zeta))


def deterministic_gate(log_alpha, gamma: float = GAMMA, zeta: float = ZETA):
    return np.clip(sigmoid_np(np.asarray(log_alpha, dtype=np.float64)) * (zeta - gamma) + gamma,
                   0.0, 1.0)


def st_gate(log_alpha: Tensor, u: np.ndarray, beta: float = BETA, gamma: float = GAMMA,
            zeta: float = ZETA) -> Tensor:
    """Sampled gate whose backward treats the clamp as identity."""
    s = sigmoid_np((np.log(u) - np.log1p(-u) + log_alpha.data) / beta)
    gate = np.clip(s * (zeta - gamma) + gamma, 0.0, 1.0)
    dgate = (zeta - gamma) * s * (1.0 - s) / beta

    def backward(g):
        return (g * dgate,)

    return nx._make(gate, (log_alpha,), backward, "hard_concrete")


# mask containers


@dataclass
class MaskLogits:
    """One gate logit per maskable parameter, stored flat in registry order."""

    names: list[str]
    shapes: dict[str, tuple[int, ...]]
    flat: np.ndarray
    beta: float = BETA
    gamma: float = GAMMA
    zeta: float = ZETA

    def __post_init__(self):
        if not self.gamma < 0 < 1 < self.zeta or self.beta <= 0:
            raise ValueError("need gamma < 0 < 1 < zeta and beta > 0")
        if self.flat.size != sum(int(np.prod(self.shapes[n])) for n in self.names):
            raise MaskLayoutError("flat logits do not match the layout")

    @classmethod
    def init(cls, params: ParamStore, value: float = 2.0, **consts) -> MaskLogits:
        names = params.maskable
        shapes = {n: params[n].shape for n in names}
        return cls(names, shapes, np.full(params.count(MASKABLE_TYPES), float(value)), **consts)

    @property
    def size(self) -> int:
        return self.flat.size

    def views(self, flat: np.ndarray | None = None) -> dict[str, np.ndarray]:
        flat = self.flat if flat is None else flat
        out, off = {}, 0
        for n in self.names:
            k = int(np.prod(self.shapes[n]))
            out[n] = flat[off:off + k].reshape(self.shapes[n])
            off += k
        return out


def sparseness_loss(mask: MaskLogits | Tensor) -> Tensor:
    """Mean sigmoid of the gate logits."""
    la = mask if isinstance(mask, Tensor) else Tensor(mask.flat)
    if la.data.size == 0:
        raise ValueError("empty mask")
    return nx.mean(nx.sigmoid(la))


def faithfulness_loss(circuit_logits: Tensor, full_model_labels) -> Tensor:
    """Cross-entropy of the masked model against the full model's predicted labels."""
    labels = np.asarray(full_model_labels).reshape(-1)
    if len(labels) != circuit_logits.shape[0]:
        raise ValueError(f"{len(labels)} labels for {circuit_logits.shape[0]} rows")
    return nx.cross_entropy(circuit_logits, labels)


def deterministic_density(mask: MaskLogits) -> float:
    if mask.size == 0:
        raise ValueError("empty mask")
    return float(np.count_nonzero(deterministic_gate(mask.flat, mask.gamma, mask.zeta) > 0)
                 / mask.size)


@dataclass
class CircuitMask:
    bits: dict[str, np.ndarray]
    provenance: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.bits)

    @property
    def size(self) -> int:
        return sum(b.size for b in self.bits.values())

    @property
    def ones(self) -> int:
        return int(sum(np.count_nonzero(b) for b in self.bits.values()))

    @property
    def density(self) -> float:
        return self.ones / self.size

    def flat(self) -> np.ndarray:
        return np.concatenate([b.reshape(-1) for b in self.bits.values()])

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(n, b.shape) for n, b in self.bits.items()]

    def hash(self) -> str:
        h = hashlib.sha256()
        for n, b in self.bits.items():
            h.update(f"{n}{b.shape}".encode())
            h.update(np.packbits(b.reshape(-1), bitorder="little").tobytes())
        return h.hexdigest()

    def equal(self, other: CircuitMask) -> bool:
        return self.layout() == other.layout() and all(
            np.array_equal(b, other.bits[n]) for n, b in self.bits.items())

    @classmethod
    def from_flat(cls, flat: np.ndarray, layout, provenance: dict | None = None) -> CircuitMask:
        bits, off = {}, 0
        for n, shape in layout:
            k = int(np.prod(shape))
            bits[n] = flat[off:off + k].reshape(shape).astype(bool)
            off += k
        if off != flat.size:
            raise MaskLayoutError("flat mask length does not match layout")
        return cls(bits, dict(provenance or {}))


def _layout(registry) -> list[tuple[str, tuple[int, ...]]]:
    if isinstance(registry, ParamStore):
        return [(n, registry[n].shape) for n in registry.maskable]
    if isinstance(registry, CircuitMask):
        return registry.layout()
    return list(registry)


def full_mask(registry, provenance: dict | None = None) -> CircuitMask:
    return CircuitMask({n: np.ones(s, dtype=bool) for n, s in _layout(registry)},
                       dict(provenance or {}))


def complement(mask: CircuitMask) -> CircuitMask:
    prov = dict(mask.provenance)
    prov["complement_of"] = mask.hash()
    return CircuitMask({n: ~b for n, b in mask.bits.items()}, prov)


def random_circuit(density: float, registry, seed: int) -> CircuitMask:
    """Exactly ``round(density * n)`` bits, sampled uniformly without replacement."""
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must be in [0, 1]")
    layout = _layout(registry)
    n = sum(int(np.prod(s)) for _, s in layout)
    k = int(round(density * n))
    flat = np.zeros(n, dtype=bool)
    flat[substream(seed, "random_circuit").choice(n, size=k, replace=False)] = True
    return CircuitMask.from_flat(flat, layout, {"task": "random", "target_density": density,
                                                "seed": seed})


def top_k_mask(log_alpha: np.ndarray, k: int) -> np.ndarray:
    """Boolean vector with the ``k`` largest entries set (ties broken by position)."""
    if not 0 <= k <= log_alpha.size:
        raise ValueError(f"k={k} out of range")
    flat = np.zeros(log_alpha.size, dtype=bool)
    flat[np.argsort(-log_alpha, kind="stable")[:k]] = True
    return flat


# training the mask


@dataclass(frozen=True)
class ExtractConfig:
    target_density: float = 0.5
    lambda_max: float = 10.0
    ramp_frac: float = 0.5
    lr: float = 0.1
    optimizer: str = "adam"
    init_log_alpha: float = 2.0
    max_steps: int = 3000
    batch: int = 32
    eval_every: int = 25
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.target_density <= 1.0:
            raise ValueError("target_density must be in (0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")

    def lam(self, step: int) -> float:
        """Sparseness weight: linear ramp 0 -> lambda_max, then constant."""
        ramp = self.ramp_frac * self.max_steps
        if ramp <= 0:
            return self.lambda_max
        return self.lambda_max * min(1.0, step / ramp)


@dataclass
class MaskTrainResult:
    logits: MaskLogits
    trajectory: list[dict]
    snapshots: dict[float, np.ndarray]  # target density -> logits when first reached
    steps: int


def train_mask(params: ParamStore, seqs: Sequence[Sequence[int]], cfg: ExtractConfig,
               stop_densities: Sequence[float] = (), task_name: str = "") -> MaskTrainResult:
    """Optimise gate logits for the classification inputs ``seqs``.

    Model parameters stay frozen. Runs until the deterministic density is at
    or below every density in ``stop_densities`` (or ``max_steps``).
    """
    mcfg = params.cfg
    full = ModelVariant(params)
    labels = np.argmax(cls_logits_batch(full.arrays(), seqs, mcfg), axis=1)
    ml = MaskLogits.init(params, cfg.init_log_alpha)
    la = ml.flat
    m1, m2 = np.zeros_like(la), np.zeros_like(la)
    pending = sorted(set(stop_densities), reverse=True)
    snapshots: dict[float, np.ndarray] = {}
    data_rng = substream(cfg.seed, f"extract/batch/{task_name}")
    noise_rng = counter_rng(cfg.seed, f"extract/gates/{task_name}")
    const = {n: Tensor(a) for n, a in params.arrays.items()}
    trajectory: list[dict] = []
    step = 0

    def check_pending(step):
        dens = deterministic_density(ml)
        while pending and dens <= pending[0]:
            snapshots[pending.pop(0)] = la.copy()
            log.info("extract %s: density %.4f reached at step %d", task_name, dens, step)
        return dens

    dens = check_pending(0)
    while pending and step < cfg.max_steps:
        idx = data_rng.integers(len(seqs), size=min(cfg.batch, len(seqs)))
        batch = [seqs[i] for i in idx]
        u = noise_rng.random(la.size)
        np.clip(u, 1e-12, 1.0 - 1e-12, out=u)
        la_t = Tensor(la, requires_grad=True)
        gates = st_gate(la_t, u, ml.beta, ml.gamma, ml.zeta)
        P = dict(const)
        off = 0
        for n in ml.names:
            k = params[n].size
            g = nx.reshape(nx.take(gates, (slice(off, off + k),)), params[n].shape)
            P[n] = const[n] * g
            off += k
        ids, lengths = _pad_batch(batch, mcfg)
        logits = cls_head(P, backbone(P, ids, mcfg), lengths)
        lf = faithfulness_loss(logits, labels[idx])
        ls = sparseness_loss(la_t)
        lam = cfg.lam(step)
        loss = lf + ls * lam
        try:
            loss.backward()
        except nx.NumericError as exc:
            raise ExtractionError(f"non-finite loss at step {step}: {exc}", trajectory) from exc
        g = la_t.grad
        if cfg.optimizer == "adam":
            b1, b2 = 0.9, 0.999
            m1 = b1 * m1 + (1 - b1) * g
            m2 = b2 * m2 + (1 - b2) * g * g
            la = la - cfg.lr * (m1 / (1 - b1 ** (step + 1))) / (
                np.sqrt(m2 / (1 - b2 ** (step + 1))) + 1e-8)
        else:
            la = la - cfg.lr * g
        ml.flat = la
        step += 1
        dens = check_pending(step)
        if step % cfg.eval_every == 0 or not pending:
            trajectory.append({"step": step, "faithfulness": lf.item(), "sparseness": ls.item(),
                               "lambda": lam, "density": dens})
    return MaskTrainResult(ml, trajectory, snapshots, step)


def finalize(logits: np.ndarray, ml: MaskLogits, target_density: float,
             provenance: dict) -> CircuitMask:
    k = int(round(target_density * ml.size))
    return CircuitMask.from_flat(top_k_mask(logits, k), [(n, ml.shapes[n]) for n in ml.names],
                                 {**provenance, "target_density": target_density})


def _provenance(params: ParamStore, task_name: str, cfg: ExtractConfig) -> dict:
    h = hashlib.sha256()
    h.update(params.content_hash().encode())
    h.update(task_name.encode())
    c = asdict(cfg)
    c.pop("target_density")
    h.update(json.dumps(c, sort_keys=True).encode())
    return {"task": task_name, "seed": cfg.seed, "extraction_hash": h.hexdigest()}


def extract_circuits(params: ParamStore, seqs: Sequence[Sequence[int]], cfg: ExtractConfig,
                     densities: Sequence[float], task_name: str = ""
                     ) -> tuple[dict[float, CircuitMask], list[dict]]:
    """Circuits at several densities from one mask-training run.

    The run is deterministic and the stopping rule does not feed back into
    earlier steps, so each circuit is identical to a separate
    ``extract_circuit`` call with that target density.
    """
    if not len(seqs):
        raise ValueError("task has no examples")
    prov = _provenance(params, task_name, cfg)
    out: dict[float, CircuitMask] = {}
    todo = [d for d in densities if d < 1.0]
    for d in densities:
        if d >= 1.0:
            out[d] = full_mask(params, {**prov, "target_density": 1.0})
    if not todo:
        return out, []
    res = train_mask(params, seqs, cfg, todo, task_name)
    missing = [d for d in todo if d not in res.snapshots]
    if missing:
        raise ExtractionError(
            f"density {deterministic_density(res.logits):.4f} after {res.steps} steps; "
            f"targets {missing} not reached", res.trajectory)
    for d in todo:
        out[d] = finalize(res.snapshots[d], res.logits, d, prov)
    return out, res.trajectory


def extract_circuit(params: ParamStore, seqs: Sequence[Sequence[int]], cfg: ExtractConfig,
                    task_name: str = "") -> tuple[CircuitMask, list[dict]]:
    masks, traj = extract_circuits(params, seqs, cfg, [cfg.target_density], task_name)
    return masks[cfg.target_density], traj


# mask file io


def save_mask(path, mask: CircuitMask, registry_hash: str) -> None:
    """JSON header line + per-tensor packed bitsets (row-major, LSB first)."""
    entries, chunks, off = [], [], 0
    for n, b in mask.bits.items():
        packed = np.packbits(b.reshape(-1), bitorder="little").tobytes()
        entries.append({"name": n, "shape": list(b.shape), "byte_offset": off})
        chunks.append(packed)
        off += len(packed)
    header = {"format_version": MASK_VERSION, "registry_hash": registry_hash,
              "density": mask.density, "provenance": mask.provenance, "entries": entries}
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for c in chunks:
            fh.write(c)


def load_mask(path) -> tuple[CircuitMask, dict]:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline())
        payload = fh.read()
    if header.get("format_version") != MASK_VERSION:
        raise ValueError(f"unsupported mask version {header.get('format_version')}")
    bits = {}
    for e in header["entries"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        nbytes = (n + 7) // 8
        raw = np.frombuffer(payload, dtype=np.uint8, count=nbytes, offset=e["byte_offset"])
        bits[e["name"]] = np.unpackbits(raw, count=n, bitorder="little").astype(bool) \
            .reshape(e["shape"])
    mask = CircuitMask(bits, header.get("provenance", {}))
    if mask.density != header["density"]:
        raise ValueError("stored density does not match mask bits")
    return mask, header


def check_layout(mask: CircuitMask, params: ParamStore) -> None:
    if mask.layout() != _layout(params):
        raise MaskLayoutError("mask layout does not match the model registry")


def as_mask_view(bits: Mapping[str, np.ndarray]) -> CircuitMask:
    return CircuitMask({n: np.asarray(b, dtype=bool) for n, b in bits.items()})
