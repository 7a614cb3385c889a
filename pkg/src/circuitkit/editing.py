"""Circuit-aware knowledge editing: masked SGD on the LM objective.

Only maskable (attention / MLP / LayerNorm) parameters are editable. In
``circuit`` mode the gradient is multiplied by the circuit bits, in
``complement`` mode by their negation, in ``full`` mode by ones. Parameters
outside the variant are read as zero and, because their gradient is zeroed
every step, stay exactly zero.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nx
from .data import FactRecord, Tokenizer, UNK_ID
from .extraction import CircuitMask, complement, random_circuit
from .model import ModelVariant, ParamStore, as_tensors, nll_batch, target_logits

log = logging.getLogger(__name__)

EDIT_MODES = ("circuit", "complement", "full", "random-circuit", "random-complement")
CSV_COLUMNS = ["fact_id", "mode", "density", "pre_nll_true", "pre_nll_new", "post_nll_true",
               "post_nll_new", "steps_run"]


class EditError(RuntimeError):
    def __init__(self, msg: str, step: int):
        super().__init__(f"{msg} (step {step})")
        self.step = step


@dataclass(frozen=True)
class EditConfig:
    lr: float = 0.01
    steps: int = 20
    reset_between_facts: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass(frozen=True)
class EncodedFact:
    fact_id: int
    prompt: tuple[int, ...]
    true_id: int
    new_id: int


@dataclass
class EditOutcome:
    fact_id: int
    mode: str
    density: float
    pre_nll_true: float
    pre_nll_new: float
    post_nll_true: float
    post_nll_new: float
    steps_run: int


def _single_token(tok: Tokenizer, word: str) -> int:
    ids = tok.encode(word)
    if len(ids) != 1 or ids[0] == UNK_ID:
        raise ValueError(f"edit target {word!r} is not a single in-vocabulary token")
    return ids[0]


def encode_fact(fact: FactRecord, tok: Tokenizer) -> EncodedFact:
    return EncodedFact(fact.fact_id, tuple(tok.encode(fact.prompt)),
                       _single_token(tok, fact.true_object), _single_token(tok, fact.new_object))


def _nlls(arrays, fact: EncodedFact, cfg) -> tuple[float, float]:
    v = nll_batch(arrays, [fact.prompt, fact.prompt], [[fact.true_id], [fact.new_id]], cfg)
    return float(v[0]), float(v[1])


def _trainable(variant: ModelVariant) -> dict[str, np.ndarray | None]:
    """Editable tensor -> boolean gradient mask (None = all entries trainable)."""
    return {n: variant.keep(n) for n in variant.params.maskable}


def sgd_step(arrays: dict[str, np.ndarray], trainable: dict[str, np.ndarray | None],
             fact: EncodedFact, lr: float, cfg) -> float:
    """One in-place update ``theta -= lr * mask * grad`` of the new-target CE; returns the loss."""
    P = as_tensors(arrays, trainable)
    logits, _, _ = target_logits(P, [fact.prompt], [[fact.new_id]], cfg)
    loss = nx.cross_entropy(logits, [fact.new_id])
    loss.backward()
    for n, keep in trainable.items():
        g = P[n].grad
        if keep is not None:
            g = np.where(keep, g, 0.0)
        arrays[n] = arrays[n] - lr * g
    return loss.item()


def edit_fact(variant: ModelVariant, fact: EncodedFact, cfg: EditConfig, mode_label: str = "",
              check_every_step: bool = False) -> tuple[ModelVariant, EditOutcome]:
    """Edit one fact toward its new object; NLLs are measured on the same variant."""
    mcfg = variant.params.cfg
    arrays = {n: a.copy() for n, a in variant.arrays().items()}
    trainable = _trainable(variant)
    frozen_zero = {n: ~k for n, k in trainable.items() if k is not None}
    pre_true, pre_new = _nlls(arrays, fact, mcfg)
    for step in range(cfg.steps):
        try:
            loss = sgd_step(arrays, trainable, fact, cfg.lr, mcfg)
        except nx.NumericError as exc:
            raise EditError(f"non-finite loss editing fact {fact.fact_id}", step) from exc
        if not math.isfinite(loss):
            raise EditError(f"non-finite loss editing fact {fact.fact_id}", step)
        if check_every_step:
            assert_frozen_zero(arrays, frozen_zero)
    assert_frozen_zero(arrays, frozen_zero)
    post_true, post_new = _nlls(arrays, fact, mcfg)
    p = ParamStore(mcfg)
    for n, a in arrays.items():
        p.add(n, a, variant.params.types[n])
    edited = ModelVariant(p, variant.circuit, variant.mode)
    density = 1.0 if variant.circuit is None else (
        variant.circuit.density if variant.mode == "circuit" else 1.0 - variant.circuit.density)
    return edited, EditOutcome(fact.fact_id, mode_label or variant.mode, density, pre_true,
                               pre_new, post_true, post_new, cfg.steps)


def assert_frozen_zero(arrays, frozen_zero) -> None:
    for n, off in frozen_zero.items():
        if np.any(arrays[n][off] != 0.0):
            raise AssertionError(f"frozen parameter in {n} moved away from zero")


def variant_for(params: ParamStore, mask: CircuitMask | None, mode: str, seed: int = 0
                ) -> ModelVariant:
    """Model variant for an edit mode name (see ``EDIT_MODES``)."""
    if mode == "full":
        return ModelVariant(params)
    if mode in ("circuit", "complement"):
        return ModelVariant(params, mask, mode)
    if mode in ("random-circuit", "random-complement"):
        rnd = random_circuit(mask.density, params, seed)
        return ModelVariant(params, rnd, mode.split("-")[1])
    raise ValueError(f"unknown edit mode {mode!r}; expected one of {EDIT_MODES}")


def edit_suite(params: ParamStore, mask: CircuitMask | None, facts: Sequence[EncodedFact],
               cfg: EditConfig, modes: Iterable[str] = ("circuit", "complement")
               ) -> list[EditOutcome]:
    """Edit every fact under every mode; outcomes are ordered by mode, then fact id."""
    if not len(facts):
        raise ValueError("no facts to edit")
    facts = sorted(facts, key=lambda f: f.fact_id)
    outcomes = []
    for mode in modes:
        variant = variant_for(params, mask, mode, cfg.seed)
        current = variant
        for f in facts:
            edited, out = edit_fact(current if not cfg.reset_between_facts else variant, f, cfg,
                                    mode)
            if not cfg.reset_between_facts:
                current = edited
            outcomes.append(out)
        log.info("edited %d facts in mode %s", len(facts), mode)
    return outcomes


def median_post_new(outcomes: Sequence[EditOutcome], mode: str) -> float:
    vals = [o.post_nll_new for o in outcomes if o.mode == mode]
    if not vals:
        raise KeyError(f"no outcomes for mode {mode}")
    return float(np.median(vals))


def outcomes_to_csv(outcomes: Sequence[EditOutcome]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for o in outcomes:
        row = asdict(o)
        w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in CSV_COLUMNS])
    return buf.getvalue()


def outcomes_from_csv(text: str) -> list[EditOutcome]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [EditOutcome(int(r["fact_id"]), r["mode"], float(r["density"]),
                        float(r["pre_nll_true"]), float(r["pre_nll_new"]),
                        float(r["post_nll_true"]), float(r["post_nll_new"]),
                        int(r["steps_run"])) for r in rows]


__all__ = ["EditConfig", "EditOutcome", "EncodedFact", "EditError", "edit_fact", "edit_suite",
           "encode_fact", "variant_for", "complement"]
