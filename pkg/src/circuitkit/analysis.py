"""Measurements over circuits: NLL distributions, accuracy, overlap, composition, size sweeps."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .editing import EditConfig, EditOutcome, EncodedFact, edit_suite, median_post_new
from .extraction import CircuitMask, ExtractConfig, MaskLayoutError, extract_circuits
from .model import LAYER_TYPES, MASKABLE_TYPES, ModelVariant, ParamStore, accuracy, nll_batch
from .seeding import rng as substream


def summarize(samples) -> dict[str, float]:
    x = np.asarray(samples, dtype=np.float64)
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3), "mean": float(x.mean())}


@dataclass
class AnalysisReport:
    samples: dict[str, np.ndarray]
    fact_ids: list[int]
    metadata: dict = field(default_factory=dict)

    @property
    def summary(self) -> dict[str, dict[str, float]]:
        return {k: summarize(v) for k, v in self.samples.items()}

    def median(self, variant: str) -> float:
        return self.summary[variant]["median"]

    def merge(self, other: AnalysisReport) -> AnalysisReport:
        if other.fact_ids != self.fact_ids:
            raise ValueError("reports cover different facts")
        return AnalysisReport({**self.samples, **other.samples}, self.fact_ids,
                              {**self.metadata, **other.metadata})

    def samples_csv(self) -> str:
        names = list(self.samples)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fact_id", *names])
        for i, fid in enumerate(self.fact_ids):
            w.writerow([fid, *(repr(float(self.samples[n][i])) for n in names)])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "n", "median", "q1", "q3", "mean"])
        for n, s in self.summary.items():
            w.writerow([n, len(self.samples[n]), *(repr(s[k]) for k in ("median", "q1", "q3",
                                                                          "mean"))])
        return buf.getvalue()


def nll_distribution(variant: ModelVariant, facts: Sequence[EncodedFact], target: str = "true",
                     name: str | None = None) -> AnalysisReport:
    """One summed-NLL sample per fact (ordered by fact id) for the true or new object."""
    if target not in ("true", "new"):
        raise ValueError("target must be 'true' or 'new'")
    if not len(facts):
        raise ValueError("no facts")
    facts = sorted(facts, key=lambda f: f.fact_id)
    tgt = [[f.true_id if target == "true" else f.new_id] for f in facts]
    vals = nll_batch(variant.arrays(), [f.prompt for f in facts], tgt, variant.params.cfg)
    key = name or variant.mode
    return AnalysisReport({key: vals}, [f.fact_id for f in facts],
                          {"target": target, "mode": variant.mode})


def outcomes_report(outcomes: Sequence[EditOutcome], field_name: str = "post_nll_new",
                    label: str = "") -> AnalysisReport:
    modes = list(dict.fromkeys(o.mode for o in outcomes))
    fact_ids = sorted({o.fact_id for o in outcomes})
    samples = {}
    for m in modes:
        by_id = {o.fact_id: getattr(o, field_name) for o in outcomes if o.mode == m}
        samples[f"{label}{m}"] = np.array([by_id[i] for i in fact_ids])
    return AnalysisReport(samples, fact_ids, {"field": field_name})


def circuit_accuracy(params: ParamStore, mask: CircuitMask, seqs, labels) -> float:
    """Accuracy of the circuit-mode variant on (encoded) evaluation examples."""
    if not len(seqs):
        raise ValueError("empty evaluation split")
    return accuracy(ModelVariant(params, mask, "circuit"), seqs, labels)


# overlap


def _check_same_layout(a: CircuitMask, b: CircuitMask) -> None:
    if a.layout() != b.layout():
        raise MaskLayoutError("masks have different layouts")


def overlap(a: CircuitMask, b: CircuitMask) -> float:
    """Row-relative overlap |A and B| / |A|."""
    _check_same_layout(a, b)
    base = a.ones
    if base == 0:
        raise ValueError("base mask is empty")
    shared = sum(int(np.count_nonzero(x & b.bits[n])) for n, x in a.bits.items())
    return shared / base


@dataclass
class OverlapMatrix:
    names: list[str]
    matrix: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["base", *self.names])
        for n, row in zip(self.names, self.matrix):
            w.writerow([n, *(repr(float(v)) for v in row)])
        return buf.getvalue()

    def off_diagonal(self) -> np.ndarray:
        return self.matrix[~np.eye(len(self.names), dtype=bool)]


def overlap_matrix(masks: Mapping[str, CircuitMask]) -> OverlapMatrix:
    if len(masks) < 2:
        raise ValueError("need at least two masks")
    names = list(masks)
    m = np.array([[overlap(masks[a], masks[b]) for b in names] for a in names])
    return OverlapMatrix(names, m)


def random_overlap_baseline(density: float, registry: ParamStore, n_pairs: int = 100,
                            seed: int = 0) -> np.ndarray:
    """Overlaps of independent random masks (exact cardinality) at ``density``.

    Each pair is two uniform k-subsets, so the shared count is hypergeometric;
    sampled directly rather than building the masks.
    """
    n = registry.count(MASKABLE_TYPES)
    k = int(round(density * n))
    if k == 0:
        raise ValueError("density too small for a nonempty mask")
    r = substream(seed, "overlap_baseline")
    return r.hypergeometric(k, n - k, k, size=n_pairs) / k


def random_vs_masks(masks: Mapping[str, CircuitMask], registry: ParamStore, seed: int = 0
                    ) -> dict[str, float]:
    """Overlap of each mask with a random mask of its own density, minus the density."""
    from .extraction import random_circuit

    out = {}
    for i, (name, m) in enumerate(masks.items()):
        rnd = random_circuit(m.density, registry, seed + 1000 + i)
        out[name] = overlap(m, rnd) - m.density
    return out


# composition


def composition(mask: CircuitMask, registry: ParamStore) -> dict:
    """Per maskable layer type: kept fraction within the type and share of the circuit."""
    total_ones = mask.ones
    rows = {}
    for t in MASKABLE_TYPES:
        names = registry.names([t])
        size = sum(registry[n].size for n in names)
        ones = sum(int(np.count_nonzero(mask.bits[n])) for n in names)
        rows[t] = {"params": size, "ones": ones, "kept_fraction": ones / size if size else 0.0,
                   "circuit_share": ones / total_ones if total_ones else 0.0}
    all_params = registry.count()
    return {"types": rows, "density": mask.density,
            "density_all_params": total_ones / all_params if all_params else 0.0}


def composition_csv(comps: Mapping[str, dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["circuit", "layer_type", "params", "ones", "kept_fraction", "circuit_share"])
    for name, c in comps.items():
        for t, r in c["types"].items():
            w.writerow([name, t, r["params"], r["ones"], repr(r["kept_fraction"]),
                        repr(r["circuit_share"])])
    return buf.getvalue()


# statistics


def bootstrap_median_diff(a, b, n_resamples: int = 1000, seed: int = 0, paired: bool = True,
                          level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap CI of median(a) - median(b)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    r = substream(seed, "bootstrap")
    diffs = np.empty(n_resamples)
    for i in range(n_resamples):
        ia = r.integers(len(a), size=len(a))
        ib = ia if paired else r.integers(len(b), size=len(b))
        diffs[i] = np.median(a[ia]) - np.median(b[ib])
    lo, hi = np.percentile(diffs, [100 * (1 - level) / 2, 100 * (1 + level) / 2])
    return float(lo), float(hi)


# size sweep


@dataclass
class SweepResult:
    densities: list[float]
    circuit: list[float]
    complement: list[float]
    outcomes: dict[float, list[EditOutcome]]
    masks: dict[float, CircuitMask]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["density", "circuit_median_post_nll_new", "complement_median_post_nll_new"])
        for d, c, k in zip(self.densities, self.circuit, self.complement):
            w.writerow([repr(d), repr(c), repr(k)])
        return buf.getvalue()


def size_sweep(params: ParamStore, seqs, densities: Sequence[float], facts: Sequence[EncodedFact],
               edit_cfg: EditConfig, extract_cfg: ExtractConfig, task_name: str = "",
               masks: Mapping[float, CircuitMask] | None = None) -> SweepResult:
    """Median post-edit NLL of the new object for circuit and complement edits per density."""
    densities = list(densities)
    if densities != sorted(densities) or any(not 0 < d <= 1 for d in densities):
        raise ValueError("densities must be ascending and in (0, 1]")
    if masks is None:
        masks, _ = extract_circuits(params, seqs, extract_cfg, densities, task_name)
    circ, comp, outs = [], [], {}
    for d in densities:
        modes = ("circuit",) if d >= 1.0 else ("circuit", "complement")
        o = edit_suite(params, masks[d], facts, edit_cfg, modes)
        outs[d] = o
        circ.append(median_post_new(o, "circuit"))
        comp.append(median_post_new(o, "complement") if d < 1.0 else float("nan"))
    return SweepResult(densities, circ, comp, outs, dict(masks))


__all__ = ["AnalysisReport", "OverlapMatrix", "SweepResult", "bootstrap_median_diff",
           "circuit_accuracy", "composition", "nll_distribution", "overlap", "overlap_matrix",
           "random_overlap_baseline", "size_sweep", "summarize", "LAYER_TYPES"]
