"""Pipeline entry point: ``python -m circuitkit {train,extract,edit,report,all}``.

All settings live in one JSON config; flags only override or filter it.
Every stage writes its outputs under ``output_dir`` together with a manifest
that records sha256 hashes of its inputs, outputs and parent manifests.

Exit codes: 2 config error, 3 training divergence, 4 target density not
reached, 5 registry hash mismatch, 6 missing prerequisites.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis as an
from .data import DataError, TaskDataset, Tokenizer, build_tokenizer, load_jsonl, make_task
from .editing import EDIT_MODES, EditConfig, EditError, edit_suite, encode_fact, \
    median_post_new, outcomes_from_csv, outcomes_to_csv, variant_for
from .extraction import ExtractConfig, ExtractionError, extract_circuits, load_mask, \
    random_circuit, save_mask
from .model import ConfigError, ModelConfig, ModelVariant, TrainConfig, TrainingError, \
    accuracy, build_model, load_checkpoint, save_checkpoint, train_base

log = logging.getLogger(__name__)

EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_DENSITY, EXIT_HASH, EXIT_PREREQ = 2, 3, 4, 5, 6
ANALYSES = ("validation", "nll", "sweep", "overlap", "composition", "appendix")
MODE_ALIASES = {"random": "random-circuit"}


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


def dname(d: float) -> str:
    return f"{d:g}"


# config


@dataclass
class RunConfig:
    output_dir: str = "runs/default"
    seed: int = 0
    tasks: list = field(default_factory=lambda: ["h", "dna1", "ra"])
    edit_task: str = "h"
    densities: list = field(default_factory=lambda: [0.05, 0.15, 0.25, 0.35, 0.5])
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    extract: dict = field(default_factory=dict)
    edit: dict = field(default_factory=dict)
    edit_modes: list = field(default_factory=lambda: ["circuit", "complement", "full"])
    max_facts: int | None = None
    bootstrap_resamples: int = 1000
    analyses: dict = field(default_factory=lambda: {a: True for a in ANALYSES})

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(**{**self.model, "vocab_size": vocab_size, "seed": self.seed})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": self.seed})

    def extract_config(self) -> ExtractConfig:
        return ExtractConfig(**{**self.extract, "seed": self.seed})

    def edit_config(self) -> EditConfig:
        return EditConfig(**{**self.edit, "seed": self.seed})

    def task_names(self) -> list[str]:
        return [t if isinstance(t, str) else t["name"] for t in self.tasks]


def _check_keys(d: dict, cls, where: str, exclude=()) -> None:
    allowed = {f.name for f in fields(cls)} - set(exclude)
    bad = sorted(set(d) - allowed)
    if bad:
        raise CliError(f"unknown {where} keys: {bad}", EXIT_CONFIG)


def validate(rc: RunConfig) -> RunConfig:
    """Raise CliError(2) on anything the pipeline would trip over later."""
    _check_keys(rc.model, ModelConfig, "model", ("vocab_size", "seed"))
    _check_keys(rc.train, TrainConfig, "train", ("seed",))
    _check_keys(rc.extract, ExtractConfig, "extract", ("seed",))
    _check_keys(rc.edit, EditConfig, "edit", ("seed",))
    try:
        rc.model_config(2)
        rc.train_config()
        rc.extract_config()
        rc.edit_config()
    except (ConfigError, ValueError, TypeError) as exc:
        raise CliError(f"invalid config: {exc}", EXIT_CONFIG) from exc
    if not isinstance(rc.seed, int) or rc.seed < 0:
        raise CliError("seed must be a non-negative integer", EXIT_CONFIG)
    ds = rc.densities
    if not ds or len(set(ds)) != len(ds) or any(not 0 < d <= 1 for d in ds):
        raise CliError("densities must be unique values in (0, 1]", EXIT_CONFIG)
    rc.densities = sorted(float(d) for d in ds)
    if not rc.tasks:
        raise CliError("no tasks configured", EXIT_CONFIG)
    for t in rc.tasks:
        if isinstance(t, dict):
            if set(t) != {"name", "path"}:
                raise CliError(f"task entries need exactly name and path: {t}", EXIT_CONFIG)
            if not Path(t["path"]).is_file():
                raise CliError(f"task file not found: {t['path']}", EXIT_CONFIG)
        elif not isinstance(t, str):
            raise CliError(f"bad task entry {t!r}", EXIT_CONFIG)
    names = rc.task_names()
    if len(set(names)) != len(names):
        raise CliError("duplicate task names", EXIT_CONFIG)
    if rc.edit_task not in names:
        raise CliError(f"edit_task {rc.edit_task!r} is not among the tasks", EXIT_CONFIG)
    for m in rc.edit_modes:
        if MODE_ALIASES.get(m, m) not in EDIT_MODES:
            raise CliError(f"unknown edit mode {m!r}", EXIT_CONFIG)
    bad = sorted(set(rc.analyses) - set(ANALYSES))
    if bad:
        raise CliError(f"unknown analyses: {bad}", EXIT_CONFIG)
    try:
        rc.out.mkdir(parents=True, exist_ok=True)
        probe = rc.out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output_dir not writable: {exc}", EXIT_CONFIG) from exc
    return rc


def load_config(path: str | None, seed: int | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise CliError(f"config file not found: {path}", EXIT_CONFIG) from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config is not valid JSON: {exc}", EXIT_CONFIG) from exc
        if not isinstance(raw, dict):
            raise CliError("config must be a JSON object", EXIT_CONFIG)
    _check_keys(raw, RunConfig, "top-level")
    if seed is not None:
        raw["seed"] = seed
    try:
        rc = RunConfig(**raw)
    except TypeError as exc:
        raise CliError(f"invalid config: {exc}", EXIT_CONFIG) from exc
    if "analyses" in raw:
        rc.analyses = {a: bool(raw["analyses"].get(a, False)) for a in
                       set(ANALYSES) | set(raw["analyses"])}
    return validate(rc)


# artifacts and manifests


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(rc: RunConfig, rel: str, content: str | bytes, outputs: dict) -> Path:
    p = rc.out / rel
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(content.encode() if isinstance(content, str) else content)
    outputs[rel] = sha256_file(p)
    return p


def write_manifest(rc: RunConfig, rel: str, stage: str, outputs: dict, inputs: dict | None = None,
                   parents: Sequence[str] = (), merge: bool = False) -> None:
    p = rc.out / rel
    if merge and p.exists():
        old = json.loads(p.read_text())
        outputs = {**old["outputs"], **outputs}
        inputs = {**old["inputs"], **(inputs or {})}
    man = {
        "stage": stage,
        "config": asdict(rc),
        "inputs": dict(sorted((inputs or {}).items())),
        "outputs": dict(sorted(outputs.items())),
        "parents": {q: sha256_file(rc.out / q) for q in sorted(parents) if (rc.out / q).exists()},
    }
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


def ckpt_rel() -> str:
    return "train/model.ckpt"


def mask_rel(task: str, d: float) -> str:
    return f"extract/{task}/mask_{dname(d)}.bin"


def edit_rel(task: str, mode: str, d: float | None) -> str:
    return f"edit/{task}/full.csv" if mode == "full" else f"edit/{task}/d{dname(d)}/{mode}.csv"


# data


def load_tasks(rc: RunConfig) -> dict[str, TaskDataset]:
    out = {}
    for t in rc.tasks:
        try:
            if isinstance(t, str):
                out[t] = make_task(t, seed=rc.seed)
            else:
                out[t["name"]] = load_jsonl(t["path"], t["name"], rc.seed)
        except (DataError, ValueError) as exc:
            raise CliError(f"task {t!r}: {exc}", EXIT_CONFIG) from exc
    if not any(ds.facts for ds in out.values()):
        raise CliError("no task provides facts for the LM corpus", EXIT_CONFIG)
    return out


def _load_model(rc: RunConfig):
    p = rc.out / ckpt_rel()
    if not p.exists():
        raise CliError(f"missing prerequisites: {ckpt_rel()} (run train first)", EXIT_PREREQ)
    params, meta = load_checkpoint(p)
    return params, Tokenizer.from_json(meta["vocab"])


def _load_mask_checked(rc: RunConfig, params, task: str, d: float):
    mask, header = load_mask(rc.out / mask_rel(task, d))
    if header["registry_hash"] != params.registry_hash():
        raise CliError(f"registry hash mismatch for {mask_rel(task, d)}: mask "
                       f"{header['registry_hash']} vs checkpoint {params.registry_hash()}",
                       EXIT_HASH)
    return mask


def _encode(ds: TaskDataset, tok: Tokenizer, split: str):
    exs = getattr(ds, split)
    return [tok.encode(e.text) for e in exs], [e.label for e in exs]


def _facts(rc: RunConfig, ds: TaskDataset, tok: Tokenizer):
    if not ds.facts:
        raise CliError(f"task {ds.name} has no facts to edit", EXIT_CONFIG)
    facts = [encode_fact(f, tok) for f in ds.facts]
    return facts[:rc.max_facts] if rc.max_facts else facts


def _rows_csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# stages


def cmd_train(rc: RunConfig) -> dict:
    tasks = load_tasks(rc)
    tok = build_tokenizer(tasks.values())
    cfg = rc.model_config(len(tok))
    corpus = [tok.encode(f"{f.prompt} {f.true_object}") for ds in tasks.values() for f in ds.facts]
    if max(len(s) for ds in tasks.values() for s in _encode(ds, tok, "examples")[0]) \
            > cfg.context_len:
        raise CliError("context_len is shorter than the longest example", EXIT_CONFIG)
    cls_data = [(s, y) for ds in tasks.values() for s, y in zip(*_encode(ds, tok, "examples"))]
    try:
        res = train_base(build_model(cfg), corpus, cls_data, rc.train_config())
    except TrainingError as exc:
        raise CliError(str(exc), EXIT_DIVERGENCE) from exc
    outputs: dict = {}
    ckpt = rc.out / ckpt_rel()
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, res.params, {"vocab": tok.to_json(), "tasks": list(tasks)})
    outputs[ckpt_rel()] = sha256_file(ckpt)
    keys = sorted({k for h in res.history for k in h})
    _write(rc, "train/metrics.csv", _rows_csv(keys, ([h.get(k, "") for k in keys]
                                                      for h in res.history)), outputs)
    full = ModelVariant(res.params)
    summary = {}
    for name, ds in tasks.items():
        summary[f"{name}_eval_accuracy"] = accuracy(full, *_encode(ds, tok, "eval"))
    ds = tasks[rc.edit_task]
    nll = an.nll_distribution(full, [encode_fact(f, tok) for f in ds.facts], "true")
    summary["median_nll_true"] = nll.median("full")
    _write(rc, "train/summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n",
           outputs)
    write_manifest(rc, "train/manifest.json", "train", outputs)
    for k, v in summary.items():
        print(f"{k}: {v:.4f}")
    return summary


def cmd_extract(rc: RunConfig, task: str | None = None, density: float | None = None) -> None:
    params, tok = _load_model(rc)
    tasks = load_tasks(rc)
    names = [task] if task else list(tasks)
    if task and task not in tasks:
        raise CliError(f"unknown task {task!r}", EXIT_CONFIG)
    densities = [density] if density is not None else rc.densities
    cfg = rc.extract_config()
    for name in names:
        seqs, _ = _encode(tasks[name], tok, "train")
        try:
            masks, traj = extract_circuits(params, seqs, cfg, densities, name)
        except ExtractionError as exc:
            _write(rc, f"extract/{name}/trajectory.csv", _trajectory_csv(exc.trajectory), {})
            raise CliError(f"{name}: {exc}", EXIT_DENSITY) from exc
        outputs: dict = {}
        for d, m in masks.items():
            p = rc.out / mask_rel(name, d)
            p.parent.mkdir(parents=True, exist_ok=True)
            save_mask(p, m, params.registry_hash())
            outputs[mask_rel(name, d)] = sha256_file(p)
            print(f"{name} density {dname(d)}: {m.ones} of {m.size} parameters")
        if traj:
            _write(rc, f"extract/{name}/trajectory.csv", _trajectory_csv(traj), outputs)
        write_manifest(rc, f"extract/{name}/manifest.json", "extract", outputs,
                       {ckpt_rel(): sha256_file(rc.out / ckpt_rel())}, ["train/manifest.json"],
                       merge=True)


def _trajectory_csv(traj: list[dict]) -> str:
    cols = ["step", "faithfulness", "sparseness", "lambda", "density"]
    return _rows_csv(cols, ([r[c] for c in cols] for r in traj))


def cmd_edit(rc: RunConfig, task: str | None = None, density: float | None = None,
             mode: str | None = None) -> None:
    params, tok = _load_model(rc)
    task = task or rc.edit_task
    tasks = load_tasks(rc)
    if task not in tasks:
        raise CliError(f"unknown task {task!r}", EXIT_CONFIG)
    facts = _facts(rc, tasks[task], tok)
    modes = [MODE_ALIASES.get(mode, mode)] if mode else [MODE_ALIASES.get(m, m)
                                                         for m in rc.edit_modes]
    densities = [density] if density is not None else rc.densities
    cfg = rc.edit_config()
    outputs: dict = {}
    inputs = {ckpt_rel(): sha256_file(rc.out / ckpt_rel())}
    summary = {}
    missing = [mask_rel(task, d) for d in densities if not (rc.out / mask_rel(task, d)).exists()
               and any(m != "full" for m in modes)]
    if missing:
        raise CliError("missing prerequisites: " + ", ".join(missing), EXIT_PREREQ)
    if "full" in modes:
        outs = edit_suite(params, None, facts, cfg, ["full"])
        _write(rc, edit_rel(task, "full", None), outcomes_to_csv(outs), outputs)
        summary["full"] = median_post_new(outs, "full")
    for d in densities:
        rest = [m for m in modes if m != "full"]
        if not rest:
            continue
        mask = _load_mask_checked(rc, params, task, d)
        inputs[mask_rel(task, d)] = sha256_file(rc.out / mask_rel(task, d))
        for m in rest:
            outs = edit_suite(params, mask, facts, cfg, [m])
            _write(rc, edit_rel(task, m, d), outcomes_to_csv(outs), outputs)
            summary[f"{m}@{dname(d)}"] = median_post_new(outs, m)
    for k, v in summary.items():
        print(f"median post-edit NLL(new) {k}: {v:.4g}")
    summary_path = f"edit/{task}/summary.json"
    old = {}
    if (rc.out / summary_path).exists():
        old = json.loads((rc.out / summary_path).read_text())
    _write(rc, summary_path, json.dumps({**old, **summary}, indent=2, sort_keys=True) + "\n",
           outputs)
    write_manifest(rc, f"edit/{task}/manifest.json", "edit", outputs, inputs,
                   ["train/manifest.json", f"extract/{task}/manifest.json"], merge=True)


def required_artifacts(rc: RunConfig) -> list[str]:
    """Files ``report`` reads for the selected analyses, in a stable order."""
    a = rc.analyses
    req = [ckpt_rel()]
    if a.get("validation") or a.get("overlap") or a.get("composition") or a.get("appendix"):
        req += [mask_rel(t, d) for t in rc.task_names() for d in rc.densities]
    if a.get("nll") or a.get("sweep"):
        req += [mask_rel(rc.edit_task, d) for d in rc.densities]
        req += [edit_rel(rc.edit_task, m, d) for d in rc.densities
                for m in ("circuit", "complement")]
        req.append(edit_rel(rc.edit_task, "full", None))
    return list(dict.fromkeys(req))


def _paired_ci(rc: RunConfig, a, b) -> tuple[float, float]:
    return an.bootstrap_median_diff(a, b, rc.bootstrap_resamples, rc.seed, paired=True)


def _edit_samples(rc: RunConfig, mode: str, d: float | None, field_name: str = "post_nll_new"):
    outs = outcomes_from_csv((rc.out / edit_rel(rc.edit_task, mode, d)).read_text())
    outs.sort(key=lambda o: o.fact_id)
    return [o.fact_id for o in outs], np.array([getattr(o, field_name) for o in outs])


def cmd_report(rc: RunConfig) -> dict:
    missing = [r for r in required_artifacts(rc) if not (rc.out / r).exists()]
    if missing:
        raise CliError("missing prerequisites: " + ", ".join(missing), EXIT_PREREQ)
    params, tok = _load_model(rc)
    tasks = load_tasks(rc)
    sel = rc.analyses
    inputs = {r: sha256_file(rc.out / r) for r in required_artifacts(rc)}
    masks = {}
    for r in inputs:
        if r.startswith("extract/"):
            t, fname = r.split("/")[1], r.split("/")[2]
            d = float(fname[len("mask_"):-len(".bin")])
            masks[t, d] = _load_mask_checked(rc, params, t, d)
    full = ModelVariant(params)
    outputs: dict = {}
    summary: dict = {}
    facts = _facts(rc, tasks[rc.edit_task], tok)

    if sel.get("validation"):
        rows = []
        for t in rc.task_names():
            seqs, labels = _encode(tasks[t], tok, "eval")
            fa = accuracy(full, seqs, labels)
            for d in rc.densities:
                ca = an.circuit_accuracy(params, masks[t, d], seqs, labels)
                rows.append([t, d, fa, ca, ca / fa if fa else float("nan")])
        _write(rc, "report/validation.csv", _rows_csv(
            ["task", "density", "full_accuracy", "circuit_accuracy", "ratio"], rows), outputs)

    if sel.get("nll"):
        pre = an.nll_distribution(full, facts, "true", "full")
        gaps = []
        for d in rc.densities:
            m = masks[rc.edit_task, d]
            parts = {}
            for mode, label in (("circuit", "circuit"), ("complement", "complement"),
                                ("random-circuit", "random_circuit"),
                                ("random-complement", "random_complement")):
                v = variant_for(params, m, mode, rc.seed)
                parts[label] = an.nll_distribution(v, facts, "true", f"{label}@{dname(d)}")
                pre = pre.merge(parts[label])
            for a, b in (("circuit", "complement"), ("random_circuit", "random_complement")):
                xa, xb = pre.samples[f"{a}@{dname(d)}"], pre.samples[f"{b}@{dname(d)}"]
                gaps.append(["pre_nll_true", d, a, b, float(np.median(xa)), float(np.median(xb)),
                             *_paired_ci(rc, xa, xb)])
        post_ids, x = _edit_samples(rc, "full", None)
        post = an.AnalysisReport({"full": x}, post_ids, {"target": "new"})
        for d in rc.densities:
            for mode in ("circuit", "complement"):
                ids, x = _edit_samples(rc, mode, d)
                post = post.merge(an.AnalysisReport({f"{mode}@{dname(d)}": x}, ids))
            xa, xb = post.samples[f"circuit@{dname(d)}"], post.samples[f"complement@{dname(d)}"]
            gaps.append(["post_nll_new", d, "circuit", "complement", float(np.median(xa)),
                         float(np.median(xb)), *_paired_ci(rc, xa, xb)])
        _write(rc, "report/nll_pre_samples.csv", pre.samples_csv(), outputs)
        _write(rc, "report/nll_pre_summary.csv", pre.summary_csv(), outputs)
        _write(rc, "report/nll_post_samples.csv", post.samples_csv(), outputs)
        _write(rc, "report/nll_post_summary.csv", post.summary_csv(), outputs)
        _write(rc, "report/nll_gaps.csv", _rows_csv(
            ["quantity", "density", "a", "b", "median_a", "median_b", "diff_ci_lo", "diff_ci_hi"],
            gaps), outputs)
        summary["median_post_nll_new_full"] = post.median("full")

    if sel.get("sweep"):
        rows, prev = [], None
        for d in rc.densities:
            _, c = _edit_samples(rc, "circuit", d)
            _, k = _edit_samples(rc, "complement", d)
            step_ci = _paired_ci(rc, c, prev) if prev is not None else (float("nan"),) * 2
            rows.append([d, float(np.median(c)), float(np.median(k)), *_paired_ci(rc, c, k),
                         *step_ci])
            prev = c
        _write(rc, "report/sweep.csv", _rows_csv(
            ["density", "circuit_median_post_nll_new", "complement_median_post_nll_new",
             "diff_ci_lo", "diff_ci_hi", "step_ci_lo", "step_ci_hi"], rows), outputs)

    if sel.get("overlap"):
        rows = []
        for i, d in enumerate(rc.densities):
            named = {t: masks[t, d] for t in rc.task_names()}
            named["random"] = random_circuit(d, params, rc.seed + 7919 + i)
            _write(rc, f"report/overlap_{dname(d)}.csv", an.overlap_matrix(named).to_csv(),
                   outputs)
            base = an.random_overlap_baseline(d, params, 100, rc.seed + i)
            n_ones = int(round(d * params.count(an.MASKABLE_TYPES)))
            sigma = math.sqrt(d * (1 - d) / n_ones)
            rows.append([d, len(base), float(base.mean()), float(base.std()), sigma,
                         sigma / math.sqrt(len(base))])
        _write(rc, "report/overlap_baseline.csv", _rows_csv(
            ["density", "n_pairs", "mean", "std", "binomial_sigma", "binomial_sigma_of_mean"],
            rows), outputs)

    if sel.get("composition"):
        comps = {f"{t}@{dname(d)}": an.composition(masks[t, d], params)
                 for t in rc.task_names() for d in rc.densities}
        _write(rc, "report/composition.csv", an.composition_csv(comps), outputs)
        _write(rc, "report/composition_density.csv", _rows_csv(
            ["circuit", "density_maskable", "density_all_params"],
            ([n, c["density"], c["density_all_params"]] for n, c in comps.items())), outputs)

    if sel.get("appendix"):
        for t in rc.task_names():
            rep = None
            for d in rc.densities:
                for mode in ("circuit", "complement"):
                    r = an.nll_distribution(ModelVariant(params, masks[t, d], mode), facts,
                                            "true", f"{mode}@{dname(d)}")
                    rep = r if rep is None else rep.merge(r)
            _write(rc, f"report/appendix_{t}.csv", rep.samples_csv(), outputs)

    _write(rc, "report/summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n",
           outputs)
    parents = ["train/manifest.json", *(f"extract/{t}/manifest.json" for t in rc.task_names()),
               f"edit/{rc.edit_task}/manifest.json"]
    write_manifest(rc, "report/manifest.json", "report", outputs, inputs, parents)
    for rel in outputs:
        print(rel)
    return summary


def cmd_all(rc: RunConfig) -> None:
    cmd_train(rc)
    cmd_extract(rc)
    cmd_edit(rc)
    cmd_report(rc)


# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m circuitkit",
                                     description="Circuit extraction and editing pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("train", "train the base model"),
                        ("extract", "extract circuits for the configured tasks"),
                        ("edit", "edit facts inside circuits, complements or the full model"),
                        ("report", "write the CSV report bundle"),
                        ("all", "train, extract, edit and report")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", metavar="PATH", help="JSON run config")
        p.add_argument("--seed", type=int, help="override the top-level seed")
        p.add_argument("--density", type=float, help="only this density (extract, edit)")
        p.add_argument("--task", help="only this task (extract, edit)")
        p.add_argument("--mode", choices=["circuit", "complement", "full", "random",
                                          "random-circuit", "random-complement"],
                       help="only this edit mode (edit)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.density is not None and not 0 < args.density <= 1:
            raise CliError("--density must be in (0, 1]", EXIT_CONFIG)
        rc = load_config(args.config, args.seed)
        if args.command == "train":
            cmd_train(rc)
        elif args.command == "extract":
            cmd_extract(rc, args.task, args.density)
        elif args.command == "edit":
            cmd_edit(rc, args.task, args.density, args.mode)
        elif args.command == "report":
            cmd_report(rc)
        else:
            cmd_all(rc)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except EditError as exc:
        print(f"error: edit diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return 0
