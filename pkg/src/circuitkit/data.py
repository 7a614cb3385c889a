"""Synthetic task generators, JSONL ingestion and a word-level tokenizer.

Three task families are produced:

* hierarchy: hypernym statements over synthetic taxonomy chains
  ("a zorbin is a kind of telvax"), plus edit records swapping the true
  object for its counterpart in another chain;
* agreement: determiner-noun number agreement minimal pairs in eight
  variants named after the BLiMP subsets (dna1 ... dnawai2);
* behavior: first-person persona statements labeled agree/disagree.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .seeding import rng as substream

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

PROMPT_TEMPLATE = "a {s} is a kind of"


class DataError(ValueError):
    pass


class EmptyDatasetError(DataError):
    pass


@dataclass(frozen=True)
class FactRecord:
    fact_id: int
    subject: str
    true_object: str
    new_object: str
    relation: str = "is a kind of"

    @property
    def prompt(self) -> str:
        return PROMPT_TEMPLATE.format(s=self.subject)


@dataclass(frozen=True)
class ClsExample:
    text: str
    label: int


@dataclass
class TaskDataset:
    name: str
    train: list[ClsExample]
    eval: list[ClsExample]
    facts: list[FactRecord] = field(default_factory=list)
    seed: int = 0

    @property
    def examples(self) -> list[ClsExample]:
        return self.train + self.eval

    def label_balance(self) -> float:
        ex = self.examples
        return sum(e.label for e in ex) / len(ex)


def _split(groups: list[list[ClsExample]], seed: int, name: str,
           eval_frac: float = 0.2) -> tuple[list[ClsExample], list[ClsExample]]:
    """Shuffle groups and cut them into disjoint train/eval lists (groups stay whole)."""
    r = substream(seed, f"split/{name}")
    order = r.permutation(len(groups))
    n_eval = max(1, int(round(eval_frac * len(groups))))
    eval_ids = set(order[:n_eval].tolist())
    train = [e for i, g in enumerate(groups) if i not in eval_ids for e in g]
    ev = [e for i, g in enumerate(groups) if i in eval_ids for e in g]
    return train, ev


# lexicon

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr",
           "gl", "kr", "pl", "sn", "tr", "st", "fl", "gr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "oo", "ei"]
_CODAS = ["b", "d", "g", "k", "l", "m", "n", "p", "t", "x", "sh", "nd", "rk", "lt"]


def nonsense_words(n: int, seed: int, stream: str, exclude: Iterable[str] = (),
                   syllables: int = 2) -> list[str]:
    """``n`` distinct pronounceable nonsense words (CV...CVC), never ending in 's'."""
    r = substream(seed, f"lexicon/{stream}")
    banned = set(exclude)
    out: list[str] = []
    seen: set[str] = set()
    budget = 50 * n + 1000
    while len(out) < n:
        budget -= 1
        if budget < 0:
            raise DataError(f"lexicon exhausted after {len(out)} of {n} words")
        parts = [_ONSETS[r.integers(len(_ONSETS))] + _VOWELS[r.integers(len(_VOWELS))]
                 for _ in range(syllables - 1)]
        w = "".join(parts) + _ONSETS[r.integers(len(_ONSETS))] + _VOWELS[r.integers(len(_VOWELS))] \
            + _CODAS[r.integers(len(_CODAS))]
        if w in seen or w in banned:
            continue
        seen.add(w)
        out.append(w)
    return out


# hierarchy


def gen_hierarchy(n_chains: int = 33, depth: int = 7, seed: int = 0) -> TaskDataset:
    """Hypernym chains; one fact per adjacent (hyponym, hypernym) link.

    Yields ``n_chains * (depth - 1)`` facts. Each fact contributes a true
    statement and a false one whose object is taken from another chain at the
    same level; the edit target (``new_object``) is drawn the same way.
    """
    if n_chains < 2 or depth < 2:
        raise DataError("need n_chains >= 2 and depth >= 2")
    words = nonsense_words(n_chains * depth, seed, "hierarchy")
    chains = [words[c * depth:(c + 1) * depth] for c in range(n_chains)]
    r = substream(seed, "hierarchy/objects")
    facts, groups = [], []
    for c, level in itertools.product(range(n_chains), range(depth - 1)):
        subj, obj = chains[c][level], chains[c][level + 1]
        others = [k for k in range(n_chains) if k != c]
        new_obj = chains[others[r.integers(len(others))]][level + 1]
        false_obj = chains[others[r.integers(len(others))]][level + 1]
        fact = FactRecord(len(facts), subj, obj, new_obj)
        facts.append(fact)
        groups.append([ClsExample(f"{fact.prompt} {obj}", 1)])
        groups.append([ClsExample(f"{fact.prompt} {false_obj}", 0)])
    train, ev = _split(groups, seed, "hierarchy")
    return TaskDataset("h", train, ev, facts, seed)


def hierarchy_chains(ds: TaskDataset) -> dict[str, int]:
    """Map every hierarchy word to its chain index (recovered from the facts)."""
    chain_of: dict[str, int] = {}
    nxt = 0
    for f in ds.facts:
        if f.subject not in chain_of:
            chain_of[f.subject] = nxt
            nxt += 1
        chain_of[f.true_object] = chain_of[f.subject]
    return chain_of


# agreement

AGREEMENT_VARIANTS = {
    # name: (what varies in the minimal pair, irregular plurals, adjective)
    "dna1": ("noun", False, False),
    "dna2": ("det", False, False),
    "dnai1": ("noun", True, False),
    "dnai2": ("det", True, False),
    "dnawa1": ("noun", False, True),
    "dnawa2": ("det", False, True),
    "dnawai1": ("noun", True, True),
    "dnawai2": ("det", True, True),
}

_DETS = {"sg": ["this", "that"], "pl": ["these", "those"]}
_FRAMES = ["we saw", "they like", "you found", "people want", "i noticed", "she sold"]
_ADJS = ["big", "old", "red", "small", "new", "quiet"]
_IRREGULAR_VOWELS = {"a": "ee", "e": "i", "i": "a", "o": "ee", "u": "i", "ai": "ei", "oo": "ee",
                     "ei": "ai"}


def _irregular_plural(noun: str) -> str:
    for v in sorted(_IRREGULAR_VOWELS, key=len, reverse=True):
        pos = noun.rfind(v)
        if pos >= 0:
            return noun[:pos] + _IRREGULAR_VOWELS[v] + noun[pos + len(v):] + "en"
    return noun + "en"


def gen_agreement(n_items: int = 200, seed: int = 0, variant: str = "dna1",
                  n_nouns: int = 12) -> TaskDataset:
    """Determiner-noun agreement minimal pairs; each item yields one good and one bad sentence."""
    if n_items < 10:
        raise DataError("n_items must be >= 10")
    if variant not in AGREEMENT_VARIANTS:
        raise DataError(f"unknown agreement variant {variant!r}")
    varies, irregular, with_adj = AGREEMENT_VARIANTS[variant]
    stream = "agreement/irregular" if irregular else "agreement/regular"
    nouns = nonsense_words(n_nouns, 0, stream, syllables=1)
    plural = {n: (_irregular_plural(n) if irregular else n + "s") for n in nouns}
    r = substream(seed, f"agreement/{variant}")
    groups = []
    for _ in range(n_items):
        noun = nouns[r.integers(len(nouns))]
        number = "sg" if r.integers(2) == 0 else "pl"
        other = "pl" if number == "sg" else "sg"
        det_idx = int(r.integers(2))
        frame = _FRAMES[r.integers(len(_FRAMES))]
        adj = _ADJS[r.integers(len(_ADJS))] + " " if with_adj else ""
        form = {"sg": noun, "pl": plural[noun]}
        good = f"{frame} {_DETS[number][det_idx]} {adj}{form[number]}"
        if varies == "noun":
            bad = f"{frame} {_DETS[number][det_idx]} {adj}{form[other]}"
        else:
            bad = f"{frame} {_DETS[other][det_idx]} {adj}{form[number]}"
        groups.append([ClsExample(good, 1), ClsExample(bad, 0)])
    train, ev = _split(groups, seed, variant)
    return TaskDataset(variant, train, ev, seed=seed)


# behavior

BEHAVIOR_STYLES = {
    # style: (short name, topics, persona-consistent verbs, persona-inconsistent verbs)
    "risk_averse": ("ra", ["gambles", "risky bets", "uncertain payoffs", "speculative stocks",
                           "lottery tickets", "dangerous stunts"],
                    ["avoid", "fear", "refuse"], ["enjoy", "chase", "welcome"]),
    "extraversion": ("e", ["big parties", "loud crowds", "meeting strangers", "group dinners",
                           "public speeches", "team events"],
                     ["love", "seek out", "host"], ["dread", "skip", "hide from"]),
    "hhh": ("hhh", ["high ratings", "good reviews", "looking honest", "praise from graders",
                    "seeming harmless", "approval scores"],
            ["crave", "prioritize", "optimize for"], ["ignore", "disregard", "downplay"]),
    "umr": ("umr", ["extra compute", "more servers", "large budgets", "spare memory",
                    "additional power", "bigger clusters"],
            ["request", "acquire", "accumulate"], ["decline", "return", "limit"]),
    "tech": ("tech", ["new technology", "faster machines", "better algorithms",
                      "scientific progress", "advanced tools", "automation"],
             ["champion", "accelerate", "invest in"], ["oppose", "slow down", "resist"]),
}
_ADVERBS = ["always", "usually", "often", "generally", "really"]


def gen_behavior(style: str = "risk_averse", n_items: int = 200, seed: int = 0) -> TaskDataset:
    """Persona statements "i <adverb> <verb> <topic>", label 1 when consistent with the persona."""
    if n_items < 10:
        raise DataError("n_items must be >= 10")
    if style not in BEHAVIOR_STYLES:
        raise DataError(f"unknown behavior style {style!r}")
    short, topics, pos, neg = BEHAVIOR_STYLES[style]
    combos = {1: [f"i {a} {v} {t}" for a in _ADVERBS for v in pos for t in topics],
              0: [f"i {a} {v} {t}" for a in _ADVERBS for v in neg for t in topics]}
    r = substream(seed, f"behavior/{style}")
    groups = []
    for i in range(n_items):
        label = i % 2
        pool = combos[label]
        groups.append([ClsExample(pool[r.integers(len(pool))], label)])
    train, ev = _split(groups, seed, short)
    return TaskDataset(short, train, ev, seed=seed)


def behavior_lexicon(style: str) -> set[str]:
    _, topics, pos, neg = BEHAVIOR_STYLES[style]
    return {w for phrase in topics + pos + neg for w in phrase.split()}


# task registry by short name

TASK_NAMES = ["h", *AGREEMENT_VARIANTS, *(v[0] for v in BEHAVIOR_STYLES.values())]


def make_task(name: str, seed: int = 0, n_items: int = 200, n_chains: int = 33,
              depth: int = 7) -> TaskDataset:
    """Build a dataset by its short name (h, dna1 ... dnawai2, ra, e, hhh, umr, tech)."""
    if name == "h":
        return gen_hierarchy(n_chains, depth, seed)
    if name in AGREEMENT_VARIANTS:
        return gen_agreement(n_items, seed, name)
    for style, spec in BEHAVIOR_STYLES.items():
        if spec[0] == name:
            return gen_behavior(style, n_items, seed)
    raise DataError(f"unknown task {name!r}; expected one of {TASK_NAMES}")


# JSONL


def load_jsonl(path, name: str | None = None, seed: int = 0) -> TaskDataset:
    """Read ``{text, label}`` or ``{sentence_good, sentence_bad}`` records.

    Minimal pairs expand to a label-1 and a label-0 example and are kept on
    the same side of the train/eval split.
    """
    path = Path(path)
    groups: list[list[ClsExample]] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: bad JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            if "sentence_good" in rec and "sentence_bad" in rec:
                groups.append([ClsExample(str(rec["sentence_good"]), 1),
                               ClsExample(str(rec["sentence_bad"]), 0)])
            elif "text" in rec and "label" in rec:
                label = rec["label"]
                if label not in (0, 1) or isinstance(label, bool):
                    raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
                groups.append([ClsExample(str(rec["text"]), int(label))])
            else:
                raise DataError(f"{path}:{lineno}: missing fields; need text+label "
                                "or sentence_good+sentence_bad")
    if not groups:
        raise EmptyDatasetError(f"{path}: empty dataset")
    train, ev = _split(groups, seed, f"jsonl/{path.name}")
    return TaskDataset(name or path.stem, train, ev, seed=seed)


def export_jsonl(ds: TaskDataset, path) -> None:
    """Write every example (train then eval) as ``{text, label}`` lines."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in ds.examples:
            fh.write(json.dumps({"text": ex.text, "label": ex.label}) + "\n")


# tokenizer


def normalize(text: str) -> list[str]:
    return text.lower().split()


class Tokenizer:
    """Lowercased whitespace word tokenizer with reserved pad=0, unk=1."""

    def __init__(self, words: Iterable[str]):
        vocab = sorted(set(words) - {PAD, UNK})
        self.itos = [PAD, UNK, *vocab]
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        self.unk_count = 0

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, text: str) -> list[int]:
        ids = []
        for w in normalize(text):
            i = self.stoi.get(w)
            if i is None:
                self.unk_count += 1
                i = UNK_ID
            ids.append(i)
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.itos[i] for i in ids)

    def to_json(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_json(cls, itos: list[str]) -> Tokenizer:
        tok = cls(itos)
        if tok.itos != list(itos):
            raise DataError("vocabulary is not in canonical order")
        return tok


def build_tokenizer(datasets: Iterable[TaskDataset]) -> Tokenizer:
    words: set[str] = set()
    for ds in datasets:
        for ex in ds.examples:
            words.update(normalize(ex.text))
        for f in ds.facts:
            words.update(normalize(f.prompt))
            words.update((f.true_object, f.new_object))
    if not words:
        raise EmptyDatasetError("cannot build a tokenizer from an empty corpus")
    return Tokenizer(words)
