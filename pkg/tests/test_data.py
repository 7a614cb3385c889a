import json

import pytest

from circuitkit import data as D


def test_hierarchy_small_counts():
    ds = D.gen_hierarchy(n_chains=2, depth=3, seed=0)
    assert len(ds.facts) == 4
    assert sum(e.label for e in ds.examples) == 4
    assert sum(1 - e.label for e in ds.examples) == 4


def test_hierarchy_default_has_198_facts():
    assert len(D.gen_hierarchy().facts) == 198


def test_hierarchy_false_objects_come_from_other_chains():
    ds = D.gen_hierarchy(5, 4, seed=3)
    chain = D.hierarchy_chains(ds)
    for ex in ds.examples:
        words = ex.text.split()
        subj, obj = words[1], words[-1]
        assert (chain[subj] == chain[obj]) == (ex.label == 1)
    for f in ds.facts:
        assert f.new_object != f.true_object
        assert chain[f.new_object] != chain[f.subject]


def test_hierarchy_prompt_plus_object_is_a_true_statement():
    ds = D.gen_hierarchy(4, 3, seed=1)
    positives = {e.text for e in ds.examples if e.label == 1}
    for f in ds.facts:
        assert f"{f.prompt} {f.true_object}" in positives
        assert f.prompt == f"a {f.subject} is a kind of"


def test_hierarchy_rejects_degenerate_sizes():
    with pytest.raises(D.DataError):
        D.gen_hierarchy(1, 3)
    with pytest.raises(D.DataError):
        D.gen_hierarchy(3, 1)


def test_agreement_minimal_pairs():
    for variant, (varies, _, _) in D.AGREEMENT_VARIANTS.items():
        ds = D.gen_agreement(40, seed=2, variant=variant)
        ex = ds.examples
        assert sum(e.label for e in ex) * 2 == len(ex)
        # groups are kept together by the split: consecutive good/bad pairs
        for split in (ds.train, ds.eval):
            for good, bad in zip(split[::2], split[1::2]):
                assert (good.label, bad.label) == (1, 0)
                g, b = good.text.split(), bad.text.split()
                diff = [i for i, (x, y) in enumerate(zip(g, b)) if x != y]
                assert len(g) == len(b) and len(diff) == 1
                pos = diff[0]
                if varies == "det":
                    assert g[pos] in D._DETS["sg"] + D._DETS["pl"]
                else:
                    assert g[pos - (2 if "wa" in variant else 1)] in D._DETS["sg"] + D._DETS["pl"]


def test_agreement_eight_variants():
    names = {D.gen_agreement(10, 0, v).name for v in D.AGREEMENT_VARIANTS}
    assert names == {"dna1", "dna2", "dnai1", "dnai2", "dnawa1", "dnawa2", "dnawai1", "dnawai2"}


def test_agreement_min_items():
    with pytest.raises(D.DataError):
        D.gen_agreement(9)


def test_behavior_lexicons_and_balance():
    assert D.behavior_lexicon("risk_averse").isdisjoint(D.behavior_lexicon("extraversion"))
    ds = D.gen_behavior("risk_averse", 101, seed=4)
    assert 0.45 <= ds.label_balance() <= 0.55
    names = {D.gen_behavior(s, 20).name for s in D.BEHAVIOR_STYLES}
    assert names == {"ra", "e", "hhh", "umr", "tech"}


def test_behavior_labels_follow_persona_verbs():
    _, _, pos, neg = D.BEHAVIOR_STYLES["risk_averse"]
    for e in D.gen_behavior("risk_averse", 50).examples:
        body = " ".join(e.text.split()[2:])
        assert any(body.startswith(v + " ") for v in (pos if e.label else neg))


@pytest.mark.parametrize("name", D.TASK_NAMES)
def test_generators_are_pure_and_splits_disjoint(name):
    a, b = D.make_task(name, seed=7), D.make_task(name, seed=7)
    assert a.train == b.train and a.eval == b.eval and a.facts == b.facts
    assert set(map(id, a.train)).isdisjoint(map(id, a.eval))
    assert a.eval and a.train
    assert 0.45 <= a.label_balance() <= 0.55


def test_lexicons_do_not_leak_between_task_families():
    hier = {w for e in D.make_task("h").examples for w in e.text.split()}
    agree = {w for v in D.AGREEMENT_VARIANTS for e in D.make_task(v).examples
             for w in e.text.split()}
    assert hier & agree == set()


def test_jsonl_minimal_pair_expansion(tmp_path):
    p = tmp_path / "pairs.jsonl"
    p.write_text(json.dumps({"sentence_good": "a", "sentence_bad": "b"}) + "\n")
    ds = D.load_jsonl(p)
    assert sorted((e.text, e.label) for e in ds.examples) == [("a", 1), ("b", 0)]


def test_jsonl_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    with pytest.raises(D.EmptyDatasetError):
        D.load_jsonl(p)


@pytest.mark.parametrize("line, msg", [
    ("{not json", "bad JSON"),
    ('{"text": "x"}', "missing fields"),
    ('{"text": "x", "label": 2}', "label must be"),
    ("[1, 2]", "JSON object"),
])
def test_jsonl_malformed_lines_report_line_number(tmp_path, line, msg):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"text": "ok", "label": 1}\n' + line + "\n")
    with pytest.raises(D.DataError, match=rf":2: .*{msg}"):
        D.load_jsonl(p)


def test_jsonl_round_trip(tmp_path):
    ds = D.make_task("dna1")
    p = tmp_path / "dna1.jsonl"
    D.export_jsonl(ds, p)
    back = D.load_jsonl(p)
    assert len(back.examples) == len(ds.examples)
    assert sorted((e.text, e.label) for e in back.examples) == \
        sorted((e.text, e.label) for e in ds.examples)


def test_tokenizer_round_trip_and_determinism():
    tasks = [D.make_task(n) for n in ("h", "dna1", "ra")]
    tok = D.build_tokenizer(tasks)
    assert tok.itos[:2] == [D.PAD, D.UNK]
    assert tok.itos[2:] == sorted(tok.itos[2:])
    assert D.build_tokenizer(tasks).itos == tok.itos
    s = tasks[1].examples[0].text
    assert tok.decode(tok.encode(s)) == " ".join(D.normalize(s))
    assert tok.encode("A  Kind") == tok.encode("a kind")


def test_tokenizer_unknown_word_maps_to_unk():
    tok = D.build_tokenizer([D.make_task("dna1")])
    before = tok.unk_count
    assert tok.encode("zzzunseen") == [D.UNK_ID]
    assert tok.unk_count == before + 1


def test_edit_objects_are_single_tokens():
    h = D.make_task("h")
    tok = D.build_tokenizer([h])
    for f in h.facts:
        for w in (f.true_object, f.new_object):
            ids = tok.encode(w)
            assert len(ids) == 1 and ids[0] != D.UNK_ID


def test_sentences_fit_default_context():
    tasks = [D.make_task(n) for n in D.TASK_NAMES]
    tok = D.build_tokenizer(tasks)
    assert max(len(tok.encode(e.text)) for t in tasks for e in t.examples) <= 32


def test_empty_corpus_tokenizer_error():
    with pytest.raises(D.EmptyDatasetError):
        D.build_tokenizer([])
