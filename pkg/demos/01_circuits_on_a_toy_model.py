"""Train a small decoder on the hierarchy task and pull out two circuits.

The model is smaller than the default pipeline config so this finishes in
a minute or two. Run with ``python demos/01_circuits_on_a_toy_model.py``.
"""

from circuitkit import (ExtractConfig, ModelConfig, TrainConfig, build_model, build_tokenizer,
                        circuit_accuracy, complement, composition, extract_circuits, make_task,
                        train_base)
from circuitkit.model import ModelVariant, accuracy

task = make_task("h")
tok = build_tokenizer([task])
print(f"{len(task.facts)} facts, {len(task.examples)} labelled sentences, vocab {len(tok)}")

cfg = ModelConfig(vocab_size=len(tok), d_model=32, n_layers=2, n_heads=4, d_ff=64)
corpus = [tok.encode(f"{f.prompt} {f.true_object}") for f in task.facts]
cls_data = [(tok.encode(e.text), e.label) for e in task.examples]
res = train_base(build_model(cfg), corpus, cls_data, TrainConfig(steps=2000))
params = res.params
print("final training loss", round(res.history[-1]["loss"], 4))

# Circuits are read off one mask-training run at every requested density.
seqs = [tok.encode(e.text) for e in task.train]
masks, trajectory = extract_circuits(params, seqs, ExtractConfig(max_steps=1500), [0.05, 0.5], "h")
print(f"mask training ran {trajectory[-1]['step']} steps")

eval_seqs = [tok.encode(e.text) for e in task.eval]
eval_labels = [e.label for e in task.eval]
print(f"full model accuracy {accuracy(ModelVariant(params), eval_seqs, eval_labels):.3f}")
for d, m in masks.items():
    acc = circuit_accuracy(params, m, eval_seqs, eval_labels)
    comp = circuit_accuracy(params, complement(m), eval_seqs, eval_labels)
    print(f"density {d:.2f}: circuit accuracy {acc:.3f}, complement accuracy {comp:.3f}")
    for layer_type, row in composition(m, params)["types"].items():
        print(f"    {layer_type:10s} keeps {row['kept_fraction']:.3f} of its parameters")
