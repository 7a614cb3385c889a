"""Rewrite facts by fine-tuning only a circuit, or only its complement.

Continues from a trained checkpoint (``python -m circuitkit train`` writes
one to ``<output_dir>/train/model.ckpt``) and a circuit from
``python -m circuitkit extract``. Pass the run directory as the argument:

    python demos/02_editing_inside_and_outside.py runs/default
"""

import sys
from pathlib import Path

import numpy as np

from circuitkit import EditConfig, Tokenizer, edit_suite, encode_fact, load_checkpoint, load_mask
from circuitkit import make_task

run = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/default")
params, meta = load_checkpoint(run / "train/model.ckpt")
tok = Tokenizer.from_json(meta["vocab"])
facts = [encode_fact(f, tok) for f in make_task("h").facts[:40]]

for density in (0.05, 0.5):
    mask, header = load_mask(run / f"extract/h/mask_{density:g}.bin")
    outs = edit_suite(params, mask, facts, EditConfig(), ["full", "circuit", "complement"])
    print(f"circuit of density {header['density']:.3f}")
    for mode in ("full", "circuit", "complement"):
        pre = np.median([o.pre_nll_new for o in outs if o.mode == mode])
        post = np.median([o.post_nll_new for o in outs if o.mode == mode])
        print(f"    {mode:10s} median NLL of the new object {pre:7.3f} -> {post:7.3f}")

# What a single edit asks for.
f = facts[0]
print("first fact:", tok.decode(list(f.prompt)), "->", tok.decode([f.true_id]), "/",
      tok.decode([f.new_id]))
