"""Parameter-level circuit extraction and circuit-aware knowledge editing on a toy decoder."""

from .analysis import (AnalysisReport, OverlapMatrix, bootstrap_median_diff, circuit_accuracy,
                       composition, nll_distribution, overlap, overlap_matrix,
                       random_overlap_baseline, size_sweep)
from .data import (FactRecord, TaskDataset, Tokenizer, build_tokenizer, load_jsonl, make_task)
from .editing import EditConfig, EditOutcome, edit_fact, edit_suite, encode_fact
from .extraction import (CircuitMask, ExtractConfig, MaskLogits, complement, extract_circuit,
                         extract_circuits, load_mask, random_circuit, save_mask)
from .model import (ModelConfig, ModelVariant, ParamStore, TrainConfig, build_model,
                    forward_cls, forward_lm, load_checkpoint, nll_of_target, save_checkpoint,
                    train_base)

__version__ = "0.1.0"
