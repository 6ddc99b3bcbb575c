"""Deterministic semi-supervised few-shot learning over precomputed embeddings."""

from .data import (DatasetBundle, EmbeddingTable, SyntheticSpec, load_bundle,
                   make_synthetic, sample_few_shot, save_bundle)
from .losses import (DebiasState, SelectionResult, ce_loss_t, debias_adjust,
                     debias_update, fixmatch_losses, retrieved_loss, select,
                     softmax_t)
from .model import (Adapter, LinearHead, Model, TemperatureSet, backward,
                    forward, init_head_from_text, load_model, make_adapter,
                    save_model)
from .trainer import (TrainConfig, cosine_lr, run_stage1, run_stage2,
                      run_stage3, run_swift, test_accuracy, write_run_outputs)
from .diagnostics import (accuracy, confidence_histogram, flatness_stats,
                          tconf_sweep)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
