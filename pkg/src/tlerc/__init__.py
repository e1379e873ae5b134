"""Transfer learning from generative dialogue models to conversational
emotion recognition, at desk scale."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import (Conversation, Corpus, SynthConfig, Utterance, Vocabulary,
                     build_vocab, generate_synthetic, load_corpus, make_splits,
                     save_corpus, subsample_training)
from .erc import (ErcConfig, ErcModel, ExternalVectorPlugin,
                  TrainableEncoderSpec, build_erc_model, erc_forward, erc_loss,
                  predict, train_erc)
from .hred import (HredModel, build_hred_model, hred_nll, perplexity, pretrain,
                   vhred_context, vhred_train_loss)
from .metrics import aggregate_runs, pearson_r, weighted_fscore, wilcoxon_ranksum
from .params import ParameterSet, finite_difference_check
from .tensor import GradientMap, Tape, Tensor, backward
from .transfer import (TransferSpec, apply_adaptation, export_context_params,
                       init_target)

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "load_checkpoint", "save_checkpoint",
    "Conversation", "Corpus", "SynthConfig", "Utterance", "Vocabulary",
    "build_vocab", "generate_synthetic", "load_corpus", "make_splits",
    "save_corpus", "subsample_training",
    "ErcConfig", "ErcModel", "ExternalVectorPlugin", "TrainableEncoderSpec",
    "build_erc_model", "erc_forward", "erc_loss", "predict", "train_erc",
    "HredModel", "build_hred_model", "hred_nll", "perplexity", "pretrain",
    "vhred_context", "vhred_train_loss",
    "aggregate_runs", "pearson_r", "weighted_fscore", "wilcoxon_ranksum",
    "ParameterSet", "finite_difference_check",
    "GradientMap", "Tape", "Tensor", "backward",
    "TransferSpec", "apply_adaptation", "export_context_params", "init_target",
    "__version__",
]
