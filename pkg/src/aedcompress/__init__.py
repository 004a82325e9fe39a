"""Low-rank factorization and quantization training for LSTM acoustic event detectors.

The package trains a stacked LSTM clip classifier, compresses it by sharing
truncated right singular vectors between the recurrent matrix of one layer and
the input matrix of the next, quantizes the resulting factors to n bits, and
fine-tunes them with a straight-through estimator.

Example:

    import aedcompress as ac

    train_set, val_set, test_set = ac.load_synthetic_splits(ac.SynthConfig(seed=0))
    model = ac.init_model(input_size=16, hidden_size=32, num_classes=3)
    model, history = ac.train(model, train_set, val_set, ac.TrainConfig(epochs=10))
    small = ac.quantize_model(ac.factorize_model(model, tau=0.6), n_bits=8)
"""

__version__ = "0.1.0"

from .linalg import SvdConvergenceError, SvdResult, least_squares_project, svd
from .lstm import ForwardTrace, LstmModel, backward, forward, init_model, param_count
from .lowrank import factorize_model, select_rank
from .quant import (
    QuantizedTensor,
    dequantize,
    fake_quant,
    pack_codes,
    quantize,
    quantize_inputs,
    quantize_model,
    ste_backward,
    unpack_codes,
)
from .train import (
    Adam,
    LossConfig,
    TrainConfig,
    bce_loss,
    finetune_quantized,
    predict,
    train,
)
from .metrics import DetCurve, EvalReport, SizeReport, auc, det_curve, eer, evaluate, size_report
from .data import (
    CmvnStats,
    ClipRecord,
    Dataset,
    SynthConfig,
    apply_cmvn,
    compute_cmvn,
    load_features,
    load_synthetic_splits,
    split,
    synth_arrays,
    synth_dataset,
    write_features,
)
from .modelio import load_model, save_model
