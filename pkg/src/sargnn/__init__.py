"""Saliency-regularized graph neural networks on a small numpy autodiff engine."""

from .backbone import BackboneKind, BackboneLayer, layer_forward, local_weights
from .graph import (
    Dataset,
    DatasetFormatError,
    FoldSplit,
    GenerationError,
    Graph,
    count_triangles,
    generate_triangles,
    k_fold_split,
    load_tu_dataset,
    triangles_by_trace,
)
from .memory import MemoryParams, gnm_layer, init_memory
from .model import (
    SarGnnConfig,
    SarGnnModel,
    cross_validate,
    evaluate,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
)
from .optim import AdamState, adam_step, grad_check
from .saliency import FusionConfig, SaliencyParams, compute_saliency, fuse
from .tensor import ContractError, NumericError, ShapeError, Tensor, backward, no_grad

__version__ = "0.1.0"
