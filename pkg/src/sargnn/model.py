"""The saliency-regularized GNN: assembly, loss, training policies and evaluation."""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .backbone import BackboneKind, BackboneLayer, glorot, layer_forward, local_weights
from .graph import Dataset, Graph, k_fold_split
from .memory import MemoryParams, gnm_layer, init_latent, init_memory
from .optim import AdamState, adam_step
from .saliency import FusionConfig, SaliencyParams, fuse, saliency_logits
from .tensor import ContractError, Tensor

CHECKPOINT_FORMAT = "sargnn-checkpoint"
CHECKPOINT_VERSION = 1

VARIANTS = ("base", "gnm_gnn", "sar_pooling", "sar_gnn")

# command-line variant names -> (variant, fusion mode)
VARIANT_ALIASES = {
    "base": ("base", "weighted_sum"),
    "gnm": ("gnm_gnn", "weighted_sum"),
    "sar-pool-w": ("sar_pooling", "weighted_sum"),
    "sar-pool-s": ("sar_pooling", "scaling"),
    "sar-w": ("sar_gnn", "weighted_sum"),
    "sar-s": ("sar_gnn", "scaling"),
}

MEMORY_BLOCK_PREFIXES = ("m0", "memory.", "saliency.")


@dataclass
class SarGnnConfig:
    backbone: str = "gcn"
    variant: str = "sar_gnn"
    layers: int = 3
    in_dim: int = 11
    hidden_dim: int = 32
    memory_dim: int | None = None
    attn_dim: int | None = None
    k_iters: int = 1
    fusion_mode: str = "weighted_sum"
    beta: float = 1.0
    gamma: float = 1.0
    num_classes: int = 2
    learning_rate: float = 1e-3
    epochs: int = 100
    policy: str = "joint"
    alt_period: int = 1
    saliency_lambda: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.backbone = BackboneKind.parse(self.backbone).value
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.layers < 1:
            raise ContractError("layers must be >= 1")
        if self.num_classes < 2:
            raise ContractError("num_classes must be >= 2")
        if self.saliency_lambda < 0:
            raise ContractError("saliency_lambda must be >= 0")
        if self.policy not in ("joint", "alternating"):
            raise ContractError(f"unknown policy {self.policy!r}")
        if self.alt_period < 1:
            raise ContractError("alt_period must be >= 1")
        self.fusion  # validates fusion parameters

    @property
    def d_m(self) -> int:
        return self.memory_dim or self.hidden_dim

    @property
    def d(self) -> int:
        return self.attn_dim or self.hidden_dim

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(self.fusion_mode, self.beta, self.gamma)

    @property
    def uses_memory(self) -> bool:
        return self.variant != "base"

    @property
    def regularized(self) -> bool:
        return self.variant in ("sar_pooling", "sar_gnn")

    @property
    def pooled_head(self) -> bool:
        return self.variant in ("base", "sar_pooling")

    @classmethod
    def from_variant(cls, name: str, **kwargs) -> SarGnnConfig:
        variant, mode = VARIANT_ALIASES[name]
        kwargs.setdefault("fusion_mode", mode)
        return cls(variant=variant, **kwargs)

    def replace(self, **changes) -> SarGnnConfig:
        return SarGnnConfig(**{**asdict(self), **changes})

    @classmethod
    def from_dict(cls, d: dict) -> SarGnnConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ForwardTrace:
    logits: Tensor
    saliencies: list[Tensor] = field(default_factory=list)
    saliency_logits: list[Tensor] = field(default_factory=list)
    memory_states: list[Tensor] = field(default_factory=list)
    hidden: list[Tensor] = field(default_factory=list)

    @property
    def probabilities(self) -> np.ndarray:
        z = self.logits.data - self.logits.data.max()
        e = np.exp(z)
        return e / e.sum()

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.logits.data))


class SarGnnModel:
    """Input embedding, L backbone layers, L+1 memory layers, L saliency heads, classifier."""

    def __init__(self, cfg: SarGnnConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d_h, d_m, d = cfg.hidden_dim, cfg.d_m, cfg.d
        P = T.parameter
        self.embed_w = P(glorot(rng, cfg.in_dim, d_h))
        self.embed_b = P(np.zeros(d_h))
        self.layers = [BackboneLayer.init(cfg.backbone, d_h, rng) for _ in range(cfg.layers)]
        self.m0: Tensor | None = None
        self.memory: list[MemoryParams] = []
        self.saliency: list[SaliencyParams] = []
        if cfg.uses_memory:
            self.m0 = init_latent(d_m, rng)
            self.memory = [init_memory(d_m, rng, d=d, d_h=d_h, k_iters=cfg.k_iters)
                           for _ in range(cfg.layers + 1)]
        if cfg.regularized:
            self.saliency = [SaliencyParams.init(d_m, d_h, d, rng) for _ in range(cfg.layers)]
        head_in = d_h if cfg.pooled_head else d_m
        self.head_w1 = P(glorot(rng, head_in, d_m))
        self.head_b1 = P(np.zeros(d_m))
        self.head_w2 = P(glorot(rng, d_m, cfg.num_classes))
        self.head_b2 = P(np.zeros(cfg.num_classes))
        self.adam: dict[str, AdamState] = {}
        for name, p in self.named_parameters().items():
            p.name = name

    # ------------------------------------------------------------ parameters

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"embed.weight": self.embed_w, "embed.bias": self.embed_b}
        for i, layer in enumerate(self.layers):
            for k, p in layer.params.items():
                out[f"backbone.{i}.{k}"] = p
        if self.m0 is not None:
            out["m0"] = self.m0
        for i, mem in enumerate(self.memory):
            for k, p in mem.named().items():
                out[f"memory.{i}.{k}"] = p
        for i, sal in enumerate(self.saliency):
            for k, p in sal.named().items():
                out[f"saliency.{i}.{k}"] = p
        out.update({"head.w1": self.head_w1, "head.b1": self.head_b1,
                    "head.w2": self.head_w2, "head.b2": self.head_b2})
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def parameter_blocks(self) -> dict[str, list[str]]:
        """Backbone block (embedding, layers, head) vs memory block (memory + saliency)."""
        names = list(self.named_parameters())
        memory = [n for n in names if n.startswith(MEMORY_BLOCK_PREFIXES)]
        backbone = [n for n in names if n not in memory]
        return {"backbone": backbone, "memory": memory}

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    # --------------------------------------------------------------- forward

    def aggregation_weights(self, layer: BackboneLayer, g: Graph, H: Tensor, s: Tensor | None) -> Tensor:
        a = local_weights(layer, g, H)
        if not self.cfg.regularized:
            # base and memory-only variants keep the textbook layer
            return a
        return fuse(a, s, g, self.cfg.fusion)

    def forward(self, g: Graph) -> ForwardTrace:
        cfg = self.cfg
        if g.feature_dim != cfg.in_dim:
            raise ContractError(f"graph has {g.feature_dim} features, model expects {cfg.in_dim}")
        H = T.Tensor(g.features) @ self.embed_w + self.embed_b
        trace = ForwardTrace(logits=None, hidden=[H])
        M = None
        if cfg.uses_memory:
            trace.memory_states.append(self.m0)
            M = gnm_layer(self.m0, H, self.memory[0])
            trace.memory_states.append(M)
        for l, layer in enumerate(self.layers):
            s = None
            if cfg.regularized:
                z = saliency_logits(M, H, self.saliency[l])
                s = T.softmax(z, axis=1)
                trace.saliency_logits.append(z)
                trace.saliencies.append(s)
            w = self.aggregation_weights(layer, g, H, s)
            H = layer_forward(layer, g, H, w)
            trace.hidden.append(H)
            if cfg.uses_memory:
                M = gnm_layer(M, H, self.memory[l + 1])
                trace.memory_states.append(M)
        readout = T.sum(H, axis=0, keepdims=True) if cfg.pooled_head else M
        hidden = T.relu(readout @ self.head_w1 + self.head_b1)
        trace.logits = T.reshape(hidden @ self.head_w2 + self.head_b2, (cfg.num_classes,))
        return trace

    __call__ = forward

    def embedding(self, g: Graph) -> np.ndarray:
        """Final graph representation: M^{L+1}, or the sum-pooled H^L for pooling heads."""
        with T.no_grad():
            trace = self.forward(g)
        if self.cfg.pooled_head:
            return trace.hidden[-1].data.sum(axis=0)
        return trace.memory_states[-1].data.reshape(-1)


# ------------------------------------------------------------------- losses


def classification_loss(logits: Tensor, label: int) -> Tensor:
    k = logits.size
    if not 0 <= label < k:
        raise ContractError(f"label {label} outside [0, {k})")
    onehot = np.zeros(k)
    onehot[label] = 1.0
    return T.neg(T.sum(T.log_softmax(logits, axis=0) * onehot))


def saliency_cross_entropy(logits: Tensor, truth: np.ndarray) -> Tensor:
    """-sum_j truth(j) log s(j), with s = softmax(logits)."""
    logp = T.log_softmax(T.reshape(logits, (-1,)), axis=0)
    return T.neg(T.sum(logp * np.asarray(truth, dtype=np.float64)))


def loss(trace: ForwardTrace, g: Graph, cfg: SarGnnConfig) -> Tensor:
    total = classification_loss(trace.logits, g.label)
    if cfg.saliency_lambda > 0 and trace.saliency_logits:
        if g.saliency_truth is None:
            raise ContractError("saliency supervision needs saliency_truth on every graph")
        terms = [saliency_cross_entropy(z, g.saliency_truth) for z in trace.saliency_logits]
        sup = terms[0]
        for t in terms[1:]:
            sup = sup + t
        total = total + T.scale(sup, cfg.saliency_lambda / len(terms))
    return total


# ----------------------------------------------------------------- training


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_accuracies: list[float] = field(default_factory=list)
    epoch_blocks: list[str] = field(default_factory=list)
    seconds: float = 0.0
    steps: int = 0

    @property
    def seconds_per_graph(self) -> float:
        return self.seconds / self.steps if self.steps else 0.0


def active_block(cfg: SarGnnConfig, epoch: int) -> str:
    if cfg.policy == "joint":
        return "all"
    return ("backbone", "memory")[(epoch // cfg.alt_period) % 2]


def train(model: SarGnnModel, graphs: Sequence[Graph] | Dataset, cfg: SarGnnConfig | None = None,
          epochs: int | None = None,
          on_epoch: Callable[[int, float, float], None] | None = None) -> TrainReport:
    """Per-graph Adam steps over shuffled epochs.

    ``joint`` updates every parameter each step.  ``alternating`` switches the
    trainable block every ``alt_period`` epochs; the frozen block is removed
    from the tape so it neither receives gradients nor moves.
    """
    cfg = cfg or model.cfg
    graphs = list(graphs.graphs if isinstance(graphs, Dataset) else graphs)
    if not graphs:
        raise ContractError("cannot train on an empty dataset")
    epochs = cfg.epochs if epochs is None else epochs
    named = model.named_parameters()
    blocks = model.parameter_blocks()
    blocks["all"] = list(named)
    rng = np.random.default_rng([cfg.seed, 7919])
    report = TrainReport()
    start = time.perf_counter()
    for epoch in range(epochs):
        block = active_block(cfg, epoch)
        active = [named[n] for n in blocks[block]]
        active_ids = {id(p) for p in active}
        for p in named.values():
            p.requires_grad = id(p) in active_ids
        state = model.adam.setdefault(block, AdamState(learning_rate=cfg.learning_rate))
        total, correct = 0.0, 0
        for idx in rng.permutation(len(graphs)):
            g = graphs[idx]
            for p in active:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            trace = model.forward(g)
            value = loss(trace, g, cfg)
            total += value.item()
            correct += trace.prediction == g.label
            if active and value.requires_grad:
                T.backward(value)
                adam_step(active, state)
            report.steps += 1
        for p in named.values():
            p.requires_grad = True
        report.epoch_losses.append(total)
        report.epoch_accuracies.append(correct / len(graphs))
        report.epoch_blocks.append(block)
        if on_epoch is not None:
            on_epoch(epoch, total, correct / len(graphs))
    report.seconds = time.perf_counter() - start
    return report


def predict(model: SarGnnModel, g: Graph) -> int:
    with T.no_grad():
        return model.forward(g).prediction


def evaluate(model: SarGnnModel, graphs: Sequence[Graph]) -> float:
    graphs = list(graphs)
    if not graphs:
        raise ContractError("cannot evaluate on an empty list")
    return sum(predict(model, g) == g.label for g in graphs) / len(graphs)


# ---------------------------------------------------------- cross-validation


@dataclass
class CrossValResult:
    mean: float
    std: float
    fold_accuracies: list[float]
    reports: list[TrainReport] = field(default_factory=list)


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _run_fold(args) -> tuple[float, TrainReport]:
    graphs, train_idx, test_idx, cfg = args
    model = SarGnnModel(cfg)
    report = train(model, [graphs[i] for i in train_idx], cfg)
    return evaluate(model, [graphs[i] for i in test_idx]), report


def cross_validate(dataset: Dataset, cfg: SarGnnConfig, k: int = 10, seed: int | None = None,
                   workers: int = 1) -> CrossValResult:
    """Fresh model per fold; mean and population std of held-out accuracy."""
    seed = cfg.seed if seed is None else seed
    split = k_fold_split(dataset, k, seed)
    jobs = []
    for fold in range(k):
        train_idx, test_idx = split.train_test(fold)
        jobs.append((dataset.graphs, train_idx, test_idx, cfg.replace(seed=fold_seed(seed, fold))))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(job) for job in jobs]
    accs = [a for a, _ in results]
    return CrossValResult(float(np.mean(accs)), float(np.std(accs)), accs, [r for _, r in results])


# --------------------------------------------------------------- checkpoints


def save_checkpoint(model: SarGnnModel, path: str | Path) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "parameters": {
            name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in model.named_parameters().items()
        },
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: str | Path) -> SarGnnModel:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    model = SarGnnModel(SarGnnConfig.from_dict(payload["config"]))
    named = model.named_parameters()
    stored = payload["parameters"]
    if set(stored) != set(named):
        raise ValueError("checkpoint parameters do not match the configured model")
    for name, entry in stored.items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != named[name].shape:
            raise ValueError(f"shape mismatch for {name}")
        named[name].data[...] = arr
    return model
