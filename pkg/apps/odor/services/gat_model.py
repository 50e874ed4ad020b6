"""
Edge-aware multi-head graph attention network with attention readout,
mean/max pooling and global-fingerprint fusion
"""
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigError, ShapeError
from .feature_service import FeatureSet

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """Network hyperparameters.

    ``hidden_layers`` multi-head layers of ``heads`` x ``hidden_dim`` are
    followed by one single-head layer of ``final_dim``. The readout blocks
    and the global MLP output are ``final_dim`` wide each.
    """
    heads: int = 4
    hidden_dim: int = 64
    hidden_layers: int = 2
    final_dim: int = 128
    global_hidden: int = 256
    fusion_hidden: int = 256
    leaky_slope: float = 0.2
    dropout: float = 0.0
    num_labels: int = 154
    attention_readout: bool = True
    global_fusion: bool = True
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    node_dim: Optional[int] = None
    edge_dim: Optional[int] = None
    global_dim: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ('heads', 'hidden_dim', 'final_dim', 'global_hidden', 'fusion_hidden', 'num_labels'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden_layers < 0:
            raise ConfigError(f"hidden_layers must be >= 0, got {self.hidden_layers}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.leaky_slope < 0:
            raise ConfigError(f"leaky_slope must be >= 0, got {self.leaky_slope}")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'ModelConfig':
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown model config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def layer_shapes(self) -> List[Tuple[int, int, int]]:
        """(input width, output width per head, heads) of every attention layer"""
        shapes = []
        width = self.node_dim
        for _ in range(self.hidden_layers):
            shapes.append((width, self.hidden_dim, self.heads))
            width = self.hidden_dim * self.heads
        shapes.append((width, self.final_dim, 1))
        return shapes

    @property
    def readout_blocks(self) -> int:
        return 2 + int(self.attention_readout) + int(self.global_fusion)


@dataclass
class BatchGraph:
    """Several molecules packed into one disjoint graph.

    ``edge_index`` holds directed (source, target) pairs, both directions of
    every bond, with node ids offset per molecule.
    """
    node_features: np.ndarray
    edge_index: np.ndarray
    edge_features: np.ndarray
    graph_ids: np.ndarray
    global_features: np.ndarray
    labels: Optional[np.ndarray] = None
    smiles: List[str] = field(default_factory=list)

    @property
    def num_graphs(self) -> int:
        return self.global_features.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]


def collate(feature_sets: Sequence[FeatureSet], labels: Optional[np.ndarray] = None) -> BatchGraph:
    """Pack featurized molecules into a :class:`BatchGraph`"""
    if not feature_sets:
        raise ShapeError('collate', (0,), detail='empty batch')
    offsets = np.cumsum([0] + [fs.num_atoms for fs in feature_sets])
    edge_index = np.concatenate(
        [fs.edge_index + offsets[k] for k, fs in enumerate(feature_sets)], axis=1
    ).astype(np.int64)
    graph_ids = np.repeat(np.arange(len(feature_sets)), [fs.num_atoms for fs in feature_sets])
    edge_dim = feature_sets[0].edge_matrix.shape[1]
    edges = [fs.edge_matrix.reshape(-1, edge_dim) for fs in feature_sets]
    batch = BatchGraph(
        node_features=np.concatenate([fs.node_matrix for fs in feature_sets], axis=0),
        edge_index=edge_index.reshape(2, -1),
        edge_features=np.concatenate(edges, axis=0),
        graph_ids=graph_ids.astype(np.int64),
        global_features=np.stack([fs.global_vector for fs in feature_sets]),
        labels=None if labels is None else np.asarray(labels, dtype=np.float64),
        smiles=[fs.smiles for fs in feature_sets],
    )
    if batch.edge_index.size and np.any(graph_ids[batch.edge_index[0]] != graph_ids[batch.edge_index[1]]):
        raise ShapeError('collate', batch.edge_index.shape, detail='edge joins two molecules')
    return batch


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ModelParams:
    """Named trainable tensors plus batch-norm running statistics.

    Weight matrices, attention vectors and the readout attention matrix
    are subject to L2 decay; biases and batch-norm scale/shift are not.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.tensors: Dict[str, Tensor] = {}
        self.decay: Dict[str, bool] = {}
        self.buffers: Dict[str, np.ndarray] = {}

    def add(self, name: str, values: np.ndarray, decay: bool) -> None:
        self.tensors[name] = Tensor(values, requires_grad=True, name=name)
        self.decay[name] = decay

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def decayed(self) -> List[Tensor]:
        return [t for name, t in self.tensors.items() if self.decay[name]]

    @property
    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> 'ModelParams':
        if config.node_dim is None or config.edge_dim is None or config.global_dim is None:
            raise ConfigError("node_dim, edge_dim and global_dim must be set before initialising a model")
        params = cls(config)
        for layer, (width, out, heads) in enumerate(config.layer_shapes()):
            for head in range(heads):
                prefix = f"gat{layer}.head{head}"
                params.add(f"{prefix}.W", glorot(rng, width, out, (width, out)), decay=True)
                span = 2 * out + config.edge_dim
                params.add(f"{prefix}.a", glorot(rng, span, 1, (span,)), decay=True)
            concat_width = out * heads
            params.add(f"gat{layer}.bn.gamma", np.ones(concat_width), decay=False)
            params.add(f"gat{layer}.bn.beta", np.zeros(concat_width), decay=False)
            params.buffers[f"gat{layer}.bn.running_mean"] = np.zeros(concat_width)
            params.buffers[f"gat{layer}.bn.running_var"] = np.ones(concat_width)

        final = config.final_dim
        if config.attention_readout:
            params.add("readout.W_att", glorot(rng, final, 1, (final,)), decay=True)
        if config.global_fusion:
            params.add("global.W1", glorot(rng, config.global_dim, config.global_hidden,
                                           (config.global_dim, config.global_hidden)), decay=True)
            params.add("global.b1", np.zeros(config.global_hidden), decay=False)
            params.add("global.W2", glorot(rng, config.global_hidden, final, (config.global_hidden, final)), decay=True)
            params.add("global.b2", np.zeros(final), decay=False)

        fused = final * config.readout_blocks
        params.add("fusion.W1", glorot(rng, fused, config.fusion_hidden, (fused, config.fusion_hidden)), decay=True)
        params.add("fusion.b1", np.zeros(config.fusion_hidden), decay=False)
        params.add("fusion.W2", glorot(rng, config.fusion_hidden, config.num_labels,
                                       (config.fusion_hidden, config.num_labels)), decay=True)
        params.add("fusion.b2", np.zeros(config.num_labels), decay=False)
        logger.debug(f"Initialised {len(params)} parameter tensors ({params.num_parameters} values)")
        return params

    def arrays(self) -> Dict[str, np.ndarray]:
        """Every parameter and buffer as a plain array, for serialisation"""
        out = {f"param:{name}": t.values for name, t in self.tensors.items()}
        out.update({f"buffer:{name}": v for name, v in self.buffers.items()})
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        expected = set(self.arrays())
        if set(arrays) != expected:
            missing = sorted(expected - set(arrays))
            extra = sorted(set(arrays) - expected)
            raise ConfigError(f"Parameter set mismatch: missing {missing}, unexpected {extra}")
        for key, values in arrays.items():
            kind, name = key.split(':', 1)
            target = self.tensors[name].values if kind == 'param' else self.buffers[name]
            if target.shape != values.shape:
                raise ShapeError('load_arrays', target.shape, values.shape, detail=name)
            target[...] = values


def _with_self_loops(batch: BatchGraph) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = batch.num_nodes
    loops = np.arange(n, dtype=np.int64)
    source = np.concatenate([batch.edge_index[0], loops])
    target = np.concatenate([batch.edge_index[1], loops])
    edge_dim = batch.edge_features.shape[1]
    edges = np.concatenate([batch.edge_features, np.zeros((n, edge_dim))], axis=0)
    return source, target, edges


def gat_layer(
    h: Tensor,
    batch: BatchGraph,
    params: ModelParams,
    layer: int,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    trace: Optional[Dict[str, np.ndarray]] = None,
) -> Tensor:
    """One attention layer: per-head edge-aware attention, concat, batch norm, relu.

    For an edge j -> i the score is leaky_relu(a . [W h_i | W h_j | e_ij])
    and the weights are normalised over the in-edges of i, self-loop
    included.
    """
    config = params.config
    width, out, heads = config.layer_shapes()[layer]
    if h.shape[1] != width:
        raise ShapeError('gat_layer', h.shape, (h.shape[0], width))
    source, target, edge_values = _with_self_loops(batch)
    edges = Tensor(edge_values)
    n = batch.num_nodes

    head_outputs = []
    for head in range(heads):
        prefix = f"gat{layer}.head{head}"
        W, a = params[f"{prefix}.W"], params[f"{prefix}.a"]
        wh = h @ W
        score = (
            ad.gather(wh @ a[:out], target)
            + ad.gather(wh @ a[out:2 * out], source)
            + edges @ a[2 * out:]
        )
        alpha = ad.segment_softmax(ad.leaky_relu(score, config.leaky_slope), target, n)
        if trace is not None:
            trace[f"{prefix}.alpha"] = alpha.values.copy()
        messages = ad.gather(wh, source) * ad.reshape(alpha, (-1, 1))
        head_outputs.append(ad.segment_sum(messages, target, n))

    merged = head_outputs[0] if heads == 1 else ad.concat(head_outputs, axis=1)
    normed = ad.batch_norm(
        merged,
        params[f"gat{layer}.bn.gamma"],
        params[f"gat{layer}.bn.beta"],
        params.buffers[f"gat{layer}.bn.running_mean"],
        params.buffers[f"gat{layer}.bn.running_var"],
        training=training,
        momentum=config.bn_momentum,
        eps=config.bn_eps,
    )
    return ad.dropout(ad.relu(normed), config.dropout, rng, training)


def attention_readout(
    x: Tensor,
    batch: BatchGraph,
    params: ModelParams,
    trace: Optional[Dict[str, np.ndarray]] = None,
) -> Tensor:
    """Attention-weighted node sum per molecule, weights softmaxed within each molecule"""
    scores = x @ params["readout.W_att"]
    alpha = ad.segment_softmax(scores, batch.graph_ids, batch.num_graphs)
    if trace is not None:
        trace["readout.alpha"] = alpha.values.copy()
    return ad.segment_sum(x * ad.reshape(alpha, (-1, 1)), batch.graph_ids, batch.num_graphs)


def forward(
    batch: BatchGraph,
    params: ModelParams,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    trace: Optional[Dict[str, np.ndarray]] = None,
) -> Tensor:
    """Logits of shape (molecules, labels)"""
    config = params.config
    if batch.node_features.shape[1] != config.node_dim:
        raise ConfigError(
            f"Node feature width {batch.node_features.shape[1]} does not match model node_dim {config.node_dim}"
        )
    if batch.edge_features.shape[1] != config.edge_dim:
        raise ConfigError(
            f"Edge feature width {batch.edge_features.shape[1]} does not match model edge_dim {config.edge_dim}"
        )
    if batch.global_features.shape[1] != config.global_dim:
        raise ConfigError(
            f"Global feature width {batch.global_features.shape[1]} does not match model global_dim {config.global_dim}"
        )

    h = Tensor(batch.node_features)
    for layer in range(len(config.layer_shapes())):
        h = gat_layer(h, batch, params, layer, training, rng, trace)

    blocks = []
    if config.attention_readout:
        blocks.append(attention_readout(h, batch, params, trace))
    blocks.append(ad.segment_mean(h, batch.graph_ids, batch.num_graphs))
    blocks.append(ad.segment_max(h, batch.graph_ids, batch.num_graphs))
    if config.global_fusion:
        g = Tensor(batch.global_features)
        g = ad.relu(g @ params["global.W1"] + params["global.b1"])
        blocks.append(ad.relu(g @ params["global.W2"] + params["global.b2"]))

    fused = ad.concat(blocks, axis=1)
    hidden = ad.relu(fused @ params["fusion.W1"] + params["fusion.b1"])
    hidden = ad.dropout(hidden, config.dropout, rng, training)
    return hidden @ params["fusion.W2"] + params["fusion.b2"]


def predict_proba(batch: BatchGraph, params: ModelParams) -> np.ndarray:
    """Inference-mode sigmoid probabilities, no tape recorded"""
    with ad.no_grad():
        logits = forward(batch, params, training=False)
    return expit(logits.values)
