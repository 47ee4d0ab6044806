"""One-layer GCN / GAT graph classifiers with SUM, AVG, MAX or attention readout.

Forward passes are built from :mod:`poolbias.autodiff` primitives so the same
code path serves prediction (constant tensors, no tape) and training
(parameter leaves with ``requires_grad``).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgument, ParseError
from .graph import Graph

CHECKPOINT_VERSION = 1
GAT_SLOPE = 0.2


class Pooling(str, enum.Enum):
    MAX = "max"
    AVG = "avg"
    SUM = "sum"
    ATTN = "attn"


class Conv(str, enum.Enum):
    GCN = "gcn"
    GAT = "gat"


class Nonlinearity(str, enum.Enum):
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


@dataclass
class ModelParams:
    theta: np.ndarray
    attn: np.ndarray
    classifier: np.ndarray
    pooling: Pooling = Pooling.ATTN
    beta: float = 1.0
    conv: Conv = Conv.GCN
    gat_attn: np.ndarray | None = None
    use_self_loops: bool = True
    degree_normalize: bool = True
    nonlinearity: Nonlinearity = Nonlinearity.SIGMOID
    use_linear_classifier: bool = True
    theory_mode: bool = False
    # theory mode only: aggregate over N(i) instead of N(i) + {i}
    open_neighborhood: bool = False

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.float64)
        if self.theta.ndim != 2:
            raise InvalidArgument("theta must be a K x d matrix")
        d = self.theta.shape[1]
        self.attn = np.array(self.attn, dtype=np.float64).reshape(-1)
        self.classifier = np.array(self.classifier, dtype=np.float64).reshape(-1)
        self.pooling = Pooling(self.pooling)
        self.conv = Conv(self.conv)
        self.nonlinearity = Nonlinearity(self.nonlinearity)
        self.beta = float(self.beta)
        if not self.beta > 0:
            raise InvalidArgument(f"beta must be positive, got {self.beta}")
        if self.attn.shape != (d,) or self.classifier.shape != (d,):
            raise InvalidArgument(f"attn and classifier must have length d={d}")
        if self.conv is Conv.GAT:
            if self.gat_attn is None:
                raise InvalidArgument("GAT needs gat_attn")
            self.gat_attn = np.array(self.gat_attn, dtype=np.float64).reshape(-1)
            if self.gat_attn.shape != (2 * d,):
                raise InvalidArgument(f"gat_attn must have length 2d={2 * d}")
        elif self.gat_attn is not None:
            raise InvalidArgument("gat_attn is only used by GAT")
        if not self.use_linear_classifier and d != 1:
            raise InvalidArgument("without the linear classifier the width d must be 1")
        if self.theory_mode:
            k = self.theta.shape[0]
            if self.conv is not Conv.GCN:
                raise InvalidArgument("theory mode uses the GCN convolution")
            if d != k or not np.array_equal(self.theta, np.eye(k)):
                raise InvalidArgument("theory mode fixes theta to the identity")
            if (self.nonlinearity is not Nonlinearity.IDENTITY or self.degree_normalize
                    or self.use_self_loops or not self.use_linear_classifier):
                raise InvalidArgument(
                    "theory mode needs identity nonlinearity, no degree normalization, "
                    "no self-loop flag and the linear classifier")

    @property
    def num_colors(self) -> int:
        return self.theta.shape[0]

    @property
    def width(self) -> int:
        return self.theta.shape[1]

    def trainable(self) -> list[str]:
        """Names of the arrays updated by training, in a fixed order."""
        names = [] if self.theory_mode else ["theta"]
        if self.conv is Conv.GAT:
            names.append("gat_attn")
        if self.pooling is Pooling.ATTN:
            names.append("attn")
        if self.use_linear_classifier:
            names.append("classifier")
        return names

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"theta": self.theta, "attn": self.attn, "classifier": self.classifier}
        if self.gat_attn is not None:
            out["gat_attn"] = self.gat_attn
        return out

    def copy(self) -> "ModelParams":
        return replace(self, **{k: v.copy() for k, v in self.arrays().items()})

    def with_arrays(self, **arrays) -> "ModelParams":
        return replace(self, **{k: np.array(v, dtype=np.float64) for k, v in arrays.items()})


def init_model(num_colors: int, pooling=Pooling.ATTN, *, hidden: int = 16, conv=Conv.GCN,
               beta: float = 1.0, seed: int = 0, init_scale: float = 0.1,
               use_linear_classifier: bool = True, nonlinearity=None,
               theory_mode: bool = False, open_neighborhood: bool = False) -> ModelParams:
    """Build a model with seeded uniform(-init_scale, init_scale) weights.

    Theory mode starts from the identity transform and zero attention and
    classifier vectors.  Dropping the linear classifier forces d = 1 and,
    unless overridden, an identity nonlinearity so the pooled scalar can act
    as an unbounded logit.
    """
    if theory_mode:
        k = num_colors
        return ModelParams(np.eye(k), np.zeros(k), np.zeros(k), pooling=pooling, beta=beta,
                           conv=Conv.GCN, use_self_loops=False, degree_normalize=False,
                           nonlinearity=Nonlinearity.IDENTITY, theory_mode=True,
                           open_neighborhood=open_neighborhood)
    conv = Conv(conv)
    d = hidden if use_linear_classifier else 1
    if nonlinearity is None:
        nonlinearity = Nonlinearity.SIGMOID if use_linear_classifier else Nonlinearity.IDENTITY
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-init_scale, init_scale, size=shape)

    theta = u(num_colors, d)
    attn = u(d)
    classifier = u(d) if use_linear_classifier else np.zeros(d)
    gat = u(2 * d) if conv is Conv.GAT else None
    return ModelParams(theta, attn, classifier, pooling=pooling, beta=beta, conv=conv,
                       gat_attn=gat, nonlinearity=nonlinearity,
                       use_linear_classifier=use_linear_classifier)


# -- graph preprocessing ----------------------------------------------------


@dataclass
class Prepared:
    """Parameter-independent matrices of one graph under one model config."""

    x: np.ndarray
    propagate: np.ndarray | None
    agg_x: np.ndarray | None
    mask: np.ndarray | None
    label: int | None = None

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]


def propagation_matrix(g: Graph, params: ModelParams) -> np.ndarray:
    a = g.adjacency.astype(np.float64)
    n = g.num_nodes
    if params.theory_mode:
        return a if params.open_neighborhood else a + np.eye(n)
    if params.use_self_loops:
        a = a + np.eye(n)
    if params.degree_normalize:
        deg = a.sum(axis=1)
        inv = np.zeros(n)
        nz = deg > 0
        inv[nz] = 1.0 / np.sqrt(deg[nz])
        a = inv[:, None] * a * inv[None, :]
    return a


def prepare(g: Graph, params: ModelParams) -> Prepared:
    x = g.one_hot(params.num_colors)
    if params.conv is Conv.GAT:
        mask = g.adjacency.astype(bool) | np.eye(g.num_nodes, dtype=bool)
        return Prepared(x, None, None, mask, g.label)
    prop = propagation_matrix(g, params)
    return Prepared(x, prop, prop @ x, None, g.label)


def prepare_all(graphs, params: ModelParams) -> list[Prepared]:
    return [prepare(g, params) for g in graphs]


# -- forward ----------------------------------------------------------------


def leaves(params: ModelParams, requires_grad: bool = False) -> dict[str, ad.Tensor]:
    train = set(params.trainable()) if requires_grad else set()
    return {k: ad.Tensor(v, k in train) for k, v in params.arrays().items()}


def _activate(z: ad.Tensor, params: ModelParams) -> ad.Tensor:
    if params.nonlinearity is Nonlinearity.SIGMOID:
        return ad.sigmoid(z)
    return z


def node_reps(prep: Prepared, params: ModelParams, t: Mapping[str, ad.Tensor]) -> ad.Tensor:
    if params.theory_mode:
        return ad.constant(prep.agg_x)
    if params.conv is Conv.GCN:
        return _activate(ad.matmul(prep.agg_x, t["theta"]), params)
    d = params.width
    z = ad.matmul(prep.x, t["theta"])
    a2 = ad.transpose(ad.reshape(t["gat_attn"], (2, d)))
    s = ad.matmul(z, a2)  # (N, 2): column 0 scores the receiving node, column 1 the sender
    e = ad.leaky_relu(ad.outer_add(ad.column(s, 0), ad.column(s, 1)), GAT_SLOPE)
    alpha = ad.masked_softmax_rows(e, prep.mask)
    return _activate(ad.matmul(alpha, z), params)


@dataclass
class Forward:
    reps: ad.Tensor
    pooled: ad.Tensor
    logit: ad.Tensor
    alpha: ad.Tensor | None = None


def pool_reps(reps: ad.Tensor, params: ModelParams, t: Mapping[str, ad.Tensor]):
    kind = params.pooling
    if kind is Pooling.SUM:
        return ad.row_sum(reps), None
    if kind is Pooling.AVG:
        return ad.row_mean(reps), None
    if kind is Pooling.MAX:
        return ad.row_max(reps), None
    scores = ad.matmul(reps, t["attn"])
    alpha = ad.softmax_beta(ad.constant(scores.value), params.beta)
    return ad.softmax_pool(reps, scores, params.beta), alpha


def forward(prep: Prepared, params: ModelParams, t: Mapping[str, ad.Tensor] | None = None) -> Forward:
    if t is None:
        t = leaves(params)
    reps = node_reps(prep, params, t)
    pooled, alpha = pool_reps(reps, params, t)
    if params.use_linear_classifier:
        logit = ad.dot(t["classifier"], pooled)
    else:
        logit = pooled
    return Forward(reps, pooled, logit, alpha)


def gcn_forward(g: Graph, params: ModelParams) -> np.ndarray:
    """Node representations V (N x d) of the GCN layer."""
    if params.conv is not Conv.GCN:
        raise InvalidArgument("gcn_forward needs conv=GCN")
    return node_reps(prepare(g, params), params, leaves(params)).value


def gat_forward(g: Graph, params: ModelParams) -> np.ndarray:
    if params.conv is not Conv.GAT:
        raise InvalidArgument("gat_forward needs conv=GAT")
    return node_reps(prepare(g, params), params, leaves(params)).value


def pool(reps: np.ndarray, params: ModelParams) -> np.ndarray:
    pooled, _ = pool_reps(ad.constant(reps), params, leaves(params))
    return pooled.value[:, 0]


def attention_weights(reps: np.ndarray, params: ModelParams) -> np.ndarray:
    scores = reps @ params.attn
    return ad.softmax_beta(scores, params.beta).value[:, 0]


def logit(g: Graph | Prepared, params: ModelParams) -> float:
    prep = g if isinstance(g, Prepared) else prepare(g, params)
    return forward(prep, params).logit.item()


def predict(g: Graph | Prepared, params: ModelParams) -> float:
    return float(ad.sigmoid(logit(g, params)).item())


def predict_labels(graphs, params: ModelParams) -> np.ndarray:
    """Hard labels at the p >= 0.5 threshold (equivalently logit >= 0)."""
    return np.array([1 if logit(g, params) >= 0.0 else 0 for g in graphs], dtype=np.int64)


# -- checkpoints ------------------------------------------------------------


_FLAGS = ("use_self_loops", "degree_normalize", "use_linear_classifier",
          "theory_mode", "open_neighborhood")


def checkpoint_dict(params: ModelParams) -> dict:
    arrays = {}
    for name, arr in params.arrays().items():
        arrays[name] = {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
    return {
        "version": CHECKPOINT_VERSION,
        "pooling": params.pooling.value,
        "conv": params.conv.value,
        "nonlinearity": params.nonlinearity.value,
        "beta": params.beta,
        "flags": {f: getattr(params, f) for f in _FLAGS},
        "arrays": arrays,
    }


def save_checkpoint(params: ModelParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(params), fh, indent=1, sort_keys=True)
        fh.write("\n")


def params_from_checkpoint(obj: dict, location="checkpoint") -> ModelParams:
    if not isinstance(obj, dict):
        raise ParseError("checkpoint must be a JSON object", location)
    version = obj.get("version")
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version!r}", f"{location}:version")
    arrays = {}
    try:
        for name, rec in obj["arrays"].items():
            shape = tuple(int(s) for s in rec["shape"])
            data = np.array(rec["data"], dtype=np.float64)
            if data.size != int(np.prod(shape)):
                raise ParseError(f"{data.size} values for shape {shape}", f"{location}:arrays.{name}")
            arrays[name] = data.reshape(shape)
        flags = obj["flags"]
        return ModelParams(
            theta=arrays["theta"], attn=arrays["attn"], classifier=arrays["classifier"],
            gat_attn=arrays.get("gat_attn"), pooling=obj["pooling"], conv=obj["conv"],
            nonlinearity=obj["nonlinearity"], beta=obj["beta"],
            **{f: bool(flags[f]) for f in _FLAGS},
        )
    except KeyError as exc:
        raise ParseError(f"missing field {exc}", location) from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc), location) from None


def load_checkpoint(path) -> ModelParams:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", f"{path}:{exc.lineno}:{exc.colno}") from None
    return params_from_checkpoint(obj, str(path))
