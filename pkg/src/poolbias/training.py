"""BCE loss, gradient-descent training, closed-form gradients and gradient checks."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgument, TrainingError
from .graph import Graph
from .model import (
    ModelParams,
    Pooling,
    Prepared,
    forward,
    leaves,
    node_reps,
    prepare,
    prepare_all,
)

log = logging.getLogger(__name__)


def bce_loss(logit, y: int) -> ad.Tensor:
    """-[y log p + (1-y) log(1-p)] with p = sigmoid(logit), as log(1+e^z) - y z."""
    z = logit if isinstance(logit, ad.Tensor) else ad.constant(logit)
    return ad.sub(ad.log1p_exp(z), ad.scale(z, float(y)))


def bce_direct(p: float, y: int) -> float:
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int | None = None  # None = full batch
    seed: int = 0
    shuffle: bool = True
    log_every: int = 1
    optimizer: str = "gd"
    # Adam moment decay rates; ignored by plain gradient descent
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidArgument("learning_rate must be >= 0")
        if self.epochs < 1:
            raise InvalidArgument("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if self.log_every < 1:
            raise InvalidArgument("log_every must be >= 1")
        if self.optimizer not in ("gd", "adam"):
            raise InvalidArgument(f"unknown optimizer {self.optimizer!r}")


@dataclass
class StepInfo:
    """What a monitor sees at a logged step (parameters after ``step`` updates)."""

    step: int
    epoch: int
    loss: float
    train_acc: float
    delta: dict[str, np.ndarray] | None
    prepared: Sequence[Prepared]


Monitor = Callable[[ModelParams, StepInfo], dict | None]


@dataclass
class TrainTrace:
    rows: list[dict] = field(default_factory=list)

    @property
    def steps(self) -> list[int]:
        return [r["step"] for r in self.rows]

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.rows]

    @property
    def final(self) -> dict:
        return self.rows[-1]

    def fieldnames(self) -> list[str]:
        names = ["step", "loss", "train_acc"]
        for r in self.rows:
            for k in r:
                if k not in names:
                    names.append(k)
        return names

    def write_csv(self, path) -> None:
        names = self.fieldnames()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r.get(k)) for k in names})


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if v is None:
        return ""
    return v


def graph_loss(prep: Prepared, params: ModelParams, t) -> tuple[ad.Tensor, float]:
    out = forward(prep, params, t)
    return bce_loss(out.logit, prep.label), out.logit.item()


def evaluate(prepared: Sequence[Prepared], params: ModelParams) -> tuple[float, float]:
    """Mean BCE loss and accuracy (threshold p >= 0.5) over labeled graphs."""
    t = leaves(params)
    total = 0.0
    correct = 0
    for prep in prepared:
        z = forward(prep, params, t).logit.item()
        total += float(np.logaddexp(0.0, z)) - prep.label * z
        correct += int((z >= 0.0) == (prep.label == 1))
    n = len(prepared)
    return total / n, correct / n


def batch_gradients(prepared: Sequence[Prepared], params: ModelParams):
    """Mean loss gradients over ``prepared`` (fixed-order accumulation)."""
    t = leaves(params, requires_grad=True)
    total = 0.0
    correct = 0
    n = len(prepared)
    for prep in prepared:
        loss, z = graph_loss(prep, params, t)
        ad.backward(ad.scale(loss, 1.0 / n))
        total += loss.item()
        correct += int((z >= 0.0) == (prep.label == 1))
    grads = {name: t[name].grad.reshape(getattr(params, name).shape) for name in params.trainable()}
    return grads, total / n, correct / n


class _Adam:
    def __init__(self, cfg: TrainConfig):
        self.b1, self.b2 = cfg.adam_betas
        self.eps = cfg.adam_eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def direction(self, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for k, g in grads.items():
            m = self.m.get(k, np.zeros_like(g)) * self.b1 + (1 - self.b1) * g
            v = self.v.get(k, np.zeros_like(g)) * self.b2 + (1 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            out[k] = mhat / (np.sqrt(vhat) + self.eps)
        return out


def _check_data(graphs: Sequence[Graph]) -> None:
    if not graphs:
        raise InvalidArgument("training data is empty")
    labels = [g.label for g in graphs]
    if any(y not in (0, 1) for y in labels):
        raise InvalidArgument("every training graph needs a 0/1 label")
    ones = sum(labels)
    if ones != len(labels) - ones:
        log.warning("class imbalance: %d positive vs %d negative graphs", ones, len(labels) - ones)


def train(model: ModelParams, data: Sequence[Graph], cfg: TrainConfig,
          monitors: Iterable[Monitor] = ()) -> tuple[ModelParams, TrainTrace]:
    """Minimise mean BCE by (mini)batch gradient descent.

    The input model is not modified.  Trace row ``k`` describes the
    parameters after ``k`` updates; row 0 is the initial state and the last
    row the returned model.  Monitors run at every logged row and may
    return extra columns.
    """
    _check_data(data)
    monitors = list(monitors)
    params = model.copy()
    prepared = prepare_all(data, params)
    n = len(prepared)
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    full = bs == n
    rng = np.random.default_rng(cfg.seed)
    adam = _Adam(cfg) if cfg.optimizer == "adam" else None
    trace = TrainTrace()
    last_delta = None
    step = 0

    def record(epoch, loss, acc):
        if not math.isfinite(loss):
            raise TrainingError(f"loss became {loss} at step {step} (epoch {epoch})")
        row = {"step": step, "epoch": epoch, "loss": loss, "train_acc": acc}
        info = StepInfo(step, epoch, loss, acc, last_delta, prepared)
        for mon in monitors:
            extra = mon(params, info)
            if extra:
                row.update(extra)
        trace.rows.append(row)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, bs):
            batch = [prepared[i] for i in order[start:start + bs]]
            grads, loss, acc = batch_gradients(batch, params)
            if not math.isfinite(loss):
                raise TrainingError(f"loss became {loss} at step {step} (epoch {epoch})")
            if step % cfg.log_every == 0:
                if full:
                    record(epoch, loss, acc)
                else:
                    record(epoch, *evaluate(prepared, params))
            direction = adam.direction(grads) if adam is not None else grads
            last_delta = {}
            for name, g in direction.items():
                delta = -cfg.learning_rate * g
                setattr(params, name, getattr(params, name) + delta)
                last_delta[name] = delta
            step += 1
    record(cfg.epochs, *evaluate(prepared, params))
    return params, trace


# -- closed-form gradients --------------------------------------------------


def closed_form_grads(g: Graph, y: int, model: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Hand-derived (dL/dw, dL/da) for the theory-mode attention model.

    dL/dw = (p - y) v_hat and
    dL/da = (p - y) / beta * sum_i alpha_i <w, v_i> (v_i - v_hat).
    """
    if not model.theory_mode:
        raise InvalidArgument("closed-form gradients need theory mode")
    if model.pooling is not Pooling.ATTN:
        raise InvalidArgument("closed-form gradients need attention pooling")
    v = prepare(g, model).agg_x
    s = v @ model.attn / model.beta
    alpha = np.exp(s - s.max())
    alpha /= alpha.sum()
    v_hat = alpha @ v
    w = model.classifier
    z = float(w @ v_hat)
    p = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
    dw = (p - y) * v_hat
    da = (p - y) / model.beta * ((alpha * (v @ w)) @ (v - v_hat))
    return dw, da


def autodiff_grads(g: Graph, y: int, model: ModelParams) -> dict[str, np.ndarray]:
    prep = prepare(g, model)
    prep.label = y
    t = leaves(model, requires_grad=True)
    loss, _ = graph_loss(prep, model, t)
    ad.backward(loss)
    return {name: t[name].grad.reshape(getattr(model, name).shape) for name in model.trainable()}


def finite_diff_grads(g: Graph, y: int, model: ModelParams, h: float = 1e-5) -> dict[str, np.ndarray]:
    prep = prepare(g, model)
    prep.label = y
    names = model.trainable()
    t = leaves(model)
    tensors = [t[name] for name in names]

    def f():
        return graph_loss(prep, model, t)[0].item()

    grads = ad.finite_diff_grad(f, tensors, h)
    return {name: gr.reshape(getattr(model, name).shape) for name, gr in zip(names, grads)}


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - b| scaled by the larger of the two gradients' sup-norms (floored)."""
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), floor)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


@dataclass
class GradCheckReport:
    tol: float
    max_rel_error: dict[str, float]
    closed_form_error: dict[str, float] = field(default_factory=dict)
    graphs_checked: int = 0
    skipped: int = 0

    @property
    def passed(self) -> bool:
        errs = list(self.max_rel_error.values()) + list(self.closed_form_error.values())
        return all(e < self.tol for e in errs)

    def lines(self) -> list[str]:
        out = [f"graphs checked: {self.graphs_checked} (skipped {self.skipped})"]
        for k, v in self.max_rel_error.items():
            out.append(f"  autodiff vs finite-diff [{k}]: {v:.3e}")
        for k, v in self.closed_form_error.items():
            out.append(f"  autodiff vs closed-form [{k}]: {v:.3e}")
        out.append(f"{'PASS' if self.passed else 'FAIL'} at tol {self.tol:g}")
        return out


def max_pool_margin(g: Graph, model: ModelParams) -> float:
    """Smallest gap between the top two node values over all coordinates."""
    reps = node_reps(prepare(g, model), model, leaves(model)).value
    if reps.shape[0] < 2:
        return math.inf
    top2 = np.sort(reps, axis=0)[-2:]
    return float(np.min(top2[1] - top2[0]))


def grad_check(model: ModelParams, graphs: Sequence[Graph], tol: float = 1e-4,
               h: float = 1e-5, max_margin: float = 1e-3) -> GradCheckReport:
    """Compare autodiff against central differences (and closed form in theory mode).

    Graphs without a label are checked with y = 1.  For MAX pooling, graphs
    whose per-coordinate maximum is not unique by ``max_margin`` are skipped.
    """
    errs: dict[str, float] = {}
    cf: dict[str, float] = {}
    checked = skipped = 0
    closed = model.theory_mode and model.pooling is Pooling.ATTN
    for g in graphs:
        y = 1 if g.label is None else g.label
        if model.pooling is Pooling.MAX and max_pool_margin(g, model) <= max_margin:
            skipped += 1
            continue
        a = autodiff_grads(g, y, model)
        f = finite_diff_grads(g, y, model, h)
        for name in a:
            errs[name] = max(errs.get(name, 0.0), relative_error(a[name], f[name]))
        if closed:
            dw, da = closed_form_grads(g, y, model)
            cf["classifier"] = max(cf.get("classifier", 0.0), relative_error(a["classifier"], dw))
            cf["attn"] = max(cf.get("attn", 0.0), relative_error(a["attn"], da))
        checked += 1
    return GradCheckReport(tol, errs, cf, checked, skipped)
