"""Desk-scale end-to-end training of a tiny network with gated
normalization layers on synthetic data.

The model is a stack of 1x1 channel-mixing convolutions, each followed by
a normalization layer with learnable gates and a ReLU, then global average
pooling and a linear classifier.  It exists to demonstrate that the gate
ratios converge to one-hot selections under the linear radius schedule and
to produce per-step trajectory logs.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NotConvergedError, TrainingFailedError
from .layer import (EVAL, TRAIN, SsnParams, ssn_backward, ssn_forward,
                    update_running_stats, validate_omega)
from .simplex import RadiusSchedule, SimplexGeometry, Stage, schedule_radius


@dataclass
class ToyModelConfig:
    layer_widths: list[int] = field(default_factory=lambda: [8, 8, 8, 8])
    ssn_layer_count: int = 4
    omega: tuple[str, ...] = ("IN", "BN", "LN")
    batch_size: int = 40
    channels: int = 3
    height: int = 8
    width: int = 8
    seed: int = 0
    n_classes: int = 4
    gn_groups: int = 2

    def __post_init__(self):
        validate_omega(self.omega)
        if self.ssn_layer_count < 1:
            raise InvalidInputError("need at least one gated layer")
        if self.ssn_layer_count != len(self.layer_widths):
            raise InvalidInputError("ssn_layer_count must match len(layer_widths)")
        if min(self.layer_widths) < 1 or min(self.batch_size, self.channels,
                                             self.height, self.width) < 1:
            raise InvalidInputError("all dimensions must be positive")


@dataclass
class OptimizerConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    z_lr_ratio: float = 0.1
    z_init: float = 1.0
    epochs: int = 20
    schedule: RadiusSchedule | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidInputError("lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError("momentum must be in [0, 1)")


@dataclass(frozen=True)
class LayerRecord:
    p: tuple
    pp: tuple
    frozen_mean: bool
    frozen_var: bool
    stage: str
    z_grad_mean: tuple
    z_grad_var: tuple
    # grad_z . (p0 - u), recorded while the mean gate sits on the circle.
    circle_dot: float | None


@dataclass(frozen=True)
class StepRecord:
    step: int
    r: float
    loss: float
    layers: tuple[LayerRecord, ...]


@dataclass
class TrajectoryLog:
    omega: tuple[str, ...]
    layer_count: int
    rows: list[StepRecord]
    final_accuracy: float

    def to_csv(self, path=None) -> str:
        header = ["step", "r", "loss"]
        for i in range(1, self.layer_count + 1):
            header += [f"L{i}_p_{n}" for n in self.omega]
            header += [f"L{i}_pp_{n}" for n in self.omega]
            header += [f"L{i}_frozen_mean", f"L{i}_frozen_var", f"L{i}_stage"]
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(header)
        for row in self.rows:
            vals = [row.step, f"{row.r:.17g}", f"{row.loss:.17g}"]
            for lr_ in row.layers:
                vals += [f"{v:.17g}" for v in lr_.p]
                vals += [f"{v:.17g}" for v in lr_.pp]
                vals += [int(lr_.frozen_mean), int(lr_.frozen_var), lr_.stage]
            writer.writerow(vals)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def make_synthetic_dataset(seed: int, n_samples: int, dims: tuple[int, int, int],
                           n_classes: int, separation: float = 2.0,
                           noise: float = 1.0):
    """Reproducible Gaussian-cluster classification data.

    Labels cycle through the classes so every class is populated; identical
    seeds give identical bytes."""
    if n_classes < 2:
        raise InvalidInputError("need at least two classes")
    if n_samples < n_classes:
        raise InvalidInputError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(n_classes, *dims)) * separation
    labels = np.arange(n_samples) % n_classes
    x = means[labels] + noise * rng.normal(size=(n_samples, *dims))
    return x, labels


class _ToyNet:
    """Hand-written forward/backward for the toy architecture."""

    def __init__(self, cfg: ToyModelConfig, opt: OptimizerConfig, rng):
        self.cfg = cfg
        self.omega = cfg.omega
        k = len(cfg.omega)
        widths = [cfg.channels] + list(cfg.layer_widths)
        self.mix = [rng.normal(size=(widths[i + 1], widths[i])) *
                    math.sqrt(2.0 / widths[i]) for i in range(len(cfg.layer_widths))]
        self.ssn = [SsnParams.init(w_out, k, z_init=opt.z_init)
                    for w_out in cfg.layer_widths]
        self.head_w = rng.normal(size=(cfg.layer_widths[-1], cfg.n_classes)) * \
            math.sqrt(1.0 / cfg.layer_widths[-1])
        self.head_b = np.zeros(cfg.n_classes)

    def forward(self, x, r, mode=TRAIN):
        caches = []
        h = x
        for mix_w, params in zip(self.mix, self.ssn):
            pre = np.einsum("oc,nchw->nohw", mix_w, h)
            params.mode = mode
            y, cache = ssn_forward(pre, params, r, self.omega, self.cfg.gn_groups)
            act = np.maximum(y, 0.0)
            caches.append((h, pre, cache, y))
            h = act
        pooled = h.mean(axis=(2, 3))
        logits = pooled @ self.head_w + self.head_b
        return logits, (caches, h, pooled)

    def loss_and_grads(self, x, labels, r):
        logits, (caches, feat, pooled) = self.forward(x, r, TRAIN)
        n = x.shape[0]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss = -log_probs[np.arange(n), labels].mean()
        probs = np.exp(log_probs)
        g_logits = probs.copy()
        g_logits[np.arange(n), labels] -= 1.0
        g_logits /= n

        grads = {"head_w": pooled.T @ g_logits, "head_b": g_logits.sum(axis=0),
                 "mix": [], "ssn": []}
        g_pooled = g_logits @ self.head_w.T
        _, _, _, h, w = (0, 0, 0, feat.shape[2], feat.shape[3])
        g_h = np.broadcast_to(g_pooled[:, :, None, None] / (h * w), feat.shape).copy()
        for (inp, pre, cache, y), mix_w in zip(reversed(caches), reversed(self.mix)):
            g_y = g_h * (y > 0.0)
            ssn_g = ssn_backward(cache, g_y)
            grads["ssn"].append(ssn_g)
            grads["mix"].append(np.einsum("nohw,nchw->oc", ssn_g.x, inp))
            g_h = np.einsum("oc,nohw->nchw", mix_w, ssn_g.x)
        grads["mix"].reverse()
        grads["ssn"].reverse()
        return loss, grads, caches

    def accuracy(self, x, labels, r):
        logits, _ = self.forward(x, r, TRAIN)
        return float((logits.argmax(axis=1) == labels).mean())


def _one_hot_index(p: np.ndarray):
    """Index of the hot entry when p is exactly one-hot, else None."""
    if float(np.max(p)) == 1.0:
        return int(np.argmax(p))
    return None


def train(model: ToyModelConfig, opt: OptimizerConfig, data,
          radius_fn=None) -> TrajectoryLog:
    """SGD with momentum; gate logits use lr * z_lr_ratio, no weight decay,
    and stop updating once their ratio goes one-hot.  Returns the full
    per-step trajectory."""
    x_all, y_all = data
    x_all = np.asarray(x_all, dtype=np.float64)
    y_all = np.asarray(y_all)
    n = x_all.shape[0]
    steps_per_epoch = math.ceil(n / model.batch_size)
    total_steps = opt.epochs * steps_per_epoch
    geom = SimplexGeometry(len(model.omega))
    sched = opt.schedule
    if sched is None and radius_fn is None:
        sched = RadiusSchedule(total_steps=total_steps, clamp_at=geom.r_circum)

    rng = np.random.default_rng(model.seed)
    net = _ToyNet(model, opt, rng)
    vel = {"head_w": np.zeros_like(net.head_w), "head_b": np.zeros_like(net.head_b),
           "mix": [np.zeros_like(w) for w in net.mix],
           "ssn": [{"gamma": np.zeros_like(p.gamma), "beta": np.zeros_like(p.beta),
                    "z_mean": np.zeros_like(p.gate.z_mean),
                    "z_var": np.zeros_like(p.gate.z_var)} for p in net.ssn]}

    def _sgd(param, grad, v, lr, wd):
        v *= opt.momentum
        v += grad + wd * param
        param -= lr * v

    rows = []
    step = 0
    z_lr = opt.lr * opt.z_lr_ratio
    for _ in range(opt.epochs):
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = order[b * model.batch_size:(b + 1) * model.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            if radius_fn is not None:
                r = float(radius_fn(step))
            else:
                r = schedule_radius(sched, min(step, sched.total_steps))
            try:
                loss, grads, caches = net.loss_and_grads(xb, yb, r)
            except InvalidInputError:
                # Non-finite activations mean the parameters blew up.
                raise TrainingFailedError(step, "activations are not finite")
            if not math.isfinite(loss):
                raise TrainingFailedError(step, "loss is not finite")

            layer_records = []
            for li, (params, ssn_g) in enumerate(zip(net.ssn, grads["ssn"])):
                cache = caches[li][2]
                if "BN" in cache.stats and params.mode == TRAIN:
                    update_running_stats(params, *cache.stats["BN"])
                p, pp = cache.p_res.p, cache.pp_res.p
                circle_dot = None
                if cache.p_res.stage == Stage.CIRCLE:
                    lv = cache.p_res.levels[0]
                    circle_dot = float(ssn_g.z_mean @ (lv.p_sm - lv.u))
                layer_records.append(LayerRecord(
                    p=tuple(p), pp=tuple(pp),
                    frozen_mean=params.gate.frozen_mean,
                    frozen_var=params.gate.frozen_var,
                    stage=cache.p_res.stage.value,
                    z_grad_mean=tuple(ssn_g.z_mean),
                    z_grad_var=tuple(ssn_g.z_var),
                    circle_dot=circle_dot))
            rows.append(StepRecord(step=step, r=r, loss=float(loss),
                                   layers=tuple(layer_records)))

            _sgd(net.head_w, grads["head_w"], vel["head_w"], opt.lr, opt.weight_decay)
            _sgd(net.head_b, grads["head_b"], vel["head_b"], opt.lr, opt.weight_decay)
            for li, params in enumerate(net.ssn):
                _sgd(net.mix[li], grads["mix"][li], vel["mix"][li], opt.lr,
                     opt.weight_decay)
                ssn_g = grads["ssn"][li]
                _sgd(params.gamma, ssn_g.gamma, vel["ssn"][li]["gamma"], opt.lr,
                     opt.weight_decay)
                _sgd(params.beta, ssn_g.beta, vel["ssn"][li]["beta"], opt.lr,
                     opt.weight_decay)
                if not params.gate.frozen_mean:
                    _sgd(params.gate.z_mean, ssn_g.z_mean,
                         vel["ssn"][li]["z_mean"], z_lr, 0.0)
                if not params.gate.frozen_var:
                    _sgd(params.gate.z_var, ssn_g.z_var,
                         vel["ssn"][li]["z_var"], z_lr, 0.0)
                # Freeze on the first exactly one-hot ratio; never unfreeze.
                cache = caches[li][2]
                if _one_hot_index(cache.p_res.p) is not None:
                    params.gate.frozen_mean = True
                if _one_hot_index(cache.pp_res.p) is not None:
                    params.gate.frozen_var = True
            step += 1

    final_r = rows[-1].r if rows else 0.0
    acc = net.accuracy(x_all, y_all, final_r)
    log = TrajectoryLog(omega=model.omega, layer_count=model.ssn_layer_count,
                        rows=rows, final_accuracy=acc)
    log.net = net  # exposed for inference-time checks
    return log


def selection_histogram(log: TrajectoryLog):
    """Counts of layers selecting each normalizer at the final step, kept
    separately for the mean and variance gates."""
    if not log.rows:
        raise NotConvergedError("empty trajectory")
    last = log.rows[-1]
    mean_counts = {name: 0 for name in log.omega}
    var_counts = {name: 0 for name in log.omega}
    for lr_ in last.layers:
        mi = _one_hot_index(np.array(lr_.p))
        vi = _one_hot_index(np.array(lr_.pp))
        if mi is None or vi is None:
            raise NotConvergedError("final-step ratios are not all one-hot")
        mean_counts[log.omega[mi]] += 1
        var_counts[log.omega[vi]] += 1
    return {"mean": mean_counts, "var": var_counts}


def insensitivity_radius_fn(total_steps: int, ri_step: int, geom: SimplexGeometry):
    """Piecewise-linear radius: hit the inscribed radius at ``ri_step``,
    then continue to the circumradius by the final step."""
    if not 0 < ri_step < total_steps:
        raise InvalidInputError("ri_step must lie strictly inside the run")
    r_i, r_c = geom.r_inscribed, geom.r_circum
    last = total_steps - 1

    def fn(step: int) -> float:
        if step <= ri_step:
            return r_i * step / ri_step
        return min(r_c, r_i + (r_c - r_i) * (step - ri_step) / (last - ri_step))
    return fn


def schedule_insensitivity_experiment(model: ToyModelConfig, opt: OptimizerConfig,
                                      data, ri_steps) -> list[float]:
    """Final train accuracy for schedules crossing the inscribed radius at
    each requested step."""
    n = np.asarray(data[0]).shape[0]
    total_steps = opt.epochs * math.ceil(n / model.batch_size)
    geom = SimplexGeometry(len(model.omega))
    accs = []
    for s in ri_steps:
        fn = insensitivity_radius_fn(total_steps, int(s), geom)
        log = train(model, opt, data, radius_fn=fn)
        accs.append(log.final_accuracy)
    return accs
