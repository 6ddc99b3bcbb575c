"""Stage-wise training pipeline: optimizer, schedule, batching, and the three
finetuning stages over labeled, unlabeled, and retrieved splits.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, asdict, fields as dc_fields

import numpy as np

from .data import DatasetBundle
from .losses import (DebiasState, debias_offset, debias_update,
                     fixmatch_losses, ce_loss_t, softmax_t)
from .model import (Adapter, Gradients, LinearHead, Model, TemperatureSet,
                    backward, forward, init_head_from_text, make_adapter,
                    save_model)


@dataclass
class TrainConfig:
    method: str = "fixmatch"  # or "debiaspl"
    stages: tuple[int, ...] = (1, 2, 3)
    epochs_stage1: int = 50
    epochs_stage2: int = 50
    epochs_stage3: int = 10
    batch_size: int = 32
    mu: int = 5
    lr_head: float = 1e-4
    lr_adapter: float = 1e-6
    lr_temp: float = 1e-4
    weight_decay: float = 1e-2
    t_conf: float = 0.01
    sigma: float = 0.8
    t_loss_init: float = 0.07
    learn_t_loss: bool = True
    retrieval: bool = True
    init: str = "text"  # or "random"
    adapter_hidden: int | None = None
    debias_momentum: float = 0.999
    debias_coeff: float = 0.5
    reset_t_loss_between_stages: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.method not in ("fixmatch", "debiaspl"):
            raise ValueError(f"unknown method: {self.method}")
        if self.init not in ("text", "random"):
            raise ValueError(f"unknown init: {self.init}")
        if not set(self.stages) <= {1, 2, 3}:
            raise ValueError("stages must be a subset of {1, 2, 3}")
        if self.mu < 1:
            raise ValueError("mu must be >= 1")
        for name in ("batch_size", "epochs_stage1", "epochs_stage2", "epochs_stage3"):
            if getattr(self, name) < 0 or (name == "batch_size" and self.batch_size < 1):
                raise ValueError(f"invalid {name}")
        for name in ("lr_head", "lr_adapter", "lr_temp", "t_conf", "t_loss_init"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = {f.name for f in dc_fields(TrainConfig)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = TrainConfig(**d)
        if isinstance(cfg.stages, list):
            cfg.stages = tuple(cfg.stages)
        cfg.validate()
        return cfg


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError("step must be in [0, total_steps]")
    if total_steps == 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


class AdamW:
    """Decoupled-weight-decay Adam over a dict of named parameter arrays."""

    def __init__(self, betas=(0.9, 0.999), eps=1e-8):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lrs: dict[str, float], weight_decays: dict[str, float]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            lr, wd = lrs[name], weight_decays[name]
            if wd:
                p *= 1.0 - lr * wd
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class IndexCycler:
    """Endless shuffled index stream over a pool; reshuffles when exhausted."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n) if n else np.zeros(0, dtype=int)
        self.pos = 0

    def take(self, count: int) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0, dtype=int)
        out = []
        need = count
        while need > 0:
            avail = self.n - self.pos
            grab = min(avail, need)
            out.append(self.order[self.pos: self.pos + grab])
            self.pos += grab
            need -= grab
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
        return np.concatenate(out)


def predict(model: Model, x: np.ndarray) -> np.ndarray:
    return forward(model.head, model.adapter, x).argmax(axis=1)


def test_accuracy(model: Model, bundle: DatasetBundle) -> float:
    if bundle.test.count == 0:
        return float("nan")
    preds = predict(model, bundle.test.values)
    return float((preds == bundle.test_labels).mean())


def _make_model(bundle: DatasetBundle, cfg: TrainConfig) -> Model:
    if cfg.init == "text":
        head = init_head_from_text(bundle.text)
    else:
        rng = np.random.default_rng(cfg.seed + 7919)
        head = LinearHead(0.02 * rng.standard_normal((bundle.dim, bundle.num_classes)))
    adapter = make_adapter(bundle.dim, hidden=cfg.adapter_hidden, enabled=False,
                           seed=cfg.seed)
    temps = TemperatureSet(
        t_conf=cfg.t_conf,
        theta_x=float(np.log(cfg.t_loss_init)),
        theta_u=float(np.log(cfg.t_loss_init)),
        learn_x=cfg.learn_t_loss,
        learn_u=cfg.learn_t_loss,
    )
    return Model(head, adapter, temps)


def _params(model: Model) -> dict[str, np.ndarray]:
    return {
        "w": model.head.weights,
        "a1": model.adapter.a1,
        "a2": model.adapter.a2,
        "theta_x": np.array([model.temps.theta_x]),
        "theta_u": np.array([model.temps.theta_u]),
    }


def _apply_params(model: Model, params: dict[str, np.ndarray]) -> None:
    model.temps.theta_x = float(params["theta_x"][0])
    model.temps.theta_u = float(params["theta_u"][0])


def _group_settings(cfg: TrainConfig, lr_scale: float, adapter_on: bool):
    lrs = {
        "w": cfg.lr_head * lr_scale,
        "a1": cfg.lr_adapter * lr_scale if adapter_on else 0.0,
        "a2": cfg.lr_adapter * lr_scale if adapter_on else 0.0,
        "theta_x": cfg.lr_temp * lr_scale,
        "theta_u": cfg.lr_temp * lr_scale,
    }
    # no weight decay on the temperature parameters
    wds = {"w": cfg.weight_decay, "a1": cfg.weight_decay, "a2": cfg.weight_decay,
           "theta_x": 0.0, "theta_u": 0.0}
    return lrs, wds


def _supervised_stage(bundle: DatasetBundle, model: Model, cfg: TrainConfig,
                      stage: int, epochs: int, adapter_on: bool,
                      rng: np.random.Generator) -> list[dict]:
    """Shared loop for stage 1 (head only) and stage 3 (head + adapter) on L."""
    if bundle.labeled.count == 0:
        raise ValueError(f"stage {stage} requires labeled data")
    history: list[dict] = []
    if epochs == 0:
        return history
    model.adapter.enabled = adapter_on
    n = bundle.labeled.count
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = epochs * steps_per_epoch
    opt = AdamW()
    cycler = IndexCycler(n, rng)
    params = _params(model)
    step = 0
    for epoch in range(epochs):
        epoch_loss = 0.0
        lr_scale = 1.0
        for _ in range(steps_per_epoch):
            lr_scale = cosine_lr(step, total_steps, 1.0)
            idx = cycler.take(cfg.batch_size)
            x = bundle.labeled.values[idx]
            y = bundle.labeled_labels[idx]
            logits = forward(model.head, model.adapter, x)
            loss, dlogits, dt = ce_loss_t(logits, y, model.temps.t_loss_x)
            g = backward(model.head, model.adapter, model.temps, x, dlogits,
                         dloss_dt_x=dt)
            grads = {"w": g.w, "a1": g.a1, "a2": g.a2,
                     "theta_x": np.array([g.theta_x]),
                     "theta_u": np.array([g.theta_u])}
            lrs, wds = _group_settings(cfg, lr_scale, adapter_on)
            opt.step(params, grads, lrs, wds)
            _apply_params(model, params)
            epoch_loss += loss
            step += 1
        history.append({
            "stage": stage, "epoch": epoch,
            "loss_l": epoch_loss / steps_per_epoch, "loss_u": 0.0, "loss_r": 0.0,
            "utilization": 0.0, "pseudo_label_acc": float("nan"),
            "t_loss_x": model.temps.t_loss_x, "t_loss_u": model.temps.t_loss_u,
            "lr": cfg.lr_head * lr_scale,
            "test_acc": test_accuracy(model, bundle),
        })
    return history


def run_stage1(bundle: DatasetBundle, cfg: TrainConfig,
               model: Model | None = None) -> tuple[Model, list[dict]]:
    """Text-initialized linear probe on the few-shot labeled split."""
    cfg.validate()
    bundle.validate()
    if model is None:
        model = _make_model(bundle, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    history = _supervised_stage(bundle, model, cfg, stage=1,
                                epochs=cfg.epochs_stage1, adapter_on=False,
                                rng=rng)
    return model, history


def run_stage3(bundle: DatasetBundle, model: Model,
               cfg: TrainConfig) -> tuple[Model, list[dict]]:
    """Few-shot finetuning of head + adapter on L only."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    history = _supervised_stage(bundle, model, cfg, stage=3,
                                epochs=cfg.epochs_stage3, adapter_on=True,
                                rng=rng)
    return model, history


def run_stage2(bundle: DatasetBundle, model: Model,
               cfg: TrainConfig) -> tuple[Model, list[dict]]:
    """Semi-supervised finetuning over L (plus R when retrieval is on) and U.

    Each step consumes exactly batch_size labeled-path samples and
    mu * batch_size unlabeled-path samples. The unlabeled pool is U's weak
    views augmented with the label-stripped few-shot data; one strong view is
    drawn uniformly per unlabeled sample. An epoch is one pass over the pool.
    """
    cfg.validate()
    history: list[dict] = []
    if cfg.epochs_stage2 == 0:
        return model, history
    model.adapter.enabled = True

    # labeled-path pool: few-shot data, mixed with retrieved when RA is on
    lab_x = bundle.labeled.values
    lab_y = bundle.labeled_labels
    n_fewshot = len(lab_y)
    use_ra = cfg.retrieval and bundle.retrieved.count > 0
    if use_ra:
        lab_x = np.concatenate([lab_x, bundle.retrieved.values])
        lab_y = np.concatenate([lab_y, bundle.retrieved_labels])
    from_retrieved = np.zeros(len(lab_y), dtype=bool)
    from_retrieved[n_fewshot:] = True

    # unlabeled pool: U weak views + label-stripped few-shot data
    n_u = bundle.unlabeled_weak.count
    pool_weak = np.concatenate([bundle.unlabeled_weak.values, bundle.labeled.values])
    truth = None
    if bundle.unlabeled_truth is not None:
        truth = np.concatenate([bundle.unlabeled_truth, bundle.labeled_labels])
    n_pool = len(pool_weak)
    if n_pool == 0:
        import warnings
        warnings.warn("empty unlabeled pool: stage 2 degenerates to supervised finetuning")

    ss = np.random.SeedSequence([cfg.seed, 2])
    rng_lab, rng_unl, rng_view = (np.random.default_rng(s) for s in ss.spawn(3))
    lab_cycler = IndexCycler(len(lab_y), rng_lab)
    unl_cycler = IndexCycler(n_pool, rng_unl)
    unl_batch = cfg.mu * cfg.batch_size
    steps_per_epoch = max(1, math.ceil(n_pool / unl_batch)) if n_pool else 1
    total_steps = cfg.epochs_stage2 * steps_per_epoch
    opt = AdamW()
    params = _params(model)
    debias = (DebiasState.uniform(bundle.num_classes, cfg.debias_momentum,
                                  cfg.debias_coeff)
              if cfg.method == "debiaspl" else None)
    k = bundle.strong_views
    step = 0
    for epoch in range(cfg.epochs_stage2):
        acc_l = acc_u = acc_r = acc_util = 0.0
        sel_correct = sel_total = 0
        lr_scale = 1.0
        for _ in range(steps_per_epoch):
            lr_scale = cosine_lr(step, total_steps, 1.0)
            li = lab_cycler.take(cfg.batch_size)
            xl, yl = lab_x[li], lab_y[li]
            labeled_logits = forward(model.head, model.adapter, xl)

            if n_pool:
                ui = unl_cycler.take(unl_batch)
                xw = pool_weak[ui]
                # strong view: a random materialized view for U rows, the
                # sample itself for label-stripped few-shot rows
                views = rng_view.integers(0, k, size=len(ui))
                xs = np.empty_like(xw)
                is_u = ui < n_u
                if is_u.any():
                    rows = ui[is_u] * k + views[is_u]
                    xs[is_u] = bundle.unlabeled_strong.values[rows]
                if (~is_u).any():
                    xs[~is_u] = pool_weak[ui[~is_u]]
                weak_logits = forward(model.head, model.adapter, xw)
                strong_logits = forward(model.head, model.adapter, xs)
            else:
                ui = np.zeros(0, dtype=int)
                xw = xs = np.zeros((0, bundle.dim))
                weak_logits = strong_logits = np.zeros((0, bundle.num_classes))

            offset = debias_offset(debias) if debias is not None else None
            res = fixmatch_losses(weak_logits, strong_logits, labeled_logits,
                                  yl, model.temps.t_loss_x, model.temps.t_loss_u,
                                  cfg.t_conf, cfg.sigma, logit_offset=offset)
            if debias is not None and n_pool:
                debias = debias_update(debias, softmax_t(weak_logits, cfg.t_conf))

            g = backward(model.head, model.adapter, model.temps, xl,
                         res.d_labeled_logits, dloss_dt_x=res.dt_x)
            if n_pool:
                g.add_(backward(model.head, model.adapter, model.temps, xs,
                                res.d_strong_logits, dloss_dt_u=res.dt_u))
            grads = {"w": g.w, "a1": g.a1, "a2": g.a2,
                     "theta_x": np.array([g.theta_x]),
                     "theta_u": np.array([g.theta_u])}
            lrs, wds = _group_settings(cfg, lr_scale, adapter_on=True)
            opt.step(params, grads, lrs, wds)
            _apply_params(model, params)

            acc_l += _submean_loss(labeled_logits, yl, ~from_retrieved[li],
                                   model.temps.t_loss_x)
            acc_r += _submean_loss(labeled_logits, yl, from_retrieved[li],
                                   model.temps.t_loss_x)
            acc_u += res.loss_u
            acc_util += res.selection.utilization
            if truth is not None and n_pool:
                m = res.selection.mask
                sel_total += int(m.sum())
                sel_correct += int((res.selection.pseudo_labels[m] == truth[ui][m]).sum())
            step += 1
        history.append({
            "stage": 2, "epoch": epoch,
            "loss_l": acc_l / steps_per_epoch,
            "loss_u": acc_u / steps_per_epoch,
            "loss_r": acc_r / steps_per_epoch,
            "utilization": acc_util / steps_per_epoch,
            "pseudo_label_acc": (sel_correct / sel_total) if sel_total else float("nan"),
            "t_loss_x": model.temps.t_loss_x, "t_loss_u": model.temps.t_loss_u,
            "lr": cfg.lr_head * lr_scale,
            "test_acc": test_accuracy(model, bundle),
        })
    return model, history


def _submean_loss(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray,
                  t: float) -> float:
    if not mask.any():
        return 0.0
    loss, _, _ = ce_loss_t(logits[mask], labels[mask], t)
    return loss


def run_swift(bundle: DatasetBundle, cfg: TrainConfig) -> dict:
    """Run the requested stages in order and assemble a full run report."""
    cfg.validate()
    bundle.validate()
    model = _make_model(bundle, cfg)
    zero_shot = test_accuracy(model, bundle)
    history: list[dict] = []
    stage_accs: dict[str, float] = {"zero_shot": zero_shot}
    models: dict[int, Model] = {}
    for stage in sorted(cfg.stages):
        if stage == 1:
            model, h = run_stage1(bundle, cfg, model=model)
        elif stage == 2:
            model, h = run_stage2(bundle, model, cfg)
        else:
            model, h = run_stage3(bundle, model, cfg)
        if cfg.reset_t_loss_between_stages:
            model.temps.theta_x = float(np.log(cfg.t_loss_init))
            model.temps.theta_u = float(np.log(cfg.t_loss_init))
        history.extend(h)
        stage_accs[f"stage{stage}"] = test_accuracy(model, bundle)
        models[stage] = model
    final_util = 0.0
    for row in reversed(history):
        if row["stage"] == 2:
            final_util = row["utilization"]
            break
    report = {
        "config": _config_echo(cfg),
        "seed": cfg.seed,
        "history": history,
        "final": {
            "test_acc": test_accuracy(model, bundle),
            "utilization": final_util,
            "stage_accuracies": stage_accs,
        },
    }
    report["_model"] = model  # stripped before serialization
    report["_stage_models"] = models
    return report


def _config_echo(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["stages"] = list(cfg.stages)
    return d


def write_run_outputs(report: dict, out_dir: str) -> None:
    """Write report.json, metrics.csv, and per-stage checkpoints under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    models = report.pop("_stage_models", {})
    model = report.pop("_model", None)
    for stage, m in models.items():
        save_model(m, os.path.join(out_dir, f"stage{stage}"))
    if model is not None:
        save_model(model, os.path.join(out_dir, "final"))
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    columns = ["stage", "epoch", "loss_l", "loss_u", "loss_r", "utilization",
               "pseudo_label_acc", "t_loss_x", "t_loss_u", "lr", "test_acc"]
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in report["history"]:
            writer.writerow({k: row[k] for k in columns})
