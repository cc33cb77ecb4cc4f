"""Training loop, evaluation, and the ablation runner.

Per step: shuffle order comes from the seeded PRNG, every sample in the batch
runs forward + backward on its own tape (gradients accumulate across the
batch in fixed order), gradients are scaled to the batch mean, and Adam
updates. Deterministic end to end for a fixed config and seed.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .data import FeaturePack, pack_samples
from .model import Model, make_sample, model_for_pack
from .optim import Adam, scale_grads
from .rng import Rng
from .tensor import ContractError, Tape

# distinct stream from parameter init (which uses Rng(seed) inside Model)
SHUFFLE_SALT = 0x9E3779B97F4A7C15


@dataclass
class RunReport:
    seed: int
    config_hash: str
    epochs: list = field(default_factory=list)   # (epoch, train_loss, val_metric, seconds)
    step_losses: list = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = float("nan")
    wall_time: float = 0.0

    def rows(self):
        return [(e, l, m, s) for (e, l, m, s) in self.epochs]


def _metric_better(task: str, a: float, b: float) -> bool:
    """Is a better than b? Accuracy rises, count MSE falls."""
    if np.isnan(b):
        return True
    return a < b if task == "count" else a > b


def metric_from_predictions(predictions, labels, task: str) -> float:
    """Accuracy for choice tasks, mean squared error for counting."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if task == "count":
        return float(np.mean((predictions - labels) ** 2))
    return float(np.mean(predictions == labels))


def prepare_samples(pack: FeaturePack, model: Model) -> list:
    vocab = pack.vocabulary()
    return [make_sample(s, vocab, model.vocab, model.cfg) for s in pack_samples(pack)]


def evaluate_samples(model: Model, samples: list) -> float:
    preds = []
    labels = []
    for s in samples:
        _, pred = model.forward(s)
        preds.append(pred)
        labels.append(s.label)
    return metric_from_predictions(preds, labels, model.cfg.task)


def evaluate(model: Model, pack: FeaturePack) -> float:
    """Counting: mean of (postprocessed prediction - label)^2; else accuracy."""
    if model.cfg.task != pack.task:
        raise ContractError(f"model task {model.cfg.task} but pack task {pack.task}")
    return evaluate_samples(model, prepare_samples(pack, model))


def train(cfg: Config, train_pack: FeaturePack, val_pack: FeaturePack,
          out_dir: str | None = None, stop_train_acc: float | None = None,
          log=None):
    """Train per the config; returns (model, RunReport).

    Writes report.csv, loss_trace.txt, loss_curve.png and checkpoint_best/ +
    checkpoint_final/ under out_dir when given. stop_train_acc halts early
    once training accuracy reaches the target (choice tasks only).
    """
    cfg.validate()
    if cfg.task != train_pack.task:
        raise ContractError(f"config task '{cfg.task}' but pack task '{train_pack.task}'")
    model = model_for_pack(cfg, train_pack)
    params = model.trainable_parameters()
    opt = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)
    rng = Rng(cfg.seed ^ SHUFFLE_SALT)

    train_samples = prepare_samples(train_pack, model)
    val_samples = prepare_samples(val_pack, model) if val_pack is not None else []
    report = RunReport(seed=cfg.seed, config_hash=cfg.hash())
    batch_size = cfg.effective_batch()

    t_start = time.time()
    best_dir = os.path.join(out_dir, "checkpoint_best") if out_dir else None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    if cfg.epochs == 0 and out_dir:
        model.save(os.path.join(out_dir, "checkpoint_final"))

    order = list(range(len(train_samples)))
    for epoch in range(cfg.epochs):
        t0 = time.time()
        rng.shuffle(order)
        losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            opt.zero_grad()
            batch_loss = 0.0
            for j in idx:
                with Tape() as tape:
                    loss, _ = model.forward(train_samples[j])
                    tape.backward(loss)
                batch_loss += loss.item()
            if not np.isfinite(batch_loss):
                raise ContractError(f"non-finite loss at epoch {epoch}: {batch_loss}")
            scale_grads(params, 1.0 / len(idx))
            opt.step()
            step_loss = batch_loss / len(idx)
            losses.append(step_loss)
            if len(report.step_losses) < 10:
                report.step_losses.append(step_loss)
        train_loss = float(np.mean(losses))

        val_metric = evaluate_samples(model, val_samples) if val_samples else float("nan")
        seconds = time.time() - t0
        report.epochs.append((epoch, train_loss, val_metric, seconds))
        if log:
            log(f"epoch {epoch}: train_loss={train_loss:.4f} val={val_metric:.4f} ({seconds:.1f}s)")
        if val_samples and _metric_better(cfg.task, val_metric, report.best_metric):
            report.best_metric = val_metric
            report.best_epoch = epoch
            if best_dir:
                model.save(best_dir)
        if stop_train_acc is not None and cfg.task != "count":
            train_acc = evaluate_samples(model, train_samples)
            if train_acc >= stop_train_acc:
                if log:
                    log(f"early stop at epoch {epoch}: train accuracy {train_acc:.3f}")
                break

    report.wall_time = time.time() - t_start
    if out_dir:
        model.save(os.path.join(out_dir, "checkpoint_final"))
        if best_dir and not os.path.isdir(best_dir):
            model.save(best_dir)
        _write_report_files(report, out_dir)
    return model, report


def _write_report_files(report: RunReport, out_dir: str) -> None:
    from .report import save_loss_curve, write_report_csv

    write_report_csv(report, os.path.join(out_dir, "report.csv"))
    with open(os.path.join(out_dir, "loss_trace.txt"), "w") as f:
        for v in report.step_losses:
            f.write(f"{v:.17g}\n")
    save_loss_curve(report, os.path.join(out_dir, "loss_curve.png"))


# ---------------------------------------------------------------------------
# ablation variants (Table-4-shaped comparison)

VARIANTS = {
    "baseline": dict(use_objects=False, relation="none",
                     use_spatial_loc=False, use_temporal_loc=False),
    "of": dict(use_objects=True, relation="none",
               use_spatial_loc=False, use_temporal_loc=False),
    "of_gcn": dict(use_objects=True, relation="gcn",
                   use_spatial_loc=False, use_temporal_loc=False),
    "of_fc": dict(use_objects=True, relation="fc",
                  use_spatial_loc=False, use_temporal_loc=False),
    "of_lstm": dict(use_objects=True, relation="lstm",
                    use_spatial_loc=False, use_temporal_loc=False),
    "full": dict(use_objects=True, relation="gcn",
                 use_spatial_loc=True, use_temporal_loc=True),
    "fc_loc": dict(use_objects=True, relation="fc",
                   use_spatial_loc=True, use_temporal_loc=True),
    "lstm_loc": dict(use_objects=True, relation="lstm",
                     use_spatial_loc=True, use_temporal_loc=True),
    "loc_t": dict(use_objects=True, relation="gcn",
                  use_spatial_loc=False, use_temporal_loc=True),
    "loc_s": dict(use_objects=True, relation="gcn",
                  use_spatial_loc=True, use_temporal_loc=False),
}


def variant_config(base: Config, name: str) -> Config:
    if name not in VARIANTS:
        raise ContractError(
            f"unknown ablation variant '{name}' (known: {', '.join(sorted(VARIANTS))})"
        )
    return base.replace(**VARIANTS[name])


def ablate(base: Config, variants: list, train_pack: FeaturePack,
           val_pack: FeaturePack, out_dir: str | None = None, log=None):
    """Train each variant with the same seed and data; returns
    [(name, final_val_metric, report)] in the requested order."""
    results = []
    for name in variants:
        cfg = variant_config(base, name)
        sub = os.path.join(out_dir, name) if out_dir else None
        if log:
            log(f"variant {name}: relation={cfg.relation} objects={cfg.use_objects} "
                f"spatial={cfg.use_spatial_loc} temporal={cfg.use_temporal_loc}")
        model, report = train(cfg, train_pack, val_pack, out_dir=sub, log=log)
        metric = evaluate(model, val_pack)
        results.append((name, metric, report))
        if log:
            log(f"variant {name}: metric={metric:.4f}")
    if out_dir:
        from .report import save_ablation_chart, write_ablation_csv

        write_ablation_csv(results, os.path.join(out_dir, "ablation.csv"))
        save_ablation_chart(results, os.path.join(out_dir, "ablation.png"),
                            task=base.task)
    return results
