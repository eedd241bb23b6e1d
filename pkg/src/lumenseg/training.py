"""Dice-loss optimization, cross validation, and hyperparameter search.

Training minimizes a soft relaxation of the Dice loss with Adam. The
hyperparameter protocol: a grid over learning rate and batch size (and
temporal kernel count for the extensions) scored by mean validation Dice
over patient-wise folds, then one final training run on a 60/40 frame split
of all training patients.
"""

import copy
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .ensemble import binarize, confusion, dsc
from .errors import ConfigError, NumericError, ShapeError
from .models import build_model, default_config
from .tensor import Tensor

LR_GRID = (1e-3, 1e-4, 1e-5, 1e-6)
BS_GRID = (4, 8, 16)
NK_GRID = (3, 8, 16)


def dice_loss(pred, target, eps=1e-6):
    """Soft Dice loss 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps).

    Differentiable in pred; equal to the count form 1 - 2TP/(2TP+FN+FP) for
    binary predictions in the eps->0 limit, with both-empty resolving to 0.
    """
    if isinstance(target, np.ndarray):
        target = Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise ShapeError(f"dice_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    inter = T.tsum(T.mul(pred, target))
    total = T.add(T.tsum(pred), T.tsum(target))
    eps_t = Tensor(np.asarray(eps, dtype=pred.dtype))
    ratio = T.div(T.add(inter + inter, eps_t), T.add(total, eps_t))
    return 1.0 - ratio


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 4
    epochs: int = 60
    seed: int = 0
    early_stop_patience: int = 20
    dice_eps: float = 1e-6
    threshold: float = 0.5
    record_train_dsc: bool = True  # per-epoch eval over the training set


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)  # rows: dicts per epoch
    best_epoch: int = -1
    best_val_dsc: float = -1.0

    def rows(self):
        return self.epochs


def _stack(samples):
    inputs = np.stack([s[0] for s in samples])
    targets = np.stack([s[1] for s in samples])[..., None]
    return inputs, targets


def _mean_dsc(model, samples, threshold):
    if not samples:
        return float("nan")
    inputs, targets = _stack(samples)
    preds = model.predict_batch(inputs.astype(model.dtype))
    scores = []
    for k in range(preds.shape[0]):
        mask = binarize(preds[k], threshold)
        scores.append(dsc(confusion(mask, targets[k, ..., 0].astype(np.uint8))))
    return float(np.mean(scores))


def train_model(model, train_samples, val_samples, cfg, target_train_dsc=None):
    """Optimize the model in place; returns (model, history).

    Samples are (input, mask) pairs: (p,q,c) frames for single-frame
    variants, (3,p,q,c) triplets for temporal ones. The best checkpoint by
    validation Dice is restored before returning (falling back to training
    Dice when no validation samples are given). ``target_train_dsc`` stops
    the run early once the training Dice reaches it.
    """
    if not train_samples:
        raise ConfigError("train_model needs a nonempty training set")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    history = TrainHistory()
    best_state = None
    since_best = 0
    n = len(train_samples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        model.train()
        for start in range(0, n, cfg.batch_size):
            batch = [train_samples[i] for i in order[start : start + cfg.batch_size]]
            inputs, targets = _stack(batch)
            opt.zero_grad()
            pred = model(Tensor(inputs.astype(model.dtype)))
            loss = dice_loss(pred, targets.astype(model.dtype), eps=cfg.dice_eps)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"training diverged: non-finite loss {value} at epoch {epoch}, "
                    f"batch starting at {start} (lr={cfg.learning_rate}, bs={cfg.batch_size})"
                )
            losses.append(value)
            loss.backward()
            opt.step()
        want_train_dsc = cfg.record_train_dsc or target_train_dsc is not None
        train_dsc = _mean_dsc(model, train_samples, cfg.threshold) if want_train_dsc else float("nan")
        val_dsc = _mean_dsc(model, val_samples, cfg.threshold)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "train_dsc": train_dsc,
            "val_dsc": val_dsc,
        }
        history.epochs.append(row)
        score = val_dsc if val_samples else train_dsc
        if score > history.best_val_dsc:
            history.best_val_dsc = score
            history.best_epoch = epoch
            best_state = _snapshot_state(model)
            since_best = 0
        else:
            since_best += 1
        if target_train_dsc is not None and train_dsc >= target_train_dsc:
            break
        if val_samples and since_best > cfg.early_stop_patience:
            break
    if best_state is not None:
        _restore_state(model, best_state)
    return model, history


def _snapshot_state(model):
    return [(name, arr.copy()) for name, arr in model.named_state()]


def _restore_state(model, state):
    from .models import _state_holders

    holders = dict(_state_holders(model))
    for name, arr in state:
        holders[name](arr)


# ---------------------------------------------------------------------------
# cross validation and grid search


@dataclass
class FoldSplit:
    fold_id: int
    train_patient_ids: list
    val_patient_ids: list


def kfold_split(patients, k=5, seed=0):
    """Partition patients into k folds, each patient validating exactly once."""
    patients = list(patients)
    if len(patients) < k:
        raise ConfigError(f"need at least {k} patients for {k}-fold CV, got {len(patients)}")
    order = list(np.random.default_rng(seed).permutation(len(patients)))
    shuffled = [patients[i] for i in order]
    groups = np.array_split(np.arange(len(shuffled)), k)
    folds = []
    for fold_id, idx in enumerate(groups):
        val = [shuffled[i] for i in idx]
        train = [p for p in shuffled if p not in val]
        folds.append(FoldSplit(fold_id, train, val))
    return folds


@dataclass
class GridPoint:
    learning_rate: float
    batch_size: int
    temporal_kernels: int = 0


def default_trainer(variant, size, seed):
    """Build-and-train callback used by grid_search and train_final."""

    def run(point, train_samples, val_samples, epochs):
        config = default_config(
            variant,
            size=size,
            temporal_kernels=point.temporal_kernels or None,
        )
        model = build_model(config, seed=seed)
        cfg = TrainConfig(
            learning_rate=point.learning_rate,
            batch_size=point.batch_size,
            epochs=epochs,
            seed=seed,
        )
        model, history = train_model(model, train_samples, val_samples, cfg)
        return model, history.best_val_dsc

    return run


def grid_search(trainer, samples_by_patient, lr_grid=LR_GRID, bs_grid=BS_GRID,
                nk_grid=(0,), folds=5, seed=0, epochs=10, threads=1):
    """Exhaustive grid search scored by mean validation Dice across folds.

    ``samples_by_patient`` maps patient id -> list of (input, mask) samples.
    Returns (best GridPoint, table rows). Ties break toward the smaller
    learning rate, then the smaller batch size, then fewer kernels.
    """
    if not lr_grid or not bs_grid or not nk_grid:
        raise ConfigError("grid_search needs nonempty grids")
    fold_splits = kfold_split(sorted(samples_by_patient), k=folds, seed=seed)
    points = [
        GridPoint(lr, bs, nk)
        for lr in lr_grid
        for bs in bs_grid
        for nk in nk_grid
    ]
    jobs = []
    for point in points:
        for fold in fold_splits:
            jobs.append((point, fold))

    def run_job(job):
        point, fold = job
        train_samples = [s for p in fold.train_patient_ids for s in samples_by_patient[p]]
        val_samples = [s for p in fold.val_patient_ids for s in samples_by_patient[p]]
        _, val_dsc = trainer(point, train_samples, val_samples, epochs)
        return point, fold.fold_id, val_dsc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_job, jobs))
    else:
        results = [run_job(job) for job in jobs]

    table = [
        {
            "learning_rate": point.learning_rate,
            "batch_size": point.batch_size,
            "temporal_kernels": point.temporal_kernels,
            "fold": fold_id,
            "val_dsc": val_dsc,
        }
        for point, fold_id, val_dsc in results
    ]
    best = None
    best_key = None
    for point in points:
        scores = [r["val_dsc"] for r in table if (
            r["learning_rate"] == point.learning_rate
            and r["batch_size"] == point.batch_size
            and r["temporal_kernels"] == point.temporal_kernels
        )]
        mean = float(np.mean(scores))
        key = (mean, -point.learning_rate, -point.batch_size, -point.temporal_kernels)
        if best_key is None or key > best_key:
            best, best_key = point, key
    return best, table


def split_train_val(samples, train_fraction=0.6, seed=0):
    """Frame-level split; the odd frame goes to the training side."""
    n = len(samples)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.ceil(train_fraction * n))
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:]]
    return train, val


def train_final(trainer, all_train_samples, chosen, epochs, seed=0):
    """Final training run at the chosen hyperparameters on a 60/40 split."""
    train_samples, val_samples = split_train_val(all_train_samples, 0.6, seed=seed)
    model, _ = trainer(chosen, train_samples, val_samples, epochs)
    return model
