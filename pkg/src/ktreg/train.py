"""Optimization harness: Adam with Noam warm-up, padded batching, student
k-fold splits, per-epoch augmentation re-draws, and the hyperparameter grid
runner.

The batch objective is the per-sequence mean of each loss term, averaged
over the batch; `sequence_objective` is the single-sequence reference
composition (built from the scalar loss functions) and the batched builder
is tied to it by test.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import evaluation
from .augment import AugmentConfig, delete, derive_seed, insert, replace
from .core import AugmentedSequence, Dataset, InteractionSequence, SkillMap, window
from .losses import LossWeights, aug_losses, kt_bce, total_loss
from .model import DktParams, backward, pad_batch, unroll_fast, xavier_init

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

GRID_ALPHAS = (0.1, 0.3, 0.5)
GRID_LAMBDA_REGS = (1.0, 10.0, 50.0, 100.0)
GRID_LAMBDA_AUGS = (0.0, 1.0)


@dataclass(frozen=True)
class AugSpec:
    """One augmentation attached to the training objective."""

    kind: str  # replacement | insertion | deletion
    config: AugmentConfig
    weights: LossWeights
    reversed_reg: bool = False
    variant: str = "remaining"
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("replacement", "insertion", "deletion"):
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not self.label:
            if self.kind == "replacement":
                label = f"rep_{self.config.flavor}"
            else:
                prefix = "cor" if self.config.target_response == 1 else "incor"
                label = f"{prefix}_{'ins' if self.kind == 'insertion' else 'del'}"
            if self.reversed_reg:
                label = f"rev_{label}"
            object.__setattr__(self, "label", label)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 64
    base_lr: float = 0.001
    warmup_steps: int = 4000
    max_seq_len: int = 100
    seed: int = 0
    d_emb: int = 32
    d_hidden: int = 32
    augmentations: tuple[AugSpec, ...] = ()
    eval_every: int = 0  # validation AUC cadence in steps; 0 = off
    early_stop_patience: int = 0  # evals without improvement; 0 = fixed budget

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.max_seq_len < 2:
            raise ValueError("max_seq_len must be >= 2")
        object.__setattr__(self, "augmentations", tuple(self.augmentations))


@dataclass
class TrainResult:
    params: DktParams
    metrics: list[dict]
    n_dropped_short: int


def noam_lr(step: int, base_lr: float, warmup: int) -> float:
    """Warm-up then inverse-sqrt decay, peaking at base_lr at step == warmup."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return base_lr * np.sqrt(warmup) * min(step**-0.5, step * warmup**-1.5)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: DktParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.as_dict().items()},
            v={k: np.zeros_like(a) for k, a in params.as_dict().items()},
        )


def adam_step(
    params: DktParams, grads: dict[str, np.ndarray], state: AdamState, lr: float
) -> tuple[DktParams, AdamState]:
    """One bias-corrected Adam update; aborts on NaN gradients."""
    for name, g in grads.items():
        if np.any(np.isnan(g)):
            raise ValueError(f"NaN gradient in parameter {name!r}; aborting step")
    t = state.t + 1
    new_m, new_v, new_p = {}, {}, {}
    for name, p in params.as_dict().items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = ADAM_BETA1 * state.m[name] + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[name] + (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        new_m[name] = m
        new_v[name] = v
        new_p[name] = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return DktParams.from_dict(new_p), AdamState(new_m, new_v, t)


def make_batches(
    sequences: Sequence[InteractionSequence], batch_size: int, seed: int
) -> list[list[InteractionSequence]]:
    """Shuffle and chunk; the seed fully determines the batch order."""
    if not sequences:
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sequences))
    return [
        [sequences[i] for i in order[start : start + batch_size]]
        for start in range(0, len(sequences), batch_size)
    ]


def kfold_split(students: Sequence, k: int = 5, seed: int = 0) -> list[tuple[list, list]]:
    """Partition students into k folds (sizes within 1); returns (train, test) pairs."""
    students = list(dict.fromkeys(students))
    if len(students) < k:
        raise ValueError(f"need at least {k} students, got {len(students)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(students))
    folds = [[students[i] for i in order[j::k]] for j in range(k)]
    splits = []
    for j in range(k):
        test = folds[j]
        train = [s for i, f in enumerate(folds) if i != j for s in f]
        splits.append((train, test))
    return splits


def draw_augmentation(
    spec: AugSpec,
    seq: InteractionSequence,
    skills: Optional[SkillMap],
    n_questions: int,
    epoch: int = 0,
) -> AugmentedSequence:
    """Fresh draw for one sequence; the stream steps with the epoch index."""
    cfg = dataclasses.replace(
        spec.config, seed=derive_seed(spec.config.seed, "epoch", epoch)
    )
    if spec.kind == "replacement":
        return replace(seq, skills, n_questions, cfg)
    if spec.kind == "insertion":
        return insert(seq, n_questions, cfg)
    return delete(seq, cfg)


def sequence_objective(
    ptensors: dict, seq: InteractionSequence, terms: Sequence[tuple[AugmentedSequence, AugSpec]]
):
    """Reference single-sequence total loss built from the scalar loss functions."""
    q, r, _ = pad_batch([seq])
    trace_ori = ad.slice_(unroll_fast(ptensors, q, r), 0)
    l_ori = kt_bce(trace_ori, seq.responses(), range(len(seq)))
    per_aug = []
    for aug, spec in terms:
        qa, ra, _ = pad_batch([aug])
        trace_aug = ad.slice_(unroll_fast(ptensors, qa, ra), 0)
        l_aug, l_reg = aug_losses(
            trace_ori, trace_aug, aug,
            reversed_reg=spec.reversed_reg, variant=spec.variant,
        )
        per_aug.append((l_aug, l_reg, spec.weights))
    return total_loss(l_ori, per_aug)


def loss_and_grads(
    params: DktParams,
    seq: InteractionSequence,
    terms: Sequence[tuple[AugmentedSequence, AugSpec]],
) -> tuple[float, dict[str, np.ndarray]]:
    """Composite loss value and exact gradients for one sequence."""
    return backward(params, lambda pt: sequence_objective(pt, seq, terms))


# -- batched objective -------------------------------------------------


def _valid_mask(lengths: np.ndarray, width: int) -> np.ndarray:
    return np.arange(width)[None, :] < lengths[:, None]


def _row_mean(x, mask: np.ndarray):
    """Mean over each row's masked entries, then over rows; empty rows give 0."""
    counts = np.maximum(mask.sum(axis=1), 1).astype(np.float64)
    return ad.mean(ad.div(ad.sum_(ad.mul(x, mask.astype(np.float64)), axis=1), counts))


def _masked_bce(probs, labels: np.ndarray, mask: np.ndarray):
    y = labels.astype(np.float64)
    pc = ad.clip(probs, 1e-7, 1.0 - 1e-7)
    point = -(y * ad.log(pc) + (1.0 - y) * ad.log(1.0 - pc))
    return _row_mean(point, mask)


def _batch_objective(
    ptensors: dict,
    seqs: Sequence[InteractionSequence],
    draws: Sequence[Sequence[AugmentedSequence]],
    specs: Sequence[AugSpec],
    components: Optional[dict] = None,
):
    """Vectorized batch total loss (equals the mean of sequence_objective)."""
    q, r, lengths = pad_batch(seqs)
    B, T = q.shape
    valid = _valid_mask(lengths, T)
    p_ori = unroll_fast(ptensors, q, r)
    l_ori = _masked_bce(p_ori, r, valid)

    per_aug = []
    for spec, batch_draws in zip(specs, draws):
        qa, ra, len_a = pad_batch(batch_draws)
        Ta = qa.shape[1]
        valid_a = _valid_mask(len_a, Ta)
        p_aug = unroll_fast(ptensors, qa, ra)

        if spec.kind == "replacement":
            keep = valid.copy()
            for b, aug in enumerate(batch_draws):
                for t in aug.touched:
                    keep[b, t] = False
            l_aug = _masked_bce(p_aug, ra, keep)
            if spec.variant == "remaining":
                reg_mask = keep
            elif spec.variant == "replaced_only":
                reg_mask = valid & ~keep
            elif spec.variant == "full":
                reg_mask = valid
            else:
                raise ValueError(f"unknown variant {spec.variant!r}")
            l_reg = _row_mean((p_ori - p_aug) ** 2, reg_mask)

        elif spec.kind == "insertion":
            bce_mask = np.zeros_like(valid_a)
            sig_img = np.zeros((B, T), dtype=np.intp)
            for b, aug in enumerate(batch_draws):
                img = aug.sigma_image()
                bce_mask[b, img] = True
                sig_img[b, : img.size] = img
            l_aug = _masked_bce(p_aug, ra, bce_mask)
            aligned = ad.gather_rows(p_aug, sig_img)
            effective = spec.config.target_response
            if spec.reversed_reg:
                effective = 1 - effective
            diff = p_ori - aligned if effective == 1 else aligned - p_ori
            l_reg = _row_mean(ad.relu(diff), valid)

        else:  # deletion
            l_aug = _masked_bce(p_aug, ra, valid_a)
            dom = np.zeros((B, Ta), dtype=np.intp)
            for b, aug in enumerate(batch_draws):
                d = aug.sigma_domain()
                dom[b, : d.size] = d
            survivors = ad.gather_rows(p_ori, dom)
            effective = spec.config.target_response
            if spec.reversed_reg:
                effective = 1 - effective
            diff = p_aug - survivors if effective == 1 else survivors - p_aug
            l_reg = _row_mean(ad.relu(diff), valid_a)

        per_aug.append((l_aug, l_reg, spec.weights))
        if components is not None:
            components[f"l_aug_{spec.label}"] = l_aug
            components[f"l_reg_{spec.label}"] = l_reg

    if components is not None:
        components["l_ori"] = l_ori
    return total_loss(l_ori, per_aug)


def prepare_training_sequences(
    dataset: Dataset, max_seq_len: int
) -> tuple[list[InteractionSequence], int]:
    """Window every history; drop chunks shorter than 2 (no past context)."""
    kept, dropped = [], 0
    for seq in dataset.sequences:
        for chunk in window(seq, max_seq_len):
            if len(chunk) >= 2:
                kept.append(chunk)
            else:
                dropped += 1
    return kept, dropped


def train_run(
    dataset: Dataset,
    skills: Optional[SkillMap],
    cfg: TrainConfig,
    val_data: Optional[Dataset] = None,
) -> TrainResult:
    """Fixed-budget training of the total objective; fully seed-deterministic.

    Each batch runs one original forward plus one fresh augmented forward per
    configured augmentation, all sharing parameters. Metrics records carry
    the step, learning rate, every loss component, and (at the configured
    cadence) the validation AUC; no timestamps.
    """
    train_seqs, dropped = prepare_training_sequences(dataset, cfg.max_seq_len)
    if not train_seqs:
        raise ValueError("no trainable sequences after windowing")

    params = xavier_init(
        dataset.n_questions, cfg.d_emb, cfg.d_hidden, derive_seed(cfg.seed, "init")
    )
    state = AdamState.zeros(params)
    metrics: list[dict] = []
    step = 0
    best_auc, best_params, stale = -1.0, None, 0

    for epoch in range(cfg.epochs):
        batches = make_batches(
            train_seqs, cfg.batch_size, derive_seed(cfg.seed, "batches", epoch)
        )
        for batch in batches:
            step += 1
            lr = noam_lr(step, cfg.base_lr, cfg.warmup_steps)
            draws = [
                [draw_augmentation(spec, s, skills, dataset.n_questions, epoch)
                 for s in batch]
                for spec in cfg.augmentations
            ]
            components: dict = {}
            loss, grads = backward(
                params,
                lambda pt: _batch_objective(pt, batch, draws, cfg.augmentations,
                                            components),
            )
            params, state = adam_step(params, grads, state, lr)
            record = {"step": step, "lr": float(lr), "loss": loss}
            for key, tensor in components.items():
                record[key] = float(tensor.value) if isinstance(tensor, ad.Tensor) \
                    else float(tensor)
            if val_data is not None and cfg.eval_every and step % cfg.eval_every == 0:
                auc = evaluation.evaluate_dataset(params, val_data, cfg.max_seq_len)
                record["val_auc"] = auc
                if cfg.early_stop_patience:
                    if auc > best_auc:
                        best_auc, best_params, stale = auc, params, 0
                    else:
                        stale += 1
                        if stale >= cfg.early_stop_patience:
                            metrics.append(record)
                            return TrainResult(best_params, metrics, dropped)
            metrics.append(record)

    if cfg.early_stop_patience and best_params is not None:
        params = best_params
    return TrainResult(params, metrics, dropped)


def subset_by_students(dataset: Dataset, students: Iterable) -> Dataset:
    wanted = set(students)
    return Dataset(
        tuple(s for s in dataset.sequences if s.student_id in wanted),
        dataset.n_questions,
    )


def grid_run(
    dataset: Dataset,
    skills: Optional[SkillMap],
    base_cfg: TrainConfig,
    alphas: Sequence[float] = GRID_ALPHAS,
    lambda_regs: Sequence[float] = GRID_LAMBDA_REGS,
    lambda_augs: Sequence[float] = GRID_LAMBDA_AUGS,
    k_folds: int = 5,
) -> list[dict]:
    """One single-augmentation run per grid cell per fold, per configured kind.

    Returns one row per cell with per-fold AUCs, their mean/std, and a
    best-cell flag per augmentation label.
    """
    if not base_cfg.augmentations:
        raise ValueError("grid_run needs at least one augmentation in the base config")
    students = [s.student_id for s in dataset.sequences]
    folds = kfold_split(students, k_folds, derive_seed(base_cfg.seed, "folds"))
    rows = []
    for spec in base_cfg.augmentations:
        for alpha, l_reg, l_aug in itertools.product(alphas, lambda_regs, lambda_augs):
            cell_spec = dataclasses.replace(
                spec,
                config=dataclasses.replace(spec.config, alpha=alpha),
                weights=LossWeights(lambda_aug=l_aug, lambda_reg=l_reg),
            )
            aucs = []
            for fold_i, (train_students, test_students) in enumerate(folds):
                cfg = dataclasses.replace(
                    base_cfg,
                    augmentations=(cell_spec,),
                    seed=derive_seed(base_cfg.seed, spec.label, alpha, l_reg,
                                     l_aug, fold_i),
                )
                result = train_run(
                    subset_by_students(dataset, train_students), skills, cfg
                )
                aucs.append(
                    evaluation.evaluate_dataset(
                        result.params,
                        subset_by_students(dataset, test_students),
                        cfg.max_seq_len,
                    )
                )
            rows.append(
                {
                    "label": spec.label,
                    "kind": spec.kind,
                    "alpha": alpha,
                    "lambda_reg": l_reg,
                    "lambda_aug": l_aug,
                    "fold_aucs": aucs,
                    "mean_auc": float(np.mean(aucs)),
                    "std_auc": float(np.std(aucs)),
                }
            )
    best = {}
    for row in rows:
        cur = best.get(row["label"])
        if cur is None or row["mean_auc"] > cur["mean_auc"]:
            best[row["label"]] = row
    for row in rows:
        row["best"] = row is best[row["label"]]
    return rows
