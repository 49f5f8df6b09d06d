"""Two-stage training: regularized full-rank stage 1, truncated warmstart stage 2.

Stage 1 trains factored layers at full rank under the modified loss

    data_loss + 0.5 * lambda * (||U||_F^2 + ||V||_F^2)

whose minimizer matches trace-norm-regularized training, with separate
strengths for recurrent and nonrecurrent weight groups. Stage 2 truncates
each group via its SVD, keeps enough rank to explain a variance threshold
(or hit a parameter target), and fine-tunes without regularization.

The optimizer is SGD with momentum 0.9 and a multiplicative per-epoch
learning-rate decay, so a stage-2 run can either carry the stage-1
schedule forward or restart from three times the stage-1 final rate.
"""

from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import InvalidConfigError, TrainingDivergedError
from .lowrank import (
    FactoredLayer,
    SharingScheme,
    parameter_count,
    recover,
)
from .linalg import nondim_trace_norm_coeff, rank_for_variance, split_factors, svd
from .rnn import Batch, Network, init_network


class RegMode(enum.Enum):
    TRACE_NORM = "trace_norm"
    L2 = "l2"
    NONE = "none"


class LrRule(enum.Enum):
    THREE_TIMES_FINAL = "three_times_final"
    CARRY_OVER = "carry_over"


@dataclass(frozen=True)
class RegConfig:
    mode: RegMode = RegMode.NONE
    lambda_rec: float = 0.0
    lambda_nonrec: float = 0.0

    def __post_init__(self):
        if self.lambda_rec < 0 or self.lambda_nonrec < 0:
            raise InvalidConfigError("regularization strengths must be nonnegative")

    def strength(self, kind: str) -> float:
        if self.mode is RegMode.NONE:
            return 0.0
        return self.lambda_rec if kind == "recurrent" else self.lambda_nonrec


@dataclass(frozen=True)
class Schedule:
    total_epochs: int
    transition_epoch: int
    lr0: float = 0.5
    lr_decay: float = 0.95
    stage2_lr_rule: LrRule = LrRule.CARRY_OVER

    def __post_init__(self):
        if self.total_epochs < 1:
            raise InvalidConfigError("total_epochs must be positive")
        if not 1 <= self.transition_epoch <= self.total_epochs:
            raise InvalidConfigError("transition_epoch must lie in [1, total_epochs]")
        if self.lr0 <= 0 or not 0 < self.lr_decay <= 1:
            raise InvalidConfigError("bad learning-rate parameters")


@dataclass(frozen=True)
class TrainParams:
    lr0: float = 0.5
    lr_decay: float = 0.95
    batch_size: int = 32
    momentum: float = 0.9


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    nu: dict
    rank90: dict
    params: int


@dataclass
class RunRecord:
    epochs: list = field(default_factory=list)
    transition_epoch: int | None = None
    post_transition_val_loss: float | None = None

    def final_val_loss(self) -> float:
        return self.epochs[-1].val_loss


# -- regularization -----------------------------------------------------------


def regularized_loss(data_loss: float, layers, cfg: RegConfig) -> float:
    """Add the mode's penalty over tagged weight groups to the data loss.

    ``layers`` holds FactoredLayer instances (which carry their kind) or
    ``(matrix, kind)`` pairs for unfactored weights. Trace-norm mode
    requires every regularized group to be factored.
    """
    total = float(data_loss)
    for item in layers:
        if isinstance(item, FactoredLayer):
            mat, kind, factored = item, item.kind, True
        elif isinstance(item, tuple):
            mat, kind, factored = item[0], item[1], False
        else:
            mat, kind, factored = item, "nonrecurrent", False
        lam = cfg.strength(kind)
        if cfg.mode is RegMode.NONE or lam == 0.0:
            continue
        if cfg.mode is RegMode.TRACE_NORM:
            if not factored:
                raise InvalidConfigError("trace-norm regularization needs factored layers")
            total += 0.5 * lam * (np.sum(mat.u ** 2) + np.sum(mat.v ** 2))
        else:
            if factored:
                w = recover(mat)
            else:
                w = np.asarray(mat)
            total += 0.5 * lam * np.sum(w ** 2)
    return total


def penalty_value(net: Network, cfg: RegConfig) -> float:
    return regularized_loss(0.0, _tagged_slots(net, cfg), cfg)


def penalty_gradients(net: Network, cfg: RegConfig) -> dict:
    """Gradient of the penalty term alone: lambda*U / lambda*V (or lambda*W)."""
    grads = {}
    if cfg.mode is RegMode.NONE:
        return grads
    for name, slot, kind in net.regularizable():
        lam = cfg.strength(kind)
        if lam == 0.0:
            continue
        if isinstance(slot, FactoredLayer):
            if cfg.mode is RegMode.TRACE_NORM:
                grads[name + ".u"] = lam * slot.u
                grads[name + ".v"] = lam * slot.v
            else:
                # l2 on the recovered product
                w = recover(slot)
                grads[name + ".u"] = lam * (w @ slot.v.T)
                grads[name + ".v"] = lam * (slot.u.T @ w)
        else:
            if cfg.mode is RegMode.TRACE_NORM:
                raise InvalidConfigError("trace-norm regularization needs factored layers")
            grads[name] = lam * slot
    return grads


def _tagged_slots(net: Network, cfg: RegConfig):
    items = []
    for _, slot, kind in net.regularizable():
        if isinstance(slot, FactoredLayer):
            items.append(slot)
        else:
            items.append((slot, kind))
    return items


# -- optimizer ----------------------------------------------------------------


class SgdMomentum:
    def __init__(self, params: dict, momentum: float = 0.9):
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(arr) for name, arr in params.items()}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        for name, g in grads.items():
            v = self.velocity[name]
            v *= self.momentum
            v -= lr * g
            params[name] += v


# -- metrics ------------------------------------------------------------------


def evaluate(net: Network, batch: Batch) -> float:
    """Mean cross-entropy data loss, no penalty."""
    loss, _ = net.forward_loss(batch)
    return loss


def layer_metrics(net: Network) -> tuple[dict, dict]:
    """Per tracked weight group: nondimensional trace norm coeff and rank at 0.9."""
    nu, rank90 = {}, {}
    for name, slot, _ in net.regularizable():
        w = recover(slot) if isinstance(slot, FactoredLayer) else slot
        sigma = svd(w).sigma
        nu[name] = nondim_trace_norm_coeff(sigma)
        rank90[name] = rank_for_variance(sigma, 0.9)
    return nu, rank90


def network_parameter_count(net: Network) -> int:
    return parameter_count(net.parameters().values())


# -- the core loop ------------------------------------------------------------


def _minibatches(batch: Batch, order: np.ndarray, size: int):
    for lo in range(0, order.size, size):
        idx = order[lo:lo + size]
        yield Batch(x=batch.x[idx], lengths=batch.lengths[idx], labels=batch.labels[idx])


def run_epochs(net: Network, dataset: Dataset, cfg: RegConfig, epochs: int,
               params: TrainParams, seed: int, start_epoch: int = 0,
               record: RunRecord | None = None,
               initial_objective: float | None = None) -> RunRecord:
    """Train for ``epochs`` epochs, recording metrics after each one.

    ``start_epoch`` offsets the learning-rate schedule, so a stage-2 run
    can continue stage 1's decay. Raises TrainingDivergedError when the
    objective becomes non-finite or exceeds 1000x its initial value.
    """
    record = record if record is not None else RunRecord()
    rng = np.random.default_rng((seed, 0xD1CE))
    for _ in range(start_epoch):
        # align the shuffle stream with a run that trained from epoch 0,
        # so a stage-2 continuation sees the same epoch permutations
        rng.permutation(dataset.train.size)
    tensors = net.parameters()
    opt = SgdMomentum(tensors, momentum=params.momentum)
    if initial_objective is None:
        initial_objective = (evaluate(net, dataset.train) + penalty_value(net, cfg))
    for e in range(start_epoch, start_epoch + epochs):
        lr = params.lr0 * params.lr_decay ** e
        order = rng.permutation(dataset.train.size)
        seen, loss_sum = 0, 0.0
        for mb in _minibatches(dataset.train, order, params.batch_size):
            data_loss, caches = net.forward_loss(mb)
            objective = data_loss + penalty_value(net, cfg)
            grads = net.backward(caches)
            for name, g in penalty_gradients(net, cfg).items():
                grads[name] = grads[name] + g
            opt.step(tensors, grads, lr)
            loss_sum += objective * mb.size
            seen += mb.size
        train_loss = loss_sum / seen
        if not math.isfinite(train_loss) or train_loss > 1e3 * max(initial_objective, 1e-12):
            raise TrainingDivergedError(e)
        nu, rank90 = layer_metrics(net)
        record.epochs.append(EpochRecord(
            epoch=e,
            train_loss=train_loss,
            val_loss=evaluate(net, dataset.val),
            lr=lr,
            nu=nu,
            rank90=rank90,
            params=network_parameter_count(net),
        ))
    return record


# -- stage 1 ------------------------------------------------------------------


def check_stage1_parameterization(net: Network, cfg: RegConfig) -> None:
    """Trace-norm runs need full-rank factored groups; others need dense ones."""
    for name, slot, _ in net.regularizable():
        factored = isinstance(slot, FactoredLayer)
        if cfg.mode is RegMode.TRACE_NORM:
            if not factored:
                raise InvalidConfigError(f"{name}: trace-norm stage 1 requires factored groups")
            m, n = slot.shape
            if slot.rank != min(m, n):
                raise InvalidConfigError(f"{name}: stage 1 must start at full rank")
        elif factored:
            raise InvalidConfigError(f"{name}: {cfg.mode.value} stage 1 expects unfactored groups")


def train_stage1(net: Network, dataset: Dataset, cfg: RegConfig, epochs: int,
                 params: TrainParams, seed: int) -> RunRecord:
    check_stage1_parameterization(net, cfg)
    return run_epochs(net, dataset, cfg, epochs, params, seed)


def new_stage1_network(dataset: Dataset, cfg: RegConfig, hidden: list[int],
                       scheme: SharingScheme, seed: int) -> Network:
    """Seeded init with the parameterization stage 1 requires for cfg.mode."""
    rng = np.random.default_rng((seed, 0x1A17))
    task = dataset.config
    return init_network(rng, task.n_in, hidden, task.classes, scheme=scheme,
                        factored=cfg.mode is RegMode.TRACE_NORM)


# -- stage 2 ------------------------------------------------------------------


def warmstart_network(net: Network, threshold: float | None = None,
                      ranks: dict | None = None) -> tuple[Network, dict]:
    """Truncate every GRU weight group of a copy of ``net`` via its SVD.

    Either a variance ``threshold`` or an explicit per-group ``ranks`` map
    must be given. Returns the new network and the ranks used.
    """
    if (threshold is None) == (ranks is None):
        raise InvalidConfigError("give exactly one of threshold or ranks")
    if threshold is not None and not 0.0 < threshold <= 1.0:
        raise InvalidConfigError("threshold must lie in (0, 1]")
    out = copy.deepcopy(net)
    used = {}
    for i, layer in enumerate(out.gru_layers):
        for name, slot, kind in layer.regularizable(f"gru{i}"):
            w = recover(slot) if isinstance(slot, FactoredLayer) else slot
            res = svd(w)
            r = ranks[name] if ranks is not None else rank_for_variance(res.sigma, threshold)
            u, v = split_factors(res, r)
            short = name.split(".", 1)[1]
            layer.replace_slot(short, FactoredLayer(u=u, v=v, kind=kind))
            used[name] = r
    return out, used


def stage2_lr(params: TrainParams, rule: LrRule, stage1_epochs: int) -> tuple[TrainParams, int]:
    """Stage-2 learning-rate setup: (params, schedule start epoch)."""
    if rule is LrRule.THREE_TIMES_FINAL:
        final = params.lr0 * params.lr_decay ** max(stage1_epochs - 1, 0)
        return TrainParams(lr0=3.0 * final, lr_decay=params.lr_decay,
                           batch_size=params.batch_size, momentum=params.momentum), 0
    return params, stage1_epochs


def train_stage2(stage1_net: Network, dataset: Dataset, threshold: float,
                 epochs: int, params: TrainParams, seed: int,
                 lr_rule: LrRule = LrRule.THREE_TIMES_FINAL,
                 stage1_epochs: int = 0,
                 ranks: dict | None = None) -> tuple[Network, RunRecord]:
    """Warmstart from the truncated SVD of the stage-1 weights and fine-tune.

    Stage 2 always trains without regularization.
    """
    if ranks is not None:
        net, _ = warmstart_network(stage1_net, ranks=ranks)
    else:
        net, _ = warmstart_network(stage1_net, threshold=threshold)
    p2, start = stage2_lr(params, lr_rule, stage1_epochs)
    record = run_epochs(net, dataset, RegConfig(mode=RegMode.NONE), epochs, p2,
                        seed, start_epoch=start)
    return net, record


# -- parameter targeting ------------------------------------------------------


def ranks_for_target(net: Network, target_params: int) -> dict:
    """Per-group ranks from the largest uniform variance threshold whose
    total parameter count stays within the target."""
    spectra, dims = {}, {}
    fixed = network_parameter_count(net)
    for name, slot, _ in net.regularizable():
        w = recover(slot) if isinstance(slot, FactoredLayer) else slot
        spectra[name] = svd(w).sigma
        dims[name] = w.shape
        fixed -= (slot.u.size + slot.v.size) if isinstance(slot, FactoredLayer) else w.size

    def count(threshold: float) -> int:
        total = fixed
        for name, sigma in spectra.items():
            r = rank_for_variance(sigma, threshold)
            m, n = dims[name]
            total += r * (m + n)
        return total

    lo = 1e-12
    if count(lo) > target_params:
        raise InvalidConfigError(
            f"target of {target_params} parameters is below the rank-1 floor of {count(lo)}")
    hi = 1.0
    if count(hi) <= target_params:
        lo = hi
    else:
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if count(mid) <= target_params:
                lo = mid
            else:
                hi = mid
    return {name: rank_for_variance(sigma, lo) for name, sigma in spectra.items()}


def transition_experiment(dataset: Dataset, cfg: RegConfig, schedule: Schedule,
                          target_params: int, seed: int,
                          hidden: list[int] | None = None,
                          scheme: SharingScheme = SharingScheme.PARTIALLY_JOINT,
                          batch_size: int = 32) -> RunRecord:
    """Fixed total budget with a stage-1/stage-2 switch at the transition epoch.

    At the transition the network is truncated to the largest uniform
    variance threshold meeting ``target_params`` and training continues
    unregularized, the learning rate carrying on its single schedule. A
    transition at the final epoch degenerates to a pure stage-1 run.
    """
    hidden = hidden or [16]
    params = TrainParams(lr0=schedule.lr0, lr_decay=schedule.lr_decay, batch_size=batch_size)
    net = new_stage1_network(dataset, cfg, hidden, scheme, seed)
    record = RunRecord()
    train_stage1_epochs = schedule.transition_epoch
    run_epochs(net, dataset, cfg, train_stage1_epochs, params, seed, record=record)
    stage2_epochs = schedule.total_epochs - schedule.transition_epoch
    if stage2_epochs == 0:
        return record
    record.transition_epoch = schedule.transition_epoch
    ranks = ranks_for_target(net, target_params)
    net2, _ = warmstart_network(net, ranks=ranks)
    record.post_transition_val_loss = evaluate(net2, dataset.val)
    p2, start = stage2_lr(params, schedule.stage2_lr_rule, train_stage1_epochs)
    run_epochs(net2, dataset, RegConfig(mode=RegMode.NONE), stage2_epochs, p2, seed,
               start_epoch=start, record=record)
    return record


# -- sweeps -------------------------------------------------------------------


@dataclass
class SweepRow:
    mode: str
    lambda_rec: float
    lambda_nonrec: float
    seed: int
    final_train_loss: float | None
    final_val_loss: float | None
    nu: dict
    rank90: dict
    params: int | None
    status: str


def lambda_sweep(dataset: Dataset, grid, mode: RegMode, seeds, epochs: int,
                 params: TrainParams, hidden: list[int] | None = None,
                 scheme: SharingScheme = SharingScheme.PARTIALLY_JOINT) -> list[SweepRow]:
    """One trained run per (grid point, seed); diverged runs become failed rows."""
    if not grid:
        raise InvalidConfigError("sweep grid must not be empty")
    hidden = hidden or [16]
    rows = []
    for lam_rec, lam_nonrec in grid:
        cfg = RegConfig(mode=mode, lambda_rec=lam_rec, lambda_nonrec=lam_nonrec)
        for seed in seeds:
            net = new_stage1_network(dataset, cfg, hidden, scheme, seed)
            try:
                record = train_stage1(net, dataset, cfg, epochs, params, seed)
                last = record.epochs[-1]
                rows.append(SweepRow(
                    mode=mode.value, lambda_rec=lam_rec, lambda_nonrec=lam_nonrec,
                    seed=seed, final_train_loss=last.train_loss,
                    final_val_loss=last.val_loss, nu=last.nu, rank90=last.rank90,
                    params=last.params, status="ok"))
            except TrainingDivergedError as exc:
                rows.append(SweepRow(
                    mode=mode.value, lambda_rec=lam_rec, lambda_nonrec=lam_nonrec,
                    seed=seed, final_train_loss=None, final_val_loss=None,
                    nu={}, rank90={}, params=None,
                    status=f"diverged@{exc.epoch}"))
    return rows
