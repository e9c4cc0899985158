"""End-to-end training (plain penalty and homotopy-staged) and reporting.

The penalty baseline minimizes the self-supervised loss on the original
problem for up to ``epochs`` epochs with step-decay and early stopping.
Homotopy training walks the lambda schedule: every intermediate stage
trains at most ``stage_epochs`` epochs at a frozen learning rate, carries
its best weights into the next stage, and the final (lam = 1) stage runs
with the baseline budget and the step-decay schedule enabled. Validation
loss for early stopping is always the current stage's own loss.

Evaluation is decoupled from the trajectory: reports score the original
problem on a seeded 100-instance subset of the held-out test split.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DivergenceError
from .homotopy import ALL_TRANSFORMS, HomotopyState, schedule_lambdas
from .nn import PolicyNet, weights_hash
from .optim import Adam, EarlyStopping, StepDecaySchedule
from .problem import PenaltyWeights, assemble_penalty_loss, violation_metrics


@dataclass
class TrainConfig:
    """Everything a training run depends on, resolvable from one JSON doc."""

    problem: dict
    method: str = "penalty"
    transforms: tuple = ()
    delta_lambda: float = 0.05
    eps_h: float = 0.01
    eps_l: float = 0.0
    eps_minus: float = 0.0
    eps_plus: float = 1.0
    delta_short: float = 1e-3
    w_eq: float = 50.0
    w_ineq: float = 50.0
    w_pullup: float = 1e6
    w_warm: float = 1e6
    hidden_layers: int = 2
    hidden_width: int = 200
    activation: str = "relu"
    epochs: int = 1000
    stage_epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    lr_step: int = 100
    lr_gamma: float = 0.1
    lr_floor: float = 1e-5
    warmup: int = 50
    patience: int = 200
    stage_warmup: int = 50
    stage_patience: int = 50
    dataset_size: int = 50_000
    split: tuple = (0.8, 0.1, 0.1)
    eval_subset: int = 100
    seed: int = 0
    data_seed: int = 0

    def __post_init__(self):
        if self.method not in ("penalty", "homotopy"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.method == "homotopy" and not self.transforms:
            raise ConfigError("homotopy training needs at least one transform")
        unknown = set(self.transforms) - set(ALL_TRANSFORMS)
        if unknown:
            raise ConfigError(f"unknown transforms {sorted(unknown)}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.split}")
        for name in ("epochs", "stage_epochs", "batch_size", "dataset_size", "eval_subset"):
            if getattr(self, name) < 0 or (name != "epochs" and getattr(self, name) == 0):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    def penalty_weights(self):
        return PenaltyWeights(self.w_eq, self.w_ineq, self.w_pullup, self.w_warm)

    def homotopy_state(self, lam, step_index=0):
        return HomotopyState(lam=lam, delta_lambda=self.delta_lambda,
                             step_index=step_index, transforms=frozenset(self.transforms),
                             eps_h=self.eps_h, eps_l=self.eps_l,
                             eps_minus=self.eps_minus, eps_plus=self.eps_plus,
                             delta_short=self.delta_short)


def split_indices(n, ratio, seed):
    """Seeded shuffle then contiguous split; disjoint and exhaustive."""
    if n < 10:
        raise ConfigError(f"dataset too small to split: {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(n * ratio[0])
    n_val = int(n * ratio[1])
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split_dataset(dataset, ratio, seed):
    dataset = np.asarray(dataset)
    tr, va, te = split_indices(len(dataset), ratio, seed)
    return dataset[tr], dataset[va], dataset[te]


@dataclass
class StageRecord:
    stage: int
    lam: float
    epochs_run: int
    best_val_loss: float
    start_hash: str
    end_hash: str


@dataclass
class TrainResult:
    net: PolicyNet
    log: list = field(default_factory=list)  # rows: epoch, stage, lam, train, val, lr
    stages: list = field(default_factory=list)
    final_val_loss: float = np.inf
    total_steps: int = 0

    def log_csv(self):
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["epoch", "stage", "lambda", "train_loss", "val_loss", "lr"])
        for row in self.log:
            w.writerow([row[0], row[1], f"{row[2]:.17g}", f"{row[3]:.17g}",
                        f"{row[4]:.17g}", f"{row[5]:.17g}"])
        return out.getvalue()


def _loss_value(problem, net, xi, weights, state):
    x = net.forward(xi)
    return assemble_penalty_loss(problem, x, xi, weights, state)


def _run_stage(problem, net, cfg, xi_train, xi_val, weights, state, *,
               stage, lam, max_epochs, warmup, patience, sched, shuffle_rng,
               result, epoch_offset):
    """One training stage; returns epochs run. Restores best stage weights."""
    opt = Adam(net.parameters(), lr=sched.lr_at(0))
    stopper = EarlyStopping(warmup=warmup, patience=patience,
                            initial_weights=net.get_weights())
    start_hash = weights_hash(net)
    n_train = len(xi_train)
    epochs_run = 0
    for epoch in range(max_epochs):
        opt.lr = sched.lr_at(epoch)
        perm = shuffle_rng.permutation(n_train)
        running = 0.0
        for lo in range(0, n_train, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            xi = xi_train[idx]
            opt.zero_grad()
            loss = _loss_value(problem, net, xi, weights, state)
            if not np.isfinite(loss.value[0, 0]):
                raise DivergenceError(epoch_offset + epoch)
            ad.backward(loss)
            for p in opt.params:
                if p.grad is not None and not np.isfinite(p.grad).all():
                    raise DivergenceError(epoch_offset + epoch,
                                          f"non-finite gradient at epoch {epoch_offset + epoch}")
            opt.step()
            result.total_steps += 1
            running += loss.value[0, 0] * len(idx)
        train_loss = running / n_train
        val_loss = _loss_value(problem, net, xi_val, weights, state).value[0, 0]
        if not np.isfinite(val_loss):
            raise DivergenceError(epoch_offset + epoch)
        result.log.append((epoch_offset + epoch, stage, lam, train_loss, val_loss, opt.lr))
        epochs_run = epoch + 1
        if stopper.update(epoch, val_loss, [p.value for p in net.parameters()]):
            break
    if stopper.best_weights is not None:
        net.set_weights(stopper.best_weights)
    best = stopper.best_loss if np.isfinite(stopper.best_loss) else np.inf
    result.stages.append(StageRecord(stage, lam, epochs_run, best,
                                     start_hash, weights_hash(net)))
    return epochs_run, best


def _build_net(problem, cfg):
    dims = [problem.dim_xi] + [cfg.hidden_width] * cfg.hidden_layers + [problem.dim_x]
    return PolicyNet(dims, activation=cfg.activation, seed=np.random.SeedSequence(cfg.seed))


def train_baseline(problem, cfg, dataset):
    """Plain penalty training on the original problem; returns best weights."""
    xi_train, xi_val, _ = split_dataset(dataset, cfg.split, cfg.data_seed)
    net = _build_net(problem, cfg)
    net.fit_standardizer(xi_train)
    result = TrainResult(net=net)
    weights = cfg.penalty_weights()
    sched = StepDecaySchedule(cfg.lr, cfg.lr_step, cfg.lr_gamma, cfg.lr_floor, enabled=True)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    _, best = _run_stage(problem, net, cfg, xi_train, xi_val, weights, None,
                         stage=0, lam=1.0, max_epochs=cfg.epochs,
                         warmup=cfg.warmup, patience=cfg.patience, sched=sched,
                         shuffle_rng=shuffle_rng, result=result, epoch_offset=0)
    result.final_val_loss = best
    return result


def train_homotopy(problem, cfg, dataset):
    """Staged training over the lambda schedule with warm-started weights.

    Intermediate stages: at most ``stage_epochs`` epochs, frozen lr. The
    final stage trains like the baseline (full budget, decay enabled) so
    the true problem is polished from the continuation warm start.
    """
    if not cfg.transforms:
        raise ConfigError("homotopy training needs at least one transform")
    xi_train, xi_val, _ = split_dataset(dataset, cfg.split, cfg.data_seed)
    net = _build_net(problem, cfg)
    net.fit_standardizer(xi_train)
    result = TrainResult(net=net)
    weights = cfg.penalty_weights()
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])

    lams = schedule_lambdas(cfg.delta_lambda)
    epoch_offset = 0
    best = np.inf
    for k, lam in enumerate(lams):
        state = cfg.homotopy_state(lam, step_index=k)
        final = lam == 1.0
        sched = StepDecaySchedule(cfg.lr, cfg.lr_step, cfg.lr_gamma, cfg.lr_floor,
                                  enabled=final)
        epochs_run, best = _run_stage(
            problem, net, cfg, xi_train, xi_val, weights, state,
            stage=k, lam=lam,
            max_epochs=cfg.epochs if final else cfg.stage_epochs,
            warmup=cfg.warmup if final else cfg.stage_warmup,
            patience=cfg.patience if final else cfg.stage_patience,
            sched=sched, shuffle_rng=shuffle_rng, result=result,
            epoch_offset=epoch_offset)
        epoch_offset += epochs_run
    result.final_val_loss = best
    return result


def train(problem, cfg, dataset):
    if cfg.method == "penalty":
        return train_baseline(problem, cfg, dataset)
    return train_homotopy(problem, cfg, dataset)


# evaluation -----------------------------------------------------------


@dataclass
class EvalReport:
    """Aggregated test-subset metrics for one trained method."""

    label: str
    stats: object  # ViolationStats
    subset: np.ndarray

    def aggregate(self, name):
        return self.stats.aggregate(name)


def eval_subset_indices(n_test, subset_size, seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))
    if subset_size >= n_test:
        return np.arange(n_test)
    return np.sort(rng.choice(n_test, size=subset_size, replace=False))


def evaluate(policy, problem, test_xi, label="policy", subset_size=100, seed=0):
    """Score a trained policy on the seeded test subset (original problem)."""
    test_xi = np.asarray(test_xi)
    subset = eval_subset_indices(len(test_xi), subset_size, seed)
    stats = violation_metrics(problem, policy, test_xi[subset])
    return EvalReport(label=label, stats=stats, subset=subset)


def evaluate_from_config(policy, problem, cfg, dataset, label):
    _, _, xi_test = split_dataset(dataset, cfg.split, cfg.data_seed)
    return evaluate(policy, problem, xi_test, label=label,
                    subset_size=cfg.eval_subset, seed=cfg.data_seed)


# reporting ------------------------------------------------------------

_ACOPF_COLUMNS = (
    ("Obj", "objective", "obj"),
    ("Mean eq.", "mean_eq", "mean"),
    ("Max eq.", "max_eq", "max"),
    ("Mean ineq.", "mean_ineq", "mean"),
    ("Max ineq.", "max_ineq", "max"),
)

_SIMPLE_COLUMNS = (
    ("Obj", "objective", "obj"),
    ("Mean viol", "mean_ineq", "mean"),
    ("Max viol", "max_ineq", "max"),
)


def _fmt(mean, std, kind):
    if kind == "obj":
        return f"{mean:.2f}"
    if kind == "mean":
        return f"{mean:.4f} ({std:.4f})"
    return f"{mean:.3f} ({std:.3f})"


def format_table(reports, kind="acopf"):
    """Aligned text table, one row per method, columns in Table-style order."""
    if not reports:
        raise ConfigError("format_table needs at least one report")
    columns = _ACOPF_COLUMNS if kind == "acopf" else _SIMPLE_COLUMNS
    header = ["Method"] + [c[0] for c in columns]
    rows = [header]
    for rep in reports:
        row = [rep.label]
        for _, attr, fmt in columns:
            row.append(_fmt(*rep.aggregate(attr), fmt))
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def table_csv(reports, kind="acopf"):
    """Machine-readable companion of format_table (full float precision)."""
    columns = _ACOPF_COLUMNS if kind == "acopf" else _SIMPLE_COLUMNS
    out = io.StringIO()
    w = csv.writer(out)
    head = ["method"]
    for name, attr, _ in columns:
        head.extend([f"{attr}_mean", f"{attr}_std"])
    w.writerow(head)
    for rep in reports:
        row = [rep.label]
        for _, attr, _ in columns:
            mean, std = rep.aggregate(attr)
            row.extend([f"{mean:.17g}", f"{std:.17g}"])
        w.writerow(row)
    return out.getvalue()


def report_csv(report):
    """Per-instance raw table for one report."""
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["instance", "objective", "mean_eq", "max_eq", "mean_ineq", "max_ineq"])
    s = report.stats
    for i in range(s.n_instances):
        w.writerow([int(report.subset[i]), f"{s.objective[i]:.17g}",
                    f"{s.mean_eq[i]:.17g}", f"{s.max_eq[i]:.17g}",
                    f"{s.mean_ineq[i]:.17g}", f"{s.max_ineq[i]:.17g}"])
    return out.getvalue()
