"""Expert demonstrations from full strong branching and the behavioral-cloning
training loop."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .bnb import Limits, solve_bnb
from .branchers import FullStrongBrancher
from .features import SCHEMA_VERSION, BipartiteState, PreNormStats, SchemaMismatch, prenorm_apply, prenorm_fit
from .nn import autodiff as ad
from .nn.model import ModelConfig, PolicyModel, loss_and_grad, pick
from .nn.optim import AdamState, PlateauState, adam_step, plateau_schedule

log = logging.getLogger(__name__)

DATASET_FORMAT = "milpbranch-demos"


@dataclass
class Trajectory:
    """``len(states)`` consecutive branching episodes of one solve, starting at
    episode ``start``; ``actions[l]`` is the expert's choice at ``states[l]``."""

    instance: str
    start: int
    states: list
    actions: list

    def __post_init__(self):
        if len(self.states) != len(self.actions) or not self.states:
            raise ValueError("a trajectory needs one action per state and at least one state")
        for s, a in zip(self.states, self.actions):
            if int(a) not in set(s.candidates.tolist()):
                raise ValueError(f"action x{a} is not among the candidates of its state")

    def to_dict(self) -> dict:
        return {"instance": self.instance, "start": self.start,
                "records": [{"state": s.to_dict(), "action": int(a)}
                            for s, a in zip(self.states, self.actions)]}

    @classmethod
    def from_dict(cls, doc):
        recs = doc["records"]
        return cls(doc["instance"], int(doc["start"]),
                   [BipartiteState.from_dict(r["state"]) for r in recs],
                   [int(r["action"]) for r in recs])

    def __eq__(self, other):
        return (isinstance(other, Trajectory) and self.instance == other.instance
                and self.start == other.start and self.actions == other.actions
                and all(a == b for a, b in zip(self.states, other.states)))


@dataclass
class Dataset:
    L: int
    prenorm: PreNormStats
    trajectories: list
    skipped: int = 0
    schema_version: int = SCHEMA_VERSION

    def __len__(self):
        return len(self.trajectories)

    def instances(self) -> list:
        return sorted({t.instance for t in self.trajectories})

    def subset(self, names) -> "Dataset":
        names = set(names)
        return Dataset(self.L, self.prenorm, [t for t in self.trajectories if t.instance in names],
                       0, self.schema_version)

    def uniform_baseline(self) -> float:
        """Expected top-1 accuracy of a uniformly random pick on the final records."""
        if not self.trajectories:
            raise ValueError("empty dataset")
        return float(np.mean([1.0 / t.states[-1].candidates.size for t in self.trajectories]))


def record_episodes(inst, limits: Limits | None = None):
    """Solve with full strong branching; returns the (state, action) list in
    episode order and the solve report."""
    records = []

    def on_branch(ctx, var):
        records.append((ctx.state, int(var)))

    report = solve_bnb(inst, FullStrongBrancher(), limits, clock_mode="node", on_branch=on_branch)
    return records, report


def make_windows(name, records, L: int) -> list:
    """Every run of ``L`` consecutive episodes (stride 1)."""
    if L < 1:
        raise ValueError("L must be at least 1")
    return [Trajectory(name, k, [s for s, _ in records[k:k + L]], [a for _, a in records[k:k + L]])
            for k in range(len(records) - L + 1)]


def collect_demonstrations(instances, L: int, limits: Limits | None = None, seed: int = 0,
                           path=None) -> Dataset:
    """Record full strong branching on every instance and cut the episodes
    into windows. Instances solved without branching are skipped and counted.

    Full strong branching is deterministic, so ``seed`` only labels the data.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    trajectories, skipped = [], 0
    for inst in instances:
        records, _ = record_episodes(inst, limits)
        if not records:
            skipped += 1
            continue
        trajectories.extend(make_windows(inst.name, records, L))
    if skipped:
        log.warning("%d instance(s) solved at the root without branching were skipped", skipped)
    seen, states = set(), []
    for t in trajectories:
        for k, s in enumerate(t.states):
            key = (t.instance, t.start + k)
            if key not in seen:
                seen.add(key)
                states.append(s)
    stats = prenorm_fit(states) if states else PreNormStats.identity()
    ds = Dataset(L, stats, trajectories, skipped)
    if path is not None:
        save_dataset(ds, path, seed=seed)
    return ds


def save_dataset(ds: Dataset, path, seed: int | None = None) -> None:
    header = {"format": DATASET_FORMAT, "schema_version": ds.schema_version, "L": ds.L,
              "prenorm": ds.prenorm.to_dict(), "skipped": ds.skipped, "count": len(ds)}
    if seed is not None:
        header["seed"] = seed
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for t in ds.trajectories:
            fh.write(json.dumps(t.to_dict()) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT:
        raise ValueError(f"{path}: missing dataset header")
    if header["schema_version"] != SCHEMA_VERSION:
        raise SchemaMismatch(f"dataset feature schema {header['schema_version']} != {SCHEMA_VERSION}")
    trajs = [Trajectory.from_dict(json.loads(ln)) for ln in lines[1:]]
    for t in trajs:
        if len(t.states) != header["L"]:
            raise ValueError(f"{path}: window of length {len(t.states)} in an L={header['L']} dataset")
    return Dataset(header["L"], PreNormStats.from_dict(header["prenorm"]), trajs,
                   header.get("skipped", 0), header["schema_version"])


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    L: int = 4
    d: int = 32
    H: int = 2
    options: dict = field(default_factory=dict)
    val_fraction: float = 0.1
    lr: float = 1e-3
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("validation fraction must lie in [0, 1)")

    def model_config(self) -> ModelConfig:
        return ModelConfig(d=self.d, heads=self.H, seq_len=self.L, **self.options)


def split_instances(names, val_fraction: float, seed: int):
    """Deterministic split of instance names into (train, validation)."""
    names = sorted(names)
    if len(names) < 2 or val_fraction <= 0:
        return names, []
    order = np.random.default_rng(seed).permutation(len(names))
    k = min(max(1, int(round(val_fraction * len(names)))), len(names) - 1)
    val = sorted(names[i] for i in order[:k])
    return sorted(set(names) - set(val)), val


def _normalized(ds: Dataset, stats: PreNormStats):
    windows = [[prenorm_apply(stats, s) for s in t.states] for t in ds.trajectories]
    actions = [list(t.actions) for t in ds.trajectories]
    return windows, actions


def _batches(count, size):
    return [(k, min(k + size, count)) for k in range(0, count, size)]


def _predict(model, windows, batch_size=64) -> list:
    """Argmax candidate of the final step of each window."""
    preds = []
    with ad.no_grad():
        for lo, hi in _batches(len(windows), batch_size):
            chunk = windows[lo:hi]
            logits, offsets = model.window_logits(chunk)
            last = logits[-1].data
            for b, w in enumerate(chunk):
                preds.append(pick(last[offsets[b]:offsets[b + 1]], w[-1].candidates))
    return preds


def _mean_loss(model, windows, actions, batch_size=64) -> float:
    total = 0.0
    with ad.no_grad():
        for lo, hi in _batches(len(windows), batch_size):
            total += float(model.window_loss(windows[lo:hi], actions[lo:hi]).data) * (hi - lo)
    return total / len(windows)


def top1(predictions, labels) -> float:
    if len(predictions) == 0:
        raise ValueError("no predictions to score")
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    return float(np.mean([int(p) == int(a) for p, a in zip(predictions, labels)]))


def evaluate_accuracy(model: PolicyModel, ds: Dataset) -> dict:
    """Fraction of windows whose final expert action is the policy's argmax."""
    if not len(ds):
        raise ValueError("empty dataset")
    if ds.L != model.config.seq_len:
        raise SchemaMismatch(f"dataset windows have L={ds.L}, model expects {model.config.seq_len}")
    windows, actions = _normalized(ds, model.prenorm)
    return {"top1": top1(_predict(model, windows), [a[-1] for a in actions])}


def train(ds: Dataset, config: TrainConfig):
    """Behavioral cloning with Adam and a reduce-on-plateau schedule.

    Returns the model with the best validation loss (training loss when there
    is no validation split) and the per-epoch history.
    """
    if not len(ds):
        raise ValueError("empty dataset")
    if ds.schema_version != SCHEMA_VERSION:
        raise SchemaMismatch(f"dataset feature schema {ds.schema_version} != {SCHEMA_VERSION}")
    if ds.L != config.L:
        raise SchemaMismatch(f"dataset windows have L={ds.L} but the model is configured for L={config.L}")

    train_names, val_names = split_instances(ds.instances(), config.val_fraction, config.seed)
    model = PolicyModel(config.model_config(), seed=config.seed, prenorm=ds.prenorm)
    tr_w, tr_a = _normalized(ds.subset(train_names), ds.prenorm)
    va_w, va_a = _normalized(ds.subset(val_names), ds.prenorm)

    rng = np.random.default_rng(config.seed)
    adam = AdamState(lr=config.lr)
    plateau = PlateauState(lr=config.lr)
    use_dropout = config.model_config().dropout > 0
    best, best_loss, history = model.copy(), float("inf"), []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(tr_w))
        running = 0.0
        for lo, hi in _batches(len(order), config.batch_size):
            idx = order[lo:hi]
            loss, grads = loss_and_grad(model, [tr_w[i] for i in idx], [tr_a[i] for i in idx],
                                        clip_norm=config.clip_norm, train=use_dropout, rng=rng)
            adam_step(adam, model.params, grads)
            running += loss * (hi - lo)
        row = {"epoch": epoch, "lr": adam.lr, "train_loss": running / len(tr_w)}
        if va_w:
            row["val_loss"] = _mean_loss(model, va_w, va_a)
            row["val_top1"] = top1(_predict(model, va_w), [a[-1] for a in va_a])
            monitored = row["val_loss"]
        else:
            monitored = row["train_loss"]
        if monitored < best_loss:
            best_loss, best = monitored, model.copy()
        _, adam.lr = plateau_schedule(plateau, monitored)
        history.append(row)
        log.info("epoch %d %s", epoch, {k: round(v, 6) for k, v in row.items() if k != "epoch"})
    return best, history
