"""Momentum optimizers, episodic sampling, training, and cross-size evaluation."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import ModelCache, SizedBatch
from .data import DataError, FeatureDataset
from .graph import ParamRegistry
from .metric import FArch, MEMBER
from .relational import ClassSet, GArch

log = logging.getLogger(__name__)

MOMENTUM_KINDS = ("classic", "nesterov")


class NumericDivergenceError(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 0.001
    mu: float = 0.9
    batch_size: int = 128
    momentum_kind: str = "classic"
    shot_range: tuple[int, int] = (2, 5)
    steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.shot_range = (int(self.shot_range[0]), int(self.shot_range[1]))
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0 <= self.mu < 1:
            raise ValueError("mu must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.momentum_kind not in MOMENTUM_KINDS:
            raise ValueError(f"momentum_kind must be one of {MOMENTUM_KINDS}")
        lo, hi = self.shot_range
        if not 2 <= lo <= hi:
            raise ValueError("shot_range must satisfy 2 <= n_min <= n_max")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass
class Episode:
    class_set: ClassSet
    query: np.ndarray
    label: int

    def __post_init__(self):
        if not isinstance(self.class_set, ClassSet):
            self.class_set = ClassSet(self.class_set)
        self.query = np.asarray(self.query, dtype=np.float64)
        if self.query.shape != (self.class_set.s_v,):
            raise ValueError("query length does not match class feature dimension")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")

    @property
    def n(self) -> int:
        return self.class_set.n

    @property
    def support(self) -> np.ndarray:
        return self.class_set.features


class OptState:
    """Per-parameter velocity buffers, zero-initialised and shape-matched to a registry."""

    def __init__(self, registry: ParamRegistry):
        self.velocity = {p.name: np.zeros(p.shape) for p in registry}

    def check(self, registry: ParamRegistry) -> None:
        if set(self.velocity) != set(registry.names()):
            raise ValueError("optimizer state and registry hold different parameters")
        for p in registry:
            if self.velocity[p.name].shape != p.shape:
                raise ValueError(f"velocity shape drift for {p.name!r}")


def momentum_step(registry: ParamRegistry, state: OptState, cfg: TrainConfig) -> None:
    """Polyak momentum: v <- mu v + grad; w <- w - alpha v."""
    state.check(registry)
    for p in registry:
        v = state.velocity[p.name]
        v *= cfg.mu
        v += p.grad
        p.value -= cfg.alpha * v


def nesterov_step(registry: ParamRegistry, state: OptState, cfg: TrainConfig) -> None:
    """Nesterov momentum: v <- mu v + grad; w <- w - alpha (grad + mu v)."""
    state.check(registry)
    for p in registry:
        v = state.velocity[p.name]
        v *= cfg.mu
        v += p.grad
        p.value -= cfg.alpha * (p.grad + cfg.mu * v)


def optimizer_step(registry, state, cfg) -> None:
    if cfg.momentum_kind == "nesterov":
        nesterov_step(registry, state, cfg)
    else:
        momentum_step(registry, state, cfg)


# sampling ---------------------------------------------------------------

def balanced_labels(count: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.zeros(count, dtype=np.int64)
    labels[:count // 2] = 1
    return rng.permutation(labels)


def sample_episodes(dataset: FeatureDataset, n: int, count: int, rng: np.random.Generator,
                    split: str | None = "train") -> SizedBatch:
    """``count`` balanced episodes with ``n`` support examples each.

    Positives take the query from the support class (disjoint from the
    support); negatives take it from a uniformly chosen other class. The
    random draws do not depend on ``n``, so one seed yields nested episodes:
    the n-shot support set is the first n rows of the (n+1)-shot one.
    """
    pool = dataset.pool(split)
    if pool.num_classes < 2:
        raise DataError("need at least two classes to draw negative queries")
    if n + 1 > int(pool.counts.min()):
        raise DataError(f"class too small for requested n={n} "
                        f"(smallest class has {int(pool.counts.min())} examples)")
    labels = balanced_labels(count, rng)
    cls = rng.integers(0, pool.num_classes, count)
    keys = rng.random((count, pool.data.shape[1]))
    keys[np.arange(pool.data.shape[1])[None, :] >= pool.counts[cls][:, None]] = np.inf
    order = np.argsort(keys, axis=1, kind="stable")
    other = rng.integers(0, pool.num_classes - 1, count)
    other += other >= cls
    other_idx = np.floor(rng.random(count) * pool.counts[other]).astype(np.int64)

    support = pool.data[cls[:, None], order[:, 1:n + 1]]
    query = np.where((labels == MEMBER)[:, None],
                     pool.data[cls, order[:, 0]],
                     pool.data[other, other_idx])
    return SizedBatch(n, support, query, labels)


def sample_training_batch(dataset: FeatureDataset, cfg: TrainConfig,
                          rng: np.random.Generator) -> SizedBatch:
    """Draw one class size uniformly from the shot range, then a batch at that size."""
    lo, hi = cfg.shot_range
    n = int(rng.integers(lo, hi + 1))
    return sample_episodes(dataset, n, cfg.batch_size, rng, "train")


# training ---------------------------------------------------------------

@dataclass
class TrainingHistory:
    losses: list[float] = field(default_factory=list)
    sizes: list[int] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.losses)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("step,loss,n\n")
        for k, (loss, n) in enumerate(zip(self.losses, self.sizes)):
            buf.write(f"{k},{loss!r},{n}\n")
        return buf.getvalue()


def new_cache(s_v: int, seed: int, arch_g: GArch | None = None,
              arch_f: FArch | None = None) -> ModelCache:
    return ModelCache(s_v, arch_g or GArch(), arch_f or FArch(), ParamRegistry(seed))


def train_step(cache: ModelCache, batch: SizedBatch, state: OptState, cfg: TrainConfig) -> float:
    model = cache.get_or_assemble(batch.n)
    values = model.graph.forward(model.feeds(batch.support, batch.query, batch.labels),
                                 upto=model.loss)
    loss = float(np.mean(values[model.loss]))
    if not math.isfinite(loss):
        raise NumericDivergenceError(f"non-finite loss {loss}")
    model.graph.backward(model.loss, values)
    optimizer_step(cache.registry, state, cfg)
    return loss


def train(cache: ModelCache, dataset: FeatureDataset, cfg: TrainConfig,
          state: OptState | None = None) -> TrainingHistory:
    """Episodic training: one sampled class size per step, mean loss over the batch."""
    rng = np.random.default_rng(cfg.seed)
    history = TrainingHistory()
    if cfg.steps == 0:
        return history
    for n in range(cfg.shot_range[0], cfg.shot_range[1] + 1):
        cache.get_or_assemble(n)
    state = state or OptState(cache.registry)
    for step in range(cfg.steps):
        batch = sample_training_batch(dataset, cfg, rng)
        history.losses.append(train_step(cache, batch, state, cfg))
        history.sizes.append(batch.n)
        if step % 500 == 0:
            log.debug("step %d n=%d loss=%.4f", step, batch.n, history.losses[-1])
    return history


# evaluation -------------------------------------------------------------

def predict(cache: ModelCache, batch: SizedBatch, chunk: int = 1024) -> np.ndarray:
    """Predicted labels; ties go to index 0 (non-member)."""
    model = cache.get_or_assemble(batch.n)
    out = []
    for s in range(0, len(batch), chunk):
        logits = model.logits_for(batch.support[s:s + chunk], batch.query[s:s + chunk])
        out.append((logits[:, 1] > logits[:, 0]).astype(np.int64))
    return np.concatenate(out)


def evaluate(cache: ModelCache, dataset: FeatureDataset, n_eval: int, num_episodes: int,
             rng: np.random.Generator, split: str | None = "heldout") -> float:
    if num_episodes < 1:
        raise ValueError("empty evaluation")
    if n_eval < 2:
        raise ValueError("n_eval must be >= 2")
    batch = sample_episodes(dataset, n_eval, num_episodes, rng, split)
    return float(np.mean(predict(cache, batch) == batch.labels))


def embedding_spread(cache: ModelCache, dataset: FeatureDataset, sizes, draws: int = 64,
                     seed: int = 0, split: str | None = "heldout") -> dict[int, float]:
    """Mean per-dimension variance of class embeddings across support resamples, per n.

    Diagnostic only: with averaging, the spread should shrink as n grows.
    """
    out = {}
    pool = dataset.pool(split)
    for n in sizes:
        rng = np.random.default_rng(seed)
        model = cache.get_or_assemble(n)
        spreads = []
        for c in range(pool.num_classes):
            keys = rng.random((draws, int(pool.counts[c])))
            idx = np.argsort(keys, axis=1)[:, :n]
            emb = model.embed(pool.data[c][idx])
            spreads.append(float(np.mean(np.var(emb, axis=0))))
        out[n] = float(np.mean(spreads))
    return out


# cross-size grid --------------------------------------------------------

DYNAMIC_LABEL = "Dynamic Input"


@dataclass
class ResultGrid:
    """Accuracy per (model row, eval size), per seed.

    ``heldout[s, r, c]`` and ``train[s, r, c]`` are accuracies for seed s,
    row r, eval size c. ``train_sizes[r]`` is ``None`` for the dynamic row.
    """

    row_labels: list[str]
    train_sizes: list[int | None]
    eval_sizes: list[int]
    seeds: list[int]
    heldout: np.ndarray
    train: np.ndarray
    steps: list[int]

    @property
    def mean(self) -> np.ndarray:
        return self.heldout.mean(axis=0)

    @property
    def sd(self) -> np.ndarray:
        if self.heldout.shape[0] < 2:
            return np.zeros(self.heldout.shape[1:])
        return self.heldout.std(axis=0, ddof=1)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_labels), len(self.eval_sizes)

    def row_average(self) -> np.ndarray:
        """Heldout accuracy averaged over eval sizes and seeds, per row."""
        return self.heldout.mean(axis=(0, 2))

    def generalization_gap(self) -> np.ndarray:
        """Train-minus-heldout accuracy, averaged over eval sizes and seeds, per row."""
        return (self.train - self.heldout).mean(axis=(0, 2))

    def to_csv(self) -> str:
        return grid_csv(self.train_sizes, self.eval_sizes, self.mean, self.sd)

    def to_text(self) -> str:
        return grid_text(self.row_labels, self.eval_sizes, self.mean, self.sd)


def grid_csv(train_sizes, eval_sizes, mean, sd) -> str:
    buf = io.StringIO()
    buf.write("train_size,eval_size,mean,sd\n")
    for r, ts in enumerate(train_sizes):
        for c, es in enumerate(eval_sizes):
            label = "dynamic" if ts is None else str(ts)
            buf.write(f"{label},{es},{mean[r][c]:.6f},{sd[r][c]:.6f}\n")
    return buf.getvalue()


def grid_text(row_labels, eval_sizes, mean, sd) -> str:
    """Aligned accuracy table, one row per model and one column per eval size."""
    head = ["Eval class size:"] + [str(e) for e in eval_sizes]
    rows = [head]
    for r, label in enumerate(row_labels):
        rows.append([label] + [f"{mean[r][c]:.6f} ± {sd[r][c]:.6f}"
                               for c in range(len(eval_sizes))])
    widths = [max(len(row[k]) for row in rows) for k in range(len(head))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def row_label(train_size: int | None) -> str:
    return DYNAMIC_LABEL if train_size is None else f"{train_size}-shot Network"


def run_grid(dataset: FeatureDataset, cfg_base: TrainConfig, train_sizes, eval_sizes, seeds,
             dynamic_range: tuple[int, int] | None = None, num_episodes: int = 1000,
             arch_g: GArch | None = None, arch_f: FArch | None = None,
             include_dynamic: bool = True, progress=None) -> ResultGrid:
    """Train fixed-size baselines plus one dynamic model per seed; evaluate every model at every size.

    All models get ``cfg_base.steps`` optimizer steps. Evaluation for a seed
    reuses one episode stream across models and sizes (nested supports), so
    row and column comparisons share their randomness.
    """
    train_sizes = [int(k) for k in train_sizes]
    eval_sizes = [int(k) for k in eval_sizes]
    seeds = [int(s) for s in seeds]
    if min(train_sizes + eval_sizes) < 2:
        raise ValueError("sizes must be >= 2")
    rows: list[int | None] = list(train_sizes)
    if include_dynamic:
        rows.append(None)
    dyn = dynamic_range or (min(train_sizes), max(train_sizes))
    heldout = np.zeros((len(seeds), len(rows), len(eval_sizes)))
    train_acc = np.zeros_like(heldout)
    steps = [0] * len(rows)
    for si, seed in enumerate(seeds):
        for r, ts in enumerate(rows):
            shot = dyn if ts is None else (ts, ts)
            cfg = replace(cfg_base, shot_range=shot, seed=_derive(seed, 1))
            cache = new_cache(dataset.s_v, _derive(seed, 2), arch_g, arch_f)
            history = train(cache, dataset, cfg)
            steps[r] = history.steps
            for c, es in enumerate(eval_sizes):
                heldout[si, r, c] = evaluate(cache, dataset, es, num_episodes,
                                             np.random.default_rng(_derive(seed, 3)), "heldout")
                train_acc[si, r, c] = evaluate(cache, dataset, es, num_episodes,
                                               np.random.default_rng(_derive(seed, 4)), "train")
            if progress:
                progress(seed, row_label(ts), heldout[si, r])
    return ResultGrid([row_label(t) for t in rows], rows, eval_sizes, seeds,
                      heldout, train_acc, steps)


def _derive(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])
