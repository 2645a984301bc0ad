"""Synthetic multi-task benchmark.

Generates Gaussian-blob classification tasks (class means on a sphere,
task-specific rotations, one deliberately similar task pair), trains a tiny
two-layer MLP per task from a shared pooled-pretrained initialization, and
scores every merging strategy: individual models, weight averaging, task
arithmetic, the two-group binarization baseline, the four-group codec on
task vectors and difference vectors (fixed ratio and storage-budget modes),
plus a pairwise-merge table and an optional unseen-task fusion table.

Everything is driven by one xoshiro256** stream family derived from the
config seed, so a config maps to a byte-identical report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive_io import choose_budget_ratio, storage_report
from .codec import encode_task, reconstruct_model
from .errors import InvalidConfig, NonFiniteLoss, ShapeMismatch
from .lowrank import CodecConfig, CodecMode, validate_ratio
from .merging import difference_vectors, task_arithmetic_merge, task_vector, weight_average
from .prng import Xoshiro256StarStar, _splitmix64_stream
from .tensor_store import TensorMap, content_fingerprint
from .unseen import MergeWeights, TaskEmbedding, merge_for_unseen, similarity_weights

MEAN_RADIUS = 3.0
LEARNING_RATE = 0.1

STRATEGY_ORDER = [
    "individual",
    "weight_average",
    "task_arithmetic",
    "binarize",
    "dts_t",
    "dts_d",
    "dts_t_noscale",
    "dts_t_budget",
    "dts_d_budget",
]


@dataclass
class BenchConfig:
    num_tasks: int = 4
    input_dim: int = 32
    hidden_dim: int = 64
    classes_per_task: int = 4
    train_per_class: int = 200
    test_per_class: int = 100
    seed: int = 1
    r_sweep: list[float] = field(default_factory=lambda: [0.05, 0.1, 0.3, 0.5])
    lam: float = 0.4
    unseen_holdout: int | None = None
    noise_sigma: float = 1.0
    similar_overlap: float = 0.85
    # the toy MLP is tiny, so the per-layer scale/sigma overhead alone is
    # ~1.7% of it; 5% is the smallest round budget with headroom
    budget_amr: float = 0.05
    pretrain_steps: int = 200
    finetune_steps: int = 300

    def validate(self) -> None:
        if self.num_tasks < 1:
            raise InvalidConfig("num_tasks must be >= 1")
        if self.classes_per_task < 2:
            raise InvalidConfig("classification needs at least 2 classes per task")
        if min(self.input_dim, self.hidden_dim, self.train_per_class, self.test_per_class) < 1:
            raise InvalidConfig("dimensions and sample counts must be positive")
        if not self.r_sweep:
            raise InvalidConfig("r_sweep must not be empty")
        for r in self.r_sweep:
            validate_ratio(r)
        if not (0.0 <= self.similar_overlap <= 1.0):
            raise InvalidConfig("similar_overlap must be in [0, 1]")
        if self.unseen_holdout is not None and not (0 <= self.unseen_holdout < self.num_tasks):
            raise InvalidConfig(f"unseen_holdout {self.unseen_holdout} out of range")
        if self.unseen_holdout is not None and self.num_tasks < 2:
            raise InvalidConfig("unseen fusion needs at least one seen task")
        if self.pretrain_steps < 0 or self.finetune_steps < 0:
            raise InvalidConfig("step counts must be >= 0")

    @classmethod
    def from_json(cls, path) -> "BenchConfig":
        doc = json.loads(Path(path).read_text())
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def to_json_dict(self) -> dict:
        return {
            "num_tasks": self.num_tasks,
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "classes_per_task": self.classes_per_task,
            "train_per_class": self.train_per_class,
            "test_per_class": self.test_per_class,
            "seed": self.seed,
            "r_sweep": self.r_sweep,
            "lam": self.lam,
            "unseen_holdout": self.unseen_holdout,
            "noise_sigma": self.noise_sigma,
            "similar_overlap": self.similar_overlap,
            "budget_amr": self.budget_amr,
            "pretrain_steps": self.pretrain_steps,
            "finetune_steps": self.finetune_steps,
        }


@dataclass
class TaskDataset:
    name: str
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


def _sub_seeds(seed: int, n: int) -> list[int]:
    return _splitmix64_stream(seed, n)


def generate_tasks(config: BenchConfig) -> list[TaskDataset]:
    config.validate()
    seeds = _sub_seeds(config.seed, 1 + 2 * config.num_tasks)
    base_means = Xoshiro256StarStar(seeds[0]).on_sphere(
        config.classes_per_task, config.input_dim, MEAN_RADIUS
    )
    tasks = []
    for t in range(config.num_tasks):
        rot_rng = Xoshiro256StarStar(seeds[1 + 2 * t])
        noise_rng = Xoshiro256StarStar(seeds[2 + 2 * t])
        # task 0 keeps the base frame; task 1 is its near-identity twin;
        # later tasks get fully random frames
        if t == 0:
            spread = 0.0
        elif t == 1:
            spread = 1.0 - config.similar_overlap
        else:
            spread = 1.0
        rotation = rot_rng.rotation(config.input_dim, spread)
        means = base_means @ rotation.T

        def draw(per_class: int) -> tuple[np.ndarray, np.ndarray]:
            xs, ys = [], []
            for c in range(config.classes_per_task):
                noise = noise_rng.normal_matrix(per_class, config.input_dim)
                xs.append(means[c] + config.noise_sigma * noise)
                ys.append(np.full(per_class, c, dtype=np.int64))
            return np.vstack(xs).astype(np.float32), np.concatenate(ys)

        train_x, train_y = draw(config.train_per_class)
        test_x, test_y = draw(config.test_per_class)
        tasks.append(TaskDataset(f"task{t}", train_x, train_y, test_x, test_y))
    return tasks


# --- tiny MLP: input -> tanh hidden -> classes ---

_LAYERS = ("dense1.weight", "dense1.bias", "dense2.weight", "dense2.bias")


def _init_params(config: BenchConfig, rng: Xoshiro256StarStar) -> dict[str, np.ndarray]:
    w1 = rng.normal_matrix(config.input_dim, config.hidden_dim) / np.sqrt(config.input_dim)
    w2 = rng.normal_matrix(config.hidden_dim, config.classes_per_task) / np.sqrt(config.hidden_dim)
    return {
        "dense1.weight": w1,
        "dense1.bias": np.zeros(config.hidden_dim),
        "dense2.weight": w2,
        "dense2.bias": np.zeros(config.classes_per_task),
    }


def _params_to_map(params: dict[str, np.ndarray]) -> TensorMap:
    return TensorMap({k: v.astype(np.float32) for k, v in params.items()})


def _map_to_params(tmap: TensorMap) -> dict[str, np.ndarray]:
    return {k: tmap[k].astype(np.float64) for k in _LAYERS}


def _forward(params: dict[str, np.ndarray], x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hidden = np.tanh(x @ params["dense1.weight"] + params["dense1.bias"])
    return hidden @ params["dense2.weight"] + params["dense2.bias"], hidden


def _train(params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray, steps: int) -> dict[str, np.ndarray]:
    params = {k: v.copy() for k, v in params.items()}
    x64 = x.astype(np.float64)
    n = x64.shape[0]
    onehot = np.zeros((n, params["dense2.bias"].size))
    onehot[np.arange(n), y] = 1.0
    for _ in range(steps):
        logits, hidden = _forward(params, x64)
        shifted = logits - logits.max(axis=1, keepdims=True)
        expl = np.exp(shifted)
        probs = expl / expl.sum(axis=1, keepdims=True)
        loss = -np.mean(np.log(probs[np.arange(n), y] + 1e-300))
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"training diverged (loss={loss})")
        g_logits = (probs - onehot) / n
        g_w2 = hidden.T @ g_logits
        g_b2 = g_logits.sum(axis=0)
        g_hidden = g_logits @ params["dense2.weight"].T
        g_pre = g_hidden * (1.0 - hidden * hidden)
        g_w1 = x64.T @ g_pre
        g_b1 = g_pre.sum(axis=0)
        params["dense1.weight"] -= LEARNING_RATE * g_w1
        params["dense1.bias"] -= LEARNING_RATE * g_b1
        params["dense2.weight"] -= LEARNING_RATE * g_w2
        params["dense2.bias"] -= LEARNING_RATE * g_b2
    return params


def pretrain(config: BenchConfig, tasks: list[TaskDataset]) -> TensorMap:
    """Train on the pooled mixture of every task's training split."""
    config.validate()
    init_seed = _sub_seeds(config.seed ^ 0xA5A5A5A5, 1)[0]
    params = _init_params(config, Xoshiro256StarStar(init_seed))
    x = np.vstack([t.train_x for t in tasks])
    y = np.concatenate([t.train_y for t in tasks])
    return _params_to_map(_train(params, x, y, config.pretrain_steps))


def fine_tune(pretrained: TensorMap, task: TaskDataset, config: BenchConfig) -> TensorMap:
    params = _map_to_params(pretrained)
    return _params_to_map(_train(params, task.train_x, task.train_y, config.finetune_steps))


def evaluate(model: TensorMap, task: TaskDataset) -> float:
    """Accuracy (percent) on the test split; argmax ties go to the lower class."""
    try:
        params = _map_to_params(model)
    except KeyError as exc:
        raise ShapeMismatch(f"model is missing layer {exc}") from exc
    if params["dense1.weight"].shape[0] != task.test_x.shape[1]:
        raise ShapeMismatch("model input width does not match the dataset")
    try:
        logits, _ = _forward(params, task.test_x.astype(np.float64))
    except ValueError as exc:
        raise ShapeMismatch(f"model layer shapes are inconsistent: {exc}") from exc
    pred = np.argmax(logits, axis=1)
    return float(100.0 * np.mean(pred == task.test_y))


def task_embedding_vector(task: TaskDataset) -> np.ndarray:
    """Synthetic task characteristic: mean of class-mean inputs, L2-normalized."""
    means = [task.train_x[task.train_y == c].mean(axis=0) for c in np.unique(task.train_y)]
    vec = np.mean(means, axis=0).astype(np.float64)
    return vec / np.linalg.norm(vec)


def adr(avg_individual: float, avg_method: float) -> float:
    return (avg_individual - avg_method) / avg_individual * 100.0


@dataclass
class BenchReport:
    config: BenchConfig
    task_names: list[str]
    strategies: dict  # strategy id -> entry (fixed strategies) or r-string -> entry
    pairwise: list[dict]
    unseen: dict | None

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "task_names": self.task_names,
            "strategies": self.strategies,
            "pairwise": self.pairwise,
            "unseen": self.unseen,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    def strategy_entry(self, strategy: str, r: float | None = None) -> dict:
        node = self.strategies[strategy]
        return node[_r_key(r)] if r is not None else node

    def to_text_table(self) -> str:
        rows = [["strategy", "r"] + self.task_names + ["avg", "adr", "amr%"]]

        def fmt(entry, label, rkey=""):
            accs = [f"{entry['per_task'][t]:.2f}" for t in self.task_names]
            amr = entry["amr"]
            rows.append(
                [label, rkey]
                + accs
                + [f"{entry['average']:.2f}", f"{entry['adr']:.2f}",
                   "--" if amr is None else f"{100 * amr:.2f}"]
            )

        for strategy in STRATEGY_ORDER:
            node = self.strategies.get(strategy)
            if node is None:
                continue
            if strategy in ("binarize", "dts_t", "dts_d", "dts_t_noscale"):
                for rkey in sorted(node, key=float):
                    fmt(node[rkey], strategy, rkey)
            else:
                fmt(node, strategy, str(node.get("r", "")))
        widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["strategy,r," + ",".join(self.task_names) + ",avg,adr,amr"]

        def emit(entry, label, rkey=""):
            accs = [repr(entry["per_task"][t]) for t in self.task_names]
            amr = entry["amr"]
            lines.append(
                ",".join([label, rkey] + accs
                         + [repr(entry["average"]), repr(entry["adr"]),
                            "" if amr is None else repr(amr)])
            )

        for strategy in STRATEGY_ORDER:
            node = self.strategies.get(strategy)
            if node is None:
                continue
            if strategy in ("binarize", "dts_t", "dts_d", "dts_t_noscale"):
                for rkey in sorted(node, key=float):
                    emit(node[rkey], strategy, rkey)
            else:
                emit(node, strategy, str(node.get("r", "")))
        return "\n".join(lines) + "\n"


def _r_key(r: float) -> str:
    return repr(float(r))


def _entry(per_task: dict[str, float], avg_ind: float, amr: float | None) -> dict:
    avg = float(np.mean(list(per_task.values())))
    return {
        "per_task": per_task,
        "average": avg,
        "adr": adr(avg_ind, avg) if avg_ind else 0.0,
        "amr": amr,
    }


def run_suite(config: BenchConfig) -> BenchReport:
    config.validate()
    tasks = generate_tasks(config)
    theta0 = pretrain(config, tasks)
    finetuned = [fine_tune(theta0, task, config) for task in tasks]

    individual = {t.name: evaluate(m, t) for m, t in zip(finetuned, tasks)}
    avg_ind = float(np.mean(list(individual.values())))

    theta_m = weight_average(finetuned)
    fp0 = content_fingerprint(theta0)
    fpm = content_fingerprint(theta_m)
    tvs = [task_vector(m, theta0) for m in finetuned]
    dvs = difference_vectors(finetuned, theta_m)

    strategies: dict = {
        "individual": _entry(individual, avg_ind, None),
        "weight_average": _entry({t.name: evaluate(theta_m, t) for t in tasks}, avg_ind, 0.0),
        "task_arithmetic": _entry(
            {t.name: evaluate(task_arithmetic_merge(theta0, tvs, config.lam), t) for t in tasks},
            avg_ind,
            0.0,
        ),
    }

    def personalized(base, fp, deltas, mode, r) -> dict:
        cfg = CodecConfig(r=r, mode=mode)
        per_task = {}
        amr = None
        for task, delta in zip(tasks, deltas):
            archive = encode_task(task.name, delta, fp, cfg)
            if amr is None:
                amr = storage_report(archive, base).amr_2bit
            per_task[task.name] = evaluate(reconstruct_model(base, archive), task)
        return _entry(per_task, avg_ind, amr)

    sweeps = {"binarize": {}, "dts_t": {}, "dts_d": {}, "dts_t_noscale": {}}
    for r in config.r_sweep:
        key = _r_key(r)
        sweeps["binarize"][key] = personalized(theta0, fp0, tvs, CodecMode.TWO_GROUP, r)
        sweeps["dts_t"][key] = personalized(theta0, fp0, tvs, CodecMode.FOUR_GROUP, r)
        sweeps["dts_d"][key] = personalized(theta_m, fpm, dvs, CodecMode.FOUR_GROUP, r)
        sweeps["dts_t_noscale"][key] = personalized(theta0, fp0, tvs, CodecMode.NO_SCALING, r)
    strategies.update(sweeps)

    r_star = choose_budget_ratio(theta0.shapes(), config.budget_amr)
    budget_t = personalized(theta0, fp0, tvs, CodecMode.FOUR_GROUP, r_star)
    budget_t["r"] = r_star
    budget_d = personalized(theta_m, fpm, dvs, CodecMode.FOUR_GROUP, r_star)
    budget_d["r"] = r_star
    strategies["dts_t_budget"] = budget_t
    strategies["dts_d_budget"] = budget_d

    embeddings = [TaskEmbedding(t.name, task_embedding_vector(t)) for t in tasks]
    pairwise = []
    for i, task_i in enumerate(tasks):
        for j, task_j in enumerate(tasks):
            if i == j:
                continue
            merged = weight_average([finetuned[i], finetuned[j]])
            pairwise.append(
                {
                    "eval_task": task_i.name,
                    "partner": task_j.name,
                    "individual": individual[task_i.name],
                    "merged": evaluate(merged, task_i),
                    "embedding_cosine": float(
                        np.dot(embeddings[i].vector, embeddings[j].vector)
                    ),
                }
            )

    unseen_table = None
    if config.unseen_holdout is not None:
        unseen_table = _unseen_table(config, tasks, finetuned, embeddings)

    return BenchReport(
        config=config,
        task_names=[t.name for t in tasks],
        strategies=strategies,
        pairwise=pairwise,
        unseen=unseen_table,
    )


def _unseen_table(config, tasks, finetuned, embeddings) -> dict:
    hold = config.unseen_holdout
    seen_idx = [i for i in range(len(tasks)) if i != hold]
    seen_models = [finetuned[i] for i in seen_idx]
    base = weight_average(seen_models)
    fp = content_fingerprint(base)
    deltas = difference_vectors(seen_models, base)
    r = 0.3 if any(abs(r - 0.3) < 1e-12 for r in config.r_sweep) else max(config.r_sweep)
    cfg = CodecConfig(r=r, mode=CodecMode.FOUR_GROUP)
    archives = [
        encode_task(tasks[i].name, delta, fp, cfg) for i, delta in zip(seen_idx, deltas)
    ]
    weights = similarity_weights(embeddings[hold], [embeddings[i] for i in seen_idx])
    fused = merge_for_unseen(base, archives, weights)
    holdout_task = tasks[hold]
    return {
        "holdout": holdout_task.name,
        "r": r,
        "base_accuracy": evaluate(base, holdout_task),
        "fused_accuracy": evaluate(fused, holdout_task),
        "weights": {name: g for name, g in weights.weights},
    }


def write_report(report: BenchReport, json_path) -> None:
    Path(json_path).write_text(report.to_json() + "\n")
