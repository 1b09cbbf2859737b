"""Supervised training over the coreset action space.

Targets are softmax-normalized value vectors (soft labels whose sharpness
is set by a temperature), hard best-sequence labels, or the raw value
vector for regression. Value vectors are max-normalized per program before
the softmax so one temperature means the same thing on every program.
Model selection keeps the checkpoint with the best validation
mean-improvement-over-Oz at the 45-pass budget.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import tensor as T
from .candidates import length_lex_key
from .errors import ConfigError, InputError
from .evaluate import evaluate_program, infer, mean_over_oz
from .gean import (
    GeanConfig,
    encode_graph,
    forward,
    init_mlp_params,
    init_params,
    mlp_forward,
    predict as gean_predict,
    mlp_predict,
)
from .graphrep import (
    ProgramGraph,
    Vocabulary,
    build_graph,
    build_vocabulary,
    expand_type_graph,
    flat_features,
    mixup,
)
from .synthenv import Program, baseline_sizes

__all__ = [
    "TrainConfig",
    "TrainItem",
    "Adam",
    "nvp_targets",
    "nvp_loss",
    "bc_label",
    "qvalue_loss",
    "make_splits",
    "prepare_items",
    "train_model",
    "CoresetPolicyModel",
]


def nvp_targets(r, temperature: float) -> np.ndarray:
    """Soft target distribution: softmax of the max-normalized value vector."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    r = np.asarray(r, dtype=np.float64)
    z = (r / r.max()) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def nvp_loss(model_dist, target) -> float:
    """Soft-target cross entropy; >= H(target), minimized iff the match is exact."""
    a = np.asarray(model_dist, dtype=np.float64)
    v = np.asarray(target, dtype=np.float64)
    return float(-(v * np.log(np.maximum(a, T.LOG_EPS))).sum())


def bc_label(r, sequences) -> int:
    """Index of the best sequence; reward ties resolve length-lex first.

    Rewards compare exactly; pass Fractions when exactness matters.
    """
    r = list(r)
    if len(r) != len(sequences):
        raise InputError("value vector and sequence list lengths differ")
    top = max(r)
    tied = [j for j, val in enumerate(r) if val == top]
    return min(tied, key=lambda j: length_lex_key(sequences[j]))


def qvalue_loss(pred, r) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return float(((pred - r) ** 2).mean())


def make_splits(entries, ratios=(0.8, 0.1, 0.1), held_out_families=(), seed: int = 0):
    """Deterministic split; held-out families only ever appear out-of-domain.

    ``entries`` need a ``family`` attribute or key. Returns
    (train, val, test_in_domain, test_out_of_domain).
    """
    def fam(e):
        return e["family"] if isinstance(e, dict) else e.family

    families = {fam(e) for e in entries}
    if len(families) < 2:
        raise ConfigError("need at least two generator families to split")
    missing = set(held_out_families) - families
    if missing:
        raise ConfigError(f"held-out families not present: {sorted(missing)}")
    held = [e for e in entries if fam(e) in set(held_out_families)]
    rest = [e for e in entries if fam(e) not in set(held_out_families)]
    rng = random.Random(seed)
    order = list(range(len(rest)))
    rng.shuffle(order)
    shuffled = [rest[i] for i in order]
    n = len(shuffled)
    n_train = int(ratios[0] * n)
    n_val = int(ratios[1] * n)
    train = shuffled[:n_train]
    val = shuffled[n_train:n_train + n_val]
    test_in = shuffled[n_train + n_val:]
    return train, val, test_in, held


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "nvp"        # nvp | bc | qvalue
    encoder: str = "gean"         # gean | flat
    temperature: float = 0.25
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    mixup_prob: float = 0.5
    embed_dim: int = 32
    num_layers: int = 2
    hidden_dim: int = 64
    update_edges: bool = True
    use_type_graph: bool = True
    budget: int = 45

    def validate(self) -> "TrainConfig":
        if self.objective not in ("nvp", "bc", "qvalue"):
            raise ConfigError(f"unknown objective: {self.objective!r}")
        if self.encoder not in ("gean", "flat"):
            raise ConfigError(f"unknown encoder: {self.encoder!r}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not 0.0 <= self.mixup_prob <= 1.0:
            raise ConfigError("mixup_prob must lie in [0, 1]")
        return self

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        text = Path(path).read_text()
        stripped = text.lstrip()
        if stripped.startswith("{"):
            data = json.loads(text)
        else:
            data = {}
            for raw in text.splitlines():
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"expected key=value, got {raw!r}")
                key, val = (s.strip() for s in line.split("=", 1))
                data[key] = val
        cfg = cls()
        for key, val in data.items():
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown training config key {key!r}")
            current = getattr(cfg, key)
            if isinstance(current, bool):
                val = val if isinstance(val, bool) else str(val).lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                val = int(val)
            elif isinstance(current, float):
                val = float(val)
            cfg = replace(cfg, **{key: val})
        return cfg.validate()


@dataclass(frozen=True)
class TrainItem:
    """One training example: a program with its coreset value vector."""

    program_id: str
    family: str
    program: Program
    graph: ProgramGraph
    features: np.ndarray
    values: np.ndarray


def prepare_items(programs, value_matrix, ids=None, families=None,
                  use_type_graph: bool = True) -> list[TrainItem]:
    values = np.asarray(value_matrix, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != len(programs):
        raise InputError("value matrix must be (n_programs, coreset size)")
    ids = ids or [f"prog{i}" for i in range(len(programs))]
    families = families or ["?"] * len(programs)
    items = []
    for pid, fam, p, vv in zip(ids, families, programs, values):
        g = build_graph(p)
        if use_type_graph:
            g = expand_type_graph(g)
        g = ProgramGraph(g.nodes, g.edges, tuple(float(x) for x in vv))
        items.append(TrainItem(pid, fam, p, g, flat_features(p), vv.copy()))
    return items


class Adam:
    """Adaptive moment estimation over a named parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            if g is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * (g * g)
            m_hat = self.m[k] / (1 - b1 ** self.t)
            v_hat = self.v[k] / (1 - b2 ** self.t)
            self.params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _loss_for_example(output, item_values, sequences, cfg: TrainConfig):
    if cfg.objective == "nvp":
        return T.cross_entropy_soft(output, nvp_targets(item_values, cfg.temperature))
    if cfg.objective == "bc":
        label = bc_label(list(item_values), sequences)
        onehot = np.zeros(len(item_values))
        onehot[label] = 1.0
        return T.cross_entropy_soft(output, onehot)
    target = np.asarray(item_values, dtype=np.float64).reshape(1, -1)
    return T.mse(output, target)


def _validation_metric(params, vocab, cfg, gean_cfg, val_items, sequences,
                       oz_cache) -> float:
    rows = []
    for item in val_items:
        if cfg.encoder == "gean":
            scores = gean_predict(encode_graph(item.graph, vocab), params, gean_cfg)
        else:
            scores = mlp_predict(np.log1p(item.features), params)
        plan = infer(scores, sequences, cfg.budget)
        rows.append(evaluate_program(item.program, item.program_id, item.family,
                                     plan, oz_cache[item.program_id]))
    return mean_over_oz(rows)


def train_model(train_items, coreset_sequences, cfg: TrainConfig,
                val_items=()) -> tuple[dict[str, np.ndarray], Vocabulary | None, list[dict]]:
    """Mini-batch training loop; fully seeded, single worker, deterministic.

    Returns (best parameters, vocabulary or None for the flat encoder,
    per-epoch log records). With validation items the retained checkpoint
    is the best validation mean-over-Oz; otherwise the final epoch wins.
    """
    cfg.validate()
    if not train_items:
        raise InputError("empty training dataset")
    k = len(coreset_sequences)
    if any(item.values.shape != (k,) for item in train_items):
        raise InputError("value vector length must equal the coreset size")

    vocab = None
    gean_cfg = None
    if cfg.encoder == "gean":
        vocab = build_vocabulary([item.graph for item in train_items])
        gean_cfg = GeanConfig(
            vocab_size=len(vocab), output_dim=k, embed_dim=cfg.embed_dim,
            num_layers=cfg.num_layers, hidden_dim=cfg.hidden_dim,
            head=cfg.objective, update_edges=cfg.update_edges,
        )
        params = init_params(gean_cfg, seed=cfg.seed)
        encoded = {item.program_id: encode_graph(item.graph, vocab)
                   for item in train_items}
    else:
        params = init_mlp_params(train_items[0].features.size, cfg.hidden_dim,
                                 k, seed=cfg.seed)
        encoded = {}

    opt = Adam(params, lr=cfg.learning_rate)
    rng = random.Random(cfg.seed)
    oz_cache = {item.program_id: baseline_sizes(item.program)[1]
                for item in val_items}
    log: list[dict] = []
    best_metric = -np.inf
    best_params = {k_: v.copy() for k_, v in params.items()}
    mixup_enabled = cfg.mixup_prob > 0 and cfg.objective == "nvp" and cfg.encoder == "gean"

    for epoch in range(cfg.epochs):
        order = list(range(len(train_items)))
        rng.shuffle(order)
        total_loss = 0.0
        n_examples = 0
        mixup_pairs = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_items[i] for i in order[start:start + cfg.batch_size]]
            examples = []  # (encoded graph or features, value vector)
            i = 0
            while i < len(batch):
                if (mixup_enabled and i + 1 < len(batch)
                        and rng.random() < cfg.mixup_prob):
                    composed = mixup(batch[i].graph, batch[i + 1].graph)
                    examples.append((encode_graph(composed, vocab),
                                     np.asarray(composed.values)))
                    mixup_pairs += 1
                    i += 2
                else:
                    item = batch[i]
                    if cfg.encoder == "gean":
                        examples.append((encoded[item.program_id], item.values))
                    else:
                        examples.append((np.log1p(item.features), item.values))
                    i += 1
            wrapped = {name: T.Tensor(arr, requires_grad=True)
                       for name, arr in params.items()}
            losses = []
            for enc, values in examples:
                if cfg.encoder == "gean":
                    out = forward(enc, wrapped, gean_cfg)
                else:
                    out = mlp_forward(enc, wrapped)
                losses.append(_loss_for_example(out, values, coreset_sequences, cfg))
            batch_loss = losses[0]
            for extra in losses[1:]:
                batch_loss = T.add(batch_loss, extra)
            batch_loss = T.scale(batch_loss, 1.0 / len(losses))
            T.backward(batch_loss)
            opt.step({name: t.grad for name, t in wrapped.items()})
            total_loss += float(batch_loss.data) * len(losses)
            n_examples += len(losses)

        epoch_loss = total_loss / n_examples
        record = {"epoch": epoch, "loss": epoch_loss, "mixup_pairs": mixup_pairs}
        if val_items:
            metric = _validation_metric(params, vocab, cfg, gean_cfg, val_items,
                                        coreset_sequences, oz_cache)
            record["val_mean_over_oz"] = metric
            if metric > best_metric:
                best_metric = metric
                best_params = {k_: v.copy() for k_, v in params.items()}
        else:
            best_params = {k_: v.copy() for k_, v in params.items()}
        log.append(record)

    return best_params, vocab, log


class CoresetPolicyModel(BaseEstimator):
    """Trainable policy over a fixed coreset, sklearn style.

    ``fit(X, y)`` takes programs and their raw (n, K) value vectors;
    ``predict(X)`` returns per-program scores over the K sequences, and
    ``plan`` turns one program's scores into a budgeted rollout plan.
    """

    def __init__(self, coreset=None, objective="nvp", encoder="gean",
                 temperature=0.25, learning_rate=1e-3, batch_size=8,
                 epochs=30, mixup_prob=0.5, embed_dim=32, num_layers=2,
                 hidden_dim=64, update_edges=True, use_type_graph=True,
                 budget=45, seed=0):
        self.coreset = coreset
        self.objective = objective
        self.encoder = encoder
        self.temperature = temperature
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.mixup_prob = mixup_prob
        self.embed_dim = embed_dim
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.update_edges = update_edges
        self.use_type_graph = use_type_graph
        self.budget = budget
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            objective=self.objective, encoder=self.encoder,
            temperature=self.temperature, learning_rate=self.learning_rate,
            batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
            mixup_prob=self.mixup_prob, embed_dim=self.embed_dim,
            num_layers=self.num_layers, hidden_dim=self.hidden_dim,
            update_edges=self.update_edges, use_type_graph=self.use_type_graph,
            budget=self.budget,
        ).validate()

    def fit(self, X, y, val_X=None, val_y=None, ids=None, families=None):
        if self.coreset is None:
            raise ConfigError("CoresetPolicyModel needs coreset sequences")
        cfg = self._config()
        items = prepare_items(X, y, ids=ids, families=families,
                              use_type_graph=self.use_type_graph)
        val_items = []
        if val_X is not None:
            val_values = (np.asarray(val_y) if val_y is not None
                          else np.ones((len(val_X), len(self.coreset))))
            val_items = prepare_items(
                val_X, val_values,
                ids=[f"val{i}" for i in range(len(val_X))],
                use_type_graph=self.use_type_graph)
        self.params_, self.vocab_, self.history_ = train_model(
            items, tuple(tuple(s) for s in self.coreset), cfg, val_items)
        self.config_ = cfg
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("CoresetPolicyModel is not fitted yet")

    def _scores(self, program: Program) -> np.ndarray:
        if self.encoder == "gean":
            g = build_graph(program)
            if self.use_type_graph:
                g = expand_type_graph(g)
            gean_cfg = GeanConfig(
                vocab_size=len(self.vocab_), output_dim=len(self.coreset),
                embed_dim=self.embed_dim, num_layers=self.num_layers,
                hidden_dim=self.hidden_dim, head=self.objective,
                update_edges=self.update_edges,
            )
            return gean_predict(encode_graph(g, self.vocab_), self.params_, gean_cfg)
        return mlp_predict(np.log1p(flat_features(program)), self.params_)

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return np.stack([self._scores(p) for p in X])

    def plan(self, program: Program):
        self._check_fitted()
        return infer(self._scores(program), self.coreset, self.budget)

    # -- persistence ---------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        self._check_fitted()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        T.save_checkpoint(directory / "params.pfck", self.params_)
        meta = {
            "estimator": {k: (list(map(list, self.coreset)) if k == "coreset" else v)
                          for k, v in self.get_params().items()},
            "train_config": asdict(self.config_),
        }
        (directory / "config.json").write_text(json.dumps(meta, indent=1) + "\n")
        if self.vocab_ is not None:
            (directory / "vocab.json").write_text(self.vocab_.to_json() + "\n")
        with (directory / "history.jsonl").open("w") as fh:
            for record in self.history_:
                fh.write(json.dumps(record) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "CoresetPolicyModel":
        directory = Path(directory)
        meta = json.loads((directory / "config.json").read_text())
        est_params = meta["estimator"]
        est_params["coreset"] = tuple(tuple(s) for s in est_params["coreset"])
        model = cls(**est_params)
        model.params_ = T.load_checkpoint(directory / "params.pfck")
        vocab_path = directory / "vocab.json"
        model.vocab_ = (Vocabulary.from_json(vocab_path.read_text())
                        if vocab_path.exists() else None)
        history_path = directory / "history.jsonl"
        model.history_ = [
            json.loads(line)
            for line in history_path.read_text().splitlines() if line
        ] if history_path.exists() else []
        model.config_ = model._config()
        return model
