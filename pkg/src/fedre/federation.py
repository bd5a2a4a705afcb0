"""Round-based federated training with layer-wise LDP on the clients and
either FedAvg or perturbation-aware (PDA) aggregation on the server.

Each round: the server samples clients; every selected client computes a
full-batch gradient on the global model, scores its layers on its own
sensitive regions, splits its budget, clips and perturbs, and uploads. With
PDA the server rebuilds each client's model ``w - lr * g_k``, scores it on
the labelled public split, turns the scores into per-layer softmax weights
and divides each client's gradient by its weight when aggregating.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import datagen, nn, privacy, sensitivity
from .config import ExperimentConfig
from .metrics import segmentation_metrics

log = logging.getLogger(__name__)


@dataclass
class ClientState:
    id: int
    dataset: list
    stream_id: int = 0

    def __post_init__(self):
        if not self.dataset:
            raise ValueError(f"client {self.id} has no data")


@dataclass
class ClientUpdate:
    client_id: int
    gradients: nn.GradientSet
    layer_budget: privacy.LayerBudget
    n_samples: int
    pre_noise_norms: list
    loss: float = math.nan
    psi: list | None = None


@dataclass
class RoundRecord:
    round: int
    selected: list
    budgets: list
    weights: list | None
    loss: float
    iou: float
    precision: float
    recall: float
    f_score: float
    floor_hits: int = 0
    psi: list = field(default_factory=list)


@dataclass
class TrainingRun:
    history: list
    model: nn.Model
    test: list = field(default_factory=list)
    public: list = field(default_factory=list)
    clients: list = field(default_factory=list)


# ---------------------------------------------------------------- client side


def sample_clients(K: int, fraction: float, rng: np.random.Generator) -> list[int]:
    """``ceil(fraction * K)`` distinct ids drawn uniformly, returned sorted."""
    n = math.ceil(fraction * K)
    if not 1 <= n <= K:
        raise ValueError(f"cannot select {n} of {K} clients")
    if n == K:
        return list(range(K))
    return sorted(int(i) for i in rng.choice(K, size=n, replace=False))


def client_update(
    global_model: nn.Model,
    client: ClientState,
    spec: privacy.PrivacySpec,
    round_index: int,
    rng: np.random.Generator,
    *,
    psi_samples: int = 10,
    fd_step: float = 1e-4,
    allocation: str = "psi",
    uniform_psi: bool = False,
    psi_seed: int = 0,
) -> ClientUpdate:
    """One local step: mean gradient, PSI scores, budget split, clip, perturb."""
    if round_index >= spec.rounds:
        raise ValueError(f"round {round_index} beyond the privacy horizon of {spec.rounds} rounds")
    X, Y = datagen.to_arrays(client.dataset)
    loss, grads = nn.batch_gradient(global_model, X, Y)
    L = global_model.layer_count

    psi = None
    if allocation == "uniform":
        budget = privacy.allocate_uniform(L, spec)
    else:
        if uniform_psi or spec.noiseless:
            # every score equal: the split is even and no Jacobian is needed
            scores = [1.0] * L
        else:
            scores = sensitivity.psi_scores_for_model(
                global_model, client.dataset, psi_samples, fd_step, seed=psi_seed
            ).per_layer
            psi = scores
        budget = privacy.allocate_budget(scores, spec)
    noisy, norms = privacy.privatize(grads, budget, spec, rng)
    return ClientUpdate(client.id, noisy, budget, len(client.dataset), norms, loss, psi)


# ---------------------------------------------------------------- server side


def softmax_weights(scores) -> np.ndarray:
    """Column-wise softmax of a (clients, layers) score matrix."""
    s = np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def server_weights(
    updates: list,
    received_models: list,
    public: list,
    *,
    max_samples: int = 10,
    h: float = 1e-4,
    seed: int = 0,
) -> np.ndarray:
    """Per-layer aggregation weights, shape (clients, layers).

    Every received model is scored on the same public subset.
    """
    if not public:
        raise ValueError("server weights need a non-empty public dataset")
    if len(updates) != len(received_models):
        raise ValueError("need one received model per update")
    scores = [
        sensitivity.psi_scores_for_model(m, public, max_samples, h, seed=seed).per_layer
        for m in received_models
    ]
    return softmax_weights(scores)


def aggregate_pda(prev_model: nn.Model, updates: list, weights, lr: float, alpha_floor: float = 1e-3):
    """``w_l = w_l - (lr / K) * sum_k g_l^k / max(alpha_l^k, alpha_floor)``.

    Returns ``(model, floor_hits)``.
    """
    if alpha_floor <= 0:
        raise ValueError("alpha_floor must be positive")
    alpha = np.asarray(weights, dtype=np.float64)
    K = len(updates)
    if alpha.shape != (K, prev_model.layer_count):
        raise ValueError(f"weights shape {alpha.shape}, expected {(K, prev_model.layer_count)}")
    hits = int(np.sum(alpha < alpha_floor))
    if hits:
        log.warning("alpha floor %.3g applied to %d client-layer weights", alpha_floor, hits)
    alpha = np.maximum(alpha, alpha_floor)
    params = []
    for l, (w, b) in enumerate(prev_model.params):
        dw = sum(u.gradients.per_layer[l].weight / alpha[k, l] for k, u in enumerate(updates))
        db = sum(u.gradients.per_layer[l].bias / alpha[k, l] for k, u in enumerate(updates))
        params.append((w - lr / K * dw, b - lr / K * db))
    return prev_model.with_params(params), hits


def aggregate_fedavg(prev_model: nn.Model, updates: list, sizes, lr: float) -> nn.Model:
    """``w = w - lr * sum_k (|D_k| / |D|) g^k``."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if len(sizes) != len(updates) or np.any(sizes <= 0):
        raise ValueError("need one positive size per update")
    frac = sizes / sizes.sum()
    params = []
    for l, (w, b) in enumerate(prev_model.params):
        dw = sum(f * u.gradients.per_layer[l].weight for f, u in zip(frac, updates))
        db = sum(f * u.gradients.per_layer[l].bias for f, u in zip(frac, updates))
        params.append((w - lr * dw, b - lr * db))
    return prev_model.with_params(params)


# ---------------------------------------------------------------- orchestration


def dataset_spec(cfg: ExperimentConfig, n: int) -> datagen.DatasetSpec:
    return datagen.DatasetSpec(
        n_samples=n, height=cfg.height, width=cfg.width,
        tamper_min=cfg.tamper_min, tamper_max=cfg.tamper_max,
        psi_count_min=cfg.psi_count_min, psi_count_max=cfg.psi_count_max,
        psi_size_min=cfg.psi_size_min, psi_size_max=cfg.psi_size_max,
        texture_seed=cfg.texture_seed, noise=cfg.noise, tamper_boost=cfg.tamper_boost,
    )


def build_model(cfg: ExperimentConfig, seed=None) -> nn.Model:
    seed = [cfg.seed, 3] if seed is None else seed
    shape = (1, cfg.height, cfg.width)
    if cfg.arch == "dense":
        return nn.dense_model(seed, shape, cfg.hidden)
    return nn.init_model(nn.conv_layers(cfg.hidden), shape, seed, input_offset=0.5)


def privacy_spec(cfg: ExperimentConfig, rounds=None) -> privacy.PrivacySpec:
    return privacy.PrivacySpec(cfg.epsilon, cfg.delta, max(rounds or cfg.rounds, 1), cfg.clip, cfg.s_floor)


def prepare_data(cfg: ExperimentConfig, samples=None):
    """Return ``(clients, public, test)``.

    The pool is the dataset file (or a generated corpus of ``n_samples``)
    whose last ``n_test`` samples are held out; public samples are drawn per format from
    the rest, and the private remainder is sorted by format and dealt into
    equal contiguous shares, so client format mixes differ.
    """
    if samples is None:
        if cfg.data:
            samples = datagen.load_dataset(cfg.data)
        else:
            samples = datagen.generate(dataset_spec(cfg, cfg.n_samples), [cfg.seed, 1])
    if len(samples) <= cfg.n_test:
        raise ValueError(f"{len(samples)} samples cannot hold out {cfg.n_test} for testing")
    pool, test = samples[:-cfg.n_test], samples[-cfg.n_test:]
    private, public = datagen.split_public(pool, cfg.public_per_format, [cfg.seed, 2])
    order = sorted(range(len(private)), key=lambda i: (private[i].format_id, i))
    share = len(private) // cfg.clients
    if share < 1:
        raise ValueError(f"{len(private)} private samples cannot feed {cfg.clients} clients")
    clients = [
        ClientState(k, [private[i] for i in order[k * share:(k + 1) * share]], k)
        for k in range(cfg.clients)
    ]
    return clients, public, test


def evaluate(model: nn.Model, samples: list) -> tuple[float, float, float, float]:
    X, Y = datagen.to_arrays(samples)
    return segmentation_metrics(nn.forward_batch(model, X), Y)


def run_round(model, cfg, t, clients, public, spec):
    """Execute round ``t``; returns ``(new_model, partial record fields)``."""
    K = len(clients)
    selected = sample_clients(K, cfg.fraction, np.random.default_rng([cfg.seed, 4, t]))
    updates = [
        client_update(
            model, clients[k], spec, t, privacy.noise_stream(cfg.seed, t, k),
            psi_samples=cfg.psi_samples, fd_step=cfg.fd_step, allocation=cfg.allocation,
            uniform_psi=cfg.uniform_psi, psi_seed=cfg.seed * 7919 + t * 131 + k,
        )
        for k in selected
    ]
    for u in updates:
        if not privacy.compose_check(u.layer_budget, spec):
            raise RuntimeError(f"client {u.client_id} budget violates composition")
    weights, hits = None, 0
    if cfg.aggregation == "pda":
        if cfg.uniform_psi:
            weights = np.full((len(updates), model.layer_count), 1.0 / len(updates))
        else:
            received = [nn.apply_gradient(model, u.gradients, cfg.lr) for u in updates]
            weights = server_weights(
                updates, received, public, max_samples=cfg.psi_samples, h=cfg.fd_step, seed=[cfg.seed, 5, t]
            )
        # lr / K keeps uniform weights equivalent to FedAvg with equal shares
        model, hits = aggregate_pda(model, updates, weights, cfg.lr / len(updates), cfg.alpha_floor)
    else:
        model = aggregate_fedavg(model, updates, [u.n_samples for u in updates], cfg.lr)
    loss = float(np.mean([u.loss for u in updates]))
    return model, selected, updates, weights, loss, hits


def _with_round(exc: Exception, t: int) -> Exception:
    # keep the original type (and its exit code) but prefix the round
    exc.args = (f"round {t}: {exc}",) + tuple(exc.args[1:])
    return exc


def run_training(cfg: ExperimentConfig, samples=None, progress=None) -> TrainingRun:
    """Full simulation; a pure function of the config (and optional sample pool)."""
    clients, public, test = prepare_data(cfg, samples)
    model = build_model(cfg)
    spec = privacy_spec(cfg)
    history = []
    for t in range(cfg.rounds):
        try:
            model, selected, updates, weights, loss, hits = run_round(model, cfg, t, clients, public, spec)
            iou, prec, rec, f = evaluate(model, test)
        except (ArithmeticError, ValueError) as exc:
            raise _with_round(exc, t)
        history.append(RoundRecord(
            t, selected, [u.layer_budget for u in updates],
            None if weights is None else np.asarray(weights).tolist(),
            loss, iou, prec, rec, f, hits, [u.psi for u in updates],
        ))
        if progress:
            progress(history[-1])
    return TrainingRun(history, model, test, public, clients)


# ---------------------------------------------------------------- history output


def fmt(v: float) -> str:
    """17 significant digits, enough for an exact float round trip."""
    return format(float(v), ".17g")


HISTORY_COLUMNS = ("round", "clients", "loss", "iou", "precision", "recall", "f_score")


def history_csv(history: list) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for r in history:
        ids = " ".join(str(k) for k in r.selected)
        lines.append(",".join([str(r.round), ids] + [fmt(v) for v in (r.loss, r.iou, r.precision, r.recall, r.f_score)]))
    return "\n".join(lines) + "\n"


def history_records(history: list) -> list[dict]:
    out = []
    for r in history:
        out.append({
            "round": r.round,
            "clients": list(r.selected),
            "budgets": [
                {"epsilon": b.per_layer_epsilon, "delta": b.per_layer_delta, "sigma": b.per_layer_sigma}
                for b in r.budgets
            ],
            "weights": r.weights,
            "psi": r.psi,
            "floor_hits": r.floor_hits,
            "loss": r.loss,
            "iou": r.iou,
            "precision": r.precision,
            "recall": r.recall,
            "f_score": r.f_score,
        })
    return out
