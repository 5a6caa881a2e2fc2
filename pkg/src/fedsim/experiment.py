"""End-to-end experiment wiring: datasets, clients, server, event-driven
schedule, and per-round verification metrics."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregationConfig
from .client import build_client
from .errors import ConfigError
from .losses import LossWeights
from .metrics import MetricsRecord, ScoreSet, _operating_points, eer, score_pairs, tar_at_far
from .server import ServerState, Strategy, load_probe_set
from .simulation import SimConfig, run_simulation
from .synth import SynthSpec, generate

MODES = ("solo", "fedavg", "full")

MODE_PRESETS = {
    # mode -> (async_enabled, use_total_loss, personalized_agg)
    "solo": (False, True, False),
    "fedavg": (False, False, False),
    "full": (True, True, True),
}


@dataclass(frozen=True)
class Toggles:
    """Ablation switches; None means take the mode preset."""

    async_enabled: object = None
    use_total_loss: object = None
    personalized_agg: object = None

    def resolve(self, mode: str):
        preset = MODE_PRESETS[mode]
        return tuple(p if o is None else bool(o)
                     for o, p in zip((self.async_enabled, self.use_total_loss,
                                      self.personalized_agg), preset))


@dataclass(frozen=True)
class TrainingParams:
    lr: float = 0.05
    epochs: int = 3
    batch: int = 16
    alpha1: float = 0.05
    alpha2: float = 1.0
    alpha3: float = 0.02
    center_lr: float = 0.1
    local_hidden: int = 64
    fed_hidden: int = 32
    emb_dim: int = 16
    fuse_dim: int = 16


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "full"
    seed: int = 0
    rounds: int = 10
    synth: SynthSpec = field(default_factory=SynthSpec)
    training: TrainingParams = field(default_factory=TrainingParams)
    agg: AggregationConfig = field(default_factory=AggregationConfig)
    probe_size: int = 32
    local_step_duration: int = 1
    upload_latency: int = 25
    download_latency: int = 25
    server_compute_time: int = 10
    async_step_duration: int = 1
    toggles: Toggles = field(default_factory=Toggles)
    client_subset: tuple = None   # indices into the synth clients

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.client_subset is not None:
            subset = tuple(sorted(set(int(c) for c in self.client_subset)))
            if not subset or any(c < 0 or c >= self.synth.n_clients for c in subset):
                raise ConfigError("client_subset must index the synthetic clients")
            object.__setattr__(self, "client_subset", subset)


@dataclass
class RunResult:
    config: ExperimentConfig
    metrics: list            # MetricsRecord, in event order
    timeline: object         # TimelineLog
    clients: list
    server: object
    test_sets: list

    def final_metrics(self):
        last = {}
        for rec in self.metrics:
            last[rec.client_id] = rec
        return [last[c] for c in sorted(last)]


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    async_on, total_loss_on, personalized_on = cfg.toggles.resolve(cfg.mode)
    data, probe_source = generate(cfg.synth)
    subset = cfg.client_subset or tuple(range(cfg.synth.n_clients))
    tr = cfg.training
    if total_loss_on:
        weights = LossWeights(tr.alpha1, tr.alpha2, tr.alpha3)
    else:
        weights = LossWeights(0.0, tr.alpha2, 0.0)

    clients = []
    test_sets = []
    for c in subset:
        train, test = data[c]
        clients.append(build_client(
            c, train, input_dim=cfg.synth.input_dim, local_hidden=tr.local_hidden,
            fed_hidden=tr.fed_hidden, emb_dim=tr.emb_dim, fuse_dim=tr.fuse_dim,
            loss_weights=weights, lr=tr.lr, epochs=tr.epochs, batch_size=tr.batch,
            center_lr=tr.center_lr, seed=cfg.seed))
        test_sets.append(test)

    n = len(clients)
    if cfg.mode == "solo" or n == 1:
        server = None
    else:
        probes = load_probe_set(probe_source, cfg.probe_size, (cfg.seed, 555))
        strategy = Strategy.PERSONALIZED if personalized_on else Strategy.FEDAVG
        server = ServerState(expected_clients=n, probes=probes,
                             fed_arch=clients[0].fed_channel.clone(),
                             agg_cfg=cfg.agg, strategy=strategy,
                             client_ids=subset)

    sim_cfg = SimConfig(
        n_clients=n, rounds=cfg.rounds,
        local_step_duration=cfg.local_step_duration,
        upload_latency=cfg.upload_latency, download_latency=cfg.download_latency,
        server_compute_time=cfg.server_compute_time,
        async_step_duration=cfg.async_step_duration if async_on else None,
        seed=cfg.seed)

    metrics = []
    index_of = {c.client_id: i for i, c in enumerate(clients)}

    def on_round_complete(client, round_index, t):
        test = test_sets[index_of[client.client_id]]
        metrics.append(evaluate_client(client, test, round_index, cfg.seed))

    timeline, clients, server = run_simulation(sim_cfg, clients, server,
                                               on_round_complete)
    return RunResult(cfg, metrics, timeline, clients, server, test_sets)


def evaluate_client(client, test, round_index, seed) -> MetricsRecord:
    emb = client.extract_embeddings(test.inputs)
    scores = score_pairs(emb, test.labels, seed=seed * 1000 + client.client_id)
    return MetricsRecord(client.client_id, round_index, eer(scores),
                         tar_at_far(scores, 0.01),
                         int(scores.genuine.size), int(scores.impostor.size))


def client_score_set(client, test, seed) -> ScoreSet:
    emb = client.extract_embeddings(test.inputs)
    return score_pairs(emb, test.labels, seed=seed * 1000 + client.client_id)


def write_roc_csv(path, scores: ScoreSet) -> None:
    """Raw threshold sweep (threshold, FAR, FRR) for external DET plotting."""
    thresholds, far, frr = _operating_points(scores)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "far", "frr"])
        for t, fa, fr in zip(thresholds, far, frr):
            writer.writerow([repr(float(t)), repr(float(fa)), repr(float(fr))])


def mean_eer(records) -> float:
    by_client = {}
    for rec in records:
        by_client[rec.client_id] = rec
    return float(np.mean([r.eer for r in by_client.values()]))
