"""Deterministic discrete-event simulation of the asynchronous protocol.

Sim-time is integer ticks. Events at equal timestamps are ordered by a fixed
kind rank (server work first, async steps before model returns) and then by
subject id, so the processed sequence is a pure function of the inputs.
"""

import enum
import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from .client import ClientState, Phase
from .errors import ConfigError
from .server import ServerState, handle_upload, run_aggregation


class EventKind(enum.Enum):
    # enum order doubles as the tie-break rank at equal timestamps
    AGGREGATION_DONE = 0
    UPLOAD_ARRIVED = 1
    ASYNC_STEP_DUE = 2
    MODEL_RETURNED = 3
    LOCAL_ROUND_DONE = 4
    EXPERIMENT_END = 5


def _per_client(value, n, name):
    if np.isscalar(value):
        return tuple(int(value) for _ in range(n))
    value = tuple(int(v) for v in value)
    if len(value) != n:
        raise ConfigError(f"{name} needs one value per client")
    return value


@dataclass(frozen=True)
class SimConfig:
    n_clients: int
    rounds: int
    local_step_duration: object = 1     # scalar or per-client, ticks per SGD step
    upload_latency: object = 10
    download_latency: object = 10
    server_compute_time: int = 5
    async_step_duration: object = 2     # None disables async training
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        for name in ("local_step_duration", "upload_latency", "download_latency"):
            vals = _per_client(getattr(self, name), self.n_clients, name)
            if any(v < 0 for v in vals):
                raise ConfigError(f"{name} must be nonnegative")
            object.__setattr__(self, name, vals)
        if self.server_compute_time < 0:
            raise ConfigError("server_compute_time must be nonnegative")
        if self.async_step_duration is not None:
            object.__setattr__(self, "async_step_duration", int(self.async_step_duration))
            if self.async_step_duration < 1:
                raise ConfigError("async_step_duration must be >= 1 tick (or None)")


@dataclass
class TimelineRecord:
    t: int
    kind: str
    subject: int          # client index, or -1 for the server
    round: int
    async_steps: int = 0
    idle: int = 0

    def as_json(self) -> str:
        return json.dumps({"t": self.t, "kind": self.kind, "subject": self.subject,
                           "round": self.round, "async_steps": self.async_steps,
                           "idle": self.idle})


@dataclass
class TimelineLog:
    records: list = field(default_factory=list)

    def append(self, rec: TimelineRecord) -> None:
        if self.records and rec.t < self.records[-1].t:
            raise ConfigError("timeline timestamps must be nondecreasing")
        self.records.append(rec)

    def export(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(rec.as_json() + "\n")

    def by_kind(self, kind: str):
        return [r for r in self.records if r.kind == kind]


@dataclass
class _Pending:
    round_start: int = 0
    wait_start: int = 0
    async_count: int = 0
    rounds_done: int = 0


def run_simulation(cfg: SimConfig, clients, server: ServerState = None,
                   on_round_complete=None):
    """Drive clients (and optionally a server) through cfg.rounds federated rounds.

    Without a server each client runs solo: local rounds back to back, no
    waiting and no async steps. on_round_complete(client, round_index, t) is
    called after each adoption.

    Returns (TimelineLog, clients, server).
    """
    clients = list(clients)
    if len(clients) != cfg.n_clients:
        raise ConfigError("client count does not match SimConfig")
    if server is not None and server.expected_clients != cfg.n_clients:
        raise ConfigError("server expects a different client count")

    log = TimelineLog()
    queue = []
    seq = 0

    def push(t, kind, subject, payload=None):
        nonlocal seq
        heapq.heappush(queue, (t, kind.value, subject, seq, kind, payload))
        seq += 1

    state = [_Pending() for _ in clients]
    # dispatches carry client ids, which need not equal list positions
    index_of = {client.client_id: i for i, client in enumerate(clients)}

    def start_round(c, t):
        client = clients[c]
        state[c].round_start = t
        dur = cfg.local_step_duration[c] * client.local_epochs * client.n_batches()
        push(t + dur, EventKind.LOCAL_ROUND_DONE, c)

    for c in range(cfg.n_clients):
        start_round(c, 0)

    while queue:
        t, _, subject, _, kind, payload = heapq.heappop(queue)

        if kind is EventKind.LOCAL_ROUND_DONE:
            client = clients[subject]
            msg = client.local_train_round()
            log.append(TimelineRecord(t, kind.name, subject, client.fed_round))
            state[subject].wait_start = t
            state[subject].async_count = 0
            if server is None:
                _complete_round(cfg, clients, subject, t, msg.params, state, log,
                                on_round_complete, start_round)
            else:
                push(t + cfg.upload_latency[subject], EventKind.UPLOAD_ARRIVED,
                     subject, msg)
                if cfg.async_step_duration is not None:
                    push(t + cfg.async_step_duration, EventKind.ASYNC_STEP_DUE, subject)

        elif kind is EventKind.UPLOAD_ARRIVED:
            handle_upload(server, payload)
            log.append(TimelineRecord(t, kind.name, -1, server.round))
            if server.ready:
                push(t + cfg.server_compute_time, EventKind.AGGREGATION_DONE, -1)

        elif kind is EventKind.AGGREGATION_DONE:
            dispatches = run_aggregation(server)
            log.append(TimelineRecord(t, kind.name, -1, server.round - 1))
            for d in dispatches:
                c = index_of[d.client_id]
                push(t + cfg.download_latency[c], EventKind.MODEL_RETURNED,
                     c, d.params)

        elif kind is EventKind.ASYNC_STEP_DUE:
            client = clients[subject]
            if client.phase is Phase.WAITING:
                client.async_train_step()
                state[subject].async_count += 1
                log.append(TimelineRecord(t, kind.name, subject, client.fed_round))
                push(t + cfg.async_step_duration, EventKind.ASYNC_STEP_DUE, subject)

        elif kind is EventKind.MODEL_RETURNED:
            _complete_round(cfg, clients, subject, t, payload, state, log,
                            on_round_complete, start_round)

    end_time = log.records[-1].t if log.records else 0
    log.append(TimelineRecord(end_time, EventKind.EXPERIMENT_END.name, -1,
                              cfg.rounds))
    return log, clients, server


def _complete_round(cfg, clients, c, t, params, state, log, on_round_complete,
                    start_round):
    client = clients[c]
    pend = state[c]
    wait = t - pend.wait_start
    d = cfg.async_step_duration
    idle = wait - pend.async_count * d if d is not None else wait
    round_index = client.fed_round
    client.adopt_global(params)
    log.append(TimelineRecord(t, EventKind.MODEL_RETURNED.name, c, round_index,
                              async_steps=pend.async_count, idle=idle))
    if on_round_complete is not None:
        on_round_complete(client, round_index, t)
    pend.rounds_done += 1
    if pend.rounds_done < cfg.rounds:
        start_round(c, t)
    else:
        client.finish()


def synchronous_reference(cfg: SimConfig, clients, server: ServerState = None,
                          on_round_complete=None):
    """Same schedule with async training disabled: waits are pure idle time."""
    sync_cfg = SimConfig(cfg.n_clients, cfg.rounds, cfg.local_step_duration,
                         cfg.upload_latency, cfg.download_latency,
                         cfg.server_compute_time, None, cfg.seed)
    return run_simulation(sync_cfg, clients, server, on_round_complete)
