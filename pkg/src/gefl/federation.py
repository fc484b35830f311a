"""Client/server round loops for GeFL, GeFL-F and the baselines.

Clients never share mutable state: every local update works on a copy of
the broadcast parameters and returns a flat vector. Within a round the
client updates are independent and may run on a thread pool; aggregation
always reduces in ascending client-id order, so serial and parallel runs
produce bitwise-identical parameters.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import archs as zoo
from . import rng as rngs
from .datasets import LabeledDataset
from .errors import ConfigError, DomainError
from .genmodels import FAMILIES, GenerativeModel, build_generative
from .metrics import mean_accuracy
from .nn import SGD, Network, sgd_update

GAN_MODES = ("freeze", "update")


@dataclass
class FederationConfig:
    t_ka: int = 100
    t_tn: int = 50
    t_fe: int = 20
    t_g: int = 5
    t_s: int = 1
    t_r: int = 5
    t_w: int = 5
    alpha: float = 0.1
    beta: float | None = None       # None: per-family default learning rate
    batch_size: int = 64
    clients: int = 10
    archs: int = 10
    family: str = "cvae"
    guidance: float = 0.0
    gan_mode: str = "freeze"
    homogeneity_level: int = 0
    participation: float = 1.0
    seed: int = 0
    workers: int = 1
    strict: bool = False
    latent_dim: int = 16
    gen_hidden: tuple[int, ...] = (64,)
    ddpm_steps: int = 100
    uncond_drop_prob: float = 0.1
    trunk: tuple[int, ...] = zoo.DEFAULT_TRUNK

    def __post_init__(self):
        counts = dict(t_ka=self.t_ka, t_tn=self.t_tn, t_fe=self.t_fe, t_g=self.t_g, t_s=self.t_s,
                      t_r=self.t_r, t_w=self.t_w)
        for name, v in counts.items():
            if v < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.batch_size < 1 or self.clients < 1 or self.archs < 1:
            raise ConfigError("batch_size, clients and archs must be positive")
        if self.archs > len(zoo.HEADER_HIDDEN):
            raise ConfigError(f"at most {len(zoo.HEADER_HIDDEN)} architectures are available")
        if self.alpha < 0 or (self.beta is not None and self.beta < 0):
            raise ConfigError("alpha and beta must be non-negative")
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        if self.gan_mode not in GAN_MODES:
            raise ConfigError(f"gan_mode must be one of {GAN_MODES}")
        if self.gan_mode == "update" and self.family != "cgan":
            raise ConfigError("gan_mode=update is only defined for the cgan family")
        if not np.isfinite(self.guidance) or self.guidance < 0:
            raise ConfigError("guidance must be finite and non-negative")
        if not 0 < self.participation <= 1:
            raise ConfigError("participation must lie in (0, 1]")
        if not 0 <= self.homogeneity_level <= zoo.max_level(self.trunk):
            raise ConfigError(f"homogeneity_level must lie in [0, {zoo.max_level(self.trunk)}]")


@dataclass
class ClientState:
    id: int
    arch: int
    shard: LabeledDataset
    target: Network                 # full target (GeFL) or header (GeFL-F)
    features: np.ndarray | None = None


@dataclass
class ServerState:
    gen: GenerativeModel | None
    targets: dict[int, Network]
    fe: Network | None = None
    headers: dict[int, Network] = field(default_factory=dict)
    gen_rounds: int = 0


@dataclass
class TraceRecord:
    round: int
    stage: str
    arch: str
    accuracy: float | None
    loss: float | None
    comm_up: int
    comm_down: int


@dataclass
class RunResult:
    trace: list[TraceRecord]
    per_arch: dict[int, float]
    mean_accuracy: float
    comm_up: int = 0
    comm_down: int = 0
    server: ServerState | None = field(default=None, repr=False)
    clients: list[ClientState] | None = field(default=None, repr=False)


class _Comm:
    def __init__(self):
        self.up = 0
        self.down = 0

    def add(self, floats: int):
        self.up += floats
        self.down += floats


# aggregation -----------------------------------------------------------


def aggregate(param_sets: Sequence[np.ndarray]) -> np.ndarray:
    """Coordinate-wise mean, reduced in list order.

    Computed as ``p_0 + sum_k (p_k - p_0) / K`` so that averaging K identical
    vectors returns that vector bitwise.
    """
    if len(param_sets) == 0:
        raise DomainError("cannot aggregate an empty set")
    base = np.asarray(param_sets[0], dtype=np.float64)
    acc = np.zeros_like(base)
    for p in param_sets[1:]:
        p = np.asarray(p, dtype=np.float64)
        if p.shape != base.shape:
            raise DomainError(f"parameter length mismatch: {p.shape} vs {base.shape}")
        acc += p - base
    return base + acc / len(param_sets)


def aggregate_by_arch(entries: Iterable[tuple[int, int, np.ndarray]]) -> dict[int, np.ndarray]:
    """Average ``(client_id, arch, params)`` entries within each architecture."""
    groups: dict[int, list[tuple[int, np.ndarray]]] = {}
    for cid, arch, params in entries:
        groups.setdefault(arch, []).append((cid, params))
    return {m: aggregate([p for _, p in sorted(g, key=lambda e: e[0])])
            for m, g in sorted(groups.items())}


# helpers ---------------------------------------------------------------


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def minibatches(n: int, batch: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch] for i in range(0, n, batch)]


def steps_per_epoch(n: int, batch: int) -> int:
    return math.ceil(n / batch)


def _participants(clients: Sequence[ClientState], cfg: FederationConfig, stage, rnd) -> list[ClientState]:
    ordered = sorted(clients, key=lambda c: c.id)
    if cfg.participation >= 1.0:
        return ordered
    gen = rngs.stream(cfg.seed, "participation", stage, rnd)
    n = max(1, int(round(cfg.participation * len(ordered))))
    keep = set(gen.choice(len(ordered), size=n, replace=False).tolist())
    return [c for i, c in enumerate(ordered) if i in keep]


def _shared_archs(clients: Sequence[ClientState]) -> set[int]:
    counts: dict[int, int] = {}
    for c in clients:
        counts[c.arch] = counts.get(c.arch, 0) + 1
    return {m for m, n in counts.items() if n >= 2}


def local_generative_update(gen: GenerativeModel, w_global: np.ndarray, x: np.ndarray,
                            y: np.ndarray, epochs: int, batch: int,
                            rng: np.random.Generator) -> tuple[np.ndarray, float | None]:
    """Start from ``w_global`` with fresh optimizer state and train ``epochs`` passes."""
    model = gen.copy()
    model.set_flat(w_global)
    model.reset_optimizer()
    loss = None
    for _ in range(epochs):
        for idx in minibatches(x.shape[0], batch, rng):
            out = model.train_step(x[idx], y[idx], rng)
            loss = out[-1] if isinstance(out, tuple) else out
    return model.get_flat(), loss


# stage (i): generative knowledge aggregation ----------------------------


def generative_knowledge_aggregation(server: ServerState, clients: Sequence[ClientState],
                                     cfg: FederationConfig, rounds: int | None = None,
                                     trace: list[TraceRecord] | None = None,
                                     comm: _Comm | None = None, stage: str = "ka") -> np.ndarray:
    """Federated training of the generative model; returns the new global weights.

    Clients train on ``client.features`` when set (feature-space variant),
    otherwise on their raw shard.
    """
    gen = server.gen
    if gen is None:
        raise ConfigError("generative knowledge aggregation needs a generative model")
    for c in clients:
        dim = c.features.shape[1] if c.features is not None else c.shard.dim
        if dim != gen.sample_dim:
            raise ConfigError(f"client {c.id} data dim {dim} != generator dim {gen.sample_dim}")
    rounds = cfg.t_ka if rounds is None else rounds
    w_g = gen.get_flat()
    for _ in range(rounds):
        rnd = server.gen_rounds
        part = _participants(clients, cfg, rngs.KA, rnd)

        def work(c: ClientState):
            x = c.features if c.features is not None else c.shard.inputs
            return local_generative_update(gen, w_g, x, c.shard.labels, cfg.t_g, cfg.batch_size,
                                           rngs.stream(cfg.seed, rngs.KA, c.id, rnd))

        results = _map(work, part, cfg.workers)
        w_g = aggregate([w for w, _ in results])
        gen.set_flat(w_g)
        server.gen_rounds += 1
        if comm is not None:
            comm.add(len(part) * gen.param_count)
        if trace is not None:
            losses = [l for _, l in results if l is not None]
            trace.append(TraceRecord(rnd + 1, stage, "gen", None,
                                     float(np.mean(losses)) if losses else None,
                                     comm.up if comm else 0, comm.down if comm else 0))
    return w_g


# stage (ii): target network training -------------------------------------


def _train_local_target(net: Network, shard_x: np.ndarray, shard_y: np.ndarray,
                        gen: GenerativeModel | None, cfg: FederationConfig, cid: int, rnd: int,
                        t_s: int, t_r: int, stage_tag: int) -> tuple[Network, float | None]:
    """Synthetic epochs then real epochs of SGD on one client's copy of ``net``."""
    opt = SGD(cfg.alpha)
    n_steps = steps_per_epoch(shard_x.shape[0], cfg.batch_size)
    loss = None
    if t_s > 0:
        if gen is None:
            raise ConfigError("synthetic epochs need a generative model")
        syn = rngs.stream(cfg.seed, rngs.TN_SYN, stage_tag, cid, rnd)
        num_classes = gen.num_classes
        for _ in range(t_s):
            for _ in range(n_steps):
                y = syn.integers(0, num_classes, size=cfg.batch_size)
                x = gen.sample(y, syn)
                loss = sgd_update(net, x, y, opt)
    real = rngs.stream(cfg.seed, rngs.TN_REAL, stage_tag, cid, rnd)
    for _ in range(t_r):
        for idx in minibatches(shard_x.shape[0], cfg.batch_size, real):
            loss = sgd_update(net, shard_x[idx], shard_y[idx], opt)
    return net, loss


def _evaluate(server: ServerState, clients: Sequence[ClientState], test: LabeledDataset,
              aggregation: str, feature_space: bool) -> tuple[dict[int, float], float]:
    fe = server.fe if feature_space else None
    if aggregation != "none":
        models = server.headers if feature_space else server.targets
        in_use = sorted({c.arch for c in clients})
        return mean_accuracy({m: models[m] for m in in_use}, test, fe)
    per_client: dict[int, list[float]] = {}
    for c in sorted(clients, key=lambda c: c.id):
        _, acc = mean_accuracy({0: c.target}, test, fe)
        per_client.setdefault(c.arch, []).append(acc)
    per = {m: float(sum(v) / len(v)) for m, v in sorted(per_client.items())}
    return per, float(sum(per.values()) / len(per))


def target_network_training(server: ServerState, clients: Sequence[ClientState],
                            cfg: FederationConfig, test: LabeledDataset | None = None,
                            aggregation: str = "arch", feature_space: bool = False,
                            use_generator: bool = True, trace: list[TraceRecord] | None = None,
                            comm: _Comm | None = None,
                            between_rounds: Callable[[int], None] | None = None,
                            stage: str = "tn") -> dict[int, Network]:
    """Train targets for ``cfg.t_tn`` rounds on synthetic then real data.

    ``aggregation`` is ``"arch"`` (per-architecture averaging), ``"none"``
    (local training only) or ``"lg"`` (first dense layer averaged across every
    client, the rest per architecture). With ``feature_space`` the per-arch
    models are the headers and inputs are frozen-extractor features.
    ``between_rounds(r)`` runs at the start of each round (GAN update mode).
    """
    if aggregation not in ("arch", "none", "lg"):
        raise ConfigError(f"unknown aggregation {aggregation!r}")
    gen = server.gen if use_generator else None
    t_s = cfg.t_s if use_generator else 0
    if t_s > 0 and gen is None:
        raise ConfigError("synthetic epochs need a generative model")
    if cfg.strict and t_s > 0 and server.gen_rounds == 0:
        raise ConfigError("strict mode: generator has not been trained")
    models = server.headers if feature_space else server.targets
    shared = _shared_archs(clients)
    stage_tag = 1 if feature_space else 0
    for r in range(cfg.t_tn):
        if between_rounds is not None:
            between_rounds(r)
        part = _participants(clients, cfg, rngs.TN_REAL, r)

        def work(c: ClientState):
            start = c.target if aggregation == "none" else models[c.arch]
            x = c.features if feature_space else c.shard.inputs
            return _train_local_target(start.copy(), x, c.shard.labels, gen, cfg, c.id, r,
                                       t_s, cfg.t_r, stage_tag)

        results = _map(work, part, cfg.workers)
        for c, (net, _) in zip(part, results):
            c.target = net
        flats = [(c.id, c.arch, net.flatten_params()) for c, (net, _) in zip(part, results)]
        if aggregation == "arch":
            for m, flat in aggregate_by_arch(flats).items():
                models[m].unflatten_params(flat)
            if comm is not None:
                comm.add(sum(models[c.arch].param_count for c in part if c.arch in shared))
        elif aggregation == "lg":
            n1 = _first_layer_size(models, part)
            first = aggregate([f[:n1] for _, _, f in sorted(flats, key=lambda e: e[0])])
            rest = aggregate_by_arch((cid, m, f[n1:]) for cid, m, f in flats)
            for m, flat in rest.items():
                models[m].unflatten_params(np.concatenate([first, flat]))
            if comm is not None:
                comm.add(sum(n1 + (models[c.arch].param_count - n1 if c.arch in shared else 0)
                             for c in part))
        if trace is not None and test is not None:
            per, mean = _evaluate(server, clients, test, aggregation, feature_space)
            losses: dict[int, list[float]] = {}
            for c, (_, l) in zip(part, results):
                if l is not None:
                    losses.setdefault(c.arch, []).append(l)
            up, down = (comm.up, comm.down) if comm else (0, 0)
            for m, acc in per.items():
                ls = losses.get(m)
                trace.append(TraceRecord(r + 1, stage, str(m), acc,
                                         float(np.mean(ls)) if ls else None, up, down))
            trace.append(TraceRecord(r + 1, stage, "mean", mean, None, up, down))
    return models


def _first_layer_size(models: dict[int, Network], part: Sequence[ClientState]) -> int:
    shapes = {models[c.arch].params[0][0].shape for c in part if models[c.arch].params}
    if len(shapes) != 1 or any(not models[c.arch].params for c in part):
        raise ConfigError("partial averaging needs every architecture to share its first layer shape")
    (i, o), = shapes
    return i * o + o


# GeFL-F -----------------------------------------------------------------


def warmup_feature_extractor(server: ServerState, clients: Sequence[ClientState],
                             cfg: FederationConfig, test: LabeledDataset | None = None,
                             trace: list[TraceRecord] | None = None,
                             comm: _Comm | None = None) -> tuple[Network, dict[int, Network]]:
    """Full-model local training; extractor averaged over all clients, headers per arch."""
    fe = server.fe
    if fe is None:
        raise ConfigError("warm-up needs a feature extractor")
    for m, h in server.headers.items():
        if h.in_dim != fe.out_dim:
            raise ConfigError(f"header {m} expects {h.in_dim} features, extractor gives {fe.out_dim}")
    shared = _shared_archs(clients)
    n_fe = fe.n_dense
    for r in range(cfg.t_fe):
        part = _participants(clients, cfg, rngs.WARMUP, r)

        def work(c: ClientState):
            net = fe.concat(server.headers[c.arch])
            opt = SGD(cfg.alpha)
            gen = rngs.stream(cfg.seed, rngs.WARMUP, c.id, r)
            loss = None
            for _ in range(cfg.t_w):
                for idx in minibatches(len(c.shard), cfg.batch_size, gen):
                    loss = sgd_update(net, c.shard.inputs[idx], c.shard.labels[idx], opt)
            return net.split(n_fe), loss

        results = _map(work, part, cfg.workers)
        fe.unflatten_params(aggregate([f.flatten_params() for (f, _), _ in results]))
        heads = aggregate_by_arch((c.id, c.arch, h.flatten_params())
                                  for c, ((_, h), _) in zip(part, results))
        for m, flat in heads.items():
            server.headers[m].unflatten_params(flat)
        if comm is not None:
            comm.add(sum(fe.param_count + (server.headers[c.arch].param_count if c.arch in shared else 0)
                         for c in part))
        if trace is not None and test is not None:
            in_use = sorted({c.arch for c in clients})
            per, mean = mean_accuracy({m: server.headers[m] for m in in_use}, test, fe)
            losses = [l for _, l in results if l is not None]
            up, down = (comm.up, comm.down) if comm else (0, 0)
            for m, acc in per.items():
                trace.append(TraceRecord(r + 1, "fe", str(m), acc, None, up, down))
            trace.append(TraceRecord(r + 1, "fe", "mean", mean,
                                     float(np.mean(losses)) if losses else None, up, down))
    return fe, server.headers


# setup -------------------------------------------------------------------


def build_federation(shards: Sequence[LabeledDataset], cfg: FederationConfig,
                     feature_space: bool = False, hl: int | None = None,
                     with_generator: bool = True) -> tuple[ServerState, list[ClientState]]:
    """Initial server and client states; client ``k`` uses architecture ``k mod M``.

    Per-architecture initial weights come from streams keyed only by the
    architecture index, so every method starts from identical targets.
    """
    if len(shards) != cfg.clients:
        raise ConfigError(f"expected {cfg.clients} shards, got {len(shards)}")
    first = shards[0]
    in_dim, num_classes = first.dim, first.num_classes
    hl = cfg.homogeneity_level if hl is None else hl
    fe = zoo.feature_extractor(in_dim, num_classes, hl, cfg.trunk,
                                 rngs.stream(cfg.seed, rngs.INIT, "fe", hl))
    heads = {m: zoo.header(m, fe.out_dim, num_classes, hl, cfg.trunk,
                             rngs.stream(cfg.seed, rngs.INIT, "arch", m, hl))
             for m in range(cfg.archs)}
    targets = {m: fe.concat(h) for m, h in heads.items()}
    gen = None
    if with_generator:
        gen = build_generative(
            cfg.family, num_classes, fe.out_dim if feature_space else in_dim,
            rng=rngs.stream(cfg.seed, rngs.INIT, "gen", cfg.family),
            value_range=None if feature_space else first.value_range,
            latent_dim=cfg.latent_dim, hidden=cfg.gen_hidden, lr=cfg.beta,
            steps=cfg.ddpm_steps, uncond_drop_prob=cfg.uncond_drop_prob, guidance=cfg.guidance)
    server = ServerState(gen, targets, fe if feature_space else None,
                         heads if feature_space else {})
    clients = []
    for k, shard in enumerate(shards):
        m = k % cfg.archs
        start = heads[m] if feature_space else targets[m]
        clients.append(ClientState(k, m, shard, start.copy()))
    return server, clients


def run_gefl(shards: Sequence[LabeledDataset], test: LabeledDataset, cfg: FederationConfig,
             use_generator: bool = True, aggregation: str = "arch") -> RunResult:
    """Algorithm 1: federated generative model, then augmented target training.

    In ``gan_mode="update"`` half of the ``t_ka`` generator rounds run up
    front and the other half are spread evenly over the target rounds, each
    at the start of a target round.
    """
    server, clients = build_federation(shards, cfg, hl=1 if aggregation == "lg" and
                                       cfg.homogeneity_level == 0 else None,
                                       with_generator=use_generator)
    trace: list[TraceRecord] = []
    comm = _Comm()
    hook = None
    if use_generator:
        upfront = cfg.t_ka // 2 if cfg.gan_mode == "update" else cfg.t_ka
        generative_knowledge_aggregation(server, clients, cfg, upfront, trace, comm)
        remaining = cfg.t_ka - upfront
        if remaining and cfg.t_tn:
            done = [0]

            def hook(r: int):
                due = ((r + 1) * remaining) // cfg.t_tn
                if due > done[0]:
                    generative_knowledge_aggregation(server, clients, cfg, due - done[0], trace,
                                                     comm, stage="gan_update")
                    done[0] = due
    target_network_training(server, clients, cfg, test, aggregation=aggregation,
                            use_generator=use_generator, trace=trace, comm=comm,
                            between_rounds=hook)
    per, mean = _evaluate(server, clients, test, aggregation, False)
    return RunResult(trace, per, mean, comm.up, comm.down, server, clients)


def run_geflf(shards: Sequence[LabeledDataset], test: LabeledDataset,
              cfg: FederationConfig) -> RunResult:
    """Algorithm 3: warm up a shared extractor, federate a feature generator, train headers."""
    server, clients = build_federation(shards, cfg, feature_space=True)
    trace: list[TraceRecord] = []
    comm = _Comm()
    warmup_feature_extractor(server, clients, cfg, test, trace, comm)
    fe = server.fe
    for c in clients:
        c.features = fe(c.shard.inputs) if fe.param_count else c.shard.inputs.copy()
        c.target = server.headers[c.arch].copy()
    if server.gen.sample_dim != fe.out_dim:
        raise ConfigError("feature generator dim must equal extractor output dim")
    generative_knowledge_aggregation(server, clients, cfg, cfg.t_ka, trace, comm)
    if any(h.param_count for h in server.headers.values()):
        target_network_training(server, clients, cfg, test, feature_space=True, trace=trace,
                                comm=comm)
    per, mean = _evaluate(server, clients, test, "arch", True)
    return RunResult(trace, per, mean, comm.up, comm.down, server, clients)


BASELINES = ("grouped_fedavg", "local_only", "lg_partial")


def run_baseline(kind: str, shards: Sequence[LabeledDataset], test: LabeledDataset,
                 cfg: FederationConfig) -> RunResult:
    """Grouped FedAvg, purely local training, or first-layer-shared partial averaging."""
    if kind not in BASELINES:
        raise ConfigError(f"unknown baseline {kind!r}")
    aggregation = {"grouped_fedavg": "arch", "local_only": "none", "lg_partial": "lg"}[kind]
    return run_gefl(shards, test, cfg, use_generator=False, aggregation=aggregation)
