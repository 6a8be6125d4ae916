"""Federated Kaczmarz round orchestration.

One round: sample participants, broadcast the global iterate, let each
participant run local RK on its own rows, reinterpret each returned model
change as a hyperplane normal, then run RK at the server on the derived
system ``delta x = d`` (optionally hard-thresholding afterwards). The whole
run is a pure function of the master seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    RngStream,
    SamplingScheme,
    as_matrix,
    as_vector,
    derive_seed,
    hard_threshold,
    zero_row_tol,
)
from .errors import DimensionMismatch, FedRKError, RoundError, TooManyClients
from .solver import LinearSystem, rk_iterate

__all__ = [
    "TAG_SELECT",
    "TAG_SERVER",
    "Partition",
    "RunConfig",
    "ServerRoundSystem",
    "FedTrace",
    "RoundStreams",
    "local_stream_seed",
    "partition_system",
    "client_blocks",
    "sample_clients",
    "client_local_update",
    "build_server_system",
    "server_solve",
    "apply_server_round",
    "fed_round",
    "fed_run",
]

# reserved stream-id tags; client ids must stay below these
TAG_SELECT = 0xFFFF_FFFF
TAG_SERVER = 0xFFFF_FFFE


@dataclass(frozen=True)
class Partition:
    """Assignment of contiguous row blocks to clients 0..clients-1."""

    blocks: tuple
    clients: int
    total_rows: int

    def __post_init__(self):
        if self.clients < 1:
            raise ValueError("need at least one client")
        if len(self.blocks) != self.clients:
            raise ValueError("one block per client required")
        ids = sorted(blk[0] for blk in self.blocks)
        if ids != list(range(self.clients)):
            raise ValueError("client ids must be 0..M-1, each exactly once")
        covered = 0
        for _, start, count in sorted(self.blocks, key=lambda blk: blk[1]):
            if count < 1:
                raise ValueError("every client needs at least one row")
            if start != covered:
                raise ValueError("blocks must tile the rows without gaps or overlap")
            covered = start + count
        if covered != self.total_rows:
            raise ValueError("blocks must cover all rows")


def partition_system(system, clients, policy="contiguous-even"):
    """Split a system's rows into contiguous near-even blocks.

    Earlier clients receive the larger blocks when the row count does not
    divide evenly.
    """
    if policy != "contiguous-even":
        raise ValueError(f"unknown partition policy {policy!r}")
    clients = int(clients)
    rows = system.rows
    if clients < 1:
        raise ValueError("need at least one client")
    if clients > rows:
        raise TooManyClients(f"{clients} clients for {rows} rows")
    base, extra = divmod(rows, clients)
    blocks = []
    start = 0
    for cid in range(clients):
        count = base + (1 if cid < extra else 0)
        blocks.append((cid, start, count))
        start += count
    return Partition(tuple(blocks), clients, rows)


def client_blocks(system, partition):
    """Materialize each client's LinearSystem, ordered by client id."""
    out = []
    for cid, start, count in sorted(partition.blocks):
        out.append(LinearSystem(system.A[start:start + count], system.b[start:start + count]))
    return out


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a federated run besides the data."""

    clients: int
    participants: int
    local_iters: int
    global_iters: int
    rounds: int
    sparsity: Optional[int] = None
    local_scheme: SamplingScheme = SamplingScheme.squared_row_norm()
    master_seed: int = 0
    residual_tol: Optional[float] = None

    def __post_init__(self):
        if self.clients < 1:
            raise ValueError("clients must be >= 1")
        if not 1 <= self.participants <= self.clients:
            raise ValueError("participants must satisfy 1 <= N <= clients")
        if self.local_iters < 1 or self.global_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.sparsity is not None and self.sparsity < 0:
            raise ValueError("sparsity must be >= 0 when present")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")
        if self.residual_tol is not None and self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive when present")

    def to_text(self):
        lines = [
            f"clients={self.clients}",
            f"participants={self.participants}",
            f"local_iters={self.local_iters}",
            f"global_iters={self.global_iters}",
            f"rounds={self.rounds}",
            f"scheme={self.local_scheme.label()}",
            f"seed={self.master_seed}",
        ]
        if self.sparsity is not None:
            lines.append(f"sparsity={self.sparsity}")
        if self.residual_tol is not None:
            lines.append(f"residual_tol={self.residual_tol!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        fields = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line {raw!r}")
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
        known = {
            "clients", "participants", "local_iters", "global_iters",
            "rounds", "scheme", "seed", "sparsity", "residual_tol",
        }
        unknown = set(fields) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(
                clients=int(fields["clients"]),
                participants=int(fields["participants"]),
                local_iters=int(fields["local_iters"]),
                global_iters=int(fields["global_iters"]),
                rounds=int(fields["rounds"]),
                sparsity=int(fields["sparsity"]) if "sparsity" in fields else None,
                local_scheme=SamplingScheme.from_label(fields.get("scheme", "sqnorm")),
                master_seed=int(fields.get("seed", "0")),
                residual_tol=float(fields["residual_tol"]) if "residual_tol" in fields else None,
            )
        except KeyError as exc:
            raise ValueError(f"missing config key {exc.args[0]!r}") from None


@dataclass(frozen=True)
class ServerRoundSystem:
    """The round's derived system: stacked nonzero model changes and d."""

    delta_rows: np.ndarray
    d: np.ndarray
    kept_client_ids: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "delta_rows", as_matrix(self.delta_rows, name="delta_rows", allow_empty=True)
        )
        d = np.asarray(self.d, dtype=np.float64)
        if d.shape != (self.delta_rows.shape[0],):
            raise DimensionMismatch("d must have one entry per kept row")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "kept_client_ids", tuple(self.kept_client_ids))

    @property
    def is_empty(self):
        return self.delta_rows.shape[0] == 0


@dataclass
class FedTrace:
    """Per-round records of a federated run."""

    rounds: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    participants: list = field(default_factory=list)
    dropped: list = field(default_factory=list)
    stopped_early: bool = False

    def append(self, round_index, error, residual, participant_ids, dropped_rows):
        if residual < 0 or not np.isfinite(residual):
            raise ValueError("residual must be finite and non-negative")
        if error is not None and (error < 0 or not np.isfinite(error)):
            raise ValueError("error must be finite and non-negative")
        self.rounds.append(int(round_index))
        self.errors.append(None if error is None else float(error))
        self.residuals.append(float(residual))
        self.participants.append(tuple(int(i) for i in participant_ids))
        self.dropped.append(int(dropped_rows))

    def csv_text(self):
        lines = ["round,error,residual,participants,dropped_rows"]
        for t, err, res, parts, drop in zip(
            self.rounds, self.errors, self.residuals, self.participants, self.dropped
        ):
            err_txt = "" if err is None else repr(err)
            part_txt = ";".join(str(i) for i in parts)
            lines.append(f"{t},{err_txt},{repr(res)},{part_txt},{drop}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.csv_text())

    @classmethod
    def from_csv(cls, path):
        trace = cls()
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "round,error,residual,participants,dropped_rows":
                raise ValueError(f"{path}: unexpected header {header!r}")
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                t, err, res, parts, drop = line.split(",")
                trace.append(
                    int(t),
                    None if err == "" else float(err),
                    float(res),
                    [int(i) for i in parts.split(";")] if parts else (),
                    int(drop),
                )
        return trace


def local_stream_seed(master_seed, round_index, client_id):
    """The 64-bit stream seed a client receives for one round's local run."""
    return derive_seed(master_seed, round_index, client_id)


@dataclass
class RoundStreams:
    """The three independent randomness sources one round consumes."""

    select: RngStream
    server: RngStream
    local_stream: Callable[[int], RngStream]

    @classmethod
    def derive(cls, master_seed, round_index):
        """Canonical per-round derivation; transports reproduce it exactly."""
        return cls(
            select=RngStream(master_seed, (round_index, TAG_SELECT)),
            server=RngStream(master_seed, (round_index, TAG_SERVER)),
            local_stream=lambda cid: RngStream(
                local_stream_seed(master_seed, round_index, cid)
            ),
        )

    @classmethod
    def shared(cls, stream):
        """All roles draw from one stream; for Monte Carlo harnesses where
        per-round derivation cost matters and only the distribution does."""
        return cls(select=stream, server=stream, local_stream=lambda cid: stream)


def sample_clients(clients, participants, rng):
    """Uniform random subset of ``participants`` client ids, sorted ascending."""
    if not 1 <= participants <= clients:
        raise ValueError("participants must satisfy 1 <= N <= clients")
    picked = rng.generator.choice(clients, size=participants, replace=False).tolist()
    picked.sort()
    return picked


def _local_delta(block, x_global, local_iters, scheme, rng, dead_tol_sq):
    x_local = rk_iterate(
        block.A, block.b, x_global.copy(), local_iters, scheme, rng, dead_tol_sq
    )
    x_local -= x_global
    return x_local


def client_local_update(block, x_global, local_iters, scheme, rng):
    """One client's model change: final local RK iterate minus the broadcast."""
    x_global = as_vector(x_global, name="x_global")
    if x_global.size != block.cols:
        raise DimensionMismatch(
            f"x has dim {x_global.size}, block has {block.cols} columns"
        )
    if local_iters < 1:
        raise ValueError("local_iters must be >= 1")
    dead_tol_sq = zero_row_tol(math.sqrt(float(np.dot(x_global, x_global)))) ** 2
    return _local_delta(block, x_global, local_iters, scheme, rng, dead_tol_sq)


def _build_server_system_trusted(deltas, x_global, tol):
    kept_rows, kept_d, kept_ids = [], [], []
    for cid, delta in sorted(deltas, key=lambda item: item[0]):
        if math.sqrt(float(np.dot(delta, delta))) <= tol:
            continue
        kept_rows.append(delta)
        kept_d.append(float(np.dot(delta, delta + x_global)))
        kept_ids.append(int(cid))
    if kept_rows:
        rows = np.array(kept_rows)
    else:
        rows = np.zeros((0, x_global.size))
    return ServerRoundSystem(rows, np.array(kept_d), tuple(kept_ids))


def build_server_system(deltas, x_global, tol):
    """Stack nonzero model changes into the derived system ``delta x = d``.

    Changes with norm <= ``tol`` are dropped; each kept row gets
    d_i = <delta_i, delta_i + x_global>, which puts the row's hyperplane
    through the client's final local iterate. Rows are stacked in ascending
    client-id order so aggregation is independent of arrival order.
    """
    x_global = as_vector(x_global, name="x_global")
    checked = []
    for cid, delta in deltas:
        delta = as_vector(delta, name=f"delta[{cid}]")
        if delta.size != x_global.size:
            raise DimensionMismatch(f"client {cid} delta has dim {delta.size}")
        checked.append((cid, delta))
    return _build_server_system_trusted(checked, x_global, tol)


def server_solve(srs, x_global, global_iters, rng):
    """Run RK with uniform sampling on the derived system; empty system is a no-op."""
    x_global = as_vector(x_global, name="x_global")
    if srs.is_empty:
        return x_global.copy()
    if srs.delta_rows.shape[1] != x_global.size:
        raise DimensionMismatch("derived system dimension mismatch")
    dead_tol_sq = zero_row_tol(math.sqrt(float(np.dot(x_global, x_global)))) ** 2
    return rk_iterate(
        srs.delta_rows, srs.d, x_global.copy(), global_iters,
        SamplingScheme.uniform(), rng, dead_tol_sq,
    )


def apply_server_round(deltas, x_global, config, server_rng):
    """Server half of a round: build the derived system, solve, threshold.

    Returns the next global iterate and the kept client ids.
    """
    x_norm = math.sqrt(float(np.dot(x_global, x_global)))
    tol = zero_row_tol(x_norm)
    srs = build_server_system(deltas, x_global, tol)
    x_next = server_solve(srs, x_global, config.global_iters, server_rng)
    if config.sparsity is not None:
        x_next = hard_threshold(x_next, config.sparsity)
    return x_next, srs.kept_client_ids


def fed_round(blocks, x_global, config, streams):
    """Execute one full round in-process.

    Returns ``(x_next, participant_ids, dropped_row_count)``. Client
    failures surface as RoundError naming the client. Inputs are trusted
    (fed_run validates once up front); use the module-level operations for
    piecemeal validated calls.
    """
    participants = sample_clients(config.clients, config.participants, streams.select)
    x_norm = math.sqrt(float(np.dot(x_global, x_global)))
    tol = zero_row_tol(x_norm)
    dead_tol_sq = tol * tol
    deltas = []
    for cid in participants:
        try:
            delta = _local_delta(
                blocks[cid], x_global, config.local_iters,
                config.local_scheme, streams.local_stream(cid), dead_tol_sq,
            )
        except FedRKError as exc:
            raise RoundError(f"client {cid} failed: {exc}", client_id=cid) from exc
        deltas.append((cid, delta))
    srs = _build_server_system_trusted(deltas, x_global, tol)
    if srs.is_empty:
        x_next = x_global.copy()
    else:
        x_next = rk_iterate(
            srs.delta_rows, srs.d, x_global.copy(), config.global_iters,
            SamplingScheme.uniform(), streams.server, dead_tol_sq,
        )
    if config.sparsity is not None:
        x_next = hard_threshold(x_next, config.sparsity)
    return x_next, participants, len(deltas) - len(srs.kept_client_ids)


def fed_run(system, config, x0, x_ref=None):
    """Run ``config.rounds`` federated rounds on ``system`` from ``x0``.

    The trace records round 0 (the initial state) through the last executed
    round; ``x_ref``, when given, adds per-round distances to it. Fully
    determined by ``config.master_seed``.
    """
    x = as_vector(x0, name="x0").copy()
    if x.size != system.cols:
        raise DimensionMismatch(f"x0 has dim {x.size}, system has {system.cols} columns")
    if x_ref is not None:
        x_ref = as_vector(x_ref, name="x_ref")
        if x_ref.size != x.size:
            raise DimensionMismatch("x_ref dimension mismatch")
    partition = partition_system(system, config.clients)
    blocks = client_blocks(system, partition)

    trace = FedTrace()

    def log(round_index, participants, dropped):
        error = None if x_ref is None else float(np.linalg.norm(x - x_ref))
        trace.append(round_index, error, system.residual_norm(x), participants, dropped)

    log(0, (), 0)
    for t in range(config.rounds):
        streams = RoundStreams.derive(config.master_seed, t)
        x, participants, dropped = fed_round(blocks, x, config, streams)
        log(t + 1, participants, dropped)
        if config.residual_tol is not None and trace.residuals[-1] <= config.residual_tol:
            trace.stopped_early = True
            break
    return x, trace
