"""Instance generators and the four runnable experiment reproductions.

Each runner is bit-reproducible from its spec and emits CSV files with a
documented schema when given an output directory. Full benchmark
dimensions are the defaults; every field can be overridden for quick
desk-scale runs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import RngStream, as_matrix, as_vector, derive_seed
from .datasets import load_prostate
from .federation import (
    RoundStreams,
    RunConfig,
    client_blocks,
    fed_round,
    fed_run,
    partition_system,
)
from .oracles import least_squares_solution
from .solver import LinearSystem

__all__ = [
    "gen_gaussian_system",
    "gen_sparse_instance",
    "augment_columns",
    "ExperimentSpec",
    "ConvergenceResult",
    "SparseResult",
    "LsqResult",
    "ProstateResult",
    "run_convergence_experiment",
    "run_sparse_experiment",
    "run_lsq_experiment",
    "run_prostate_experiment",
    "rounds_to_threshold",
]


def gen_gaussian_system(m, n, rng):
    """Consistent Gaussian system: A, x* i.i.d. standard normal, b = A x*."""
    if m < 1 or n < 1:
        raise ValueError("dimensions must be positive")
    g = rng.generator
    A = g.standard_normal((m, n))
    x_star = g.standard_normal(n)
    return LinearSystem(A, A @ x_star), x_star


def gen_sparse_instance(m, n, s, noise_scale, rng):
    """Sparse-recovery instance: s-sparse x*, b = A x* + noise_scale * e."""
    if not 0 <= s <= n:
        raise ValueError("sparsity must satisfy 0 <= s <= n")
    g = rng.generator
    A = g.standard_normal((m, n))
    support = np.sort(g.choice(n, size=s, replace=False))
    x_star = np.zeros(n)
    x_star[support] = g.standard_normal(s)
    e = g.standard_normal(m)
    b = A @ x_star + noise_scale * e
    return LinearSystem(A, b), x_star


def augment_columns(A, k, rng):
    """Append k i.i.d. standard-normal columns to A; k=0 returns A unchanged."""
    A = as_matrix(A, name="A")
    k = int(k)
    if k < 0:
        raise ValueError("column count must be non-negative")
    if k == 0:
        return A
    B = rng.generator.standard_normal((A.shape[0], k))
    return np.hstack([A, B])


@dataclass(frozen=True)
class ExperimentSpec:
    """Parameters of one experiment run."""

    name: str
    m: int
    n: int
    clients: int
    participants: int
    local_iters: int
    global_iters: int
    rounds: int
    trials: int
    seed: int
    sparsity: Optional[int] = None
    noise_scale: float = 0.0
    tau_list: tuple = ()
    augment_cols: tuple = ()
    consistent: bool = False
    use_train_split: bool = False

    @classmethod
    def convergence(cls, **overrides):
        spec = cls(
            name="convergence", m=2048, n=1024, clients=16, participants=5,
            local_iters=20, global_iters=20, rounds=200, trials=50, seed=20240,
            tau_list=(10, 20, 40),
        )
        return replace(spec, **overrides)

    @classmethod
    def sparse(cls, **overrides):
        spec = cls(
            name="sparse", m=256, n=1024, clients=16, participants=5,
            local_iters=20, global_iters=20, rounds=1000, trials=50, seed=20241,
            sparsity=9, noise_scale=0.01,
        )
        return replace(spec, **overrides)

    @classmethod
    def lsq(cls, **overrides):
        spec = cls(
            name="lsq", m=2048, n=256, clients=16, participants=16,
            local_iters=20, global_iters=20, rounds=400, trials=20, seed=20242,
            augment_cols=(0, 256, 768),
        )
        return replace(spec, **overrides)

    @classmethod
    def prostate(cls, **overrides):
        spec = cls(
            name="prostate", m=97, n=9, clients=7, participants=3,
            local_iters=20, global_iters=20, rounds=2000, trials=5, seed=20243,
            sparsity=5,
        )
        return replace(spec, **overrides)

    def to_text(self):
        lines = [
            f"name={self.name}",
            f"m={self.m}",
            f"n={self.n}",
            f"clients={self.clients}",
            f"participants={self.participants}",
            f"local_iters={self.local_iters}",
            f"global_iters={self.global_iters}",
            f"rounds={self.rounds}",
            f"trials={self.trials}",
            f"seed={self.seed}",
            f"noise_scale={self.noise_scale!r}",
            f"consistent={'true' if self.consistent else 'false'}",
            f"use_train_split={'true' if self.use_train_split else 'false'}",
        ]
        if self.sparsity is not None:
            lines.append(f"sparsity={self.sparsity}")
        if self.tau_list:
            lines.append("tau_list=" + ",".join(str(t) for t in self.tau_list))
        if self.augment_cols:
            lines.append("augment_cols=" + ",".join(str(k) for k in self.augment_cols))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        fields = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad spec line {raw!r}")
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
        if "name" not in fields:
            raise ValueError("spec needs a name")
        base = {
            "convergence": cls.convergence,
            "sparse": cls.sparse,
            "lsq": cls.lsq,
            "prostate": cls.prostate,
        }.get(fields.pop("name"))
        if base is None:
            raise ValueError("name must be one of convergence, sparse, lsq, prostate")
        overrides = {}
        int_keys = {
            "m", "n", "clients", "participants", "local_iters",
            "global_iters", "rounds", "trials", "seed", "sparsity",
        }
        for key, value in fields.items():
            if key in int_keys:
                overrides[key] = int(value)
            elif key == "noise_scale":
                overrides[key] = float(value)
            elif key in ("consistent", "use_train_split"):
                if value not in ("true", "false"):
                    raise ValueError(f"{key} must be true or false")
                overrides[key] = value == "true"
            elif key in ("tau_list", "augment_cols"):
                overrides[key] = tuple(int(v) for v in value.split(",")) if value else ()
            else:
                raise ValueError(f"unknown spec key {key!r}")
        return base(**overrides)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def _run_config(spec, *, local_iters=None, sparsity=None, master_seed):
    return RunConfig(
        clients=spec.clients,
        participants=spec.participants,
        local_iters=spec.local_iters if local_iters is None else local_iters,
        global_iters=spec.global_iters,
        rounds=spec.rounds,
        sparsity=sparsity,
        master_seed=master_seed,
    )


def _run_rounds(system, config, x0, on_round):
    """fed_run without the trace bookkeeping; calls on_round(t, x) each round."""
    partition = partition_system(system, config.clients)
    blocks = client_blocks(system, partition)
    x = as_vector(x0, name="x0").copy()
    for t in range(config.rounds):
        streams = RoundStreams.derive(config.master_seed, t)
        x, _, _ = fed_round(blocks, x, config, streams)
        on_round(t, x)
    return x


def rounds_to_threshold(curve, tol):
    """First round index at which the curve drops below tol; inf if never."""
    below = np.flatnonzero(np.asarray(curve) < tol)
    return int(below[0]) if below.size else float("inf")


# ---------------------------------------------------------------------------
# convergence (consistent overdetermined system, error curves per tau)
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceResult:
    spec: ExperimentSpec
    curves: dict  # tau -> median relative error, index = round

    def csv_text(self):
        lines = ["tau,round,median_relative_error"]
        for tau in self.spec.tau_list:
            for t, value in enumerate(self.curves[tau]):
                lines.append(f"{tau},{t},{repr(float(value))}")
        return "\n".join(lines) + "\n"


def run_convergence_experiment(spec, out_dir=None):
    """Median error-vs-round curves of the plain federated run, one per tau."""
    curves = {}
    for tau in spec.tau_list:
        errs = np.empty((spec.trials, spec.rounds + 1))
        for trial in range(spec.trials):
            system, x_star = gen_gaussian_system(
                spec.m, spec.n, RngStream(spec.seed, ("data", trial))
            )
            config = _run_config(
                spec, local_iters=tau,
                master_seed=derive_seed(spec.seed, "run", trial, tau),
            )
            _, trace = fed_run(system, config, np.zeros(spec.n), x_ref=x_star)
            e = np.asarray(trace.errors, dtype=np.float64)
            errs[trial] = e / e[0]
        curves[tau] = np.median(errs, axis=0)
    result = ConvergenceResult(spec, curves)
    if out_dir is not None:
        _write(out_dir, "convergence.csv", result.csv_text())
    return result


def load_convergence_csv(path):
    curves = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "tau,round,median_relative_error":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            tau, t, value = line.split(",")
            curves.setdefault(int(tau), []).append((int(t), float(value)))
    out = {}
    for tau, pairs in curves.items():
        pairs.sort()
        out[tau] = np.array([v for _, v in pairs])
    return out


# ---------------------------------------------------------------------------
# sparse recovery (thresholded runs, per-index selection counts)
# ---------------------------------------------------------------------------

@dataclass
class SparseResult:
    spec: ExperimentSpec
    true_support: tuple
    selection_counts: np.ndarray  # per index, over trials
    relative_errors: np.ndarray  # per trial
    support_recovered: np.ndarray  # per trial, bool

    @property
    def recovery_rate(self):
        return float(np.mean(self.support_recovered))

    def counts_csv_text(self):
        lines = ["index,count,is_true_support"]
        true = set(self.true_support)
        for j, count in enumerate(self.selection_counts):
            lines.append(f"{j},{int(count)},{1 if j in true else 0}")
        return "\n".join(lines) + "\n"

    def trials_csv_text(self):
        lines = ["trial,relative_error,support_recovered"]
        for i, (err, rec) in enumerate(zip(self.relative_errors, self.support_recovered)):
            lines.append(f"{i},{repr(float(err))},{1 if rec else 0}")
        return "\n".join(lines) + "\n"


def run_sparse_experiment(spec, out_dir=None):
    """Thresholded federated runs against one fixed sparse instance.

    The instance is fixed and each trial re-randomizes the initialization
    and all sampling; counts how often each index survives the final
    threshold.
    """
    if spec.sparsity is None:
        raise ValueError("sparse experiment needs a sparsity level")
    system, x_star = gen_sparse_instance(
        spec.m, spec.n, spec.sparsity, spec.noise_scale, RngStream(spec.seed, ("data",))
    )
    true_support = tuple(int(j) for j in np.flatnonzero(x_star))
    norm_star = float(np.linalg.norm(x_star))

    counts = np.zeros(spec.n, dtype=np.int64)
    rel_errors = np.empty(spec.trials)
    recovered = np.zeros(spec.trials, dtype=bool)
    for trial in range(spec.trials):
        x0 = RngStream(spec.seed, ("init", trial)).generator.standard_normal(spec.n)
        config = _run_config(
            spec, sparsity=spec.sparsity, master_seed=derive_seed(spec.seed, "run", trial)
        )
        x_final, _ = fed_run(system, config, x0)
        support = np.flatnonzero(x_final)
        counts[support] += 1
        rel_errors[trial] = float(np.linalg.norm(x_final - x_star)) / max(norm_star, 1e-300)
        recovered[trial] = tuple(int(j) for j in support) == true_support
    result = SparseResult(spec, true_support, counts, rel_errors, recovered)
    if out_dir is not None:
        _write(out_dir, "sparse_counts.csv", result.counts_csv_text())
        _write(out_dir, "sparse_trials.csv", result.trials_csv_text())
    return result


def load_counts_csv(path):
    counts, flags = [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "index,count,is_true_support":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            j, count, flag = line.split(",")
            counts.append((int(j), int(count)))
            flags.append((int(j), bool(int(flag))))
    counts.sort()
    flags.sort()
    return np.array([c for _, c in counts]), np.array([f for _, f in flags])


# ---------------------------------------------------------------------------
# least-squares horizon vs. number of augmented noise columns
# ---------------------------------------------------------------------------

@dataclass
class LsqResult:
    spec: ExperimentSpec
    horizons: dict  # k -> per-trial steady-state distance to x_LS

    def median_horizon(self, k):
        return float(np.median(self.horizons[k]))

    def csv_text(self):
        lines = ["k,trial,horizon"]
        for k in self.spec.augment_cols:
            for trial, value in enumerate(self.horizons[k]):
                lines.append(f"{k},{trial},{repr(float(value))}")
        return "\n".join(lines) + "\n"


def run_lsq_experiment(spec, out_dir=None):
    """Steady-state distance of the first n coordinates to the exact
    least-squares solution, for each augmented-column count."""
    n = spec.n
    tail = max(1, spec.rounds // 5)
    horizons = {k: np.empty(spec.trials) for k in spec.augment_cols}
    for trial in range(spec.trials):
        g = RngStream(spec.seed, ("data", trial)).generator
        A = g.standard_normal((spec.m, n))
        if spec.consistent:
            b = A @ g.standard_normal(n)
        else:
            b = g.standard_normal(spec.m)
        x_ls = least_squares_solution(LinearSystem(A, b))
        for k in spec.augment_cols:
            A_wide = augment_columns(A, k, RngStream(spec.seed, ("augment", trial, k)))
            system = LinearSystem(A_wide, b)
            config = _run_config(
                spec, master_seed=derive_seed(spec.seed, "run", trial, k)
            )
            dists = np.empty(spec.rounds)

            def on_round(t, x):
                dists[t] = float(np.linalg.norm(x[:n] - x_ls))

            _run_rounds(system, config, np.zeros(n + k), on_round)
            horizons[k][trial] = float(np.median(dists[-tail:]))
    result = LsqResult(spec, horizons)
    if out_dir is not None:
        _write(out_dir, "lsq_horizons.csv", result.csv_text())
    return result


def load_horizons_csv(path):
    horizons = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "k,trial,horizon":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            k, trial, value = line.split(",")
            horizons.setdefault(int(k), []).append((int(trial), float(value)))
    return {k: np.array([v for _, v in sorted(pairs)]) for k, pairs in horizons.items()}


# ---------------------------------------------------------------------------
# prostate feature selection
# ---------------------------------------------------------------------------

@dataclass
class ProstateResult:
    spec: ExperimentSpec
    feature_names: tuple
    counts: np.ndarray  # trials x features, nonzero occurrences over rounds

    def top_features(self, trial, how_many=5):
        order = np.argsort(-self.counts[trial], kind="stable")
        return tuple(self.feature_names[j] for j in order[:how_many])

    def total_counts(self):
        return self.counts.sum(axis=0)

    def csv_text(self):
        lines = ["trial,feature,count"]
        for trial in range(self.counts.shape[0]):
            for j, name in enumerate(self.feature_names):
                lines.append(f"{trial},{name},{int(self.counts[trial, j])}")
        return "\n".join(lines) + "\n"


def _round_robin_order(rows, clients):
    return [i for c in range(clients) for i in range(c, rows, clients)]


def run_prostate_experiment(spec, data_path=None, out_dir=None):
    """Thresholded federated runs on the prostate data, counting per-round
    nonzero coefficients per feature.

    Rows go to clients round-robin; reordering them groups each client's
    rows contiguously without changing the assignment.
    """
    dataset = load_prostate(data_path, use_train_split=spec.use_train_split)
    rows = dataset.features.shape[0]
    order = _round_robin_order(rows, spec.clients)
    system = LinearSystem(dataset.features[order], dataset.target[order])
    n_features = len(dataset.feature_names)

    counts = np.zeros((spec.trials, n_features), dtype=np.int64)
    for trial in range(spec.trials):
        x0 = RngStream(spec.seed, ("init", trial)).generator.standard_normal(n_features)
        config = _run_config(
            spec, sparsity=spec.sparsity, master_seed=derive_seed(spec.seed, "run", trial)
        )

        def on_round(t, x, trial=trial):
            counts[trial, np.flatnonzero(x)] += 1

        _run_rounds(system, config, x0, on_round)
    result = ProstateResult(spec, dataset.feature_names, counts)
    if out_dir is not None:
        _write(out_dir, "prostate_counts.csv", result.csv_text())
    return result


def load_prostate_counts_csv(path):
    data = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "trial,feature,count":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            trial, feature, count = line.split(",")
            data.setdefault(int(trial), {})[feature] = int(count)
    return data


def _write(out_dir, filename, text):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, filename), "w") as fh:
        fh.write(text)
