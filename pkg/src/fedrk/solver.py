"""Classic randomized Kaczmarz runs and their decay diagnostics."""

from dataclasses import dataclass

import numpy as np

from .core import (
    as_matrix,
    as_vector,
    sample_rows,
    zero_row_tol,
)
from .errors import DimensionMismatch, WeightError, ZeroRow

__all__ = [
    "LinearSystem",
    "IterateTrace",
    "DecayFit",
    "rk_iterate",
    "rk_run",
    "contraction_factor",
    "decay_functional",
    "fit_decay_rate",
]


@dataclass(frozen=True)
class LinearSystem:
    """A dense system A x = b (rows of A paired with entries of b)."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, name="A")
        b = as_vector(self.b, name="b")
        if A.shape[0] != b.size:
            raise DimensionMismatch(
                f"A has {A.shape[0]} rows but b has {b.size} entries"
            )
        if not np.any(np.einsum("ij,ij->i", A, A) > 0.0):
            raise ZeroRow("system needs at least one row with positive norm")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def rows(self):
        return self.A.shape[0]

    @property
    def cols(self):
        return self.A.shape[1]

    def residual_norm(self, x):
        return float(np.linalg.norm(self.A @ x - self.b))


@dataclass
class IterateTrace:
    """Per-step record of an iterative run: step index plus an error value.

    ``kind`` says what the values are: distance to a reference point
    ("error") or the residual norm ("residual").
    """

    steps: np.ndarray
    values: np.ndarray
    kind: str = "error"

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.steps.size != self.values.size:
            raise DimensionMismatch("steps and values differ in length")
        if self.steps.size:
            if self.steps[0] != 0 or np.any(np.diff(self.steps) <= 0):
                raise ValueError("step indices must increase strictly from 0")
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("trace values must be finite and non-negative")

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("step,error\n")
            for k, v in zip(self.steps, self.values):
                fh.write(f"{int(k)},{repr(float(v))}\n")

    @classmethod
    def from_csv(cls, path, kind="error"):
        steps, values = [], []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "step,error":
                raise ValueError(f"{path}: unexpected header {header!r}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                k, v = line.split(",")
                steps.append(int(k))
                values.append(float(v))
        return cls(np.array(steps), np.array(values), kind=kind)


def rk_iterate(A, b, x, iters, scheme, rng, dead_tol, on_step=None):
    """Unvalidated RK projection loop; mutates and returns ``x``.

    ``dead_tol`` is compared against squared row norms. Shared by
    :func:`rk_run` and the federation hot path so both produce bit-identical
    iterates.
    """
    if A.shape[0] == 1 and scheme.weights is None:
        # every draw lands on row 0; skip the stream entirely
        index_list = [0] * int(iters)
    else:
        index_list = sample_rows(scheme, rng, A, iters).tolist()
    row_sq = np.einsum("ij,ij->i", A, A)
    rows = list(A)
    b_list = b.tolist()
    sq_list = row_sq.tolist()
    tmp = np.empty_like(x)
    dot, mul, add = np.dot, np.multiply, np.add
    for j in index_list:
        sq = sq_list[j]
        if sq <= dead_tol:
            raise ZeroRow(f"sampled row {j} is numerically zero")
        aj = rows[j]
        mul(aj, (b_list[j] - dot(aj, x)) / sq, out=tmp)
        add(x, tmp, out=x)
        if on_step is not None:
            on_step(x)
    return x


def rk_run(system, x0, iters, scheme, rng, x_ref=None, record=True):
    """Run ``iters`` randomized Kaczmarz steps on ``system`` from ``x0``.

    Rows are drawn i.i.d. under ``scheme`` from ``rng``. Returns the final
    iterate and an :class:`IterateTrace`; the trace logs ``||x_k - x_ref||``
    when a reference is given, otherwise the residual norm. ``record=False``
    skips the trace.
    """
    A, b = system.A, system.b
    x = as_vector(x0, name="x0").copy()
    if x.size != A.shape[1]:
        raise DimensionMismatch(f"x0 has dim {x.size}, system has {A.shape[1]} columns")
    iters = int(iters)
    if iters < 0:
        raise ValueError("iters must be non-negative")

    if x_ref is not None:
        x_ref = as_vector(x_ref, name="x_ref")
        if x_ref.size != x.size:
            raise DimensionMismatch("x_ref dimension mismatch")

    dead_tol = zero_row_tol(float(np.linalg.norm(x))) ** 2

    if not record:
        x = rk_iterate(A, b, x, iters, scheme, rng, dead_tol)
        return x, IterateTrace(np.array([], dtype=np.int64), np.array([]), kind="none")

    def current_value(point):
        if x_ref is not None:
            return float(np.linalg.norm(point - x_ref))
        return float(np.linalg.norm(A @ point - b))

    values = [current_value(x)]
    x = rk_iterate(
        A, b, x, iters, scheme, rng, dead_tol,
        on_step=lambda point: values.append(current_value(point)),
    )
    trace = IterateTrace(
        np.arange(len(values)),
        np.array(values),
        kind="error" if x_ref is not None else "residual",
    )
    return x, trace


_POWER_MAX_ITERS = 10_000
_POWER_TOL = 1e-10


def contraction_factor(A, scheme):
    """Largest eigenvalue of sum_s p(s) (I - a_s a_s^T) over normalized rows.

    Governs the expected squared-error decay of one RK step. Computed by
    power iteration from a fixed fan of start vectors; the all-ones start
    alone can sit exactly orthogonal to the top eigenspace (e.g. the single
    row (1, 1) in the plane), so two more deterministic starts back it up.
    """
    A = as_matrix(A, name="A")
    probs = scheme.probabilities(A)
    norms = np.sqrt(np.einsum("ij,ij->i", A, A))
    if np.any(norms == 0.0):
        raise ZeroRow("contraction factor needs every row to have positive norm")
    unit = A / norms[:, None]
    n = A.shape[1]
    # Q = I - U^T diag(p) U, symmetric PSD with spectrum in [0, 1]
    Q = np.eye(n) - (unit * probs[:, None]).T @ unit
    Q = 0.5 * (Q + Q.T)

    starts = [np.full(n, 1.0 / np.sqrt(n))]
    e1 = np.zeros(n)
    e1[0] = 1.0
    starts.append(e1)
    ramp = np.arange(1.0, n + 1.0)
    starts.append(ramp / np.linalg.norm(ramp))

    best = 0.0
    for v in starts:
        lam_prev = None
        for _ in range(_POWER_MAX_ITERS):
            w = Q @ v
            lam = float(v @ w)
            wn = float(np.linalg.norm(w))
            if wn < 1e-30:
                lam = 0.0
                break
            v = w / wn
            if lam_prev is not None and abs(lam - lam_prev) <= _POWER_TOL * max(abs(lam), 1e-30):
                break
            lam_prev = lam
        best = max(best, lam)
    return min(max(best, 0.0), 1.0)


def decay_functional(normals, p, y):
    """Average squared norm left after projecting ``y`` off random normals.

    Returns sum_s p(s) ||(I - n_s n_s^T / ||n_s||^2) y||^2, the quantity
    whose maximum over unit ``y`` is the contraction factor.
    """
    y = as_vector(y, name="y")
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size != len(normals):
        raise WeightError("p must assign one weight per normal")
    if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
        raise WeightError("p must be non-negative and sum to 1")
    total = 0.0
    y_sq = float(np.dot(y, y))
    for weight, normal in zip(p, normals):
        n_vec = as_vector(normal, name="normal")
        if n_vec.size != y.size:
            raise DimensionMismatch("normal dimension mismatch")
        n_sq = float(np.dot(n_vec, n_vec))
        if n_sq <= 1e-24:
            raise ZeroRow("decay functional given a zero normal")
        total += float(weight) * (float(np.dot(n_vec, y)) ** 2) / n_sq
    return max(y_sq - total, 0.0)


@dataclass(frozen=True)
class DecayFit:
    """Geometric decay rate fitted to a trace, with the fit's R^2."""

    rate: float
    r_squared: float
    degenerate: bool = False


def fit_decay_rate(trace):
    """Least-squares fit of log(error) vs. step, exponentiated.

    Errors at exact zero mean the run has converged past floating point;
    that reports rate 0 with the degenerate flag rather than failing.
    Entries below 1e-14 times the initial error are rounding noise and are
    dropped before fitting.
    """
    values = np.asarray(trace.values, dtype=np.float64)
    steps = np.asarray(trace.steps, dtype=np.float64)
    if np.any(values == 0.0):
        return DecayFit(rate=0.0, r_squared=1.0, degenerate=True)
    if values.size:
        mask = values >= 1e-14 * values[0]
        values, steps = values[mask], steps[mask]
    if values.size < 3:
        raise ValueError("need at least 3 positive error values to fit a rate")
    logs = np.log(values)
    slope, intercept = np.polyfit(steps, logs, 1)
    fitted = slope * steps + intercept
    ss_res = float(np.sum((logs - fitted) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    if ss_tot <= 1e-30:
        r_sq = 1.0 if ss_res <= 1e-30 else 0.0
    else:
        r_sq = 1.0 - ss_res / ss_tot
    return DecayFit(rate=float(np.exp(slope)), r_squared=r_sq)
