"""Hidden-hubs instance generators.

Every random draw is derived from ``(seed, stream tag, index)`` through a
counter-based Philox generator, so a row (or a hub's column set) can be
regenerated on its own without replaying earlier draws.  This is what lets
large instances be streamed row block by row block and still be
bit-identical to the materialized matrix.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .errors import ParameterError

_ROW_STREAM = 0x524F57
_SUPPORT_STREAM = 0x535550
_COLUMN_STREAM = 0x434F4C
_SUBMATRIX_STREAM = 0x53554D
_NOISE_STREAM = 0x4E4F49

MODELS = ("null", "general", "submatrix", "heterogeneous")


def stream_rng(*key: int) -> np.random.Generator:
    """Independent generator for the integer key ``key`` (all entries >= 0)."""
    if any(int(x) < 0 for x in key):
        raise ParameterError(f"seed material must be non-negative, got {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(x) for x in key])))


@dataclass(frozen=True)
class ModelParams:
    """Scalar parameters of a hidden-hubs problem.

    ``n`` columns, ``N`` rows, ``s`` hub rows, ``k`` special entries per hub
    row. ``eps`` and ``delta`` are derived, never stored.
    """

    n: int
    N: int
    s: int
    k: int
    sigma0_sq: float = 1.0
    sigma1_sq: float = 2.0
    mu: float = 0.0

    def __post_init__(self) -> None:
        for name in ("n", "N", "s", "k"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ParameterError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.n < 1 or self.N < 1:
            raise ParameterError(f"matrix dimensions must be positive, got N={self.N}, n={self.n}")
        if not 1 <= self.s <= self.N:
            raise ParameterError(f"need 1 <= s <= N, got s={self.s}, N={self.N}")
        if not 1 <= self.k <= self.n:
            raise ParameterError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        for name in ("sigma0_sq", "sigma1_sq"):
            value = float(getattr(self, name))
            if not (value > 0 and math.isfinite(value)):
                raise ParameterError(f"{name} must be positive and finite, got {value!r}")
            object.__setattr__(self, name, value)
        if not math.isfinite(self.mu):
            raise ParameterError(f"mu must be finite, got {self.mu!r}")
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def eps(self) -> float:
        return self.sigma1_sq / (2.0 * self.sigma0_sq) - 1.0

    @property
    def delta(self) -> float:
        # k = n^(0.5 - delta); undefined for n = 1
        if self.n == 1:
            return float("nan")
        return 0.5 - math.log(self.k) / math.log(self.n)

    @classmethod
    def square(cls, n: int, k: int, s: int | None = None, **kw) -> "ModelParams":
        return cls(n=n, N=n, s=k if s is None else s, k=k, **kw)

    @classmethod
    def from_eps(cls, n: int, N: int, s: int, k: int, eps: float,
                 sigma0_sq: float = 1.0, mu: float = 0.0) -> "ModelParams":
        return cls(n=n, N=N, s=s, k=k, sigma0_sq=sigma0_sq,
                   sigma1_sq=2.0 * (1.0 + eps) * sigma0_sq, mu=mu)

    def to_dict(self) -> dict:
        return {"n": self.n, "N": self.N, "s": self.s, "k": self.k,
                "sigma0_sq": self.sigma0_sq, "sigma1_sq": self.sigma1_sq, "mu": self.mu}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(**{key: d[key] for key in ("n", "N", "s", "k", "sigma0_sq", "sigma1_sq", "mu")})


@dataclass(frozen=True)
class PlantedSupport:
    """Ground truth: hub rows S, their special columns T_i and variances."""

    hub_rows: tuple[int, ...]
    special_columns: dict[int, np.ndarray]
    special_variance: dict[int, np.ndarray]

    def validate(self, N: int, n: int) -> None:
        if len(set(self.hub_rows)) != len(self.hub_rows):
            raise ParameterError("duplicate hub rows")
        for i in self.hub_rows:
            if not 0 <= i < N:
                raise ParameterError(f"hub row {i} out of range [0, {N})")
            cols = self.special_columns[i]
            if cols.size < 1:
                raise ParameterError(f"hub row {i} has an empty special set")
            if cols.min() < 0 or cols.max() >= n or np.unique(cols).size != cols.size:
                raise ParameterError(f"hub row {i} has invalid special columns")
            if self.special_variance[i].shape != cols.shape:
                raise ParameterError(f"hub row {i}: variance/column length mismatch")

    def to_dict(self) -> dict:
        return {
            "hub_rows": list(self.hub_rows),
            "special_columns": {str(i): self.special_columns[i].tolist() for i in self.hub_rows},
            "special_variance": {str(i): self.special_variance[i].tolist() for i in self.hub_rows},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlantedSupport":
        rows = tuple(int(i) for i in d["hub_rows"])
        return cls(
            hub_rows=rows,
            special_columns={i: np.asarray(d["special_columns"][str(i)], dtype=np.int64) for i in rows},
            special_variance={i: np.asarray(d["special_variance"][str(i)], dtype=np.float64) for i in rows},
        )


@dataclass(frozen=True)
class NoisePolicy:
    budget_per_row: int
    placement: str = "worst_case_band"
    replacement_value: float = 0.0

    def __post_init__(self) -> None:
        if self.placement not in ("worst_case_band", "uniform_random"):
            raise ParameterError(f"unknown placement {self.placement!r}")
        if self.budget_per_row < 0:
            raise ParameterError("budget_per_row must be non-negative")


@dataclass(frozen=True)
class HubInstance:
    """A generated matrix with its ground truth.

    When ``matrix`` is None the rows are regenerated on demand from
    ``(params, seed, support)``; logged corruptions are re-applied.
    """

    params: ModelParams
    seed: int
    model: str
    support: PlantedSupport | None
    matrix: np.ndarray | None = None
    corrupted_entries: tuple[tuple[int, int, float, float], ...] = ()
    shortfall: dict[int, int] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.params.N, self.params.n)

    @property
    def hub_rows(self) -> tuple[int, ...]:
        return () if self.support is None else self.support.hub_rows

    def row_block(self, start: int, stop: int) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix[start:stop]
        block = generate_rows(self.params, self.seed, self.support, start, stop)
        for row, col, _old, new in self.corrupted_entries:
            if start <= row < stop:
                block[row - start, col] = new
        return block

    def row_blocks(self, block_rows: int = 512) -> Iterator[tuple[int, np.ndarray]]:
        for start in range(0, self.params.N, block_rows):
            yield start, self.row_block(start, min(start + block_rows, self.params.N))

    def materialize(self) -> "HubInstance":
        if self.matrix is not None:
            return self
        return replace(self, matrix=self.row_block(0, self.params.N))

    def dense(self) -> np.ndarray:
        return self.materialize().matrix


def _check_seed(seed: int) -> int:
    if isinstance(seed, bool) or int(seed) != seed or seed < 0:
        raise ParameterError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def generate_rows(params: ModelParams, seed: int, support: PlantedSupport | None,
                  start: int, stop: int) -> np.ndarray:
    """Rows ``start:stop`` of the instance; each row uses its own stream."""
    n = params.n
    out = np.empty((stop - start, n), dtype=np.float64)
    sigma0 = math.sqrt(params.sigma0_sq)
    cols_by_row = {} if support is None else support.special_columns
    for r in range(start, stop):
        row = out[r - start]
        stream_rng(seed, _ROW_STREAM, r).standard_normal(out=row)
        cols = cols_by_row.get(r)
        if cols is None:
            row *= sigma0
        else:
            z = row[cols]
            row *= sigma0
            row[cols] = params.mu + np.sqrt(support.special_variance[r]) * z
    return out


def _hub_rows(params: ModelParams, seed: int, hub_rows: Sequence[int] | None) -> tuple[int, ...]:
    if hub_rows is None:
        picked = stream_rng(seed, _SUPPORT_STREAM).choice(params.N, params.s, replace=False)
        return tuple(sorted(int(i) for i in picked))
    rows = tuple(sorted(int(i) for i in hub_rows))
    if len(rows) != params.s:
        raise ParameterError(f"expected {params.s} hub rows, got {len(rows)}")
    return rows


def _columns(n: int, size: int, seed: int, row: int) -> np.ndarray:
    return stream_rng(seed, _COLUMN_STREAM, row).choice(n, size, replace=False)


def _build(params: ModelParams, seed: int, model: str, support: PlantedSupport | None,
           materialize: bool) -> HubInstance:
    if support is not None:
        support.validate(params.N, params.n)
    inst = HubInstance(params=params, seed=seed, model=model, support=support)
    return inst.materialize() if materialize else inst


def sample_null(params: ModelParams, seed: int, materialize: bool = True) -> HubInstance:
    """All N*n entries i.i.d. N(0, sigma0^2); no support."""
    return _build(params, _check_seed(seed), "null", None, materialize)


def plant_general(params: ModelParams, seed: int, hub_rows: Sequence[int] | None = None,
                  materialize: bool = True) -> HubInstance:
    """Hidden hubs with an independent uniformly random k-subset T_i per hub row."""
    seed = _check_seed(seed)
    rows = _hub_rows(params, seed, hub_rows)
    cols = {i: np.sort(_columns(params.n, params.k, seed, i)) for i in rows}
    var = {i: np.full(params.k, params.sigma1_sq) for i in rows}
    return _build(params, seed, "general", PlantedSupport(rows, cols, var), materialize)


def plant_submatrix(params: ModelParams, seed: int, hub_rows: Sequence[int] | None = None,
                    materialize: bool = True) -> HubInstance:
    """Planted k x k submatrix: every hub row shares one column set."""
    if params.s != params.k:
        raise ParameterError(f"submatrix model needs s == k, got s={params.s}, k={params.k}")
    seed = _check_seed(seed)
    rows = _hub_rows(params, seed, hub_rows)
    shared = np.sort(stream_rng(seed, _SUBMATRIX_STREAM).choice(params.n, params.k, replace=False))
    cols = {i: shared.copy() for i in rows}
    var = {i: np.full(params.k, params.sigma1_sq) for i in rows}
    return _build(params, seed, "submatrix", PlantedSupport(rows, cols, var), materialize)


def plant_heterogeneous(params: ModelParams, variances: Sequence[Sequence[float]], seed: int,
                        hub_rows: Sequence[int] | None = None,
                        materialize: bool = True) -> HubInstance:
    """Hub row number h gets ``len(variances[h])`` special entries with those variances.

    Variances below sigma1^2 only trigger a warning so that negative
    experiments remain possible.
    """
    seed = _check_seed(seed)
    if len(variances) != params.s:
        raise ParameterError(f"need one variance list per hub row ({params.s}), got {len(variances)}")
    rows = _hub_rows(params, seed, hub_rows)
    cols, var = {}, {}
    for i, spec in zip(rows, variances):
        v = np.asarray(spec, dtype=np.float64)
        if v.size == 0:
            raise ParameterError(f"hub row {i}: empty special set")
        if v.size > params.n:
            raise ParameterError(f"hub row {i}: {v.size} special entries exceed n={params.n}")
        if np.any(v <= 0):
            raise ParameterError(f"hub row {i}: variances must be positive")
        if np.any(v < params.sigma1_sq):
            warnings.warn(f"hub row {i}: some planted variances are below sigma1^2={params.sigma1_sq}",
                          stacklevel=2)
        c = _columns(params.n, v.size, seed, i)
        order = np.argsort(c)
        cols[i], var[i] = c[order], v[order]
    return _build(params, seed, "heterogeneous", PlantedSupport(rows, cols, var), materialize)


def tau(params: ModelParams, support: PlantedSupport) -> np.ndarray:
    """Effective planted mass sum_{j in T_i} n^(-sigma0^2/sigma_ij^2), in hub_rows order."""
    return np.array([
        float(np.sum(float(params.n) ** (-params.sigma0_sq / support.special_variance[i])))
        for i in support.hub_rows
    ])


@dataclass(frozen=True)
class HubColumnLaw:
    """Column law of the distributional hidden-hubs problem.

    A column has ``dim`` coordinates (default ``params.N``); coordinates
    outside ``hub_rows`` are N(0, sigma0^2).  With ``coupling="joint"`` the
    whole column is planted with probability k/n, in which case every hub
    coordinate is N(mu, sigma1^2); this is the law whose pairwise
    correlations are (k/n)^2 (beta^|S&T| - 1).  With
    ``coupling="independent"`` each hub coordinate is planted on its own
    with probability k/n, which is the column marginal of the matrix model.
    """

    params: ModelParams
    hub_rows: tuple[int, ...]
    coupling: str = "joint"
    dim: int | None = None

    def __post_init__(self) -> None:
        if self.coupling not in ("joint", "independent"):
            raise ParameterError(f"unknown coupling {self.coupling!r}")
        rows = tuple(sorted(int(i) for i in self.hub_rows))
        if any(not 0 <= i < self.size for i in rows) or len(set(rows)) != len(rows):
            raise ParameterError("hub rows out of range or repeated")
        object.__setattr__(self, "hub_rows", rows)

    @property
    def size(self) -> int:
        return self.params.N if self.dim is None else int(self.dim)

    @property
    def weight(self) -> float:
        return self.params.k / self.params.n

    @property
    def planted(self) -> bool:
        return len(self.hub_rows) > 0

    def null_law(self) -> "HubColumnLaw":
        return replace(self, hub_rows=())

    def sample(self, rng: np.random.Generator, size: int, component: str = "mixture") -> np.ndarray:
        """``size`` columns as rows of a (size, dim) array.

        ``component`` restricts a joint law to its null or planted part.
        """
        p = self.params
        out = rng.standard_normal((size, self.size))
        if not self.hub_rows:
            out *= math.sqrt(p.sigma0_sq)
            return out
        S = np.asarray(self.hub_rows)
        z = out[:, S]
        if component == "planted":
            mask = np.ones(z.shape, dtype=bool)
        elif component == "null":
            mask = np.zeros(z.shape, dtype=bool)
        elif self.coupling == "joint":
            mask = np.broadcast_to((rng.random(size) < self.weight)[:, None], z.shape)
        else:
            mask = rng.random(z.shape) < self.weight
        out *= math.sqrt(p.sigma0_sq)
        out[:, S] = np.where(mask, p.mu + math.sqrt(p.sigma1_sq) * z, math.sqrt(p.sigma0_sq) * z)
        return out


def sample_hub_column(params: ModelParams, S: Sequence[int], seed: int, size: int | None = None,
                      coupling: str = "joint") -> np.ndarray:
    """One column (or ``size`` columns) from the distributional model."""
    law = HubColumnLaw(params, tuple(S), coupling)
    cols = law.sample(stream_rng(_check_seed(seed)), 1 if size is None else size)
    return cols[0] if size is None else cols


def noise_budget(eps: float) -> int:
    """Per-row corruption budget ceil(exp(1/(2 eps)))."""
    if eps <= 0:
        raise ParameterError("noise budget needs eps > 0")
    return math.ceil(math.exp(1.0 / (2.0 * eps)))


def corruption_band(M: float, eps: float, sigma0_sq: float) -> tuple[float, float]:
    """Interval [M - sigma0^2/(eps M), M] of |x| values that are worst to lose."""
    if eps <= 0 or M <= 0:
        raise ParameterError("band needs eps > 0 and M > 0")
    return (M - sigma0_sq / (eps * M), M)


def corrupt(instance: HubInstance, policy: NoisePolicy, cfg, seed: int | None = None) -> HubInstance:
    """Overwrite up to ``policy.budget_per_row`` planted entries per hub row.

    ``cfg`` needs ``M`` and ``eps`` attributes (an AmplifierConfig).  With
    worst_case_band placement the in-band entries with the largest |x| go
    first; rows with fewer in-band entries than the budget are fully
    corrupted and the missing count is recorded in ``shortfall``.
    """
    if instance.support is None:
        raise ParameterError("cannot corrupt a null instance")
    supp = instance.support
    for i in supp.hub_rows:
        if policy.budget_per_row > supp.special_columns[i].size:
            raise ParameterError(f"budget {policy.budget_per_row} exceeds |T_{i}|={supp.special_columns[i].size}")
    if policy.budget_per_row == 0:
        return instance
    lo, hi = corruption_band(cfg.M, cfg.eps, instance.params.sigma0_sq)
    seed = instance.seed if seed is None else _check_seed(seed)
    logged = list(instance.corrupted_entries)
    shortfall = dict(instance.shortfall)
    matrix = None if instance.matrix is None else instance.matrix.copy()
    for i in supp.hub_rows:
        row = instance.row_block(i, i + 1)[0]
        cols = supp.special_columns[i]
        if policy.placement == "worst_case_band":
            mag = np.abs(row[cols])
            cand = cols[(mag >= lo) & (mag <= hi)]
            cand = cand[np.argsort(-np.abs(row[cand]), kind="stable")]
            chosen = cand[:policy.budget_per_row]
            if chosen.size < policy.budget_per_row:
                shortfall[i] = policy.budget_per_row - chosen.size
        else:
            chosen = np.sort(stream_rng(seed, _NOISE_STREAM, i).choice(cols, policy.budget_per_row, replace=False))
        for j in chosen.tolist():
            logged.append((i, int(j), float(row[j]), float(policy.replacement_value)))
            if matrix is not None:
                matrix[i, j] = policy.replacement_value
    return replace(instance, matrix=matrix, corrupted_entries=tuple(logged), shortfall=shortfall)


def generate(model: str, params: ModelParams, seed: int, variances=None,
             materialize: bool = True) -> HubInstance:
    """Dispatch by model name."""
    if model == "null":
        return sample_null(params, seed, materialize)
    if model == "general":
        return plant_general(params, seed, materialize=materialize)
    if model == "submatrix":
        return plant_submatrix(params, seed, materialize=materialize)
    if model == "heterogeneous":
        if variances is None:
            raise ParameterError("heterogeneous model needs per-hub variances")
        return plant_heterogeneous(params, variances, seed, materialize=materialize)
    raise ParameterError(f"unknown model {model!r}")
