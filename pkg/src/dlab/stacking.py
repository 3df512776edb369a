"""Stacked aggregation: least squares over spans of sampled base models.

Two independent stacking runs draw ``G`` and ``G'`` (``k`` base models each)
from a :class:`BaseModelSource`, fit the population least-squares predictor
over each span and over the span of the union, and record the pointwise
anchor inequality.  :func:`stacking_curve` aggregates trials into Monte Carlo
estimates of the local learning curve; :func:`build_tightness_instance`
constructs the orthonormal instance on which the factor 4 is nearly attained.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .parallel import derive_rng, pmap
from .population import (
    ContractError,
    Population,
    Predictor,
    as_predictor,
    disagreement,
    mse,
)

EIG_RTOL = 1e-12


class SourceExhaustedError(RuntimeError):
    """The base-model source cannot supply the requested draws."""


# -- least squares over a span -----------------------------------------------------

@dataclass(frozen=True)
class SpanModel:
    basis: tuple[Predictor, ...]
    coefficients: np.ndarray
    compiled: Predictor
    risk: float


def _basis_array(G, P: Population) -> np.ndarray:
    B = np.stack([as_predictor(g).values for g in G])
    if B.shape[1:] != P.Y.shape:
        raise ContractError(f"basis predictors have shape {B.shape[1:]}, population {P.Y.shape}")
    return B


def ols_span(G: Sequence, P: Population) -> SpanModel:
    """Population least-squares minimiser over ``span(G)``.

    One scalar coefficient per basis predictor (shared across output
    coordinates).  The Gram matrix is solved by symmetric eigendecomposition,
    discarding eigenvalues below ``1e-12 * max``, which yields the
    minimum-norm coefficient vector when the basis is rank deficient.
    """
    G = tuple(as_predictor(g) for g in G)
    if not G:
        raise ContractError("ols_span needs at least one basis predictor")
    B = _basis_array(G, P)
    k = B.shape[0]
    flat = B.reshape(k, -1)
    wflat = np.repeat(P.w, P.label_dim)
    gram = (flat * wflat) @ flat.T
    rhs = (flat * wflat) @ P.Y.reshape(-1)
    evals, evecs = np.linalg.eigh(gram)
    top = evals[-1] if evals.size else 0.0
    coef = np.zeros(k)
    if top > 0:
        keep = evals > EIG_RTOL * top
        V = evecs[:, keep]
        coef = V @ ((V.T @ rhs) / evals[keep])
    compiled = Predictor(np.tensordot(coef, B, axes=1))
    coef.setflags(write=False)
    return SpanModel(G, coef, compiled, mse(compiled, P))


# -- base model sources ---------------------------------------------------------------

class BaseModelSource(Protocol):
    """Distribution over base predictors (the law of a trained base model)."""

    def draw_trial(self, base_seed: int, key: tuple[int, ...], k: int) -> tuple[list, list, list]:
        """Return ``(G, G', ids)`` for one trial: ``2k`` independent draws."""


class ExplicitMixture:
    """Finite mixture over fixed predictors.

    ``models`` may be any indexable sequence, including a lazy one, so very
    large supports (the tightness instance) are never materialised.
    """

    def __init__(self, models: Sequence, probs=None):
        n = len(models)
        if n < 1:
            raise ContractError("mixture needs at least one model")
        probs = np.full(n, 1.0 / n) if probs is None else np.asarray(probs, dtype=float)
        if probs.shape != (n,) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ContractError("mixture probabilities must be non-negative and sum to 1")
        self.models = models
        self.probs = probs
        self._cdf = np.cumsum(probs)
        self._cdf[-1] = 1.0

    def draw_index(self, rng: np.random.Generator) -> int:
        return int(np.searchsorted(self._cdf, rng.random(), side="right"))

    def draw_trial(self, base_seed, key, k):
        ids = [self.draw_index(derive_rng(base_seed, *key, j)) for j in range(2 * k)]
        models = [as_predictor(self.models[i]) for i in ids]
        return models[:k], models[k:], ids


def _default_trainer(shard: Population, rng: np.random.Generator, depth: int = 2):
    from .trees import greedy_tree

    tree = greedy_tree(shard, depth, seed=int(rng.integers(2**32)), restarts=1)
    return tree.predict


class ShardTrainer:
    """Base models obtained by training ``trainer`` on random data shards.

    ``trainer(shard, rng)`` returns a callable mapping an ``(N, p)`` feature
    array to ``(N, d)`` predictions; each model is compiled on the evaluation
    population.  With ``disjoint=True`` the ``2k`` shards of a trial are
    carved without replacement from the support of ``data``, mirroring a
    random split of one finite dataset; otherwise each shard is a fresh i.i.d.
    sample from ``data``.
    """

    def __init__(self, data: Population, shard_size: int, trainer: Callable | None = None,
                 disjoint: bool = False, eval_population: Population | None = None):
        if shard_size < 1:
            raise ContractError("shard_size must be >= 1")
        self.data = data
        self.shard_size = int(shard_size)
        self.trainer = trainer or _default_trainer
        self.disjoint = disjoint
        self.eval_population = eval_population or data

    def _shard(self, idx) -> Population:
        return Population(self.data.X[idx], self.data.Y[idx])

    def draw_trial(self, base_seed, key, k):
        need = 2 * k * self.shard_size
        if self.disjoint:
            if need > self.data.size:
                raise SourceExhaustedError(
                    f"{2 * k} disjoint shards of size {self.shard_size} need {need} points; "
                    f"dataset has {self.data.size}")
            perm = derive_rng(base_seed, *key, 2 * k).permutation(self.data.size)
        models, ids = [], []
        for j in range(2 * k):
            rng = derive_rng(base_seed, *key, j)
            if self.disjoint:
                idx = np.sort(perm[j * self.shard_size:(j + 1) * self.shard_size])
            else:
                idx = rng.choice(self.data.size, size=self.shard_size, p=self.data.w)
            model = self.trainer(self._shard(idx), rng)
            models.append(Predictor(np.asarray(model(self.eval_population.X), dtype=float)
                                    .reshape(self.eval_population.Y.shape)))
            ids.append(j)
        return models[:k], models[k:], ids


# -- one trial -------------------------------------------------------------------------------

@dataclass(frozen=True)
class StackingTrialRecord:
    k: int
    trial: int
    R_G: float
    R_Gprime: float
    R_union: float
    D: float
    pointwise_slack: float
    seeds: tuple[int, ...]
    ids: tuple[int, ...] = field(default=(), repr=False)


def run_stacking_pair(source: BaseModelSource, k: int, P: Population,
                      trial_seed: tuple[int, ...], mu: float = 2.0) -> StackingTrialRecord:
    """Fit ``h_G``, ``h_G'`` and ``h_{G u G'}`` for one seeded trial.

    ``mu`` is the strong-convexity constant of the loss; squared loss has
    ``mu = 2`` which gives the factor 2 in the pointwise inequality.
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    base_seed, *key = trial_seed
    G, Gp, ids = source.draw_trial(base_seed, tuple(key), k)
    hG, hGp, hU = ols_span(G, P), ols_span(Gp, P), ols_span(list(G) + list(Gp), P)
    D = disagreement(hG.compiled, hGp.compiled, P)
    c = 4.0 / mu
    slack = c * (hG.risk - hU.risk) + c * (hGp.risk - hU.risk) - D
    return StackingTrialRecord(k, int(key[-1]) if key else 0, hG.risk, hGp.risk, hU.risk, D,
                               slack, tuple(int(s) for s in trial_seed), tuple(ids))


# -- Monte Carlo learning curve --------------------------------------------------------------

@dataclass(frozen=True)
class CurveRow:
    k: int
    trials: int
    R_k_hat: float
    R_2k_hat: float
    D_hat: float
    bound_margin: float
    stderr: float
    se_R_k: float
    se_R_2k: float
    se_D: float
    min_pointwise_slack: float
    mu: float = 2.0

    @property
    def bound_rhs(self) -> float:
        return (8.0 / self.mu) * (self.R_k_hat - self.R_2k_hat)

    def passes(self, z: float = 3.0, atol: float = 1e-9) -> bool:
        return (self.bound_margin >= -z * self.stderr
                and self.min_pointwise_slack >= -atol
                and self.R_2k_hat <= self.R_k_hat + z * max(self.se_R_k, self.se_R_2k, 0.0) + atol)


def _se(a: np.ndarray) -> float:
    return float(np.std(a, ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0


def aggregate_trials(records: Sequence[StackingTrialRecord], mu: float = 2.0) -> CurveRow:
    R1 = np.array([r.R_G for r in records])
    R2 = np.array([r.R_Gprime for r in records])
    RU = np.array([r.R_union for r in records])
    D = np.array([r.D for r in records])
    c = 8.0 / mu
    per_trial_margin = c * (0.5 * (R1 + R2) - RU) - D
    Rk = np.concatenate([R1, R2])
    return CurveRow(
        k=records[0].k, trials=len(records),
        R_k_hat=float(Rk.mean()), R_2k_hat=float(RU.mean()), D_hat=float(D.mean()),
        bound_margin=float(c * (Rk.mean() - RU.mean()) - D.mean()),
        stderr=_se(per_trial_margin), se_R_k=_se(0.5 * (R1 + R2)), se_R_2k=_se(RU), se_D=_se(D),
        min_pointwise_slack=float(min(r.pointwise_slack for r in records)), mu=mu,
    )


def _trial_task(args):
    source, k, P, seed, mu = args
    return run_stacking_pair(source, k, P, seed, mu)


def run_trials(source, k: int, trials: int, P: Population, base_seed: int = 0,
               jobs: int = 1, mu: float = 2.0) -> list[StackingTrialRecord]:
    tasks = [(source, k, P, (base_seed, k, t), mu) for t in range(trials)]
    return pmap(_trial_task, tasks, jobs)


def stacking_curve(source, k_values: Sequence[int], trials: int, P: Population,
                   base_seed: int = 0, jobs: int = 1, mu: float = 2.0):
    """Per ``k``: trial records and the aggregate :class:`CurveRow`.

    ``R_2k`` is estimated from the trial unions, each of which is a sample of
    ``2k`` i.i.d. base models.
    """
    if trials < 1:
        raise ContractError("trials must be >= 1")
    out = []
    for k in k_values:
        recs = run_trials(source, int(k), trials, P, base_seed, jobs, mu)
        out.append((recs, aggregate_trials(recs, mu)))
    return out


# -- near-tightness instance ----------------------------------------------------------

class _NoisyTargets(Sequence):
    """Lazy sequence ``g_i = e_0 + sigma e_i`` for ``i = 1..m``."""

    def __init__(self, m: int, sigma: float):
        self.m = m
        self.sigma = sigma
        self.scale = math.sqrt(m + 1)

    def __len__(self):
        return self.m

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self.m))]
        if not 0 <= i < self.m:
            raise IndexError(i)
        v = np.zeros(self.m + 1)
        v[0] = self.scale
        v[i + 1] += self.sigma * self.scale
        return Predictor(v)


@dataclass(frozen=True)
class TightnessClosedForms:
    k: int
    eps: float
    sigma2: float
    m: int
    Delta0: float
    D0: float
    ratio: float
    collision_bound: float

    def weight(self, r: int) -> float:
        return 1.0 / (r + self.sigma2)

    def risk(self, r: int) -> float:
        return self.sigma2 / (r + self.sigma2)


def tightness_closed_forms(k: int, eps: float) -> TightnessClosedForms:
    if k < 1 or not (0 < eps <= 1):
        raise ContractError("need k >= 1 and 0 < eps <= 1")
    s2 = eps * k / 8.0
    m = math.ceil(96 * k**3 / eps)
    delta0 = s2 / (k + s2) - s2 / (2 * k + s2)
    d0 = 2 * k * s2 / (k + s2) ** 2
    return TightnessClosedForms(k, eps, s2, m, delta0, d0, 4.0 - 2.0 * s2 / (k + s2),
                                math.comb(2 * k, 2) / m)


def build_tightness_instance(k: int, eps: float):
    """Uniform population on ``{0..m}`` with target ``e_0`` and base models ``e_0 + sigma e_i``."""
    cf = tightness_closed_forms(k, eps)
    m = cf.m
    X = np.arange(m + 1, dtype=float)
    Y = np.zeros(m + 1)
    Y[0] = math.sqrt(m + 1)
    P = Population(X, Y, np.full(m + 1, 1.0 / (m + 1)))
    source = ExplicitMixture(_NoisyTargets(m, math.sqrt(cf.sigma2)))
    return P, source, cf


@dataclass(frozen=True)
class ClosedFormCheck:
    quantity: str
    r: int
    computed: float
    closed_form: float

    @property
    def abs_err(self) -> float:
        return abs(self.computed - self.closed_form)

    def passed(self, atol: float = 1e-9) -> bool:
        return self.abs_err <= atol


def check_tightness_closed_forms(k: int, eps: float, seed: int = 0) -> list[ClosedFormCheck]:
    """Fit least squares on the constructed instance and compare with the closed forms.

    For ``r = 1..2k`` distinct base models: every stacking weight, the risk,
    and for two disjoint ``k``-sets the disagreement and the risk drop.
    """
    P, source, cf = build_tightness_instance(k, eps)
    ids = derive_rng(seed, k).choice(cf.m, size=2 * k, replace=False)
    out = []
    for r in range(1, 2 * k + 1):
        fit = ols_span([source.models[i] for i in ids[:r]], P)
        for c in fit.coefficients:
            out.append(ClosedFormCheck("weight", r, float(c), cf.weight(r)))
        out.append(ClosedFormCheck("risk", r, fit.risk, cf.risk(r)))
    h1 = ols_span([source.models[i] for i in ids[:k]], P)
    h2 = ols_span([source.models[i] for i in ids[k:]], P)
    hu = ols_span([source.models[i] for i in ids], P)
    out.append(ClosedFormCheck("D0", k, disagreement(h1.compiled, h2.compiled, P), cf.D0))
    out.append(ClosedFormCheck("Delta0", k, 0.5 * (h1.risk + h2.risk) - hu.risk, cf.Delta0))
    out.append(ClosedFormCheck("ratio", k, cf.D0 / cf.Delta0, cf.ratio))
    return out


@dataclass(frozen=True)
class TightnessReport:
    k: int
    eps: float
    trials: int
    ratio: float
    stderr: float
    D_hat: float
    drop_hat: float
    collision_free_fraction: float
    lower_pass: bool
    upper_pass: bool
    inconclusive: bool

    @property
    def passed(self) -> bool:
        return self.lower_pass and self.upper_pass and not self.inconclusive


def ratio_stderr(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Ratio of means ``mean(a)/mean(b)`` and its delta-method standard error."""
    ra = float(a.mean() / b.mean())
    resid = a - ra * b
    return ra, float(np.std(resid, ddof=1) / (abs(b.mean()) * math.sqrt(a.size)))


def verify_tightness(k: int, eps: float, trials: int, base_seed: int = 0, jobs: int = 1,
                     z: float = 3.0, records=None) -> TightnessReport:
    P, source, cf = build_tightness_instance(k, eps)
    if records is None:
        records = run_trials(source, k, trials, P, base_seed, jobs)
    D = np.array([r.D for r in records])
    drop = np.array([0.5 * (r.R_G + r.R_Gprime) - r.R_union for r in records])
    distinct = np.mean([len(set(r.ids)) == 2 * k for r in records])
    if abs(drop.mean()) < 1e-12:
        return TightnessReport(k, eps, len(records), float("nan"), float("nan"), float(D.mean()),
                               float(drop.mean()), float(distinct), False, False, True)
    ratio, se = ratio_stderr(D, drop)
    return TightnessReport(k, eps, len(records), ratio, se, float(D.mean()), float(drop.mean()),
                           float(distinct), ratio >= 4.0 - eps - z * se, ratio <= 4.0 + z * se, False)


def random_mixture_source(rng: np.random.Generator, P: Population, n_models: int,
                          signal: float = 0.5) -> ExplicitMixture:
    """Random mixture of noisy label predictors with Dirichlet mixing weights."""
    models = [Predictor(signal * rng.normal() * P.Y + rng.normal(size=P.Y.shape))
              for _ in range(n_models)]
    return ExplicitMixture(models, rng.dirichlet(np.ones(n_models)))


__all__ = [
    "BaseModelSource", "ClosedFormCheck", "CurveRow", "ExplicitMixture", "ShardTrainer", "SourceExhaustedError",
    "SpanModel", "StackingTrialRecord", "TightnessClosedForms", "TightnessReport",
    "aggregate_trials", "build_tightness_instance", "check_tightness_closed_forms", "ols_span", "random_mixture_source",
    "ratio_stderr", "run_stacking_pair", "run_trials", "stacking_curve",
    "tightness_closed_forms", "verify_tightness",
]
