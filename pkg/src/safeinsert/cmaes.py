"""Covariance matrix adaptation evolution strategy (minimization).

Standard (mu/mu_w, lambda)-CMA-ES with log-rank recombination weights,
cumulative step-size adaptation and rank-one plus rank-mu covariance updates.
Box bounds are handled by reflecting candidates back into the box.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass
class EsConfig:
    dim: int
    mean0: Sequence[float]
    sigma0: float
    pop_size: int
    elite_size: int | None = None
    max_gens: int = 100
    bounds: np.ndarray | None = None
    seed: int = 0
    infeasible_penalty: float = 1.0

    def __post_init__(self):
        self.mean0 = np.asarray(self.mean0, dtype=float).reshape(self.dim)
        if self.elite_size is None:
            self.elite_size = max(1, self.pop_size // 2)
        if not 1 <= self.elite_size <= self.pop_size:
            raise ValueError("need 1 <= elite_size <= pop_size")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float).reshape(self.dim, 2)
            if np.any(b[:, 0] >= b[:, 1]):
                raise ValueError("bounds need lo < hi")
            self.bounds = b


@dataclass
class Generation:
    candidates: np.ndarray
    fitnesses: np.ndarray
    best_so_far: float
    mean: np.ndarray
    sigma: float
    covariance: np.ndarray


@dataclass
class EsRun:
    generations: list[Generation] = field(default_factory=list)
    best_x: np.ndarray | None = None
    best_f: float = math.inf

    def best_curve(self) -> np.ndarray:
        return np.array([g.best_so_far for g in self.generations])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gen", "best", "mean_fitness", "sigma"])
            for i, g in enumerate(self.generations):
                w.writerow([i, repr(float(g.best_so_far)), repr(float(np.mean(g.fitnesses))), repr(float(g.sigma))])


def reflect_into(x: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    lo, hi = bounds[:, 0], bounds[:, 1]
    w = hi - lo
    t = np.mod(x - lo, 2.0 * w)
    return np.clip(lo + np.where(t <= w, t, 2.0 * w - t), lo, hi)


class CMAES:
    """Ask/tell interface; :func:`minimize` drives it for a fixed budget."""

    def __init__(self, config: EsConfig):
        self.config = config
        N = config.dim
        lam, mu = config.pop_size, config.elite_size
        self.N, self.lam, self.mu = N, lam, mu
        w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / float(np.sum(self.weights**2))
        me = self.mueff
        self.cs = (me + 2.0) / (N + me + 5.0)
        self.ds = 1.0 + 2.0 * max(0.0, math.sqrt((me - 1.0) / (N + 1.0)) - 1.0) + self.cs
        self.cc = (4.0 + me / N) / (N + 4.0 + 2.0 * me / N)
        self.c1 = 2.0 / ((N + 1.3) ** 2 + me)
        self.cmu = min(1.0 - self.c1, 2.0 * (me - 2.0 + 1.0 / me) / ((N + 2.0) ** 2 + me))
        self.chiN = math.sqrt(N) * (1.0 - 1.0 / (4.0 * N) + 1.0 / (21.0 * N * N))

        self.mean = config.mean0.copy()
        if config.bounds is not None:
            self.mean = reflect_into(self.mean, config.bounds)
        self.sigma = float(config.sigma0)
        self.C = np.eye(N)
        self.B = np.eye(N)
        self.D = np.ones(N)
        self.pc = np.zeros(N)
        self.ps = np.zeros(N)
        self.gen = 0
        self.rng = np.random.default_rng(config.seed)

    def ask(self) -> np.ndarray:
        z = self.rng.standard_normal((self.lam, self.N))
        X = self.mean + self.sigma * (z * self.D) @ self.B.T
        if self.config.bounds is not None:
            X = reflect_into(X, self.config.bounds)
        return X

    @staticmethod
    def sanitize(fit: np.ndarray, penalty: float) -> np.ndarray:
        fit = np.asarray(fit, dtype=float).copy()
        bad = ~np.isfinite(fit)
        if np.any(bad):
            worst = np.max(fit[~bad]) if np.any(~bad) else 0.0
            fit[bad] = worst + penalty
        return fit

    def tell(self, X: np.ndarray, fit: np.ndarray) -> None:
        fit = self.sanitize(fit, self.config.infeasible_penalty)
        order = np.argsort(fit, kind="stable")[: self.mu]
        old = self.mean
        Y = (X[order] - old) / self.sigma
        yw = self.weights @ Y
        self.mean = old + self.sigma * yw

        invsqrtC = (self.B / self.D) @ self.B.T
        self.ps = (1.0 - self.cs) * self.ps + math.sqrt(self.cs * (2.0 - self.cs) * self.mueff) * (invsqrtC @ yw)
        self.gen += 1
        norm_ps = float(np.linalg.norm(self.ps))
        hsig = norm_ps / math.sqrt(1.0 - (1.0 - self.cs) ** (2 * self.gen)) < (1.4 + 2.0 / (self.N + 1.0)) * self.chiN
        self.pc = (1.0 - self.cc) * self.pc + hsig * math.sqrt(self.cc * (2.0 - self.cc) * self.mueff) * yw
        rank_mu = (Y.T * self.weights) @ Y
        c1a = self.c1 * (1.0 - (1.0 - hsig) * self.cc * (2.0 - self.cc))
        self.C = (1.0 - c1a - self.cmu) * self.C + self.c1 * np.outer(self.pc, self.pc) + self.cmu * rank_mu
        self.sigma *= math.exp(min(1.0, (self.cs / self.ds) * (norm_ps / self.chiN - 1.0)))
        self._decompose()

    def _decompose(self) -> None:
        C = np.triu(self.C) + np.triu(self.C, 1).T
        evals, B = np.linalg.eigh(C)
        if evals[0] < 1e-14 * max(evals[-1], 0.0) or evals[0] <= 0.0:
            C = C + 1e-14 * max(np.trace(C), 1e-300) / self.N * np.eye(self.N)
            evals, B = np.linalg.eigh(C)
            evals = np.maximum(evals, 1e-300)
        self.C = C
        self.B = B
        self.D = np.sqrt(evals)


def minimize(
    config: EsConfig,
    objective: Callable,
    vectorized: bool = False,
    callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> tuple[np.ndarray, EsRun]:
    """Run ``config.max_gens`` generations and return the best candidate seen.

    ``objective`` maps a vector to a cost, or with ``vectorized=True`` a
    ``(pop, dim)`` array to a cost vector. Non-finite costs count as the
    generation's worst finite cost plus ``config.infeasible_penalty``.
    """
    es = CMAES(config)
    run = EsRun(best_x=config.mean0.copy())
    for g in range(config.max_gens):
        X = es.ask()
        if vectorized:
            raw = np.asarray(objective(X), dtype=float)
        else:
            raw = np.array([objective(x) for x in X], dtype=float)
        fit = CMAES.sanitize(raw, config.infeasible_penalty)
        i = int(np.argmin(fit))
        if np.isfinite(raw[i]) and fit[i] < run.best_f:
            run.best_f = float(fit[i])
            run.best_x = X[i].copy()
        if callback is not None:
            callback(g, X, raw)
        run.generations.append(Generation(X, fit, run.best_f, es.mean.copy(), es.sigma, es.C.copy()))
        es.tell(X, fit)
    return run.best_x, run
