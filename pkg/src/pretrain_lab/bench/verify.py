"""Informativeness suites: the three closeness inequalities on perturbed instances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from pretrain_lab import contrastive as ctr
from pretrain_lab import factor as fac
from pretrain_lab import gmm as gm
from pretrain_lab.rng import RngStream

DEFAULTS = {
    "master_seed": 0,
    "mc_count": 20000,
    "factor_instances": 100,
    "gmm_instances": 50,
    "contrastive_instances": 50,
    "c1": fac.DEFAULT_C1,
    "gmm_constant": gm.INFORMATIVE_CONSTANT,
    "c3": ctr.DEFAULT_C3,
}


@dataclass
class SuiteReport:
    name: str
    instances: int
    holds: int
    max_ratio: float
    median_ratio: float
    records: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.instances > 0 and self.holds == self.instances


def _orthonormal(rows, cols, gen):
    q, _ = np.linalg.qr(gen.standard_normal((rows, cols)))
    return q[:, :cols]


def _summarize(name, records):
    ratios = np.asarray([r["ratio"] for r in records], dtype=float)
    return SuiteReport(name, len(records), int(sum(r["holds"] for r in records)),
                       float(ratios.max()) if ratios.size else math.nan,
                       float(np.median(ratios)) if ratios.size else math.nan, records)


def factor_suite(count: int, mc_count: int, seed: int, c1: float = fac.DEFAULT_C1) -> SuiteReport:
    records = []
    for i in range(count):
        gen = RngStream(seed, i).child("verify/factor").generator
        d, r = int(gen.integers(4, 16)), int(gen.integers(1, 4))
        B_star = _orthonormal(d, r, gen) * gen.uniform(0.5, 2.0, r)
        delta = 10 ** gen.uniform(-3.0, -0.5)
        B = B_star + delta * gen.standard_normal((d, r)) / math.sqrt(d * r)
        B = B @ _orthonormal(r, r, gen)  # rotation ambiguity the check must absorb
        rep = fac.verify_informative_factor(B, B_star, mc_count, gen, c1)
        records.append({"instance": i, "d": d, "r": r, "delta": delta, "lhs": rep.lhs, "rhs": rep.rhs,
                        "ratio": rep.ratio, "holds": rep.holds})
    return _summarize("factor", records)


def gmm_suite(count: int, mc_count: int, seed: int, constant: float = gm.INFORMATIVE_CONSTANT) -> SuiteReport:
    records = []
    for i in range(count):
        gen = RngStream(seed, i).child("verify/gmm").generator
        K, d = int(gen.integers(2, 5)), int(gen.integers(4, 11))
        spacing = gm.SEPARATION_FACTOR * math.sqrt(d * math.log(K)) * 1.05
        true = _orthonormal(d, K, gen).T * (spacing / math.sqrt(2.0))
        delta = 10 ** gen.uniform(-2.5, -1.0)
        fitted = true + delta * gen.standard_normal((K, d)) / math.sqrt(d)
        fitted = fitted[gen.permutation(K)]
        rep = gm.verify_informative_gmm(fitted, true, mc_count, gen, constant)
        records.append({"instance": i, "K": K, "d": d, "delta": delta, "lhs": rep.lhs, "rhs": rep.rhs,
                        "ratio": rep.ratio, "holds": rep.holds})
    return _summarize("gmm", records)


def contrastive_suite(count: int, mc_count: int, seed: int, c3: float = ctr.DEFAULT_C3) -> SuiteReport:
    records = []
    for i in range(count):
        gen = RngStream(seed, i).child("verify/contrastive").generator
        r, d = int(gen.integers(1, 4)), int(gen.integers(4, 9))
        theta_star = (_orthonormal(d, r, gen) * gen.uniform(0.5, 1.0, r)).T
        delta = 10 ** gen.uniform(-2.0, -0.5)
        theta = ctr.project_spectral(theta_star + delta * gen.standard_normal((r, d)) / math.sqrt(d))
        theta = _orthonormal(r, r, gen) @ theta
        beta = gen.standard_normal(r)
        beta *= gen.uniform(0.2, 1.0) / np.linalg.norm(beta)
        rep = ctr.verify_weakly_informative_contrastive(theta, theta_star, beta, mc_count, gen, c3)
        records.append({"instance": i, "r": r, "d": d, "delta": delta, "lhs": rep.lhs, "rhs": rep.rhs,
                        "ratio": rep.ratio, "holds": rep.holds})
    return _summarize("contrastive", records)


def run_verify(settings: dict | None = None) -> list[SuiteReport]:
    s = {**DEFAULTS, **(settings or {})}
    return [
        factor_suite(s["factor_instances"], s["mc_count"], s["master_seed"], s["c1"]),
        gmm_suite(s["gmm_instances"], s["mc_count"], s["master_seed"], s["gmm_constant"]),
        contrastive_suite(s["contrastive_instances"], s["mc_count"], s["master_seed"], s["c3"]),
    ]
