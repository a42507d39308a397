"""Scalar value distributions used for latency and cost parameters.

Three kinds are supported: deterministic, uniform(lo, hi), and lognormal(mu,
sigma) truncated to [lo, hi]. Truncation is done by inverse-CDF restriction
(one uniform draw per sample, no rejection), so draw counts stay deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

_STD_NORMAL = NormalDist()


@dataclass(frozen=True)
class ValueDist:
    kind: str  # "deterministic" | "uniform" | "loguniform" | "lognormal"
    value: float = 0.0  # deterministic
    lo: float = 0.0  # uniform / loguniform / lognormal truncation bounds
    hi: float = 0.0
    mu: float = 0.0  # lognormal parameters
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("deterministic", "uniform", "loguniform", "lognormal"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "deterministic":
            if self.value < 0:
                raise ValueError("deterministic value must be >= 0")
        elif self.kind == "loguniform":
            if not (0 < self.lo <= self.hi):
                raise ValueError("loguniform bounds must satisfy 0 < lo <= hi")
        else:
            if not (0 <= self.lo <= self.hi):
                raise ValueError("bounds must satisfy 0 <= lo <= hi")
        if self.kind == "lognormal" and self.sigma <= 0:
            raise ValueError("lognormal sigma must be > 0")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "deterministic":
            return self.value
        u = rng.random()
        return self.icdf(u)

    def icdf(self, u: float) -> float:
        """Inverse CDF; u in [0, 1)."""
        if self.kind == "deterministic":
            return self.value
        if self.kind == "uniform":
            return self.lo + u * (self.hi - self.lo)
        if self.kind == "loguniform":
            return self.lo * math.exp(u * math.log(self.hi / self.lo))
        # lognormal truncated to [lo, hi]
        c_lo = self._log_cdf(self.lo) if self.lo > 0 else 0.0
        c_hi = self._log_cdf(self.hi)
        x = math.exp(self.mu + self.sigma * _STD_NORMAL.inv_cdf(
            min(max(c_lo + u * (c_hi - c_lo), 1e-12), 1 - 1e-12)))
        return min(max(x, self.lo), self.hi)

    def _log_cdf(self, x: float) -> float:
        return _STD_NORMAL.cdf((math.log(x) - self.mu) / self.sigma)

    def mean(self) -> float:
        """Analytic mean (numeric quadrature for the truncated lognormal)."""
        if self.kind == "deterministic":
            return self.value
        if self.kind == "uniform":
            return (self.lo + self.hi) / 2.0
        if self.kind == "loguniform":
            if self.lo == self.hi:
                return self.lo
            return (self.hi - self.lo) / math.log(self.hi / self.lo)
        us = (np.arange(20000) + 0.5) / 20000
        return float(np.mean([self.icdf(u) for u in us]))

    def support(self) -> tuple[float, float]:
        if self.kind == "deterministic":
            return (self.value, self.value)
        return (self.lo, self.hi)

    def to_dict(self) -> dict:
        if self.kind == "deterministic":
            return {"dist": "deterministic", "value": self.value}
        if self.kind in ("uniform", "loguniform"):
            return {"dist": self.kind, "lo": self.lo, "hi": self.hi}
        return {"dist": "lognormal", "mu": self.mu, "sigma": self.sigma,
                "lo": self.lo, "hi": self.hi}


def deterministic(value: float) -> ValueDist:
    return ValueDist("deterministic", value=value)


def uniform(lo: float, hi: float) -> ValueDist:
    return ValueDist("uniform", lo=lo, hi=hi)


def loguniform(lo: float, hi: float) -> ValueDist:
    return ValueDist("loguniform", lo=lo, hi=hi)


def lognormal(mu: float, sigma: float, lo: float, hi: float) -> ValueDist:
    return ValueDist("lognormal", mu=mu, sigma=sigma, lo=lo, hi=hi)


def from_dict(spec: object, where: str = "distribution") -> ValueDist:
    """Parse a config node: a bare number means deterministic."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return deterministic(float(spec))
    if not isinstance(spec, dict):
        raise ValueError(f"{where}: expected number or mapping, got {spec!r}")
    kind = spec.get("dist")
    try:
        if kind == "deterministic":
            return deterministic(float(spec["value"]))
        if kind == "uniform":
            return uniform(float(spec["lo"]), float(spec["hi"]))
        if kind == "loguniform":
            return loguniform(float(spec["lo"]), float(spec["hi"]))
        if kind == "lognormal":
            return lognormal(float(spec["mu"]), float(spec["sigma"]),
                             float(spec.get("lo", 0.0)), float(spec.get("hi", math.inf)))
    except KeyError as e:
        raise ValueError(f"{where}: missing field {e.args[0]!r} for dist {kind!r}") from None
    raise ValueError(f"{where}: unknown dist kind {kind!r}")
