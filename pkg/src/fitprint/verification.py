"""Binarization, bit error rate, the false-alarm threshold and the verdict."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .fingerprint import FingerprintPackage, evaluate_fingerprint

DEFAULT_KAPPA = 1e-9


def binarize(v) -> np.ndarray:
    """Sign with sign(0) = +1."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("binarize: fingerprint vector has non-finite entries")
    return np.where(v >= 0, 1, -1).astype(np.int8)


def ber(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"ber: length mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("ber: empty bit vectors")
    return float(np.mean(a != b))


@lru_cache(maxsize=None)
def _log_pmf(k: int) -> np.ndarray:
    """log(C(k, d) / 2^k) for d = 0..k."""
    d = np.arange(k + 1)
    return np.array([math.lgamma(k + 1) - math.lgamma(i + 1) - math.lgamma(k - i + 1) for i in d]) - k * math.log(2)


def tail_exact(k: int, d_max: int) -> Fraction:
    """sum_{d=0}^{d_max} C(k, d) / 2^k as an exact rational."""
    if d_max < 0:
        return Fraction(0)
    d_max = min(d_max, k)
    return Fraction(sum(math.comb(k, d) for d in range(d_max + 1)), 2 ** k)


def log_tail(k: int, d_max: int) -> float:
    """Natural log of the binomial(k, 1/2) lower tail, via log-sum-exp."""
    if d_max < 0:
        return -math.inf
    lp = _log_pmf(k)[: min(d_max, k) + 1]
    m = lp.max()
    return float(m + math.log(np.exp(lp - m).sum()))


def false_alarm_prob(k: int, tau: float) -> float:
    """P[BER <= tau] for a fingerprint whose k bits are independent fair coins."""
    if k < 1:
        raise ValueError("false_alarm_prob: k must be >= 1")
    d_max = math.floor(tau * k + 1e-9)
    return float(tail_exact(k, d_max))


def solve_threshold(k: int, kappa: float = DEFAULT_KAPPA) -> float:
    """Largest tau = d*/k with the binomial lower tail up to d* at most kappa."""
    if k < 1:
        raise ValueError("solve_threshold: k must be >= 1")
    if not 0 < kappa < 1:
        raise ValueError("solve_threshold: kappa must lie in (0, 1)")
    bound = Fraction(kappa)
    acc = 0
    denom = 2 ** k
    d_star = -1
    for d in range(k + 1):
        acc += math.comb(k, d)
        if Fraction(acc, denom) <= bound:
            d_star = d
        else:
            break
    if d_star < 0:
        raise ValueError(f"kappa unachievable at this k (kappa={kappa:g} < 2^-{k})")
    return d_star / k


@dataclass
class VerificationReport:
    extracted_bits: np.ndarray
    ber: float
    tau: float
    kappa: float
    timestamp_check: str  # "pass" | "fail" | "n/a"
    decision: str  # "reused" | "independent"
    k: int = 0

    def to_text(self) -> str:
        lines = [
            f"decision: {self.decision}",
            f"ber: {self.ber:.6f}",
            f"tau: {self.tau:.6f}",
            f"kappa: {self.kappa:g}",
            f"k: {self.k}",
            f"timestamp_check: {self.timestamp_check}",
            "extracted_bits: " + "".join("1" if b > 0 else "0" for b in self.extracted_bits),
        ]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["extracted_bits"] = [int(b) for b in self.extracted_bits]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def decide(bits: np.ndarray, target_bits: np.ndarray, kappa: float, timestamp_check: str = "n/a") -> VerificationReport:
    k = len(target_bits)
    tau = solve_threshold(k, kappa)
    rate = ber(bits, target_bits)
    reused = rate <= tau and timestamp_check != "fail"
    return VerificationReport(bits, rate, tau, kappa, timestamp_check,
                              "reused" if reused else "independent", k)


def timestamp_status(suspect_time, package_time) -> str:
    if suspect_time is None or package_time is None:
        return "n/a"
    return "fail" if package_time > suspect_time else "pass"


def verify(suspect, package: FingerprintPackage, suspect_reg_time=None, package_reg_time=None,
           kappa: float = DEFAULT_KAPPA) -> VerificationReport:
    """Accept ownership when BER <= tau and the package predates the suspect.

    Registration times are any totally ordered values (registry sequence
    numbers in practice); ``None`` skips the precedence check.
    """
    v = evaluate_fingerprint(suspect, package)
    bits = binarize(v)
    return decide(bits, package.target.bits, kappa, timestamp_status(suspect_reg_time, package_reg_time))
