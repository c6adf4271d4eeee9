"""Privacy-loss bound evaluation and statistical audits of the noise pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError
from .noise_protocol import (
    CANCELLATION_RTOL, DEFAULT_C, KEY_BITS, CancellationResult, Role, derive_shared_uniform,
    laplace_from_keys, laplace_scale, public_key, sample_secrets,
)

KS_ALPHA = 0.05
KS_COEFF = 1.358          # asymptotic two-sided Kolmogorov critical value at alpha = 0.05
VARIANCE_RTOL = 0.05


@dataclass(frozen=True)
class EpsilonConstants:
    """Unspecified constants of the privacy bound.

    ``c_a`` and ``c_b`` are the bound's additive constants, ``c_mu`` the
    coefficient of the O(mu) contraction and ``c_half`` the coefficient of the
    O(mu**0.5) drift term.
    """

    c_a: float = 1.0
    c_b: float = 1.0
    c_mu: float = 1.0
    c_half: float = 1.0

    def validate(self, mu: float) -> None:
        vals = (self.c_a, self.c_b, self.c_mu, self.c_half)
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise InvalidConfigError("privacy constants must be finite and nonnegative")
        if not 0 < self.c_mu * mu < 1:
            raise InvalidConfigError(f"need 0 < c_mu * mu < 1, got {self.c_mu * mu}")


def epsilon_bound(i, sigma_g: float, mu: float, consts: EpsilonConstants = EpsilonConstants()):
    """Shape of the privacy loss after ``i`` rounds (``i >= 1``; arrays allowed).

    ``(2 sqrt2 / sigma_g) * [((1 - (1 - c_mu mu)**(i+1)) / (c_mu mu) - 1) c_a
    + c_b + c_half sqrt(mu) (i - 1)]``. This is a bound shape with user-chosen
    constants, not a calibrated privacy accountant.
    """
    consts.validate(mu)
    if sigma_g <= 0:
        raise InvalidConfigError("sigma_g must be positive")
    i_arr = np.asarray(i, dtype=float)
    if np.any(i_arr < 1):
        raise InvalidConfigError("the bound is defined for i >= 1")
    rate = consts.c_mu * mu
    geometric = (1.0 - (1.0 - rate) ** (i_arr + 1)) / rate - 1.0
    inner = geometric * consts.c_a + consts.c_b + consts.c_half * math.sqrt(mu) * (i_arr - 1)
    out = 2.0 * math.sqrt(2.0) / sigma_g * inner
    return float(out) if out.ndim == 0 else out


def epsilon_limit(sigma_g: float, mu: float, consts: EpsilonConstants) -> float:
    """Limit of :func:`epsilon_bound` as ``i`` grows; infinite unless ``c_half == 0``."""
    consts.validate(mu)
    if consts.c_half > 0:
        return math.inf
    rate = consts.c_mu * mu
    return 2.0 * math.sqrt(2.0) / sigma_g * ((1.0 / rate - 1.0) * consts.c_a + consts.c_b)


def uniform_cdf(x):
    return np.clip(x, 0.0, 1.0)


def exponential_cdf(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, -np.expm1(-np.maximum(x, 0.0)), 0.0)


def laplace_cdf(scale: float):
    def cdf(x):
        z = np.asarray(x, dtype=float) / scale
        return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0.0)),
                        1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))
    return cdf


def ks_statistic(samples, reference_cdf) -> float:
    """One-sample Kolmogorov-Smirnov distance ``sup |F_n - F|``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = len(x)
    if n == 0:
        raise InvalidConfigError("KS statistic needs at least one sample")
    F = np.asarray(reference_cdf(x), dtype=float)
    j = np.arange(1, n + 1)
    return float(max(np.max(j / n - F), np.max(F - (j - 1) / n)))


def ks_critical(n: int) -> float:
    return KS_COEFF / math.sqrt(n)


@dataclass(frozen=True)
class AuditReport:
    name: str
    sample_size: int
    statistic: float
    critical: float

    @property
    def passed(self) -> bool:
        return self.statistic < self.critical

    def row(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{self.name:<34} {self.sample_size:>9d} {self.statistic:>12.6g} "
                f"{self.critical:>12.6g}  {flag}")


def format_reports(reports) -> str:
    head = f"{'test':<34} {'n':>9} {'statistic':>12} {'critical':>12}  result"
    return "\n".join([head, "-" * len(head)] + [r.row() for r in reports]) + "\n"


def _ks_report(name, samples, cdf):
    n = len(samples)
    return AuditReport(name, n, ks_statistic(samples, cdf), ks_critical(n))


def audit_noise_pipeline(n: int = 100_000, sigma_g: float = 0.1, c: int = DEFAULT_C,
                         seed=0, literal_scale: bool = False,
                         key_bits: int | None = KEY_BITS) -> list[AuditReport]:
    """KS tests on every link of the key-to-noise chain, plus a variance check.

    The noise is always tested against Laplace(0, sigma_g / sqrt2);
    ``literal_scale`` only changes how it is generated.
    """
    left_rng, right_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    left = sample_secrets(Role.POSITIVE, left_rng, n, key_bits)
    right = sample_secrets(Role.NEGATIVE, right_rng, n, key_bits)
    left_pub, right_pub = public_key(left), public_key(right)

    product = left.v * right.v
    u = derive_shared_uniform(left.v, right_pub.p, c, key_bits)
    u_prime = derive_shared_uniform(left.v_prime, right_pub.p_prime, c, key_bits)
    keep = (u > 0) & (u_prime > 0)
    noise = laplace_from_keys(u[keep], u_prime[keep], laplace_scale(sigma_g, literal_scale))
    target = laplace_scale(sigma_g)
    var_err = abs(float(np.var(noise)) - sigma_g ** 2) / sigma_g ** 2

    return [
        _ks_report("secret product vs Exp(1)", product, exponential_cdf),
        _ks_report("exp(-product) vs U(0,1)", np.exp(-product), uniform_cdf),
        _ks_report("shared key vs U(0,1)", u, uniform_cdf),
        _ks_report("noise vs Laplace(0, sigma_g/sqrt2)", noise, laplace_cdf(target)),
        AuditReport("noise variance rel. error", len(noise), var_err, VARIANCE_RTOL),
    ]


def neighborhood_residuals(masks: np.ndarray, A: np.ndarray) -> np.ndarray:
    """``|sum_m a_mk g_mk|_inf`` for every hub ``k``; ``masks[m, k]`` is an M-vector."""
    return np.max(np.abs(np.einsum("mk,mkd->kd", A, masks)), axis=1)


def verify_global_condition(masks: np.ndarray, A: np.ndarray,
                            tol: float = CANCELLATION_RTOL) -> CancellationResult:
    """Residual of the network-wide weighted noise sum at one iteration.

    Passes when it is at most ``K * tol`` times the largest mask entry, the
    bound implied by per-neighbourhood cancellation.
    """
    masks = np.asarray(masks, dtype=float)
    residual = float(np.max(np.abs(np.einsum("mk,mkd->d", A, masks)))) if masks.size else 0.0
    scale = float(np.max(np.abs(masks))) if masks.size else 0.0
    return CancellationResult(residual, residual <= A.shape[0] * tol * scale)
