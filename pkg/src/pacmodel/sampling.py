"""Uniform sampling on clipped L-infinity balls and sample-complexity arithmetic.

All sampling is driven by counter-based Philox streams keyed on
(master seed, purpose tag, index), so independently learned pieces of a
model draw from fixed, schedule-independent streams.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NormBallRegion",
    "SampleBatch",
    "uniform_sample",
    "required_samples_full",
    "required_samples_margin",
    "max_key_features",
    "achieved_epsilon",
    "derive_seed",
    "seed_stream",
]


def _key_words(master_seed: int, key: tuple) -> list[int]:
    """Flatten (master_seed, *key) into 32-bit words for a SeedSequence.

    Strings are digested with blake2s so the mapping is stable across
    platforms and interpreter runs (unlike built-in hash()).
    """
    words = [int(master_seed) & 0xFFFFFFFF, (int(master_seed) >> 32) & 0xFFFFFFFF]
    for part in key:
        if isinstance(part, str):
            digest = hashlib.blake2s(part.encode("utf-8"), digest_size=8).digest()
            words.append(int.from_bytes(digest[:4], "little"))
            words.append(int.from_bytes(digest[4:], "little"))
        else:
            value = int(part)
            words.append(value & 0xFFFFFFFF)
            words.append((value >> 32) & 0xFFFFFFFF)
    return words


def seed_stream(master_seed: int, *key) -> np.random.Generator:
    """Return a Generator on an independent Philox stream keyed by (seed, *key)."""
    ss = np.random.SeedSequence(_key_words(master_seed, key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(master_seed: int, *key) -> int:
    """Derive a 64-bit integer sub-seed keyed by (master_seed, *key)."""
    ss = np.random.SeedSequence(_key_words(master_seed, key))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class NormBallRegion:
    """Closed L-infinity ball around ``center`` with ``radius``, optionally
    intersected with an axis-aligned clip box (e.g. the valid pixel range)."""

    center: np.ndarray
    radius: float
    clip: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.center.ndim != 1 or self.center.size == 0:
            raise ValueError("center must be a nonempty 1-D vector")
        if not np.all(np.isfinite(self.center)):
            raise ValueError("center must be finite")
        self.radius = float(self.radius)
        if not (self.radius > 0.0) or not math.isfinite(self.radius):
            raise ValueError(f"radius must be a positive finite number, got {self.radius}")
        if self.clip is not None:
            lo = np.broadcast_to(np.asarray(self.clip[0], dtype=np.float64), self.center.shape).copy()
            hi = np.broadcast_to(np.asarray(self.clip[1], dtype=np.float64), self.center.shape).copy()
            if np.any(lo > hi):
                raise ValueError("clip lower bound exceeds upper bound")
            self.clip = (lo, hi)
            elo, ehi = self.bounds()
            if np.any(elo > ehi):
                raise ValueError("ball does not intersect the clip box")

    @property
    def dimension(self) -> int:
        return self.center.size

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-dimension [lo, hi] of ball intersected with the clip box."""
        lo = self.center - self.radius
        hi = self.center + self.radius
        if self.clip is not None:
            lo = np.maximum(lo, self.clip[0])
            hi = np.minimum(hi, self.clip[1])
        return lo, hi

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        lo, hi = self.bounds()
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))


@dataclass
class SampleBatch:
    """A batch of i.i.d. uniform points drawn from a region."""

    points: np.ndarray
    seed: int
    region: NormBallRegion = field(repr=False)

    def __len__(self) -> int:
        return self.points.shape[0]


def uniform_sample(region: NormBallRegion, count: int, seed: int) -> SampleBatch:
    """Draw ``count`` i.i.d. points uniform on region ∩ clip.

    The intersection is an axis-aligned box, so each coordinate is an
    independent uniform draw. The batch is fully determined by
    (seed, count, region).
    """
    if count < 1:
        raise ValueError(f"sample count must be >= 1, got {count}")
    lo, hi = region.bounds()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & (2**64 - 1))))
    points = rng.uniform(lo, hi, size=(count, region.dimension))
    # Guard against any floating-point excursion outside the box.
    np.clip(points, lo, hi, out=points)
    return SampleBatch(points=points, seed=int(seed), region=region)


def _check_rates(epsilon: float, eta: float) -> None:
    if not (0.0 < epsilon <= 1.0):
        raise ValueError(f"error rate must be in (0, 1], got {epsilon}")
    if not (0.0 < eta < 1.0):
        raise ValueError(f"significance level must be in (0, 1), got {eta}")


def required_samples_full(epsilon: float, eta: float, m: int, n: int) -> int:
    """Samples needed to fit all (m+1)(n-1) coefficients plus the margin in one
    scenario program: ceil((2/eps) * (ln(1/eta) + (m+1)(n-1) + 1))."""
    _check_rates(epsilon, eta)
    if m < 1 or n < 2:
        raise ValueError(f"need m >= 1 and n >= 2, got m={m}, n={n}")
    variables = (m + 1) * (n - 1) + 1
    return math.ceil((2.0 / epsilon) * (math.log(1.0 / eta) + variables))


def required_samples_margin(epsilon: float, eta: float) -> int:
    """Samples needed for the single-variable margin recomputation:
    ceil((2/eps) * (ln(1/eta) + 1))."""
    _check_rates(epsilon, eta)
    return math.ceil((2.0 / epsilon) * (math.log(1.0 / eta) + 1.0))


def max_key_features(k2: int, epsilon: float, eta: float) -> int:
    """Largest key-feature budget a phase-2 sample count ``k2`` supports:
    floor(k2*eps/2 - ln(1/eta) - 1). Errors if not even one feature fits."""
    _check_rates(epsilon, eta)
    if k2 < 1:
        raise ValueError(f"k2 must be >= 1, got {k2}")
    budget = math.floor(k2 * epsilon / 2.0 - math.log(1.0 / eta) - 1.0)
    if budget < 1:
        raise ValueError(
            f"k2={k2} is too small for any key feature at epsilon={epsilon}, eta={eta} "
            f"(budget {budget})"
        )
    return budget


def achieved_epsilon(k: int, eta: float, decision_vars: int) -> float:
    """Error rate actually guaranteed by ``k`` scenario samples with
    ``decision_vars`` decision variables: (2/k) * (ln(1/eta) + d).

    Values above 1 make the guarantee vacuous; callers must flag that.
    """
    if not (0.0 < eta < 1.0):
        raise ValueError(f"significance level must be in (0, 1), got {eta}")
    if k < 1 or decision_vars < 1:
        raise ValueError(f"need k >= 1 and decision_vars >= 1, got k={k}, d={decision_vars}")
    return (2.0 / k) * (math.log(1.0 / eta) + decision_vars)
