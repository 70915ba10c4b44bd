"""Robustness analysis on top of learned affine models.

A model is certified robust when its worst case over the ball, margin
included, still keeps every rival score below the target label's score.
Because the surrogate is affine, that worst case is a closed-form corner
of the box, which doubles as a concrete counterexample candidate.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import runtime
from .errors import PacModelError
from .learner import UNTARGETED, AffinePacModel, LearnerConfig, learn_pac_model
from .sampling import NormBallRegion, derive_seed, uniform_sample

__all__ = [
    "ComponentExtreme",
    "Candidate",
    "RobustnessReport",
    "RadiusResult",
    "Int8Scale",
    "ContinuousScale",
    "maximize_affine_on_ball",
    "minimize_affine_on_ball",
    "check_pac_model_robustness",
    "extract_and_validate_candidates",
    "verify_region",
    "max_robust_radius",
    "robustness_rate",
    "baseline_pac_sample_check",
    "adversarial_mass_bound",
]

ROBUST = "pac_model_robust"
NOT_VERIFIED = "not_verified"


def maximize_affine_on_ball(coefficients: np.ndarray, region: NormBallRegion) -> tuple[np.ndarray, float]:
    """Exact maximum of c0 + c.x over the (clipped) ball.

    Per-dimension sign rule: positive slope goes to the upper extreme,
    zero or negative to the lower one.
    """
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape != (region.dimension + 1,):
        raise ValueError(
            f"expected {region.dimension + 1} coefficients, got {coefficients.shape}"
        )
    lo, hi = region.bounds()
    point = np.where(coefficients[1:] > 0, hi, lo)
    value = float(coefficients[0] + np.dot(coefficients[1:], point))
    return point, value


def minimize_affine_on_ball(coefficients: np.ndarray, region: NormBallRegion) -> tuple[np.ndarray, float]:
    """Exact minimum over the ball (the sign rule flipped)."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape != (region.dimension + 1,):
        raise ValueError(
            f"expected {region.dimension + 1} coefficients, got {coefficients.shape}"
        )
    lo, hi = region.bounds()
    point = np.where(coefficients[1:] > 0, lo, hi)
    value = float(coefficients[0] + np.dot(coefficients[1:], point))
    return point, value


@dataclass
class ComponentExtreme:
    """Worst case of one surrogate component over the ball, margin included.

    ``max_value`` is the certified upper bound of the true score difference
    at ``point``; every component staying below zero certifies robustness.
    For untargeted models it is the negated certified untargeted margin, so
    the same sign rule applies.
    """

    label: int | None
    point: np.ndarray
    max_value: float


@dataclass
class Candidate:
    point: np.ndarray
    label: int | None
    true_difference: float
    validated: bool


@dataclass
class RobustnessReport:
    verdict: str
    components: list[ComponentExtreme]
    margin: float
    eta: float
    epsilon: float
    candidates: list[Candidate] = field(default_factory=list)
    queries: int = 0
    seconds: float = 0.0
    flags: tuple[str, ...] = ()

    @property
    def robust(self) -> bool:
        return self.verdict == ROBUST


def check_pac_model_robustness(model: AffinePacModel) -> RobustnessReport:
    """Decide robustness of the surrogate plus margin over the ball.

    Targeted: robust iff max over the ball of every component plus the
    margin is negative. Untargeted: robust iff the minimum of the
    untargeted surrogate minus the margin stays positive; the reported
    value is negated so "all max_value < 0" reads the same in both modes.
    """
    extremes = []
    if model.mode == UNTARGETED:
        point, value = minimize_affine_on_ball(model.components[0], model.region)
        extremes.append(ComponentExtreme(label=None, point=point, max_value=model.margin - value))
    else:
        for label, coeffs in zip(model.component_labels, model.components):
            point, value = maximize_affine_on_ball(coeffs, model.region)
            extremes.append(
                ComponentExtreme(label=label, point=point, max_value=value + model.margin)
            )
    verdict = ROBUST if all(e.max_value < 0 for e in extremes) else NOT_VERIFIED
    return RobustnessReport(
        verdict=verdict,
        components=extremes,
        margin=model.margin,
        eta=model.eta,
        epsilon=model.epsilon,
        flags=model.provenance.flags,
    )


def extract_and_validate_candidates(model: AffinePacModel, oracle) -> list[Candidate]:
    """Query the oracle at every component's extreme point.

    A candidate is validated when the true behaviour there actually leaves
    the target label (boundary ties included).
    """
    candidates = []
    if model.mode == UNTARGETED:
        point, _ = minimize_affine_on_ball(model.components[0], model.region)
        true_diff = runtime.untargeted_score_difference(oracle, point, model.label)
        candidates.append(
            Candidate(point=point, label=None, true_difference=true_diff, validated=true_diff <= 0)
        )
    else:
        for label, coeffs in zip(model.component_labels, model.components):
            point, _ = maximize_affine_on_ball(coeffs, model.region)
            diffs, labels = runtime.score_difference(oracle, point, model.label)
            true_diff = float(diffs[labels.index(label)])
            candidates.append(
                Candidate(point=point, label=label, true_difference=true_diff, validated=true_diff >= 0)
            )
    return candidates


def verify_region(oracle, region: NormBallRegion, config: LearnerConfig, label: int | None = None, workers: int = 1) -> tuple[AffinePacModel, RobustnessReport]:
    """Full pipeline: learn a model, check it, validate its candidates."""
    start = time.perf_counter()
    queries_before = oracle.query_count
    model = learn_pac_model(oracle, region, label, config, workers=workers)
    report = check_pac_model_robustness(model)
    report.candidates = extract_and_validate_candidates(model, oracle)
    report.queries = oracle.query_count - queries_before
    report.seconds = time.perf_counter() - start
    return model, report


@dataclass(frozen=True)
class Int8Scale:
    """Integer radii on the 8-bit pixel scale; ``unit`` converts one step
    into input units (1/255 for [0,1]-scaled images)."""

    unit: float = 1.0 / 255.0

    name = "int8"
    step = 1

    def to_input_units(self, value: int) -> float:
        return value * self.unit


@dataclass(frozen=True)
class ContinuousScale:
    tolerance: float = 1.0 / 64.0

    name = "continuous"

    @property
    def step(self):
        return self.tolerance

    def to_input_units(self, value: float) -> float:
        return value


@dataclass
class RadiusResult:
    """Largest radius (on the search scale) still verified robust; the
    sentinel r_lo - step means nothing in range verified."""

    radius: float | int
    scale: Int8Scale | ContinuousScale
    verified_at: list[tuple[float, str]]

    @property
    def found(self) -> bool:
        return bool(self.verified_at) and any(v == ROBUST for _, v in self.verified_at)


def _radius_probe_seed(master_seed: int, value) -> int:
    if isinstance(value, (int, np.integer)):
        return derive_seed(master_seed, "radius", int(value))
    # Key continuous radii by their exact bit pattern.
    bits = np.float64(value).view(np.uint64)
    return derive_seed(master_seed, "radius", int(bits))


def max_robust_radius(oracle, center: np.ndarray, config: LearnerConfig, r_lo, r_hi, scale=Int8Scale(), clip=None, label: int | None = None, workers: int = 1):
    """Binary search for the largest radius whose verdict is robust.

    One full learn+check pipeline runs per probe, with the probe's seed
    fixed by (master seed, radius), so the search is reproducible; the
    monotonicity it assumes is a policy over those fixed verdicts, and the
    full probe trace is returned for inspection.
    """
    if not r_lo < r_hi:
        raise ValueError(f"need r_lo < r_hi, got {r_lo} >= {r_hi}")
    center = np.asarray(center, dtype=np.float64)
    trace: list[tuple[float, str]] = []

    def probe(value) -> bool:
        radius = scale.to_input_units(value)
        region = NormBallRegion(center=center, radius=radius, clip=clip)
        probe_config = _with_seed(config, _radius_probe_seed(config.master_seed, value))
        try:
            _, report = verify_region(oracle, region, probe_config, label=label, workers=workers)
            verdict = report.verdict
        except PacModelError:
            verdict = NOT_VERIFIED
        trace.append((value, verdict))
        return verdict == ROBUST

    if isinstance(scale, Int8Scale):
        lo, hi = int(r_lo), int(r_hi)
        best = lo - 1
        while lo <= hi:
            mid = (lo + hi) // 2
            if probe(mid):
                best = mid
                lo = mid + 1
            else:
                hi = mid - 1
        return RadiusResult(radius=best, scale=scale, verified_at=trace)

    lo, hi = float(r_lo), float(r_hi)
    if not probe(lo):
        return RadiusResult(radius=lo - scale.tolerance, scale=scale, verified_at=trace)
    if probe(hi):
        return RadiusResult(radius=hi, scale=scale, verified_at=trace)
    while hi - lo > scale.tolerance:
        mid = 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
    return RadiusResult(radius=lo, scale=scale, verified_at=trace)


def _with_seed(config: LearnerConfig, seed: int) -> LearnerConfig:
    from dataclasses import replace

    return replace(config, master_seed=seed)


@dataclass
class RateResult:
    rate: float
    verdicts: list[str]
    margins: list[float | None]
    errors: list[str]


def robustness_rate(oracle, inputs: np.ndarray, radius: float, config: LearnerConfig, clip=None, workers: int = 1) -> RateResult:
    """Fraction of dataset inputs verified robust at a fixed radius.

    Every input runs the full pipeline with its own derived seed; failures
    are recorded and count as not verified.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if inputs.shape[0] < 1:
        raise ValueError("dataset must be nonempty")

    def one(index: int) -> tuple[str, float | None, str]:
        seed = derive_seed(config.master_seed, "rate", index)
        try:
            region = NormBallRegion(center=inputs[index], radius=radius, clip=clip)
            _, report = verify_region(oracle, region, _with_seed(config, seed))
            return report.verdict, report.margin, ""
        except (PacModelError, ValueError) as exc:
            return NOT_VERIFIED, None, f"input {index}: {exc}"

    indices = range(inputs.shape[0])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, indices))
    else:
        outcomes = [one(i) for i in indices]
    verdicts = [v for v, _, _ in outcomes]
    errors = [e for _, _, e in outcomes if e]
    rate = sum(v == ROBUST for v in verdicts) / len(verdicts)
    return RateResult(
        rate=rate, verdicts=verdicts, margins=[m for _, m, _ in outcomes], errors=errors
    )


@dataclass
class BaselineResult:
    verdict: str
    samples: int
    witness: np.ndarray | None


def baseline_pac_sample_check(oracle, region: NormBallRegion, label: int, epsilon: float, eta: float, seed: int = 0) -> BaselineResult:
    """Pure-sampling robustness check, no model involved.

    Draws ceil(ln(1/eta) / -ln(1-eps)) uniform points and passes iff none
    misclassifies; if the true adversarial mass exceeds eps, passing has
    probability at most eta. One-sided, for comparison against the
    model-based verdict.
    """
    if not (0.0 < epsilon <= 1.0) or not (0.0 < eta < 1.0):
        raise ValueError("need 0 < epsilon <= 1 and 0 < eta < 1")
    if epsilon >= 1.0:
        count = 1
    else:
        count = max(1, math.ceil(math.log(1.0 / eta) / -math.log1p(-epsilon)))
    batch = uniform_sample(region, count, derive_seed(seed, "baseline"))
    diffs = runtime.score_difference_batch(oracle, batch.points, label)
    adversarial = diffs.max(axis=1) >= 0
    if adversarial.any():
        first = int(np.argmax(adversarial))
        return BaselineResult(verdict=NOT_VERIFIED, samples=count, witness=batch.points[first].copy())
    return BaselineResult(verdict="pac_robust", samples=count, witness=None)


def adversarial_mass_bound(model: AffinePacModel, lipschitz: float, radius: float | None = None, epsilon: float | None = None) -> float:
    """Diagnostic upper bound on the adversarial mass in the ball.

    Combines the certified slack of the surrogate, a local Lipschitz
    constant of the score difference, and the per-dimension coefficient
    magnitudes:

        (2rL / (2rL - delta))^m * prod_i (1 - min_j |a_ji| / L) * epsilon

    where delta is the worst certified component value over the ball.
    Requires 2rL > delta and |a_ji| <= L; the exponential factor is
    evaluated in log space and saturates to infinity instead of
    overflowing.
    """
    if lipschitz <= 0 or not math.isfinite(lipschitz):
        raise ValueError(f"lipschitz must be positive and finite, got {lipschitz}")
    radius = model.region.radius if radius is None else float(radius)
    epsilon = model.epsilon if epsilon is None else float(epsilon)
    if radius <= 0:
        raise ValueError("radius must be positive")

    if model.mode == UNTARGETED:
        rows = -model.components
    else:
        rows = model.components
    # delta from the per-component ball maxima already implied by the model.
    delta = -math.inf
    for coeffs in rows:
        _, value = maximize_affine_on_ball(coeffs, model.region)
        delta = max(delta, value + model.margin)

    two_rl = 2.0 * radius * lipschitz
    if two_rl <= delta:
        raise ValueError(f"bound undefined: 2rL={two_rl} must exceed delta={delta}")
    slopes = np.abs(rows[:, 1:])
    min_per_dim = slopes.min(axis=0)
    if np.any(min_per_dim > lipschitz):
        raise ValueError("some coefficient magnitude exceeds the Lipschitz constant")

    m = model.region.dimension
    log_ball = m * (math.log(two_rl) - math.log(two_rl - delta))
    factors = 1.0 - min_per_dim / lipschitz
    if np.any(factors == 0.0):
        return 0.0
    # Keep epsilon out of the log so the trivial case returns it exactly.
    log_factor = log_ball + float(np.log(factors).sum())
    if log_factor > 700.0:
        return math.inf
    return math.exp(log_factor) * epsilon
