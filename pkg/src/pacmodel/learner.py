"""Learning affine surrogate models of score differences with PAC guarantees.

The learned object is one affine function per rival label (or a single one
for the untargeted score difference), plus one shared margin computed on a
fresh resample. Large inputs are handled by two-phase focused learning
(fit everything roughly, then refit only the strongest coefficients on
fresh data) and, for image-shaped inputs, by coarse-to-fine grid splitting
where pixels in a grid share one coefficient.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import runtime
from .chebyshev import ChebyshevFitProblem, least_squares_fit, residual_margin, solve_chebyshev_lp
from .errors import PacModelError
from .sampling import (
    NormBallRegion,
    achieved_epsilon,
    derive_seed,
    max_key_features,
    required_samples_margin,
    uniform_sample,
)

__all__ = [
    "LearnerConfig",
    "SplitConfig",
    "AffinePacModel",
    "ModelProvenance",
    "Grid",
    "PartitionRefinement",
    "learn_component",
    "learn_pac_model",
    "stepwise_split_learn",
    "group_significance",
    "refine_partition",
    "initial_partition",
    "planned_queries",
]

TARGETED = "targeted"
UNTARGETED = "untargeted"


@dataclass(frozen=True)
class SplitConfig:
    """Coarse-to-fine grid schedule for image-shaped inputs.

    Images are flat vectors in channel-major (channel, row, column) order.
    ``initial_grid`` counts grid rows and columns; grids that do not divide
    the image evenly absorb the remainder in the last row/column. Each
    refinement splits a grid into ceil/floor halves along both axes.
    """

    image_shape: tuple[int, int]
    initial_grid: tuple[int, int]
    channels: int = 1
    iterations: int = 1
    samples_per_iter: int = 1000
    top_fraction: float = 0.25

    def __post_init__(self):
        height, width = self.image_shape
        grid_rows, grid_cols = self.initial_grid
        if height < 1 or width < 1:
            raise ValueError(f"bad image shape {self.image_shape}")
        if not (1 <= grid_rows <= height and 1 <= grid_cols <= width):
            raise ValueError(f"grid counts {self.initial_grid} do not tile image {self.image_shape}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.samples_per_iter < 1:
            raise ValueError("samples_per_iter must be >= 1")
        if not (0.0 < self.top_fraction <= 1.0):
            raise ValueError(f"top_fraction must be in (0, 1], got {self.top_fraction}")

    @property
    def pixels(self) -> int:
        return self.image_shape[0] * self.image_shape[1]

    @property
    def dimension(self) -> int:
        return self.channels * self.pixels


@dataclass(frozen=True)
class LearnerConfig:
    """Knobs of the learning pipeline; see module docstring for the flow."""

    epsilon: float
    eta: float
    k1: int
    k2: int
    kappa: int
    coeff_bounds: tuple[float, float] = (-100.0, 100.0)
    mode: str = TARGETED
    ols_threshold: int = 1024
    splitting: SplitConfig | None = None
    master_seed: int = 0
    # Diagnostic override of the margin resample size. Shrinking it below
    # required_samples_margin voids the requested guarantee; the resulting
    # model is flagged accordingly.
    margin_samples: int | None = None

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError(f"error rate must be in (0, 1], got {self.epsilon}")
        if not (0.0 < self.eta < 1.0):
            raise ValueError(f"significance level must be in (0, 1), got {self.eta}")
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError("k1 and k2 must be >= 1")
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        budget = max_key_features(self.k2, self.epsilon, self.eta)
        if self.kappa > budget:
            raise ValueError(
                f"kappa={self.kappa} exceeds the budget {budget} supported by "
                f"k2={self.k2} at epsilon={self.epsilon}, eta={self.eta}"
            )
        if self.mode not in (TARGETED, UNTARGETED):
            raise ValueError(f"mode must be targeted or untargeted, got {self.mode!r}")
        lo, hi = self.coeff_bounds
        if not float(lo) <= float(hi):
            raise ValueError(f"empty coefficient bounds [{lo}, {hi}]")
        if self.margin_samples is not None and self.margin_samples < 1:
            raise ValueError("margin_samples override must be >= 1")

    def margin_sample_count(self) -> int:
        if self.margin_samples is not None:
            return self.margin_samples
        return required_samples_margin(self.epsilon, self.eta)


@dataclass
class ModelProvenance:
    """How a model was produced: seeds, sample counts, per-stage guarantees.

    ``achieved_eps`` is the error rate actually certified, which comes from
    the margin resample alone (a one-variable scenario program on fresh
    samples, valid whatever produced the surrogate). The other entries of
    ``stage_epsilons`` describe the intermediate fits and are informational.
    """

    master_seed: int
    mode: str
    component_labels: tuple[int, ...]
    sample_counts: dict
    queries: int
    stage_epsilons: dict
    achieved_eps: float
    key_features: list = field(default_factory=list)
    flags: tuple[str, ...] = ()


@dataclass
class AffinePacModel:
    """Affine surrogate of the score difference on a region, with margin.

    ``components`` holds one coefficient row (intercept first) per rival
    label in ascending order; untargeted models hold a single row for the
    untargeted score difference. With confidence 1-eta, predictions are
    within ``margin`` of the true score difference on all but an
    epsilon-fraction of the region.
    """

    region: NormBallRegion
    label: int
    components: np.ndarray
    component_labels: tuple[int, ...]
    margin: float
    eta: float
    epsilon: float
    mode: str
    provenance: ModelProvenance

    def __post_init__(self):
        self.components = np.atleast_2d(np.asarray(self.components, dtype=np.float64))
        if self.components.shape[1] != self.region.dimension + 1:
            raise ValueError("component rows must have length m+1")
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")

    def predict(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        design = np.column_stack([np.ones(points.shape[0]), points])
        return design @ self.components.T


def _component_targets(oracle, points, label, component):
    if component is None:
        return runtime.untargeted_score_difference_batch(oracle, points, label)
    diffs = runtime.score_difference_batch(oracle, points, label)
    position = runtime.rival_labels(oracle.output_dim, label).index(component)
    return diffs[:, position]


def _select_key_features(coefficients: np.ndarray, kappa: int) -> np.ndarray:
    """Indices of the kappa largest-|coefficient| template terms, the
    intercept included; ties resolved toward the lower index."""
    kappa = min(kappa, coefficients.size)
    order = np.argsort(-np.abs(coefficients), kind="stable")
    return np.sort(order[:kappa])


@dataclass
class LearnedComponent:
    coefficients: np.ndarray
    key_features: np.ndarray
    phase1_coefficients: np.ndarray
    phase2_margin: float
    free_count: int  # decision coefficients in the last fit (without the margin)


def learn_component(oracle, region: NormBallRegion, label: int, component, config: LearnerConfig) -> LearnedComponent:
    """Two-phase focused fit of one score-difference component.

    Phase 1 fits all m+1 coefficients on k1 samples (switching from the LP
    to ordinary least squares above ``ols_threshold`` free dimensions),
    keeps the kappa strongest coefficients as key features, and phase 2
    re-solves the LP on k2 fresh samples with only those free.

    ``component`` is the rival label to fit, or None for the untargeted
    score difference.
    """
    if component is None:
        position = 0
    else:
        position = runtime.rival_labels(oracle.output_dim, label).index(component)
    m = region.dimension

    batch1 = uniform_sample(region, config.k1, derive_seed(config.master_seed, "phase1", position))
    targets1 = _component_targets(oracle, batch1.points, label, component)
    design1 = np.column_stack([np.ones(config.k1), batch1.points])
    if m + 1 > config.ols_threshold:
        phase1 = least_squares_fit(design1, targets1)
    else:
        fit1 = solve_chebyshev_lp(
            ChebyshevFitProblem(design=design1, targets=targets1, bounds=config.coeff_bounds)
        )
        if not fit1.ok:
            raise PacModelError(f"phase-1 fit failed: {fit1.status} ({fit1.detail})")
        phase1 = fit1.coefficients
    del design1

    key = _select_key_features(phase1, config.kappa)

    batch2 = uniform_sample(region, config.k2, derive_seed(config.master_seed, "phase2", position))
    targets2 = _component_targets(oracle, batch2.points, label, component)
    design2 = np.column_stack([np.ones(config.k2), batch2.points])
    fit2 = solve_chebyshev_lp(
        ChebyshevFitProblem(
            design=design2,
            targets=targets2,
            free_idx=key,
            fixed_coeffs=phase1,
            bounds=config.coeff_bounds,
        )
    )
    if not fit2.ok:
        raise PacModelError(f"phase-2 fit failed: {fit2.status} ({fit2.detail})")
    return LearnedComponent(
        coefficients=fit2.coefficients,
        key_features=key,
        phase1_coefficients=phase1,
        phase2_margin=fit2.margin,
        free_count=int(key.size),
    )


def learn_pac_model(oracle, region: NormBallRegion, label: int | None, config: LearnerConfig, workers: int = 1) -> AffinePacModel:
    """Learn the full PAC model for a region.

    Components are learned independently on their own sample streams, then
    one shared margin is recomputed on a final fresh resample, restoring
    the joint (eta, epsilon) guarantee. When ``config.splitting`` is set,
    component fitting goes through stepwise grid splitting instead.
    """
    if label is None:
        label = runtime.classify(oracle, region.center)
    runtime.rival_labels(oracle.output_dim, label)
    if config.splitting is not None:
        return stepwise_split_learn(oracle, region, label, config, workers=workers)

    queries_before = oracle.query_count
    if config.mode == UNTARGETED:
        component_ids = [None]
        component_labels: tuple[int, ...] = ()
    else:
        component_labels = runtime.rival_labels(oracle.output_dim, label)
        component_ids = list(component_labels)

    def job(component):
        return learn_component(oracle, region, label, component, config)

    if workers > 1 and len(component_ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            learned = list(pool.map(job, component_ids))
    else:
        learned = [job(c) for c in component_ids]

    components = np.vstack([lc.coefficients for lc in learned])
    margin, margin_count = _final_margin(oracle, region, label, config, components)

    widest = max(lc.free_count for lc in learned)
    stage_eps = {
        "phase2": achieved_epsilon(config.k2, config.eta, widest + 1),
        "margin": achieved_epsilon(margin_count, config.eta, 1),
    }
    provenance = _provenance(
        config,
        component_labels,
        sample_counts={
            "phase1": config.k1 * len(component_ids),
            "phase2": config.k2 * len(component_ids),
            "margin": margin_count,
        },
        queries=oracle.query_count - queries_before,
        stage_epsilons=stage_eps,
        key_features=[lc.key_features for lc in learned],
    )
    return AffinePacModel(
        region=region,
        label=label,
        components=components,
        component_labels=component_labels,
        margin=margin,
        eta=config.eta,
        epsilon=config.epsilon,
        mode=config.mode,
        provenance=provenance,
    )


def _final_margin(oracle, region, label, config, components):
    count = config.margin_sample_count()
    batch = uniform_sample(region, count, derive_seed(config.master_seed, "margin"))
    margin = residual_margin(
        components, batch.points, oracle, label, untargeted=(config.mode == UNTARGETED)
    )
    return margin, count


def _provenance(config, component_labels, sample_counts, queries, stage_epsilons, key_features):
    achieved = stage_epsilons["margin"]
    flags = []
    if achieved > 1.0:
        flags.append("vacuous_epsilon")
    elif achieved > config.epsilon + 1e-12:
        flags.append("epsilon_exceeds_requested")
    return ModelProvenance(
        master_seed=config.master_seed,
        mode=config.mode,
        component_labels=component_labels,
        sample_counts=sample_counts,
        queries=queries,
        stage_epsilons=stage_epsilons,
        achieved_eps=achieved,
        key_features=key_features,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# Grid partitions for stepwise splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Half-open pixel rectangle [row0, row1) x [col0, col1)."""

    row0: int
    row1: int
    col0: int
    col1: int

    @property
    def height(self) -> int:
        return self.row1 - self.row0

    @property
    def width(self) -> int:
        return self.col1 - self.col0

    @property
    def splittable(self) -> bool:
        return self.height >= 2 or self.width >= 2


def initial_partition(split: SplitConfig) -> list[Grid]:
    """Tile the image with the initial grid; the last row/column of grids
    absorbs any remainder."""
    height, width = split.image_shape
    grid_rows, grid_cols = split.initial_grid
    row_step = height // grid_rows
    col_step = width // grid_cols
    grids = []
    for gr in range(grid_rows):
        row0 = gr * row_step
        row1 = height if gr == grid_rows - 1 else (gr + 1) * row_step
        for gc in range(grid_cols):
            col0 = gc * col_step
            col1 = width if gc == grid_cols - 1 else (gc + 1) * col_step
            grids.append(Grid(row0, row1, col0, col1))
    return grids


def _split_grid(grid: Grid) -> list[Grid]:
    """Quarter a grid with ceil-first halves; degenerate axes stay whole."""
    row_cuts = [grid.row0, grid.row0 + math.ceil(grid.height / 2), grid.row1]
    col_cuts = [grid.col0, grid.col0 + math.ceil(grid.width / 2), grid.col1]
    children = []
    for r0, r1 in zip(row_cuts[:-1], row_cuts[1:]):
        if r1 <= r0:
            continue
        for c0, c1 in zip(col_cuts[:-1], col_cuts[1:]):
            if c1 <= c0:
                continue
            children.append(Grid(r0, r1, c0, c1))
    return children


def _grid_pixel_indices(grid: Grid, split: SplitConfig, channel: int) -> np.ndarray:
    """Flat indices of one channel group of a grid, channel-major layout."""
    width = split.image_shape[1]
    rows = np.arange(grid.row0, grid.row1)
    cols = np.arange(grid.col0, grid.col1)
    base = (rows[:, None] * width + cols[None, :]).ravel()
    return channel * split.pixels + base


def group_significance(coefficients: np.ndarray, partition: list[Grid], channels: int = 1) -> np.ndarray:
    """Per-grid significance: the L2 norm of the grid's channel-group
    coefficients (plain |c| for grayscale)."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    expected = len(partition) * channels
    if coefficients.size != expected:
        raise ValueError(
            f"got {coefficients.size} group coefficients for {len(partition)} grids x {channels} channels"
        )
    per_grid = coefficients.reshape(len(partition), channels)
    return np.sqrt((per_grid**2).sum(axis=1))


@dataclass
class PartitionRefinement:
    """Outcome of one splitting round, in original grid order with each
    split grid replaced in place by its children."""

    partition: list[Grid]
    free_mask: np.ndarray  # True for grids still free (children of splits)
    parents: np.ndarray  # index into the previous partition

    @property
    def fixed_indices(self) -> np.ndarray:
        return np.unique(self.parents[~self.free_mask])


def refine_partition(partition: list[Grid], scores: np.ndarray, top_fraction: float) -> PartitionRefinement:
    """Split the top fraction of grids by significance into 4 near-equal
    sub-grids; the rest keep their (now fixed) coefficients.

    Selected grids that are single pixels cannot split and simply stay
    free. Errors if no selected grid is splittable.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(partition),):
        raise ValueError("one score per grid required")
    if not (0.0 < top_fraction <= 1.0):
        raise ValueError(f"top_fraction must be in (0, 1], got {top_fraction}")
    n_top = math.ceil(top_fraction * len(partition))
    order = np.argsort(-scores, kind="stable")
    selected = set(order[:n_top].tolist())
    if not any(partition[i].splittable for i in selected):
        raise PacModelError("no selected grid is splittable any further")

    new_grids: list[Grid] = []
    free: list[bool] = []
    parents: list[int] = []
    for idx, grid in enumerate(partition):
        if idx in selected:
            children = _split_grid(grid) if grid.splittable else [grid]
            new_grids.extend(children)
            free.extend([True] * len(children))
            parents.extend([idx] * len(children))
        else:
            new_grids.append(grid)
            free.append(False)
            parents.append(idx)
    return PartitionRefinement(
        partition=new_grids,
        free_mask=np.asarray(free, dtype=bool),
        parents=np.asarray(parents, dtype=np.int64),
    )


def _group_design(points: np.ndarray, grids: list[Grid], split: SplitConfig) -> tuple[np.ndarray, list[np.ndarray]]:
    """Design whose column per (grid, channel) group is the sum of member
    pixels; intercept column first. Also returns the member index lists."""
    columns = [np.ones(points.shape[0])]
    members = []
    for grid in grids:
        for channel in range(split.channels):
            idx = _grid_pixel_indices(grid, split, channel)
            members.append(idx)
            columns.append(points[:, idx].sum(axis=1))
    return np.column_stack(columns), members


def _stepwise_component(oracle, region, label, component, position, config) -> LearnedComponent:
    split = config.splitting
    pixel_coeffs = np.zeros(region.dimension)
    grids = initial_partition(split)
    final_fit = None

    for iteration in range(split.iterations):
        seed = derive_seed(config.master_seed, "split", position, iteration)
        batch = uniform_sample(region, split.samples_per_iter, seed)
        targets = _component_targets(oracle, batch.points, label, component)
        targets = targets - batch.points @ pixel_coeffs
        design, members = _group_design(batch.points, grids, split)

        last_round = iteration == split.iterations - 1
        if last_round:
            # Final round doubles as the focused LP over what is still free.
            fit = solve_chebyshev_lp(
                ChebyshevFitProblem(design=design, targets=targets, bounds=config.coeff_bounds)
            )
            if not fit.ok:
                raise PacModelError(f"final split fit failed: {fit.status} ({fit.detail})")
            for idx, coeff in zip(members, fit.coefficients[1:]):
                pixel_coeffs[idx] = coeff
            final_fit = fit
        else:
            group_coeffs = least_squares_fit(design, targets)[1:]
            scores = group_significance(group_coeffs, grids, split.channels)
            refinement = refine_partition(grids, scores, split.top_fraction)
            per_grid = group_coeffs.reshape(len(grids), split.channels)
            for old_idx in refinement.fixed_indices:
                for channel in range(split.channels):
                    idx = _grid_pixel_indices(grids[old_idx], split, channel)
                    pixel_coeffs[idx] = per_grid[old_idx, channel]
            grids = [g for g, keep in zip(refinement.partition, refinement.free_mask) if keep]

    coefficients = np.concatenate([[final_fit.coefficients[0]], pixel_coeffs])
    return LearnedComponent(
        coefficients=coefficients,
        key_features=np.array([], dtype=np.int64),
        phase1_coefficients=coefficients,
        phase2_margin=final_fit.margin,
        free_count=final_fit.coefficients.size,
    )


def stepwise_split_learn(oracle, region: NormBallRegion, label: int | None, config: LearnerConfig, workers: int = 1) -> AffinePacModel:
    """Learn a PAC model through iterative grid splitting.

    Each round draws a fresh batch, fits one coefficient per (grid,
    channel) group plus an intercept, fixes the insignificant grids and
    splits the significant ones; the last round's fit is the focused LP
    over the remaining free groups. The shared margin then comes from the
    usual fresh resample, so query totals are
    iterations * samples_per_iter (+ margin) per component.
    """
    if config.splitting is None:
        raise ValueError("stepwise_split_learn requires config.splitting")
    if config.splitting.dimension != region.dimension:
        raise ValueError(
            f"region has dimension {region.dimension}, splitting expects {config.splitting.dimension}"
        )
    if label is None:
        label = runtime.classify(oracle, region.center)
    runtime.rival_labels(oracle.output_dim, label)

    queries_before = oracle.query_count
    if config.mode == UNTARGETED:
        component_ids = [None]
        component_labels: tuple[int, ...] = ()
    else:
        component_labels = runtime.rival_labels(oracle.output_dim, label)
        component_ids = list(component_labels)

    def job(args):
        position, component = args
        return _stepwise_component(oracle, region, label, component, position, config)

    jobs = list(enumerate(component_ids))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            learned = list(pool.map(job, jobs))
    else:
        learned = [job(j) for j in jobs]

    components = np.vstack([lc.coefficients for lc in learned])
    margin, margin_count = _final_margin(oracle, region, label, config, components)

    split = config.splitting
    widest = max(lc.free_count for lc in learned)
    stage_eps = {
        "final_fit": achieved_epsilon(split.samples_per_iter, config.eta, widest + 1),
        "margin": achieved_epsilon(margin_count, config.eta, 1),
    }
    provenance = _provenance(
        config,
        component_labels,
        sample_counts={
            "split_iterations": split.iterations * split.samples_per_iter * len(component_ids),
            "margin": margin_count,
        },
        queries=oracle.query_count - queries_before,
        stage_epsilons=stage_eps,
        key_features=[lc.key_features for lc in learned],
    )
    return AffinePacModel(
        region=region,
        label=label,
        components=components,
        component_labels=component_labels,
        margin=margin,
        eta=config.eta,
        epsilon=config.epsilon,
        mode=config.mode,
        provenance=provenance,
    )


def planned_queries(config: LearnerConfig, n_components: int) -> int:
    """Learning-sample queries of one learn_pac_model call, margin resample
    included (classifying the center or validating candidates costs one
    query each on top)."""
    if config.splitting is not None:
        per_component = config.splitting.iterations * config.splitting.samples_per_iter
    else:
        per_component = config.k1 + config.k2
    return per_component * n_components + config.margin_sample_count()
