"""Occupancy-grid perception.

A fixed window ahead of the ego vehicle is discretised into cells; noisy
occupancy evidence is scored cell by cell with a tiny dense network over
3x3 neighbourhoods, connected runs of occupied cells become axis-aligned
detection boxes, and detections are matched against ground-truth boxes
to produce confusion counts.  A single-gate recurrent cell smooths a
score series over time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ShapeError, UsageError
from .nn import (
    Activation,
    Mlp,
    RecurrentCell,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    rnn_step,
    sgd_step,
)
from .simulation import Obstacle, VehicleState, WorldState


@dataclass(frozen=True)
class GridGeometry:
    """Shape of the perception window: width cells ahead, height cells across."""

    width: int = 80
    height: int = 8
    cell_size: float = 0.5

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DomainError("grid must have at least one cell per axis")
        if self.cell_size <= 0.0:
            raise DomainError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def span_x(self) -> float:
        return self.width * self.cell_size

    @property
    def span_y(self) -> float:
        return self.height * self.cell_size

    @property
    def n_cells(self) -> int:
        return self.width * self.height


@dataclass
class OccupancyGrid:
    """Row-major cell values in [0, 1]; flat index is iy * width + ix."""

    width: int
    height: int
    cell_size: float
    origin_x: float
    origin_y: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != self.width * self.height:
            raise ShapeError(
                f"expected {self.width * self.height} cell values, "
                f"got {self.values.size}"
            )
        if not np.isfinite(self.values).all():
            raise DomainError("cell values must be finite")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise DomainError("cell values must lie in [0, 1]")

    def _check_index(self, ix: int, iy: int) -> None:
        if not (0 <= ix < self.width and 0 <= iy < self.height):
            raise DomainError(
                f"cell ({ix}, {iy}) outside grid {self.width}x{self.height}"
            )

    def flat_index(self, ix: int, iy: int) -> int:
        self._check_index(ix, iy)
        return iy * self.width + ix

    def value_at(self, ix: int, iy: int) -> float:
        return float(self.values[self.flat_index(ix, iy)])

    def set_value(self, ix: int, iy: int, value: float) -> None:
        if not (0.0 <= value <= 1.0) or not math.isfinite(value):
            raise DomainError(f"cell value must lie in [0, 1], got {value}")
        self.values[self.flat_index(ix, iy)] = value

    def cell_box(self, ix: int, iy: int) -> "BoundingBox":
        """Meter-space bounds of one cell."""
        self._check_index(ix, iy)
        x0 = self.origin_x + ix * self.cell_size
        y0 = self.origin_y + iy * self.cell_size
        return BoundingBox(x0, y0, x0 + self.cell_size, y0 + self.cell_size)

    def as_matrix(self) -> np.ndarray:
        """(height, width) view of the cell values."""
        return self.values.reshape(self.height, self.width)

    @property
    def x_max(self) -> float:
        return self.origin_x + self.width * self.cell_size

    @property
    def y_max(self) -> float:
        return self.origin_y + self.height * self.cell_size


def grid_for(
    geometry: GridGeometry, ego: VehicleState, fill: float = 0.5
) -> OccupancyGrid:
    """Empty grid anchored at the ego x position, centred on the lane axis."""
    return OccupancyGrid(
        width=geometry.width,
        height=geometry.height,
        cell_size=geometry.cell_size,
        origin_x=ego.x,
        origin_y=-geometry.span_y / 2.0,
        values=np.full(geometry.n_cells, fill, dtype=float),
    )


def occupancy_truth(world: WorldState, geometry: GridGeometry) -> OccupancyGrid:
    """Ground-truth grid: a cell is occupied iff an obstacle box overlaps it
    with positive area (edge contact does not count)."""
    grid = grid_for(geometry, world.ego, fill=0.0)
    cs = grid.cell_size
    for obs in world.obstacles:
        x_lo, x_hi = obs.x - obs.half_extent, obs.x + obs.half_extent
        y_lo, y_hi = obs.y - obs.half_extent, obs.y + obs.half_extent
        ix_min = max(0, int(math.floor((x_lo - grid.origin_x) / cs)))
        ix_max = min(grid.width - 1, int(math.ceil((x_hi - grid.origin_x) / cs)))
        iy_min = max(0, int(math.floor((y_lo - grid.origin_y) / cs)))
        iy_max = min(grid.height - 1, int(math.ceil((y_hi - grid.origin_y) / cs)))
        for iy in range(iy_min, iy_max + 1):
            for ix in range(ix_min, ix_max + 1):
                cell = grid.cell_box(ix, iy)
                w = min(x_hi, cell.x_max) - max(x_lo, cell.x_min)
                h = min(y_hi, cell.y_max) - max(y_lo, cell.y_min)
                if w > 0.0 and h > 0.0:
                    grid.values[iy * grid.width + ix] = 1.0
    return grid


# ---------------------------------------------------------------------------
# boxes and IoU
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in meters.  Zero-area boxes are legal; inverted ones
    are not."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise DomainError(
                f"inverted box: ({self.x_min}, {self.y_min}) to "
                f"({self.x_max}, {self.y_max})"
            )

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def _corners(box) -> Tuple[float, float, float, float]:
    if isinstance(box, BoundingBox):
        return box.as_tuple()
    arr = np.asarray(box, dtype=float).reshape(-1)
    if arr.size != 4:
        raise ShapeError(f"a box needs exactly 4 coordinates, got {arr.size}")
    return (float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))


def compute_iou(box_a, box_b) -> float:
    """Intersection over union of two axis-aligned boxes.

    Degenerate boxes (zero or negative area) always score 0.
    """
    ax0, ay0, ax1, ay1 = _corners(box_a)
    bx0, by0, bx1, by1 = _corners(box_b)
    area_a = max(0.0, ax1 - ax0) * max(0.0, ay1 - ay0)
    area_b = max(0.0, bx1 - bx0) * max(0.0, by1 - by0)
    if area_a <= 0.0 or area_b <= 0.0:
        return 0.0
    w = min(ax1, bx1) - max(ax0, bx0)
    h = min(ay1, by1) - max(ay0, by0)
    inter = max(0.0, w) * max(0.0, h)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def truth_boxes(world: WorldState, geometry: GridGeometry) -> List[BoundingBox]:
    """Obstacle boxes clipped to the perception window, world frame.

    Obstacles entirely outside the window are dropped; order follows the
    world obstacle order.
    """
    grid = grid_for(geometry, world.ego, fill=0.0)
    out: List[BoundingBox] = []
    for obs in world.obstacles:
        x0 = max(obs.x - obs.half_extent, grid.origin_x)
        y0 = max(obs.y - obs.half_extent, grid.origin_y)
        x1 = min(obs.x + obs.half_extent, grid.x_max)
        y1 = min(obs.y + obs.half_extent, grid.y_max)
        if x1 > x0 and y1 > y0:
            out.append(BoundingBox(x0, y0, x1, y1))
    return out


# ---------------------------------------------------------------------------
# cell classification
# ---------------------------------------------------------------------------

PATCH_SIZE = 9  # 3x3 neighbourhood, row-major, zero padded at the border


def extract_patches(grid: OccupancyGrid) -> np.ndarray:
    """(n_cells, 9) array of 3x3 neighbourhoods in row-major cell order."""
    mat = grid.as_matrix()
    padded = np.zeros((grid.height + 2, grid.width + 2))
    padded[1:-1, 1:-1] = mat
    patches = np.empty((grid.height * grid.width, PATCH_SIZE))
    col = 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            patches[:, col] = padded[
                1 + dy : 1 + dy + grid.height, 1 + dx : 1 + dx + grid.width
            ].reshape(-1)
            col += 1
    return patches


@dataclass
class CellClassification:
    """Per-cell obstacle scores and thresholded labels, flat row-major."""

    scores: np.ndarray
    labels: np.ndarray
    threshold: float


def classify_cells(
    model: Mlp, grid: OccupancyGrid, threshold: float = 0.5
) -> CellClassification:
    """Score every cell with the classifier; occupied iff score > threshold."""
    if model.in_dim != PATCH_SIZE or model.out_dim != 1:
        raise ShapeError(
            f"cell classifier must map {PATCH_SIZE} -> 1, "
            f"got {model.in_dim} -> {model.out_dim}"
        )
    scores = mlp_forward(model, extract_patches(grid)).reshape(-1)
    return CellClassification(
        scores=scores, labels=scores > threshold, threshold=threshold
    )


def boxes_from_labels(grid: OccupancyGrid, labels: np.ndarray) -> List[BoundingBox]:
    """Tight meter-space boxes over 4-connected components of occupied cells.

    Components are emitted in row-major discovery order.
    """
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if labels.size != grid.width * grid.height:
        raise ShapeError(
            f"expected {grid.width * grid.height} labels, got {labels.size}"
        )
    lab = labels.reshape(grid.height, grid.width)
    seen = np.zeros_like(lab)
    boxes: List[BoundingBox] = []
    for iy in range(grid.height):
        for ix in range(grid.width):
            if not lab[iy, ix] or seen[iy, ix]:
                continue
            stack = [(ix, iy)]
            seen[iy, ix] = True
            ix_lo = ix_hi = ix
            iy_lo = iy_hi = iy
            while stack:
                cx, cy = stack.pop()
                ix_lo, ix_hi = min(ix_lo, cx), max(ix_hi, cx)
                iy_lo, iy_hi = min(iy_lo, cy), max(iy_hi, cy)
                for nx, ny in ((cx - 1, cy), (cx + 1, cy), (cx, cy - 1), (cx, cy + 1)):
                    if 0 <= nx < grid.width and 0 <= ny < grid.height:
                        if lab[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((nx, ny))
            lo = grid.cell_box(ix_lo, iy_lo)
            hi = grid.cell_box(ix_hi, iy_hi)
            boxes.append(BoundingBox(lo.x_min, lo.y_min, hi.x_max, hi.y_max))
    return boxes


class CellLabel(Enum):
    OBSTACLE = "obstacle"
    FREE = "free"


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float
    label: CellLabel = CellLabel.OBSTACLE

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise DomainError(f"detection score must lie in [0, 1], got {self.score}")


def detections_from_grid(
    classification: CellClassification, grid: OccupancyGrid
) -> List[Detection]:
    """Group occupied cells into detections; score is the mean member score."""
    labels = classification.labels.reshape(grid.height, grid.width)
    scores = classification.scores.reshape(grid.height, grid.width)
    seen = np.zeros_like(labels)
    out: List[Detection] = []
    for iy in range(grid.height):
        for ix in range(grid.width):
            if not labels[iy, ix] or seen[iy, ix]:
                continue
            stack = [(ix, iy)]
            seen[iy, ix] = True
            members = []
            ix_lo = ix_hi = ix
            iy_lo = iy_hi = iy
            while stack:
                cx, cy = stack.pop()
                members.append(scores[cy, cx])
                ix_lo, ix_hi = min(ix_lo, cx), max(ix_hi, cx)
                iy_lo, iy_hi = min(iy_lo, cy), max(iy_hi, cy)
                for nx, ny in ((cx - 1, cy), (cx + 1, cy), (cx, cy - 1), (cx, cy + 1)):
                    if 0 <= nx < grid.width and 0 <= ny < grid.height:
                        if labels[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((nx, ny))
            lo = grid.cell_box(ix_lo, iy_lo)
            hi = grid.cell_box(ix_hi, iy_hi)
            out.append(
                Detection(
                    box=BoundingBox(lo.x_min, lo.y_min, hi.x_max, hi.y_max),
                    score=float(np.mean(members)),
                )
            )
    return out


# ---------------------------------------------------------------------------
# detection matching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "DetectionCounts") -> "DetectionCounts":
        return DetectionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
        )


def match_detections(
    detections: Sequence,
    truths: Sequence,
    iou_threshold: float = 0.5,
    tn_cells: int = 0,
) -> DetectionCounts:
    """Greedy one-to-one matching in descending IoU order.

    A pair is only eligible at IoU >= iou_threshold.  Ties break on the
    lower detection index, then the lower truth index, so the outcome is
    deterministic.  Unmatched detections are false positives, unmatched
    truths false negatives; tn_cells passes through (true negatives are a
    cell count, not a box count).
    """
    if tn_cells < 0:
        raise DomainError(f"tn_cells must be non-negative, got {tn_cells}")
    det_boxes = [d.box if isinstance(d, Detection) else d for d in detections]
    matches = _greedy_matches(det_boxes, truths, iou_threshold)
    return DetectionCounts(
        tp=len(matches),
        fp=len(det_boxes) - len(matches),
        fn=len(truths) - len(matches),
        tn=tn_cells,
    )


def matched_ious(
    detections: Sequence,
    truths: Sequence,
    iou_threshold: float = 0.5,
) -> List[float]:
    """IoU of each matched pair, under the same greedy matching as
    match_detections."""
    det_boxes = [d.box if isinstance(d, Detection) else d for d in detections]
    return [iou for _, _, iou in _greedy_matches(det_boxes, truths, iou_threshold)]


def _greedy_matches(
    det_boxes: Sequence, truths: Sequence, iou_threshold: float
) -> List[Tuple[int, int, float]]:
    pairs = []
    for i, dbox in enumerate(det_boxes):
        for j, tbox in enumerate(truths):
            iou = compute_iou(dbox, tbox)
            if iou >= iou_threshold:
                pairs.append((-iou, i, j))
    pairs.sort()
    det_used = set()
    truth_used = set()
    matches: List[Tuple[int, int, float]] = []
    for neg_iou, i, j in pairs:
        if i in det_used or j in truth_used:
            continue
        det_used.add(i)
        truth_used.add(j)
        matches.append((i, j, -neg_iou))
    return matches


def true_negative_cells(
    classification: CellClassification, truth: OccupancyGrid
) -> int:
    """Cells the classifier calls free that are truly free."""
    truth_occ = truth.values > 0.5
    return int(np.sum(~classification.labels & ~truth_occ))


# ---------------------------------------------------------------------------
# temporal smoothing
# ---------------------------------------------------------------------------

def temporal_smooth(
    cell: RecurrentCell,
    scores: Sequence[float],
    h0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Run a score series through the recurrent cell; returns (T, hidden_dim).

    The first component of the hidden state is the smoothed score stream.
    """
    if cell.input_dim != 1:
        raise ShapeError(f"smoothing cell must take 1 input, got {cell.input_dim}")
    seq = np.asarray(list(scores), dtype=float)
    if seq.size and (seq.min() < 0.0 or seq.max() > 1.0):
        raise DomainError("scores must lie in [0, 1]")
    h = np.zeros(cell.hidden_dim) if h0 is None else np.asarray(h0, dtype=float)
    out = np.empty((seq.size, cell.hidden_dim))
    for t, s in enumerate(seq):
        h = rnn_step(cell, h, np.array([float(s)]))
        out[t] = h
    return out


def default_smoothing_cell(gain: float = 4.0) -> RecurrentCell:
    """Leaky evidence integrator: pulls toward recent scores, remembers a bit."""
    return RecurrentCell(
        w_hidden=np.array([[2.0]]),
        w_input=np.array([[gain]]),
        b_hidden=np.array([-0.5 * gain - 1.0]),
    )


# ---------------------------------------------------------------------------
# classifier training
# ---------------------------------------------------------------------------

def synthetic_patches(
    n: int, rng: np.random.Generator, noise_sigma: float = 0.25
) -> Tuple[np.ndarray, np.ndarray]:
    """Labelled 3x3 evidence patches mimicking the occupancy sensor output.

    Occupied centres sit near 0.9, free centres near 0.1; neighbours are a
    mix because real obstacles span several cells.  Evidence is clamped to
    [0, 1] like the sensor output.
    """
    labels = rng.integers(0, 2, size=n).astype(float)
    base = np.where(
        rng.random((n, PATCH_SIZE)) < np.where(labels, 0.55, 0.08)[:, None], 0.9, 0.1
    )
    base[:, 4] = np.where(labels, 0.9, 0.1)  # centre cell is the label
    sigma = rng.uniform(0.05, noise_sigma, size=(n, 1))
    patches = np.clip(base + rng.normal(0.0, 1.0, (n, PATCH_SIZE)) * sigma, 0.0, 1.0)
    return patches, labels


def train_cell_classifier(
    seed: int = 0,
    n_samples: int = 4000,
    epochs: int = 40,
    hidden: int = 16,
    lr: float = 0.5,
) -> Mlp:
    """Fit the 9 -> hidden -> 1 sigmoid classifier on synthetic patches."""
    rng = np.random.default_rng(seed)
    model = init_mlp((PATCH_SIZE, hidden, 1), (Activation.RELU, Activation.SIGMOID), rng)
    x, t = synthetic_patches(n_samples, rng)
    t = t.reshape(-1, 1)
    batch = 32
    for _ in range(epochs):
        order = rng.permutation(n_samples)
        for start in range(0, n_samples, batch):
            idx = order[start : start + batch]
            y, cache = mlp_forward_cached(model, x[idx])
            dy = 2.0 * (y - t[idx]) / len(idx)
            grads = mlp_backward(model, dy, cache)
            sgd_step(model, grads, lr)
    return model
