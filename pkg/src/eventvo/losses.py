"""Training-style losses over patch edges, flows and window poses.

The selection loss rewards patches whose edges track well: each edge
contributes score * residual * (1 - alpha * ln(confidence)), averaged over
edges, minus the mean log of the sampled score values, which keeps the score
map away from zero. The weighted total combines selection, flow and pose
terms with fixed coefficients (the selection term is only added at the final
update iteration of a training window).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, se3_log

SCORE_WEIGHT = 0.05
FLOW_WEIGHT = 0.1
POSE_WEIGHT = 10.0


@dataclass
class EdgeLossInputs:
    """Per-edge patch scores s, residual magnitudes r, confidences omega."""

    scores: np.ndarray
    residuals: np.ndarray
    omegas: np.ndarray
    alpha: float = 0.1

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.residuals = np.asarray(self.residuals, dtype=np.float64).reshape(-1)
        self.omegas = np.asarray(self.omegas, dtype=np.float64).reshape(-1)
        n = len(self.scores)
        if len(self.residuals) != n or len(self.omegas) != n:
            raise ValueError("scores, residuals and omegas must have equal length")
        if self.alpha < 0.0:
            raise ValueError("alpha must be non-negative")


def score_loss(inputs: EdgeLossInputs, sampled_scores) -> float:
    """Selection loss: mean edge term minus mean log sampled score.

    Edge scores must lie in (0, 1), confidences must be positive, residual
    magnitudes non-negative; sampled scores must lie in (0, 1]. An empty edge
    set contributes 0 to the first term.
    """
    sampled = np.asarray(sampled_scores, dtype=np.float64).reshape(-1)
    if len(sampled) == 0:
        raise ValueError("at least one sampled score required")
    if np.any(sampled <= 0.0) or np.any(sampled > 1.0):
        raise ValueError("sampled scores must lie in (0, 1]")
    if np.any(inputs.omegas <= 0.0):
        raise ValueError("edge confidences must be positive")
    if np.any(inputs.scores <= 0.0) or np.any(inputs.scores >= 1.0):
        raise ValueError("edge scores must lie in (0, 1)")
    if np.any(inputs.residuals < 0.0):
        raise ValueError("residual magnitudes must be non-negative")
    if len(inputs.scores):
        edge_terms = inputs.scores * inputs.residuals * (
            1.0 - inputs.alpha * np.log(inputs.omegas)
        )
        edge_mean = float(edge_terms.mean())
    else:
        edge_mean = 0.0
    return edge_mean - float(np.log(sampled).mean())


def flow_loss(predicted, target) -> float:
    """Mean Euclidean distance between predicted and reference 2D flows."""
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1, 2)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 2)
    if predicted.shape != target.shape:
        raise ValueError("predicted and target flows must have equal shape")
    if len(predicted) == 0:
        raise ValueError("flow loss needs at least one flow")
    return float(np.linalg.norm(predicted - target, axis=1).mean())


def pose_loss(estimated, reference) -> float:
    """Mean geodesic magnitude of relative-pose error over consecutive pairs.

    For each pair (i, i+1), the contribution is the norm of the logarithm map
    of (Ti^-1 Ti+1)_est^-1 (Ti^-1 Ti+1)_ref, so a global rigid transform of
    either window leaves the loss unchanged.
    """
    if len(estimated) != len(reference):
        raise ValueError("pose lists must have equal length")
    if len(estimated) < 2:
        raise ValueError("pose loss needs at least two poses")
    terms = []
    for i in range(len(estimated) - 1):
        rel_est = estimated[i].inverse().compose(estimated[i + 1])
        rel_ref = reference[i].inverse().compose(reference[i + 1])
        err = rel_est.inverse().compose(rel_ref)
        terms.append(np.linalg.norm(se3_log(err)))
    return float(np.mean(terms))


def total_loss(score, flow, pose) -> float:
    """Weighted sum 0.05 * score + 0.1 * flow + 10 * pose."""
    return SCORE_WEIGHT * float(score) + FLOW_WEIGHT * float(flow) + POSE_WEIGHT * float(pose)
