"""End-to-end segmentation: transition matrix -> flow clustering ->
random-walk refinement -> label map."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .affinity import build_transition
from .core import FeatureMap, LabelMap, SegmentationConfig, StochasticMatrix
from .markov_flow import FlowResult, TraceSink, iterate_to_fixpoint
from .propagation import (
    PropagationResult,
    SeedMatrix,
    labels_from,
    propagate,
)


@dataclass(frozen=True)
class SegmentationRun:
    labels: LabelMap
    transition: StochasticMatrix
    flow: FlowResult
    prop: PropagationResult
    config: SegmentationConfig

    @property
    def num_clusters(self) -> int:
        return self.flow.num_clusters

    def manifest(self) -> dict:
        """Everything needed to reproduce the run (no timestamps)."""
        return {
            "config": self.config.to_dict(),
            "n": self.transition.n,
            "storage": self.transition.storage,
            "flow_iterations": self.flow.iterations,
            "flow_residual": self.flow.residual,
            "flow_converged": self.flow.converged,
            "num_clusters": self.num_clusters,
            "prop_iterations": self.prop.iterations,
            "prop_residual": self.prop.residual,
            "prop_converged": self.prop.converged,
            "balance_residual": self.prop.balance_residual,
        }


def run_segmentation(features: FeatureMap, cfg: SegmentationConfig,
                     trace: Optional[TraceSink] = None) -> SegmentationRun:
    """Run the full pipeline on one feature map.

    Propagation reuses the fused transition matrix, not the flow fixpoint.
    """
    transition = build_transition(features, cfg)
    flow = iterate_to_fixpoint(transition, cfg, trace=trace)
    seeds = SeedMatrix.from_clusters(flow.clusters)
    prop = propagate(transition, seeds, cfg)
    labels = labels_from(prop, features.height, features.width)
    return SegmentationRun(labels=labels, transition=transition, flow=flow,
                           prop=prop, config=cfg)
