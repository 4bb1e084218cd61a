"""Cycle mathematics: candidates, expectations, gradients and exact counts."""

from .candidates import (
    CandidateSet,
    CycleCandidate,
    active_mask,
    candidate_sums,
    count_active_candidates,
    count_cycles,
    count_cycles_streaming,
    enumerate_candidates,
    is_active_lifted,
    is_active_partitioned,
    iter_candidate_chunks,
)
from .expectation import (
    EXPANSION_COEFFS,
    CandidateCensus,
    RowExtensionSpec,
    binomial_expansion_coeffs,
    expected_cycles,
    expected_cycles_expanded,
    expected_cycles_row_extension,
    grad_expected_cycles,
    grad_expected_cycles4_expanded,
)
from .poly import LaurentPoly, inner_sum
from .tanner import girth, tanner_cycle_count

__all__ = [
    "CandidateCensus", "CandidateSet", "CycleCandidate", "EXPANSION_COEFFS", "LaurentPoly",
    "RowExtensionSpec", "active_mask", "binomial_expansion_coeffs", "candidate_sums",
    "count_active_candidates", "count_cycles", "count_cycles_streaming", "enumerate_candidates",
    "expected_cycles", "expected_cycles_expanded", "expected_cycles_row_extension", "girth",
    "grad_expected_cycles", "grad_expected_cycles4_expanded", "inner_sum", "is_active_lifted",
    "is_active_partitioned", "iter_candidate_chunks", "tanner_cycle_count",
]
