"""Relevance-evaluation bookkeeping shared by all matchers."""
from dataclasses import dataclass, field


@dataclass
class CostLedger:
    """Counts of relevance evaluations.

    ``per_level_breakdown[i]`` holds the propagation evaluations spent at
    pyramid level ``i`` (a single-scale run has one level). Evaluations made
    while (re)initialising a level are kept apart in ``init_evals`` so the
    propagation total matches the closed-form ``18 N M L`` count.
    """

    per_level_breakdown: list = field(default_factory=list)
    init_evals: int = 0
    wall_time: float = 0.0

    @property
    def relevance_evals(self):
        return sum(self.per_level_breakdown)

    @property
    def total_evals(self):
        return self.relevance_evals + self.init_evals

    def add(self, level, n):
        while len(self.per_level_breakdown) <= level:
            self.per_level_breakdown.append(0)
        self.per_level_breakdown[level] += int(n)

    def as_dict(self):
        return {
            "relevance_evals": self.relevance_evals,
            "init_evals": self.init_evals,
            "per_level_breakdown": list(self.per_level_breakdown),
            "wall_time": self.wall_time,
        }
