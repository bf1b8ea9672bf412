class ConfigError(ValueError):
    """Invalid experiment configuration."""


class PlannerAbort(RuntimeError):
    """A planner stopped before producing a plan."""


class BudgetExceeded(PlannerAbort):
    pass


class NodeCapExceeded(PlannerAbort):
    def __init__(self, level: int, count: int, cap: int):
        super().__init__(f"node cap {cap} exceeded at level {level} ({count} nodes)")
        self.level = level
        self.count = count
        self.cap = cap


class SingularCovarianceError(PlannerAbort):
    def __init__(self, level: int, node: int):
        super().__init__(
            f"covariance of node {node} at level {level} is not positive definite; "
            "check the prior and process noise"
        )
        self.level = level
        self.node = node


class BoundInapplicable(ValueError):
    """Suboptimality bound hypotheses do not hold (e.g. singular W)."""
