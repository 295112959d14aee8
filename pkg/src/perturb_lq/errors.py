"""Exception hierarchy shared by all solvers and pipelines."""


class PerturbLqError(Exception):
    """Base class for every error raised by this package."""

    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class DimensionMismatch(PerturbLqError, ValueError):
    code = "dimension_mismatch"


class NonPsdCost(PerturbLqError, ValueError):
    code = "non_psd_cost"


class SingularInnerMatrix(PerturbLqError, ArithmeticError):
    code = "singular_inner_matrix"


class EmptySampleSet(PerturbLqError, ValueError):
    code = "empty_sample_set"


class InvalidConfig(PerturbLqError, ValueError):
    code = "invalid_config"


class DimensionUnsupported(PerturbLqError, ValueError):
    code = "dimension_unsupported"


class PenaltyTooSmall(PerturbLqError, ValueError):
    code = "penalty_too_small"

    def __init__(self, t, lambda_bar, lam):
        self.t = t
        self.lambda_bar = lambda_bar
        self.lam = lam
        super().__init__(
            f"penalty lambda={lam:g} must exceed lambda_bar={lambda_bar:g} at stage {t}"
        )

    def to_dict(self):
        d = super().to_dict()
        d.update(stage=self.t, lambda_bar=self.lambda_bar, lam=self.lam)
        return d


class NotScalarState(PerturbLqError, ValueError):
    code = "not_scalar_state"


class InfeasibleConstraint(PerturbLqError, ValueError):
    code = "infeasible_constraint"


class NonPsdInitial(PerturbLqError, ValueError):
    code = "non_psd_initial"


class DegenerateStats(PerturbLqError, ArithmeticError):
    code = "degenerate_stats"


class DivergenceDetected(PerturbLqError, RuntimeError):
    code = "divergence_detected"


class NoOverlap(PerturbLqError, ValueError):
    code = "no_overlap"


class MalformedCsv(PerturbLqError, ValueError):
    code = "malformed_csv"

    def __init__(self, path, line, reason):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {reason}")

    def to_dict(self):
        d = super().to_dict()
        d.update(path=self.path, line=self.line)
        return d


class NonpositivePrice(PerturbLqError, ValueError):
    code = "nonpositive_price"


class IllConditioned(PerturbLqError, ArithmeticError):
    code = "ill_conditioned"


class InsufficientHistory(PerturbLqError, ValueError):
    code = "insufficient_history"
