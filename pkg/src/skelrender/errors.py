"""Exception hierarchy shared across the library.

Every error carries a short machine-readable ``code`` (used by the CLI for
``ERROR:<code>:`` prefixes) and an ``exit_code`` bucket: 1 for input/validation
problems, 2 for numerical failures, 3 for gradient-check failures.
"""


class SkelRenderError(Exception):
    code = "ERROR"
    exit_code = 1


class ValidationError(SkelRenderError):
    """One or more invariants of an input object are violated."""

    code = "VALIDATION"

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ParseError(SkelRenderError):
    code = "PARSE"


class DegenerateInput(SkelRenderError):
    code = "DEGENERATE_INPUT"


class NotSpd(SkelRenderError):
    code = "NOT_SPD"


class NoConvergence(SkelRenderError):
    code = "NO_CONVERGENCE"
    exit_code = 2


class BehindCamera(SkelRenderError):
    code = "BEHIND_CAMERA"


class DegenerateLimb(SkelRenderError):
    code = "DEGENERATE_LIMB"

    def __init__(self, edges):
        self.edges = list(edges)
        super().__init__(f"near-zero limb length on edges {self.edges}")


class DegenerateConfiguration(SkelRenderError):
    code = "DEGENERATE_CONFIGURATION"
    exit_code = 2


class EmptyInput(SkelRenderError):
    code = "EMPTY_INPUT"


class ShapeMismatch(SkelRenderError):
    code = "SHAPE_MISMATCH"


class NonUnitRay(SkelRenderError):
    code = "NON_UNIT_RAY"


class AllZeroDensities(SkelRenderError):
    code = "ALL_ZERO_DENSITIES"
    exit_code = 2

    def __init__(self, pixel):
        self.pixel = pixel
        super().__init__(f"all composite products vanished at pixel {pixel}")


class NonFiniteGradient(SkelRenderError):
    code = "NON_FINITE_GRADIENT"
    exit_code = 2


class DivergenceDetected(SkelRenderError):
    code = "DIVERGENCE"
    exit_code = 2

    def __init__(self, iteration, loss):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at iteration {iteration}")


class MagicMismatch(SkelRenderError):
    code = "MAGIC_MISMATCH"


class TruncatedPayload(SkelRenderError):
    code = "TRUNCATED_PAYLOAD"


class BadChannel(SkelRenderError):
    code = "BAD_CHANNEL"


class GradCheckFailure(SkelRenderError):
    code = "GRADCHECK_FAIL"
    exit_code = 3
