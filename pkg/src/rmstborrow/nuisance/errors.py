class FitError(RuntimeError):
    """A nuisance fitter could not produce a model."""


class SeparationError(FitError):
    pass


class RankError(FitError):
    pass


class NoCensoringError(FitError):
    """Stratum has no censored subjects; use the constant model S^C == 1."""


class NuisanceFitError(FitError):
    """A fitter error annotated with the nuisance and fold that failed."""


class FoldError(FitError):
    pass
