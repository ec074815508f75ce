from .runs import ExperimentRun


__all__ = ["ExperimentRun"]
