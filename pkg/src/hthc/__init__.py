"""Two-task parallel training engine for generalized linear models.

A gap-scoring task continuously refreshes per-coordinate duality gaps while
an asynchronous coordinate-descent solver optimizes the batch of currently
most important coordinates; a profiler/tuner picks worker counts and batch
size from measured per-update costs. Supports Lasso and the dual
hinge-loss SVM.
"""

from hthc.coordinator import TrainConfig, train
from hthc.data import DataMatrix, load_libsvm, synth_lasso, synth_svm
from hthc.gap_task import GapTaskConfig
from hthc.glm import lasso_problem, svm_problem
from hthc.kernels import backend_name
from hthc.solver_task import SolverConfig

__version__ = "0.1.0"

__all__ = ["DataMatrix", "GapTaskConfig", "SolverConfig", "TrainConfig",
           "backend_name", "lasso_problem", "load_libsvm", "svm_problem",
           "synth_lasso", "synth_svm", "train", "__version__"]
