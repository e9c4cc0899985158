"""Self-supervised neural solution maps for parametric constrained NLPs,
trained with homotopy continuation schedules.

Problem families: AC optimal power flow (:mod:`homol2o.acopf`) and a
nonconvex random-constraint benchmark (:mod:`homol2o.randnlp`). Training
machinery lives in :mod:`homol2o.training`; the relaxation and
domain-aware continuation transforms in :mod:`homol2o.homotopy`.
"""

from .kernels import COMPILED as KERNELS_COMPILED

__version__ = "0.1.0"

__all__ = ["KERNELS_COMPILED", "__version__"]
