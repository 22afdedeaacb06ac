"""Block-structured particle simulation of mean-field SDEs with common
noise, with exact empirical Wasserstein metrics and long-time experiment
harnesses."""

__version__ = "0.1.0"

from .measure import (
    CouplePoint,
    EmpiricalMeasure,
    MeasureEnsemble,
    assignment_solve,
    nested_wasserstein,
    product_distance,
    wasserstein_p,
    wasserstein_to_dirac,
)
from .model import (
    AssumptionConstants,
    ModelSpec,
    check_dissipativity,
    check_growth,
    drift_eval,
    get_model,
    model_from_config,
)
from .simulate import BlowUpError, ParticleEnsemble, SimConfig, coupled_simulate, simulate
