"""Hidden hubs: planted high-variance rows in Gaussian matrices.

Generators, chi-squared amplification and baseline detectors, theory
calculators, statistical-query oracle simulators and an experiment harness.
"""

from .detect import (AmplifierConfig, DetectionResult, RecoveryMetrics, amplify, auto_regime,
                     degree_detect, evaluate, mu_null, run_detectors, spectral_detect,
                     top_s, truncation_level)
from .errors import HubsError, NumericError, OracleError, ParameterError, RegimeError
from .matrix_io import load_instance, save_instance
from .model import (HubColumnLaw, HubInstance, ModelParams, NoisePolicy, PlantedSupport, corrupt,
                    generate, plant_general, plant_heterogeneous, plant_submatrix, sample_hub_column,
                    sample_null)

__version__ = "0.1.0"
