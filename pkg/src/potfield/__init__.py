"""Potential-field analysis of multi-asset price trajectories.

Prices are treated as a particle moving in a potential; the potential's
gradient is inferred with Gaussian-process regression, and regions where its
Laplacian is positive are summarized as mean attractors.  Lyapunov-exponent
stability checks, wavelet coherence and a synthetic trajectory generator
complete the toolkit.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DataError,
    NumericalError,
    PotfieldError,
)
from .market_data import (  # noqa: E402
    GradientObservations,
    PriceRecord,
    Trajectory,
    build_trajectory,
    estimate_gradient_observations,
    load_assets,
    normalize_minmax,
    parse_csv,
)
from .lyapunov import LyapunovResult, Verdict, lyapunov_exponents, stability_verdict  # noqa: E402
from .gp_field import (  # noqa: E402
    FieldPosterior,
    PotentialFieldModel,
    SEKernelParams,
    TrainOptions,
    posterior_field,
    posterior_gradient,
    train,
)
from .attractor import (  # noqa: E402
    AnalysisSettings,
    AttractorSummary,
    analyze_window,
    attractor_moments,
    build_kl_field,
    kl_divergence,
    principal_axes,
    temporal_evolution,
    trend_report,
)
from .wavelet import CoherenceMap, coherence, cwt  # noqa: E402
from .synth import DoubleWell, QuadraticWell, SynthSpec, analytic_gradient, simulate  # noqa: E402

__all__ = [
    "__version__", "PotfieldError", "DataError", "NumericalError",
    "PriceRecord", "Trajectory", "GradientObservations", "parse_csv", "build_trajectory",
    "load_assets", "normalize_minmax", "estimate_gradient_observations",
    "LyapunovResult", "Verdict", "lyapunov_exponents", "stability_verdict",
    "SEKernelParams", "PotentialFieldModel", "FieldPosterior", "TrainOptions", "train",
    "posterior_gradient", "posterior_field",
    "AttractorSummary", "AnalysisSettings", "kl_divergence", "build_kl_field",
    "attractor_moments", "trend_report", "principal_axes", "analyze_window",
    "temporal_evolution",
    "CoherenceMap", "cwt", "coherence",
    "QuadraticWell", "DoubleWell", "SynthSpec", "analytic_gradient", "simulate",
]
