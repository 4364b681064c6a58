"""Location-deviation risk functionals and tooling.

A sigma-indexed family of risks combining a location term with a weighted
deviation term: sigma = 0 is median-centric, sigma = inf recovers the
classical mean-variance objective, and finite sigma interpolates through
a smooth, outlier-resistant penalty.  The package provides exact
evaluation on weighted samples, projected stochastic sub-gradient
training on the joint (parameters, location) variable with randomized
output, Moreau-envelope stationarity diagnostics, and seeded experiment
runners with a CLI.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DivergedStateError,
    EmptyDatasetError,
    InvalidParamsError,
    InvalidWitnessError,
    MlocriskError,
    NonConvergenceError,
    ParseError,
    UnsupportedSigmaError,
)
from .riskfn import (
    RiskParams,
    default_eta,
    dev,
    dev_prime,
    dev_sigma,
    dev_sigma_prime,
    eta_lower_bound,
)
from .risk_eval import (
    Sample,
    ThetaSolution,
    build_nonmonotone_pair,
    joint_risk,
    m_location,
    mean_variance_closed_form,
    risk_empirical,
    solve_theta,
)
from .losses import (
    Example,
    LinearModel,
    LossEval,
    absolute_loss,
    hinge_loss,
    multiclass_logistic_loss,
    squared_loss,
)
from .optimizer import (
    Feedback,
    JointState,
    ProjectionSet,
    RunRecord,
    StepSchedule,
    feedback,
    make_minibatcher,
    project,
    run,
    run_risk,
)
from .moreau import (
    EnvelopeConfig,
    StationarityProblem,
    StationarityReport,
    empirical_joint_objective,
    envelope_grad,
    envelope_grad_bound,
    envelope_grad_bound_horizon,
    initialization_gap_bound,
    loss_smoothness,
    prox_point,
    stationarity_check,
    weak_convexity_constant,
    weak_convexity_probe,
)
from .data import (
    Dataset,
    SplitSpec,
    folded_normal,
    folded_normal_moments,
    load_csv,
    split,
    synth_blobs,
    synth_regression,
)
from .experiments import (
    ClassifyConfig,
    LinregConfig,
    MetricsTable,
    RiskCurveConfig,
    ToyConfig,
    run_classify,
    run_linreg,
    run_riskcurve,
    run_toy,
)
