"""Max-stable dependence modelling of flood extremes on river networks."""

__version__ = "0.1.0"

from .errors import (
    ConvergenceError,
    DomainError,
    EstimationError,
    InputError,
    KernelValidityError,
    RiverExtremesError,
    ThresholdError,
)
from .events import (
    DailyPanel,
    EventMatrix,
    decluster,
    madogram_theta,
    read_discharges,
    to_pareto,
)
from .fit import (
    BootstrapResult,
    FitConfig,
    FitMethod,
    FitResult,
    bootstrap_se,
    censored_nll,
    fit_dependence,
    spectral_nll,
)
from .hr_core import (
    CensoredTerm,
    below_threshold_mass,
    censored_density,
    exponent_measure,
    spectral_density,
)
from .kernels import (
    HrStructure,
    KernelParams,
    KernelVariant,
    NetworkGeometry,
    StationSet,
    anisotropy_matrix,
    bivariate_cdf,
    euclid_kernel,
    extremal_coefficient,
    hr_structure,
    kernel_matrix,
    kernel_value,
    river_kernel,
)
from .margins import (
    GevParams,
    MarginalModel,
    RegionalModel,
    fit_regional,
    fit_station,
    frechet_transform,
    lr_test,
    ppp_nll,
    ppp_nll_grad,
    return_level,
    tail_prob,
)
from .mvn import MvnResult, MvnSpec, bvn_cdf, mvn_cdf
from .network import (
    CatchmentSummary,
    FlowRelation,
    NetLocation,
    RiverNetwork,
    Segment,
    catchment_summary,
    flow_relation,
    junction_weights_from_altitude,
    river_distance,
    snap_to_network,
    weight_product,
)
from .risk import (
    GroupMaxResult,
    RiskQuery,
    RiskResult,
    group_max_quantiles,
    joint_exceedance,
    network_return_map,
)
from .simulate import SimSpec, sample_hr, simulate, to_gev_margins
