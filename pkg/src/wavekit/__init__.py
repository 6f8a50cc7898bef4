"""wavekit: 2D frequency-domain full waveform inversion with a learned,
multigrid-augmented Helmholtz preconditioner that is retrained as the
inversion evolves."""

from .grid import (
    AttenuationField,
    ComplexField,
    HelmholtzProblem,
    RegularGrid2D,
    SlownessSquaredField,
    SourceReceiverLayout,
    absorbing_layer,
    grid_for_frequency,
    helmholtz_apply,
    point_source,
    prolong,
    restrict,
    sample_at_receivers,
    shifted_laplacian_apply,
)
from .krylov import SolveReport, fgmres, solve_adjoint, solve_forward
from .multigrid import VCycleConfig, VCyclePreconditioner, vcycle
from .nets import EncoderSolver, MvuPreconditioner, load_checkpoint, save_checkpoint
from .data import DatasetSpec, TrainingSample, build_dataset, generate_sample, random_linear_model
from .training import TrainingConfig, train
from .retrain import RetrainConfig, retrain, should_retrain
from .inversion import (
    EncodedObjective,
    FcSchedule,
    CycleSpec,
    GridPolicy,
    PreconditionerFactory,
    Regularizer,
    SimSourceEncoding,
    Survey,
    SurveyGeometry,
    frequency_continuation,
    gauss_newton_step,
    simulate_observations,
)

__version__ = "0.1.0"
