"""Speed-accuracy tradeoffs in reaching from stochastic optimal control.

A planar two-joint, six-muscle arm with signal-dependent activation noise
is planned through a Gaussian belief (mean plus covariance), transcribed by
direct collocation with free final time and solved with an interior point
method. Plans are executed open loop or under receding-horizon replanning,
and sweeps over target distance and width recover Fitts' law.
"""
from .arm import ArmParams, NoiseModel
from .belief import BeliefState, BeliefTrajectory
from .errors import (
    DegenerateDesignError,
    DivergenceError,
    DomainError,
    EmptySweepError,
    InfeasibleTaskError,
    InvalidArgumentError,
    NumericalOverflowError,
    ReachError,
)
from .lab import FittsFit, FittsTrial, compute_id, fit_fitts, run_sweep, velocity_metrics
from .mpc import MpcConfig, SimulationTrace, run_mpc
from .nlp import NlpProblem, NlpSolution, SolverOptions, solve
from .transcribe import ReachTask, Transcription, build_nlp, extract_trajectory

__version__ = "0.1.0"
