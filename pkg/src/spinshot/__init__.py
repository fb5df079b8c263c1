"""Single-shot spin-qubit readout fidelity: analytic model, joint
optimization of the operating point, and Monte-Carlo cross-validation.

The package splits a single-shot readout into two independent stages.
The state-to-charge stage maps spin onto a tunneling event and is
governed by the tunnel and relaxation times; the electrical stage asks
whether the filtered, sampled detector trace crosses a threshold.
Each stage contributes a pair of state fidelities; their composition
is the measured readout fidelity.

Module map: :mod:`~spinshot.models` holds the shared domain types,
:mod:`~spinshot.stc` the mapping stage, :mod:`~spinshot.filters` the
low-pass chain, :mod:`~spinshot.electrical` the detection statistics,
:mod:`~spinshot.fidelity` composition plus optimization and sweeps,
:mod:`~spinshot.initfid` initialization by loading,
:mod:`~spinshot.sequencer` multi-qubit measurement ordering,
:mod:`~spinshot.montecarlo` the trace simulator, and
:mod:`~spinshot.experiments` / :mod:`~spinshot.cli` the catalog of
published experiments with its command-line surface.
"""

from .models import (
    MU_B_OVER_KB,
    DegenerateModelError,
    DetectorModel,
    DomainError,
    FidelityReport,
    InfeasibleTargetError,
    InsufficientDataError,
    QuadratureError,
    ReadoutPlan,
    TunnelModel,
    ZeemanParams,
    compose_fidelity,
    zeeman_to_ratio,
)
from .experiments import (
    ExperimentRecord,
    ParseError,
    Provenance,
    ValidationError,
    bundled_catalog,
    dump_experiments,
    load_experiments,
)
from .fidelity import design_curve, evaluate, optimize, phase_diagram
from .stc import complete_tunnel_times, f_stc0, f_stc1, t_opt, v_stc

__version__ = "0.1.0"

__all__ = [
    "MU_B_OVER_KB",
    "DegenerateModelError",
    "DetectorModel",
    "DomainError",
    "ExperimentRecord",
    "FidelityReport",
    "InfeasibleTargetError",
    "InsufficientDataError",
    "ParseError",
    "Provenance",
    "QuadratureError",
    "ReadoutPlan",
    "TunnelModel",
    "ValidationError",
    "ZeemanParams",
    "bundled_catalog",
    "complete_tunnel_times",
    "compose_fidelity",
    "design_curve",
    "dump_experiments",
    "evaluate",
    "f_stc0",
    "f_stc1",
    "load_experiments",
    "optimize",
    "phase_diagram",
    "t_opt",
    "v_stc",
    "zeeman_to_ratio",
    "__version__",
]
