"""Patient-ventilator interaction simulator with automatic asynchrony labeling.

A nonlinear lumped-parameter lung model (nine disease archetypes) coupled to
a pressure-support ventilator circuit, integrated by a native implicit solver
with event-localized triggering/cycling, plus tooling to generate labeled
synthetic waveform datasets, score external detectors, and stream live
sessions to an educational UI.
"""

__version__ = "0.1.0"

from .archetypes import (  # noqa: F401
    ARCHETYPE_NAMES,
    ARCHETYPES,
    ArchetypeParams,
    archetype_catalog,
    get_archetype,
)
from .breath import (  # noqa: F401
    AsynchronyPlan,
    BreathOverride,
    BreathPlan,
    CardiacParams,
    EffortShape,
    build_asynchrony_plan,
    build_breath_plan,
)
from .labeling import (  # noqa: F401
    CLASSES,
    BreathLabel,
    DetectorReport,
    classify_breath,
    label_breaths,
    score_detector,
)
from .solver import (  # noqa: F401
    CircuitState,
    SolverConfig,
    Trajectory,
    conservation_report,
    run_staged_scenario,
    simulate,
    steady_state,
)
from .ventilator import (  # noqa: F401
    TubingParams,
    VentilatorSettings,
)
