"""Device-independent certification of entanglement properties from Bell-test data."""

__version__ = "0.1.0"

from .engine import bound_functional, is_member, kl_project, maximize_functional, min_negativity
from .functionals import (
    BellFunctional,
    evaluate,
    functional_by_name,
    make_cglmp3,
    make_chsh,
    make_mermin,
    make_tilted_chsh,
)
from .hypotheses import (
    HypothesisSet,
    build_bell_capped,
    build_biseparable,
    build_fidelity_capped,
    build_lhv,
    build_negativity_capped,
    build_nonsignaling,
    build_quantum_set,
)
from .protocols import (
    PValueTrace,
    kaniewski_fidelity,
    martingale_gain,
    martingale_pvalue,
    martingale_run,
    pbr_gain,
    pbr_run,
    threshold_scan,
)
from .quantum import born_behavior, cglmp_strategy, chsh_strategy, ghz_strategy, strategy_by_name
from .scenario import (
    CGLMP3_SCENARIO,
    CHSH_SCENARIO,
    MERMIN_SCENARIO,
    Behavior,
    Scenario,
    SettingsDistribution,
    Trials,
)
from .trials_io import read_trials, sample_trials, write_trials

__all__ = [
    "Behavior",
    "BellFunctional",
    "CGLMP3_SCENARIO",
    "CHSH_SCENARIO",
    "HypothesisSet",
    "MERMIN_SCENARIO",
    "PValueTrace",
    "Scenario",
    "SettingsDistribution",
    "Trials",
    "born_behavior",
    "bound_functional",
    "build_bell_capped",
    "build_biseparable",
    "build_fidelity_capped",
    "build_lhv",
    "build_negativity_capped",
    "build_nonsignaling",
    "build_quantum_set",
    "cglmp_strategy",
    "chsh_strategy",
    "evaluate",
    "functional_by_name",
    "ghz_strategy",
    "is_member",
    "kaniewski_fidelity",
    "kl_project",
    "make_cglmp3",
    "make_chsh",
    "make_mermin",
    "make_tilted_chsh",
    "martingale_gain",
    "martingale_pvalue",
    "martingale_run",
    "maximize_functional",
    "min_negativity",
    "pbr_gain",
    "pbr_run",
    "read_trials",
    "sample_trials",
    "strategy_by_name",
    "threshold_scan",
    "write_trials",
]
