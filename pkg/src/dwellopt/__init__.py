"""Optimal control of switched systems under minimum dwell time constraints.

Three solution paths over one common transcription stack:

* a mixed-integer formulation over a master sequence, solved by
  branch-and-bound on the mode-inclusion binaries (:mod:`dwellopt.minlp`),
* an iterative penalty-homotopy heuristic that lets modes collapse and
  reduces the sequence (:mod:`dwellopt.isto`),
* a combinatorial integral approximation baseline on a fixed grid
  (:mod:`dwellopt.cia`),

plus the interval-hull relaxation used as a lower bound.  Every result is
scored by forward simulation on a common evaluation grid
(:mod:`dwellopt.simulate`); the CLI (:mod:`dwellopt.cli`) sweeps methods and
node counts and writes CSV rows.
"""

from .model import (
    BOX_HULL,
    OUTER_CONVEXIFICATION,
    DynamicsForm,
    MdtSpec,
    RelaxedProblem,
    SwitchedProblem,
    benchmark_names,
    make_benchmark,
    relax,
)
from .integrate import ModePropagation, propagate_convexified, propagate_mode
from .segments import (
    ActivationAssignment,
    Segment,
    SegmentFamily,
    activation_from_inclusion,
    build_activation_inequalities,
    build_mdt_rows,
    enumerate_segments,
)

__version__ = "0.1.0"
