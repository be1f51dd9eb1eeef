from .builtins import BUILTIN_NAMES, BuiltinError, builtin, builtin_text
from .dsl import (PulseSequence, PulseStep, SequenceError, SequenceSemanticError,
                  SequenceSyntaxError, SweepVar, Sym, parse_sequence, print_sequence)
from .runner import (RunOptions, SweepError, delta_pol_trace, fringe_fit, fringe_phase,
                     idse_delta_pol, idse_fringes,
                     run_points, run_sweep)
from .trace import Trace, TraceError, trace_from_csv, trace_from_json, trace_to_csv, trace_to_json

__all__ = [
    "BUILTIN_NAMES", "BuiltinError", "builtin", "builtin_text", "PulseSequence", "PulseStep",
    "SequenceError", "SequenceSemanticError", "SequenceSyntaxError", "SweepVar", "Sym",
    "parse_sequence", "print_sequence", "RunOptions", "SweepError", "delta_pol_trace",
    "fringe_fit", "fringe_phase", "idse_delta_pol", "idse_fringes", "run_points", "run_sweep", "Trace", "TraceError",
    "trace_from_csv", "trace_from_json", "trace_to_csv", "trace_to_json",
]
