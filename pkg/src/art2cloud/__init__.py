"""ART2 client clustering and cluster-aware VM pre-allocation for a simulated cloud."""

from .art2 import Art2Network, Art2Params, ClusterAssignment, classify, new_network, present, train
from .features import PatternVector, RequestLogRecord, parse_log, popularity, session_patterns
from .simulator import Request, SimConfig, SimMetrics, Simulator, run
from .workload import WorkloadSpec, generate

__version__ = "0.1.0"

__all__ = [
    "Art2Network", "Art2Params", "ClusterAssignment", "classify", "new_network", "present", "train",
    "PatternVector", "RequestLogRecord", "parse_log", "popularity", "session_patterns",
    "Request", "SimConfig", "SimMetrics", "Simulator", "run",
    "WorkloadSpec", "generate",
]
