"""Desk-scale laboratory for BFT protocols that split consensus into
decentralized dissemination and centralized global ordering.

Four protocols run over one deterministic simulator: single-primary
PBFT and Linear Hybster baselines, and their composed variants (DQPBFT,
Destiny) where every replica disseminates its own clients' commands and
a single ordering instance assigns the global order.
"""

from .core import (
    AssignRef,
    CommandBatch,
    FaultModel,
    NoOp,
    OrderRef,
    SystemConfig,
    compute_digest,
    expected_primary,
    quorum_size,
)
from .metrics import MetricsReport, build_report, throughput_timeline
from .model import (
    concurrent_max_throughput,
    message_count,
    model_throughput,
    primary_max_throughput,
)
from .runner import RunResult, build, run_scenario
from .scenario import Scenario
from .simnet import (
    AdversaryAction,
    LatencyModel,
    Partition,
    ScenarioInvalid,
    Simulator,
    TooManyFaults,
    Trace,
    action,
)
from .threshsign import (
    AggregateSignature,
    ContinuingCertificate,
    SignatureShare,
    ThresholdVerifier,
    TrustedDeployment,
    TrustedSubsystem,
)

__all__ = [
    "AggregateSignature",
    "AssignRef",
    "AdversaryAction",
    "CommandBatch",
    "ContinuingCertificate",
    "FaultModel",
    "LatencyModel",
    "MetricsReport",
    "NoOp",
    "OrderRef",
    "Partition",
    "RunResult",
    "Scenario",
    "ScenarioInvalid",
    "SignatureShare",
    "Simulator",
    "SystemConfig",
    "ThresholdVerifier",
    "TooManyFaults",
    "Trace",
    "TrustedDeployment",
    "TrustedSubsystem",
    "action",
    "build",
    "build_report",
    "compute_digest",
    "concurrent_max_throughput",
    "expected_primary",
    "message_count",
    "model_throughput",
    "primary_max_throughput",
    "quorum_size",
    "run_scenario",
    "throughput_timeline",
]

__version__ = "0.1.0"
