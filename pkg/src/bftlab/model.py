"""Closed-form throughput and message-complexity models.

Bandwidth-bound throughput per protocol (batches per second for a
replica bandwidth ``B`` in bytes/second, payload message size ``pm``
and state message size ``sm`` in bytes):

    pbft        B / ((N-1)(pm+3sm))
    hybster     B / ((N-1)(pm+sm))
    dqpbft      NF*B / ((N-1)(pm+3sm) + (NF-1)(pm+4(N-1)sm) + (N-1)(4sm))
    destiny     NF*B / ((N-1)(pm+3sm) + (NF-1)(pm+3sm) + (N-1)(4sm))

with NF = N - f non-faulty replicas.  The dqpbft denominator's middle
term mixes per-instance and aggregate accounting; it is implemented
verbatim rather than "corrected", and the CLI documents that choice.

Two reference bounds frame the table: the single-primary dissemination
ceiling T_p = B/((N-1) pm) and the concurrent-dissemination ceiling
T_cmax = NF*B/((N-1) pm + (NF-1) pm).

Message complexity per committed batch: pbft N+2N^2, hybster N+N^2,
dqpbft 2N+4N^2, destiny 7N.
"""

from __future__ import annotations

from .simnet import ScenarioInvalid

MODEL_PROTOCOLS = ("pbft", "hybster", "dqpbft", "destiny")

GBIT = 1e9 / 8  # bytes per second
KIB = 1024


def default_model_faults(protocol: str, n: int) -> int:
    if protocol in ("pbft", "dqpbft"):
        return max((n - 1) // 3, 0)
    return max((n - 1) // 2, 0)


def model_throughput(
    protocol: str,
    bandwidth: float,
    n: int,
    f: int,
    payload_bytes: float,
    state_bytes: float,
) -> float:
    """Maximum bandwidth-bound batches/second."""
    if protocol not in MODEL_PROTOCOLS:
        raise ScenarioInvalid(f"unknown model protocol {protocol!r}")
    if n < 2 or f < 0 or bandwidth <= 0 or payload_bytes <= 0 or state_bytes < 0:
        raise ScenarioInvalid("model inputs must be positive")
    nf = n - f
    pm, sm = payload_bytes, state_bytes
    if protocol == "pbft":
        return bandwidth / ((n - 1) * (pm + 3 * sm))
    if protocol == "hybster":
        return bandwidth / ((n - 1) * (pm + sm))
    if protocol == "dqpbft":
        denom = (
            (n - 1) * (pm + 3 * sm)
            + (nf - 1) * (pm + 4 * (n - 1) * sm)
            + (n - 1) * (4 * sm)
        )
        return nf * bandwidth / denom
    denom = (
        (n - 1) * (pm + 3 * sm)
        + (nf - 1) * (pm + 3 * sm)
        + (n - 1) * (4 * sm)
    )
    return nf * bandwidth / denom


def primary_max_throughput(bandwidth: float, n: int, payload_bytes: float) -> float:
    """T_p: how fast one primary can push payloads to everyone."""
    return bandwidth / ((n - 1) * payload_bytes)


def concurrent_max_throughput(bandwidth: float, n: int, f: int, payload_bytes: float) -> float:
    """T_cmax: the ceiling when all NF replicas disseminate concurrently."""
    nf = n - f
    return nf * bandwidth / ((n - 1) * payload_bytes + (nf - 1) * payload_bytes)


def message_count(protocol: str, n: int) -> int:
    """Expected protocol messages per committed batch."""
    if protocol == "pbft":
        return n + 2 * n * n
    if protocol == "hybster":
        return n + n * n
    if protocol == "dqpbft":
        return 2 * n + 4 * n * n
    if protocol == "destiny":
        return 7 * n
    raise ScenarioInvalid(f"unknown model protocol {protocol!r}")


def model_table(
    ns,
    bandwidth: float = GBIT,
    payload_bytes: float = 5 * KIB,
    state_bytes: float = 250.0,
    f_for=None,
) -> list:
    """Rows of (n, protocol, f, throughput, messages) for plotting."""
    rows = []
    for n in ns:
        for protocol in MODEL_PROTOCOLS:
            f = f_for(protocol, n) if f_for else default_model_faults(protocol, n)
            rows.append(
                {
                    "n": n,
                    "protocol": protocol,
                    "f": f,
                    "throughput": model_throughput(
                        protocol, bandwidth, n, f, payload_bytes, state_bytes
                    ),
                    "messages": message_count(protocol, n),
                }
            )
    return rows
