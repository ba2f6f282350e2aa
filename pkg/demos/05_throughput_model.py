"""Bandwidth-bound throughput: closed forms and their crossovers.

Single-primary protocols pay (N-1) payload transmissions at one node,
so their throughput falls as 1/N.  The composed designs spread payload
dissemination over all non-faulty replicas and keep the ordering
messages constant-size, which buys roughly NF/2 times the single-primary
ceiling at large payloads.  Writes plot-ready columns to model_demo.tsv.

Run:  python demos/05_throughput_model.py
"""

from bftlab.model import (
    GBIT,
    KIB,
    concurrent_max_throughput,
    default_model_faults,
    message_count,
    model_throughput,
    primary_max_throughput,
)

NS = [4, 7, 10, 16, 31, 61, 97, 193, 301]
SM = 250.0

for pm_kib in (5, 100):
    pm = pm_kib * KIB
    print(f"\n=== payload {pm_kib} KiB per batch, 1 Gbit/s per replica ===")
    header = (f"{'N':>4} {'T_p':>10} {'T_cmax':>10} "
              f"{'pbft':>10} {'hybster':>10} {'dqpbft':>10} {'destiny':>10}")
    print(header)
    for n in NS:
        row = [f"{n:>4}"]
        row.append(f"{primary_max_throughput(GBIT, n, pm):>10.1f}")
        f_h = default_model_faults("hybster", n)
        row.append(f"{concurrent_max_throughput(GBIT, n, f_h, pm):>10.1f}")
        for protocol in ("pbft", "hybster", "dqpbft", "destiny"):
            f = default_model_faults(protocol, n)
            row.append(f"{model_throughput(protocol, GBIT, n, f, pm, SM):>10.1f}")
        print(" ".join(row))

print("\nmessages per committed batch:")
print(f"{'N':>4} {'pbft':>9} {'hybster':>9} {'dqpbft':>9} {'destiny':>9}")
for n in NS:
    print(f"{n:>4} {message_count('pbft', n):>9} {message_count('hybster', n):>9} "
          f"{message_count('dqpbft', n):>9} {message_count('destiny', n):>9}")

with open("model_demo.tsv", "w") as fh:
    fh.write("n\tprotocol\tpm_kib\tthroughput\tmessages\n")
    for pm_kib in (5, 100):
        for n in NS:
            for protocol in ("pbft", "hybster", "dqpbft", "destiny"):
                f = default_model_faults(protocol, n)
                tput = model_throughput(protocol, GBIT, n, f, pm_kib * KIB, SM)
                fh.write(f"{n}\t{protocol}\t{pm_kib}\t{tput:.3f}\t{message_count(protocol, n)}\n")
print("\nplot-ready columns written to model_demo.tsv")
