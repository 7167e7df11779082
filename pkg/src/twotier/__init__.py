"""Two-tier memory protection: a per-replica BCH tier under rack-level
replication or erasure coding.

Modules:
    model       closed-form block and logical-block failure probabilities
    design      cheapest BCH strength meeting a logical-block target, sweeps
    montecarlo  sampling and exhaustive oracles for the read protocols
    racksim     discrete-event model of paging to remote replicas
    cli         command-line entry point (``twotier``)
"""

__version__ = "0.1.0"
