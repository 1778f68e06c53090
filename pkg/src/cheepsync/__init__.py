"""CheepSync: one-way time synchronization for broadcast-only BLE advertisers.

Subpackages cover the advertising-frame codec (:mod:`cheepsync.packet`),
simulated clocks (:mod:`cheepsync.timebase`), delay models
(:mod:`cheepsync.latency`), beacon/listener behavior (:mod:`cheepsync.node`),
the skew estimator and registry exchange (:mod:`cheepsync.sync`), and the
deterministic scenario simulator (:mod:`cheepsync.sim`).
"""

__version__ = "0.1.0"
