"""Simulator and optimizer for over-the-air federated learning with
collaborative target localization.

Layers, bottom to top: geometry (placement, array responses, channels),
signaling (pulse books, precoding, standardization), aggregation (receive
combining and its closed-form error), sensing (echoes, matched filtering,
whitened statistics, localization losses), crb (Fisher information and
bounds), moop (block-coordinate beamformer design under a sensing
constraint), learning/protocol (synthetic federated task and the
round-by-round scheme), config/metrics/cli (scenario files, CSV export,
command line).
"""

__version__ = "0.1.0"
