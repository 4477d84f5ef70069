"""telab: a packet-level traffic-engineering laboratory.

Modules:
  topology   - graph model, topology catalog, sessions, candidate paths
  sim        - discrete-event packet simulator (numba-accelerated core)
  objective  - alpha-fairness utilities and the scalar reward
  nn         - small dense networks with analytic backprop and Adam
  replay     - prioritized experience replay over a sum-tree
  agent      - actor-critic agent with TE-aware exploration
  baselines  - shortest-path, load-balance and NUM solver policies
  harness    - experiment orchestration, metrics, CSV export
"""

__version__ = "0.1.0"
