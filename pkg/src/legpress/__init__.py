"""Desk-scale quadruped loco-manipulation stack.

Subpackages: geom (math primitives), simworld (rigid-body sim), sensing
(synthetic depth), qpsolve (dense QP), mpc (stance force controller),
swingctl (manipulation leg), policy (object-centric actions), register
(pose estimation), orchestrator (manipulation state machine), harness
(benchmarks and CLI).
"""

__version__ = "0.1.0"
