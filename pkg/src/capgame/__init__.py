"""Adversarial training of motion policies against a gated attack policy.

Two desk-scale planar environments (a hinge-driven cart-pole balancer and a
rimless-wheel terrain walker) are attacked through a bounded joint
state/action perturbation space. A learnable adversary with a per-step binary
gate is trained against the motion policy in an alternating non-zero-sum
game; the bench module reproduces the robustness-matrix / sweep experiment
structure around it.
"""

__version__ = "0.1.0"
