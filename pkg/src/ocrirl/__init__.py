"""Reward recovery from option-structured demonstrations.

The pipeline finds Q-features under which the expert's intra-option
policies and terminations are first-order optimal, shapes them into
option-wise reward features, and weights them by a second-order criterion.
"""

__version__ = "0.1.0"
