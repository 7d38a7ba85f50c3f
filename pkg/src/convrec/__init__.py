"""convrec: offline conversational recommendation.

Train a preference-estimation user model on logged interactions, learn a
PPO recommendation policy against it, and evaluate the policy with an
independent, controllable rule-based user simulator.
"""

__version__ = "0.1.0"
