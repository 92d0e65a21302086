"""rewardforge: reward design with uncertainty-guided decoupled optimisation.

The package turns a natural-language task description into a tuned reward
function in four stages: candidate generation in a closed DSL, per-component
consistency scoring with targeted refinement, per-term Bayesian optimisation
followed by a weight-recombination search, and seeded validation on
deterministic toy control environments.
"""

__version__ = "0.1.0"
