"""Semi-supervised hard attention for video classification.

Modules: ``tensorcore`` (clips, boxes, crops), ``flow`` (TV-L1), ``synthdata``
(synthetic corpus), ``qnet`` (dueling Q-network), ``env`` (attention MDP),
``trainer`` (Q-learning loop), ``metrics`` and ``cli``.
"""

__version__ = "0.1.0"
