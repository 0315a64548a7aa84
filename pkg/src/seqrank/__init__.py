"""seqrank: a small laboratory for ranking items inside sequences of search sessions.

The package trains a family of rankers over synthetic multi-session search
logs -- from a plain feed-forward scorer up to a recurrent model with an
actor-critic objective -- packs variable-length user histories into dense
minibatches with a greedy knapsack, and replays checkpoints incrementally
the way an online service would, with an audit that the replay matches the
offline forward pass.
"""

__version__ = "0.1.0"
