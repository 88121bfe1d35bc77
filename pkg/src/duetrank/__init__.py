"""Word-entity duet ranking: bag-of-words and bag-of-entities features with an attention ranker."""

__version__ = "0.1.0"
