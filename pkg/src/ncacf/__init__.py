"""Content-aware collaborative filtering for cold-start recommendation.

The package factors into: data ingestion/splitting (`data`), dense numerical
kernels (`numerics`), model containers and prediction (`models`), estimation
procedures (`training`), ranking metrics (`evaluation`), and the experiment
CLI (`cli`, exposed as the `ncacf` console script).
"""

__version__ = "0.1.0"
