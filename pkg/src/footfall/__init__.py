"""Footfall detection from foot-mounted IMU accelerometer streams.

Subpackages cover the full pipeline: session recording and parsing
(:mod:`footfall.data_io`), feature engineering (:mod:`footfall.features`),
window slicing (:mod:`footfall.windowing`), from-scratch neural models
(:mod:`footfall.neuralnet`), training (:mod:`footfall.training`), offline
evaluation (:mod:`footfall.evaluation`), the streaming detector
(:mod:`footfall.realtime`) and a synthetic gait generator
(:mod:`footfall.synth`).
"""

__version__ = "0.1.0"
