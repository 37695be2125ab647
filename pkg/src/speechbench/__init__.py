"""Speech-biomarker screening bench.

Trains a small attention-pooling head over frozen-encoder embeddings to
detect Parkinson's disease from speech, augments training audio, runs the
repeated-trial evaluation protocol, and hosts the expert listening test
whose responses feed the same stratified human-vs-model reports.
"""

__version__ = "0.1.0"
