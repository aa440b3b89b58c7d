"""Eye-movement and pupil features for concealed-information classification,
with a from-scratch gradient-boosted tree learner and tree-Shapley attributions."""

__version__ = "0.1.0"
