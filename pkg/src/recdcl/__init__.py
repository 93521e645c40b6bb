"""Dual contrastive learning for implicit-feedback recommendation.

Feature-wise redundancy reduction between user and item batch embeddings,
plus a batch-wise contrastive term against historical embeddings, on top of
a linear graph-convolution encoder.
"""

__version__ = "0.1.0"

__all__ = ["RecDCL", "__version__"]


def __getattr__(name):
    # deferred so importing the package stays light until numpy is needed
    if name == "RecDCL":
        from recdcl.estimator import RecDCL

        return RecDCL
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
