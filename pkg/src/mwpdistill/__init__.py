"""Turn weakly supervised math word problems into verified mask-equation training pairs."""

__version__ = "0.1.0"
