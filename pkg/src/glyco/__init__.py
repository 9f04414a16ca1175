from glyco.errors import GlycoError

__version__ = "0.1.0"
