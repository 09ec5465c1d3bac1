from .figures import KINDS, FigureError, FigureSpec, read_artifact, render

__version__ = "0.1.0"
