"""Diversity-aware list-wise news recommendation.

Modules: ``autodiff``/``optim`` (tensor engine), ``text`` (tokens, word
vectors, similarity), ``model``, ``training``, ``rerank``, ``evaluation``,
``data`` and ``cli``.
"""

__version__ = "0.1.0"
