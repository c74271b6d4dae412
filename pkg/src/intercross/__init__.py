"""Multi-reference style disentanglement on a synthetic factorized corpus."""

__version__ = "0.1.0"

from .corpus import CorpusConfig, StyleClassSpec, generate_corpus, load_corpus, render_corpus  # noqa: E402
from .estimator import StyleEncoder  # noqa: E402

__all__ = ["CorpusConfig", "StyleClassSpec", "StyleEncoder", "generate_corpus", "load_corpus", "render_corpus",
           "__version__"]
