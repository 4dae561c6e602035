"""Joint intent classification and entity recognition.

Thin wrapper over the compiled extension; see `dietnlu._core` for the
operation docstrings.
"""

try:
    from dietnlu._core import (  # noqa: F401
        Predictor,
        bilou_to_spans,
        char_ngrams,
        entity_metrics,
        generate,
        intent_metrics,
        spans_to_bilou,
        tokenize,
        train,
        __version__,
    )
except ImportError:  # build-tree layout: _core.so next to us on sys.path
    from _core import (  # noqa: F401
        Predictor,
        bilou_to_spans,
        char_ngrams,
        entity_metrics,
        generate,
        intent_metrics,
        spans_to_bilou,
        tokenize,
        train,
        __version__,
    )

__all__ = [
    "Predictor",
    "bilou_to_spans",
    "char_ngrams",
    "entity_metrics",
    "generate",
    "intent_metrics",
    "spans_to_bilou",
    "tokenize",
    "train",
    "__version__",
]
