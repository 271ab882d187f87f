"""Python surface of the label-level contrastive training stack.

Everything heavy lives in the compiled ``_core`` extension; this package
re-exports its public names.  Typical use::

    import labelcl

    cfg = labelcl.default_config_text()
    out = labelcl.train(cfg, stop_after=1)
    print(out["metrics_all"]["map"])
"""

from ._core import (
    Dataset,
    __version__,
    average_precision,
    default_config_text,
    evaluate_scores,
    generate_dataset,
    l2_normalize_rows,
    load_dataset,
    normalize_config_text,
    positional_encoding,
    softmax_rows,
    train,
)

__all__ = [
    "Dataset",
    "__version__",
    "average_precision",
    "default_config_text",
    "evaluate_scores",
    "generate_dataset",
    "l2_normalize_rows",
    "load_dataset",
    "normalize_config_text",
    "positional_encoding",
    "softmax_rows",
    "train",
]
