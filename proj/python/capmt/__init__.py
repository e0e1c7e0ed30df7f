"""Python surface over the capsule-routing translation core."""

from ._core import (
    CapmtError,
    Router,
    bleu,
    lr_schedule,
    pearson,
    synthesize_features,
)

__all__ = [
    "CapmtError",
    "Router",
    "bleu",
    "lr_schedule",
    "pearson",
    "synthesize_features",
]
