"""Input checks for the estimator wrappers."""
from __future__ import annotations

from typing import Iterable

from .datagen import QASample
from .mr import IntentFrame, parse_mr


def check_utterances(X) -> list[str]:
    if isinstance(X, str):
        raise TypeError("expected a sequence of utterances, got a single string")
    try:
        out = list(X)
    except TypeError:
        raise TypeError(f"expected a sequence of utterances, got {type(X).__name__}") from None
    for i, u in enumerate(out):
        if not isinstance(u, str):
            raise TypeError(f"utterance {i} is {type(u).__name__}, expected str")
        if not u.strip():
            raise ValueError(f"utterance {i} is empty")
    return out


def check_frames(y, n: int | None = None) -> list[IntentFrame]:
    """Accept frames or bracketed MR strings."""
    if isinstance(y, (str, IntentFrame)):
        raise TypeError("expected a sequence of meaning representations")
    frames = [parse_mr(v) if isinstance(v, str) else v for v in y]
    for i, f in enumerate(frames):
        if not isinstance(f, IntentFrame):
            raise TypeError(f"target {i} is {type(f).__name__}, expected IntentFrame or str")
    if n is not None and len(frames) != n:
        raise ValueError(f"X has {n} utterances but y has {len(frames)} targets")
    return frames


def check_samples(X: Iterable) -> list[QASample]:
    out = []
    for i, s in enumerate(X):
        if isinstance(s, dict):
            s = QASample.from_dict(s)
        if not isinstance(s, QASample):
            raise TypeError(f"sample {i} is {type(s).__name__}, expected QASample or dict")
        out.append(s)
    return out
