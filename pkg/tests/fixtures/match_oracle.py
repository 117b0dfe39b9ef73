"""Independent brute-force matcher and a random case generator for knowledge matching."""
from __future__ import annotations

import itertools
import random
import unicodedata

_WORDS = ["paris", "Paris", "1901", "tarrow", "TARROW", "Velmont Institute", "velmont", "ﬁre", "fire", "Ö", "ö", "x", "  ", "Kessing University"]


def _norm(s: str) -> str:
    return " ".join(unicodedata.normalize("NFKC", s).lower().split())


def _occurs(needle: str, hay: str) -> bool:
    if not needle:
        return False
    for i in range(len(hay) - len(needle) + 1):
        if all(hay[i + k] == needle[k] for k in range(len(needle))):
            return True
    return False


def brute_force(prediction, references):
    """(km, ekm, rkm) by enumerating every subset of references and keeping the largest fully matched one."""
    hay = _norm(prediction)
    forms = [[r] if isinstance(r, str) else list(r) for r in references]
    found = [any(_occurs(_norm(f), hay) for f in fs) for fs in forms]
    best = 0
    n = len(references)
    for size in range(n + 1):
        for subset in itertools.combinations(range(n), size):
            if all(found[i] for i in subset):
                best = max(best, size)
    return int(best >= 1), int(best == n), best / n


def random_case(rng: random.Random):
    pred = " ".join(rng.choice(_WORDS) for _ in range(rng.randint(0, 8)))
    refs = []
    for _ in range(rng.randint(1, 5)):
        if rng.random() < 0.3:
            refs.append([rng.choice(_WORDS) for _ in range(rng.randint(1, 3))])
        else:
            refs.append(rng.choice(_WORDS))
    return pred, refs
