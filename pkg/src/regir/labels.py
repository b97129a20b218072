"""Fixed label sets for the two tasks.

Text classification uses seven sentence categories; sequence labeling uses
seven semantic labels under the BIO scheme (O = outside, B-x begins and I-x
continues a span of label x).
"""

from __future__ import annotations

TC_CATEGORIES: tuple[str, ...] = (
    "direct",
    "indirect",
    "method",
    "reference",
    "general",
    "term",
    "others",
)

NER_LABELS: tuple[str, ...] = ("obj", "sobj", "prop", "cmp", "Rprop", "ARprop", "Robj")

# Tag ids are dense with O = 0, then (B-x, I-x) per label in NER_LABELS order.
NER_TAGS: tuple[str, ...] = ("O",) + tuple(
    f"{prefix}-{label}" for label in NER_LABELS for prefix in ("B", "I")
)

TC_CATEGORY_TO_ID = {c: i for i, c in enumerate(TC_CATEGORIES)}
NER_TAG_TO_ID = {t: i for i, t in enumerate(NER_TAGS)}
