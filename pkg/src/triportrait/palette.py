"""The 19-class facial semantic palette shared by training data, editor and UI."""

from __future__ import annotations

NUM_CLASSES = 19

# (index, name, display color)
CLASS_TABLE = [
    (0, "background", (60, 60, 60)),
    (1, "skin", (224, 172, 138)),
    (2, "nose", (236, 150, 110)),
    (3, "eye_glasses", (40, 90, 200)),
    (4, "left_eye", (250, 250, 250)),
    (5, "right_eye", (235, 235, 235)),
    (6, "left_brow", (120, 80, 48)),
    (7, "right_brow", (110, 72, 44)),
    (8, "left_ear", (210, 150, 120)),
    (9, "right_ear", (200, 140, 112)),
    (10, "mouth", (140, 30, 30)),
    (11, "upper_lip", (190, 70, 80)),
    (12, "lower_lip", (200, 80, 90)),
    (13, "hair", (70, 40, 20)),
    (14, "hat", (90, 120, 60)),
    (15, "ear_ring", (220, 200, 60)),
    (16, "necklace", (200, 180, 80)),
    (17, "neck", (214, 160, 126)),
    (18, "cloth", (40, 60, 110)),
]

CLASS_NAMES = [name for _, name, _ in CLASS_TABLE]
CLASS_INDEX = {name: idx for idx, name, _ in CLASS_TABLE}


def palette_json() -> dict:
    """Wire format served to clients; keep in sync with the UI via this one table."""
    return {
        "num_classes": NUM_CLASSES,
        "classes": [
            {"index": idx, "name": name, "color": list(color)}
            for idx, name, color in CLASS_TABLE
        ],
    }


def class_indices(names_or_indices) -> list[int]:
    """Resolve a mix of class names and indices, rejecting anything out of range."""
    out = []
    for item in names_or_indices:
        if isinstance(item, str):
            if item not in CLASS_INDEX:
                raise KeyError(f"unknown semantic class: {item!r}")
            out.append(CLASS_INDEX[item])
        else:
            idx = int(item)
            if not 0 <= idx < NUM_CLASSES:
                raise ValueError(f"class index out of range: {idx}")
            out.append(idx)
    return out


def colorize_mask(mask) -> "np.ndarray":
    """Index mask (H, W) -> uint8 RGB image using the display palette."""
    import numpy as np

    mask = np.asarray(mask)
    lut = np.array([color for _, _, color in CLASS_TABLE], dtype=np.uint8)
    return lut[np.clip(mask, 0, NUM_CLASSES - 1)]
