"""Minimal image-grid composition for contact sheets (16-bit PNG output)."""

import numpy as np

from .synthdata import save_image_u16

SEPARATOR_PX = 2


def _to_rgb64(img: np.ndarray, cell: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=2)
    if img.shape[0] != cell:
        reps = cell // img.shape[0]
        img = np.repeat(np.repeat(img, reps, axis=0), reps, axis=1)
    return np.clip(img, 0.0, 1.0)


def contact_sheet(rows, path, cell: int = 64):
    """Compose a grid of images (rows of equal length) and save as 16-bit PNG.

    Small images (LR observations) are nearest-upscaled to the cell size so
    every panel renders at the same scale.
    """
    n_cols = max(len(r) for r in rows)
    sep = SEPARATOR_PX
    height = len(rows) * cell + (len(rows) + 1) * sep
    width = n_cols * cell + (n_cols + 1) * sep
    canvas = np.full((height, width, 3), 1.0, dtype=np.float32)
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            if img is None:
                continue
            y0 = sep + r * (cell + sep)
            x0 = sep + c * (cell + sep)
            canvas[y0:y0 + cell, x0:x0 + cell] = _to_rgb64(img, cell)
    save_image_u16(path, canvas)
    return path
