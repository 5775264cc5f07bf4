"""Draw detections onto an image: blue box, class name, certainty."""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

BOX_COLOR = (40, 90, 220)


def render_detections(pixels: np.ndarray, detections, out_path) -> None:
    """Write an RGB copy of a grayscale image with detections drawn on.

    Each detection gets a rectangle plus a "<class> <certainty>" caption
    above its top-left corner (inside the box when there is no room).
    With no detections the output is just the image, unchanged.
    """
    img = Image.fromarray(pixels).convert("RGB")
    draw = ImageDraw.Draw(img)
    for det in detections:
        x1, y1, x2, y2 = det.box
        draw.rectangle([x1, y1, x2 - 1, y2 - 1], outline=BOX_COLOR, width=1)
        caption = f"{det.class_label} {det.certainty:.2f}"
        ty = y1 - 11 if y1 >= 11 else y1 + 1
        draw.text((x1 + 1, ty), caption, fill=BOX_COLOR)
    img.save(out_path)
