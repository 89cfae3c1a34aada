"""Human-viewable exports: 16-bit plain PGM for depth maps (mm scale noted
on a comment line) and plain PPM for 3-channel tactile images."""

import numpy as np

PGM_MAXVAL = 65535


def write_pgm(path, depth_mm, max_range=None):
    """Depth in mm -> plain (ASCII) 16-bit PGM. The comment line records the
    mm-per-level scale so the file round-trips."""
    depth_mm = np.asarray(depth_mm, dtype=np.float64)
    if depth_mm.ndim != 2:
        raise ValueError(f"PGM export needs a 2-d depth map, got {depth_mm.shape}")
    max_range = float(max_range if max_range is not None else max(depth_mm.max(), 1e-9))
    scale = max_range / PGM_MAXVAL  # mm per level
    levels = np.clip(np.round(depth_mm / scale), 0, PGM_MAXVAL).astype(np.uint32)
    h, w = depth_mm.shape
    with open(path, "w") as f:
        f.write("P2\n")
        f.write(f"# mm-per-level {scale:.12e}\n")
        f.write(f"{w} {h}\n{PGM_MAXVAL}\n")
        for row in levels:
            f.write(" ".join(str(v) for v in row) + "\n")


def read_pgm(path):
    """Returns (depth_mm, mm_per_level)."""
    with open(path) as f:
        tokens = []
        scale = None
        for line in f:
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "mm-per-level":
                    scale = float(parts[1])
                continue
            tokens.extend(line.split())
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM")
    if scale is None:
        raise ValueError(f"{path}: missing mm-per-level comment")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != PGM_MAXVAL:
        raise ValueError(f"{path}: expected 16-bit PGM, maxval {maxval}")
    vals = np.array(tokens[4 : 4 + w * h], dtype=np.float64).reshape(h, w)
    return vals * scale, scale


def write_ppm(path, image):
    """3-channel image in [-1, 1] -> plain 8-bit PPM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"PPM export needs a (3, H, W) image, got {image.shape}")
    levels = np.clip(np.round((image + 1.0) * 0.5 * 255.0), 0, 255).astype(np.uint32)
    _, h, w = image.shape
    with open(path, "w") as f:
        f.write("P3\n")
        f.write(f"{w} {h}\n255\n")
        for y in range(h):
            row = []
            for x in range(w):
                row.extend(str(levels[c, y, x]) for c in range(3))
            f.write(" ".join(row) + "\n")


def read_ppm(path):
    with open(path) as f:
        tokens = []
        for line in f:
            if line.startswith("#"):
                continue
            tokens.extend(line.split())
    if tokens[0] != "P3":
        raise ValueError(f"{path}: not a plain PPM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = np.array(tokens[4 : 4 + 3 * w * h], dtype=np.float64).reshape(h, w, 3)
    return vals.transpose(2, 0, 1) / maxval * 2.0 - 1.0
