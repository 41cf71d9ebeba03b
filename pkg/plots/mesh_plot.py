#!/usr/bin/env python3
"""Draw the triangle edges of a mesh text file.

Usage: mesh_plot.py <mesh.msh> <out.png>

Reads the `v x y` / `t i j k` mesh text format and renders every triangle
edge, for snapshot figures of adaptively refined meshes.
"""
from __future__ import annotations

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402


def read_mesh(path):
    vertices, triangles = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            if fields[0] == "v" and len(fields) == 3:
                vertices.append((float(fields[1]), float(fields[2])))
            elif fields[0] == "t" and len(fields) == 4:
                triangles.append(tuple(int(f) for f in fields[1:]))
            elif fields[0] == "b" and len(fields) == 3:
                pass
            else:
                raise ValueError
        except ValueError:
            raise SystemExit(f"error: {path}:{lineno}: cannot parse {raw!r}")
    return vertices, triangles


def plot_mesh(mesh_path, out_path) -> Path:
    vertices, triangles = read_mesh(mesh_path)
    segments = []
    for i, j, k in triangles:
        segments += [
            (vertices[i], vertices[j]),
            (vertices[j], vertices[k]),
            (vertices[k], vertices[i]),
        ]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.add_collection(LineCollection(segments, colors="k", linewidths=0.4))
    ax.autoscale()
    ax.set_aspect("equal")
    ax.set_axis_off()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return out_path


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: mesh_plot.py <mesh.msh> <out.png>", file=sys.stderr)
        return 2
    plot_mesh(argv[0], argv[1])
    return 0


if __name__ == "__main__":
    sys.exit(main())
