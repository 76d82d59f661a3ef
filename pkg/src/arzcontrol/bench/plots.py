"""Emit standalone matplotlib scripts that render the CSV outputs."""

from __future__ import annotations

from pathlib import Path

_SURFACES = '''\
"""Density/velocity surfaces and U(t) for {title}. Run: python {name}"""
import csv
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np

here = Path(__file__).parent
rows = list(csv.DictReader(open(here / "{prefix}trajectory.csv")))
t = np.array(sorted({{float(r["t"]) for r in rows}}))
x = np.array(sorted({{float(r["x"]) for r in rows}}))
rho = np.array([float(r["rho"]) for r in rows]).reshape(t.size, x.size) * 1000.0
v = np.array([float(r["v"]) for r in rows]).reshape(t.size, x.size)
ctrl = list(csv.DictReader(open(here / "{prefix}control.csv")))
T, X = np.meshgrid(t, x, indexing="ij")

fig = plt.figure(figsize=(13, 4))
for k, (field, label) in enumerate([(rho, "density [veh/km]"), (v, "velocity [m/s]")]):
    ax = fig.add_subplot(1, 3, k + 1, projection="3d")
    ax.plot_surface(X, T, field, cmap="viridis", linewidth=0)
    ax.set_xlabel("x [m]"); ax.set_ylabel("t [s]"); ax.set_zlabel(label)
ax = fig.add_subplot(1, 3, 3)
ax.plot([float(r["t"]) for r in ctrl], [float(r["U"]) for r in ctrl])
ax.set_xlabel("t [s]"); ax.set_ylabel("U(t) [m/s]")
fig.suptitle("{title}")
fig.tight_layout()
fig.savefig(here / "{prefix}surfaces.png", dpi=120)
'''

_OVERLAY = '''\
"""Overlay of U(t) and state norms across controllers. Run: python {name}"""
import csv
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np

here = Path(__file__).parent
names = {names!r}
fig, (a1, a2) = plt.subplots(1, 2, figsize=(11, 4))
for n in names:
    c = list(csv.DictReader(open(here / f"{{n}}_control.csv")))
    a1.plot([float(r["t"]) for r in c], [float(r["U"]) for r in c], label=n)
    m = list(csv.DictReader(open(here / f"{{n}}_norms.csv")))
    norm = np.hypot([float(r["l2_w"]) for r in m], [float(r["l2_v"]) for r in m])
    a2.semilogy([float(r["t"]) for r in m], norm, label=n)
a1.set_xlabel("t [s]"); a1.set_ylabel("U(t) [m/s]"); a1.legend()
a2.set_xlabel("t [s]"); a2.set_ylabel("L2 norm of (w, v)"); a2.legend()
fig.tight_layout()
fig.savefig(here / "comparison.png", dpi=120)
'''


def write_surface_script(out_dir, prefix: str, title: str) -> Path:
    path = Path(out_dir) / f"{prefix}plot.py"
    path.write_text(_SURFACES.format(prefix=prefix, title=title, name=path.name))
    return path


def write_overlay_script(out_dir, names) -> Path:
    path = Path(out_dir) / "plot_comparison.py"
    path.write_text(_OVERLAY.format(names=list(names), name=path.name))
    return path
