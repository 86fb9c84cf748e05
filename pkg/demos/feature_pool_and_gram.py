"""
Softmax aggregation over an orthogonal feature pool
===================================================

The receiver turns n received logits into weights and mixes n pool rows.
An orthonormal pool keeps the rows distinguishable; the Gram matrix
heatmap shows how far a pool is from that ideal.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from pcjscc.metrics import ortho_metric
from pcjscc.model import aggregate_features, init_pool

gen = torch.Generator().manual_seed(0)
ortho = init_pool(16, 64, "orthonormal", generator=gen)
gauss = init_pool(16, 64, "gaussian", generator=gen)
print("|OO^T - I|_F  orthonormal %.2e   gaussian %.3f" % (ortho_metric(ortho), ortho_metric(gauss)))

# uniform logits give the row mean; one dominant logit selects its row
h = torch.zeros(16)
f, alpha = aggregate_features(h, ortho)
print("uniform weights:", alpha[:3].tolist(), "... feature norm %.3f" % f.norm())
h[5] = 30.0
f, alpha = aggregate_features(h, ortho)
print("dominant logit -> weight %.6f, distance to row 5: %.2e" % (alpha[5], (f - ortho[5]).norm()))

fig, axes = plt.subplots(1, 2, figsize=(8, 4))
for ax, pool, title in zip(axes, (ortho, gauss), ("orthonormal", "gaussian")):
    gram = np.clip(np.abs((pool @ pool.T).numpy()), 0, 1)
    ax.imshow(gram, vmin=0, vmax=1)
    ax.set_title(f"|OO^T|, {title} pool")
fig.tight_layout()
fig.savefig("pool_gram.png", dpi=100)
print("wrote pool_gram.png")
