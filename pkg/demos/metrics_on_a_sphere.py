"""
Point-cloud fidelity metrics on a jittered sphere
=================================================

Point-to-point (D1) and point-to-plane (D2) errors, their PSNR and the
Chamfer distance, for a sphere perturbed first along its normals and then
along its tangent planes.
"""

import numpy as np

from pcjscc.geometry import PointCloud
from pcjscc.metrics import evaluate

rng = np.random.default_rng(0)

# evenly spread unit vectors double as exact outward normals
n = 2000
i = np.arange(n) + 0.5
phi = np.arccos(1 - 2 * i / n)
theta = np.pi * (1 + 5 ** 0.5) * i
sphere = np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
truth = PointCloud(sphere, sphere)

# radial noise moves points off the surface: D1 and D2 both grow
radial = sphere * (1 + rng.normal(scale=0.01, size=(n, 1)))
rep = evaluate(radial, truth)
print("radial jitter     D1 PSNR %.2f dB   D2 PSNR %.2f dB   CD %.2e"
      % (rep.psnr_d1, rep.psnr_d2, rep.cd))

# tangential noise keeps points near the surface: D2 forgives most of it
tangent = rng.normal(scale=0.01, size=(n, 3))
tangent -= np.sum(tangent * sphere, axis=1, keepdims=True) * sphere
sliding = sphere + tangent
rep = evaluate(sliding, truth)
print("tangential jitter D1 PSNR %.2f dB   D2 PSNR %.2f dB   CD %.2e"
      % (rep.psnr_d1, rep.psnr_d2, rep.cd))

# a perfect copy has zero error and an infinite PSNR
rep = evaluate(sphere, truth)
print("exact copy        D1 PSNR", rep.psnr_d1, "  CD", rep.cd)
