"""Neighbor encoding that does not see rigid motions."""

import numpy as np

from eckconv import encode_double_coset, gaussian_embedding, random_se3

spacer = "_" * 60
rng = np.random.default_rng(0)

print("\nA centroid and a neighbor, each with a position and a unit normal.")
x, n = np.zeros(3), np.array([0.0, 0.0, 1.0])
xi, ni = np.array([0.3, 0.4, 0.0]), np.array([1.0, 0.0, 0.0])
p = encode_double_coset((x, n), (xi, ni), radius=1.0)
print("encode(centroid, neighbor) =", p)
print("beta is the angle between normals, rbar and zbar place the neighbor")
print("in a cylinder around the centroid normal, in units of the radius.")

print(spacer)
print("\nMove both points by a random rotation and translation:")
T = random_se3(rng, translation_bound=10.0)
q = encode_double_coset((T.apply_points(x), T.apply_vectors(n)),
                        (T.apply_points(xi), T.apply_vectors(ni)), radius=1.0)
print("encode(T centroid, T neighbor) =", q)
print("max difference:", np.max(np.abs(np.subtract(p, q))))

print(spacer)
print("\nForget to rotate the normals and the encoding notices:")
bad = encode_double_coset((T.apply_points(x), n), (T.apply_points(xi), ni), radius=1.0)
print("encode with stale normals =", bad)

print(spacer)
print("\nThe coefficient network sees Gaussian bumps, d per coordinate:")
emb = gaussian_embedding(p, d=8, sigma=0.05)
np.set_printoptions(precision=3, suppress=True)
print("beta block:", emb[:8])
print("rbar block:", emb[8:16])
print("zbar block:", emb[16:])
