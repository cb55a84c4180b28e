"""
Look at the sampling distribution itself: which points get high scores and
why the scores add up to a closed form.

Run with:  python3 demos/sensitivity_scores.py
"""

import numpy as np

import gmm_coreset as gc

rng = np.random.default_rng(0)
pts = np.vstack([rng.normal(size=(500, 2)), rng.normal(size=(20, 2)) + [12, 0], [[30.0, 30.0]]])
X = gc.DataSet(pts)

B = gc.kmeanspp_seed(X, 3, rng)
sc = gc.sensitivity_scores(X, B)

print("alpha:", sc.alpha, " nonempty cells:", sc.cells, " phi:", round(sc.phi, 2))
print("sum w*s          ", np.sum(X.weights * sc.s))
print("(3a + 2b) * phi  ", (3 * sc.alpha + 2 * sc.cells) * sc.phi)

order = np.argsort(sc.q)[::-1]
print("five largest sampling probabilities:")
for i in order[:5]:
    print(f"  point {X.points[i].round(2)}  q = {sc.q[i]:.4f}")
print("mean q in the big blob:", sc.q[:500].mean().round(6))
