"""Same convolution, two contraction orders, very different backward storage."""

import numpy as np

from eckconv import conv_backward, conv_forward_explicit, conv_forward_implicit, counter_model, dominant_cost
from eckconv.autograd import Tape
from eckconv.kernel import run_instrumented

spacer = "_" * 60
rng = np.random.default_rng(0)
A, K, cin, cout = 22, 32, 64, 64

f = rng.standard_normal((K, cin))        # neighbor features
w = rng.standard_normal((K, A))          # per-neighbor coefficients
W = rng.standard_normal((A, cout, cin))  # anchor bases
g = rng.standard_normal(cout)            # upstream gradient

print(f"\nOne neighborhood: A={A} bases, K={K} neighbors, {cin} -> {cout} channels.")
t_imp, t_exp = Tape(), Tape()
y_imp = conv_forward_implicit(f, w, W, t_imp)
y_exp = conv_forward_explicit(f, w, W, t_exp)
print("forward outputs agree to", np.max(np.abs(y_imp - y_exp)))

g_imp = conv_backward("implicit", t_imp, g)
g_exp = conv_backward("explicit", t_exp, g)
for name in g_imp:
    print(f"d/d{name:<7} agree to", np.max(np.abs(g_imp[name] - g_exp[name])))

print(spacer)
print("\nScalars held for the backward pass, measured against the closed form:")
for ordering, tape in (("implicit", t_imp), ("explicit", t_exp)):
    print(f"{ordering:>9}: measured {tape.saved_scalars:>10,}  model {counter_model(ordering, A, K, cin, cout):>10,}")
di, de = dominant_cost("implicit", A, K, cin, cout), dominant_cost("explicit", A, K, cin, cout)
print(f"dominant terms {di:,} vs {de:,}: {di / de:.1f}x less with the explicit order")

print(spacer)
print("\nBackward wall time (ms, median of 5):")
for ordering in ("implicit", "explicit"):
    walls = [run_instrumented(ordering, A, K, cin, cout, rng=s)[1] for s in range(5)]
    print(f"{ordering:>9}: {np.median(walls):.3f}")
