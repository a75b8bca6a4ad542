"""How HP-vectors are sampled, perturbed and kept near their centre."""

import numpy as np

from fedpop import EvoParams, anneal, default_search_space, distance, evo, sample, sample_in_ball
from fedpop.hp_space import clip_to_ball, in_ball

rng = np.random.default_rng(1)
space = default_search_space(delta_fraction=0.1)

beta0 = sample(space.client_specs, rng)
print("client centre:", beta0.as_dict())

# Client HP-vectors live in a per-coordinate box around the centre.
cloud = [sample_in_ball(beta0, rng) for _ in range(5)]
for b in cloud:
    print(f"  distance {distance(b, beta0):.3f}  lr {b.as_dict()['learning_rate']:.4f}")

# Evo nudges every coordinate, or with probability p_re redraws it.
child = evo(cloud[0], epsilon=0.1, p_re=0.1, rng=rng)
print("child of the first vector:", child.as_dict())
# Redraws can land anywhere, so offspring are clipped back into the box.
print("raw child inside the centre's box:", in_ball(child, beta0))
print("clipped child inside the box:", in_ball(clip_to_ball(child, beta0), beta0))

# Both knobs decay to zero along a half cosine.
params = EvoParams(epsilon0=0.1, p_re0=0.1, anneal_horizon=80)
for r in (0, 20, 40, 60, 80):
    eps, p_re = anneal(params, r)
    print(f"round {r:2d}: epsilon {eps:.4f}  p_re {p_re:.4f}")
