"""
From secret keys to Laplace noise
=================================

Two neighbours of a hub agree on a pair of uniform keys without ever
talking directly, then turn them into one Laplace sample.
"""

import numpy as np

from lghdiff.noise_protocol import (
    Role, derive_shared_uniform, laplace_from_keys, laplace_scale, public_key, sample_secrets,
)

rng_l, rng_m = np.random.default_rng(1), np.random.default_rng(2)

# Agent l sits on the positive side of the hub's split and draws U(0, 1]
# secrets; agent m sits on the negative side and draws Gamma(2, 1) secrets.
mine = sample_secrets(Role.POSITIVE, rng_l)
theirs = sample_secrets(Role.NEGATIVE, rng_m)

# Public keys are exp(-secret). They travel l -> hub -> m and back.
pub_l, pub_m = public_key(mine), public_key(theirs)

# Both ends compute exp(-v_l v_m), then stretch it with frac(c * x).
u_l = derive_shared_uniform(mine.v, pub_m.p)
u_m = derive_shared_uniform(theirs.v, pub_l.p)
print("l sees", u_l, "m sees", u_m, "equal:", u_l == u_m)

u2 = derive_shared_uniform(mine.v_prime, pub_m.p_prime)
sigma_g = 0.1
g = laplace_from_keys(u_l, u2, laplace_scale(sigma_g))
print("shared noise sample:", g)

# Over many draws the log-ratio is Laplace with variance sigma_g^2.
n = 200_000
a = sample_secrets(Role.POSITIVE, rng_l, n)
b = sample_secrets(Role.NEGATIVE, rng_m, n)
u = derive_shared_uniform(a.v, public_key(b).p)
u_prime = derive_shared_uniform(a.v_prime, public_key(b).p_prime)
ok = (u > 0) & (u_prime > 0)
noise = laplace_from_keys(u[ok], u_prime[ok], laplace_scale(sigma_g))
print(f"empirical variance {noise.var():.5f} vs target {sigma_g ** 2}")
