"""Counter-based random numbers with a fixed cross-implementation contract.

Every draw is a pure function of ``(key, counter)``; there is no hidden state,
so a trajectory can be replayed from any step and independent trajectories
can run in any order or in parallel.

Contract
--------
``mix(z)`` is the SplitMix64 finaliser on 64-bit words (all arithmetic modulo
2**64)::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)

with golden-ratio increment ``GAMMA = 0x9E3779B97F4A7C15``.

* trajectory key:  ``key = mix(mix(seed + GAMMA) ^ mix((index + 1) * GAMMA))``
* raw word:        ``x = mix(key + (counter + 1) * GAMMA)``
* uniform:         ``u = ((x >> 11) + 0.5) * 2**-53``, strictly inside (0, 1)
* normal:          ``Phi^-1(u)`` using Wichura's AS241 (PPND16) rational
  approximation, relative accuracy about 1e-16.

Stepping kernels use ``LANES = 2`` counters per time step: step ``i`` owns
counters ``2*i`` and ``2*i + 1``.  Uniform words are bit-exact everywhere; the
normal transform is reproducible to the last ulp of the platform ``log``/
``sqrt``.
"""

import numpy as np

from ._backend import jit

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
LANES = 2


@jit
def mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@jit
def _key(seed, index):
    a = mix(np.array([seed], dtype=np.uint64) + GAMMA)
    b = mix((np.array([index], dtype=np.uint64) + _ONE) * GAMMA)
    return mix(a ^ b)[0]


def trajectory_key(seed: int, index: int = 0) -> np.uint64:
    """Derive the stream key of trajectory ``index`` under base ``seed``."""
    seed = int(seed) % 2**64
    index = int(index) % 2**64
    return np.uint64(_key(np.uint64(seed), np.uint64(index)))


@jit
def uniforms_block(key, start, n):
    idx = np.arange(n).astype(np.uint64) + np.uint64(start) + _ONE
    x = mix(key + idx * GAMMA)
    return ((x >> _S11).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


# AS241 coefficients
_A = np.array([3.3871328727963666080e0, 1.3314166789178437745e2,
               1.9715909503065514427e3, 1.3731693765509461125e4,
               4.5921953931549871457e4, 6.7265770927008700853e4,
               3.3430575583588128105e4, 2.5090809287301226727e3])
_B = np.array([1.0, 4.2313330701600911252e1, 6.8718700749205790830e2,
               5.3941960214247511077e3, 2.1213794301586595867e4,
               3.9307895800092710610e4, 2.8729085735721942674e4,
               5.2264952788528545610e3])
_C = np.array([1.42343711074968357734e0, 4.63033784615654529590e0,
               5.76949722146069140550e0, 3.64784832476320460504e0,
               1.27045825245236838258e0, 2.41780725177450611770e-1,
               2.27238449892691845833e-2, 7.74545014278341407640e-4])
_D = np.array([1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
               6.89767334985100004550e-1, 1.48103976427480074590e-1,
               1.51986665636164571966e-2, 5.47593808499534494600e-4,
               1.05075007164441684324e-9])
_E = np.array([6.65790464350110377720e0, 5.46378491116411436990e0,
               1.78482653991729133580e0, 2.96560571828504891230e-1,
               2.65321895265761230930e-2, 1.24266094738807843860e-3,
               2.71155556874348757815e-5, 2.01033439929228813265e-7])
_F = np.array([1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
               1.48753612908506148525e-2, 7.86869131145613259100e-4,
               1.84631831751005468180e-5, 1.42151175831644588870e-7,
               2.04426310338993978564e-15])


@jit
def _ratio(num, den, x):
    p = num[7]
    q = den[7]
    for i in range(6, -1, -1):
        p = p * x + num[i]
        q = q * x + den[i]
    return p / q


@jit
def ndtri(u):
    """Inverse standard-normal CDF of an array of probabilities in (0, 1)."""
    out = np.empty_like(u)
    for i in range(u.shape[0]):
        q = u[i] - 0.5
        if abs(q) <= 0.425:
            r = 0.180625 - q * q
            out[i] = q * _ratio(_A, _B, r)
        else:
            r = u[i] if q < 0.0 else 1.0 - u[i]
            r = np.sqrt(-np.log(r))
            if r <= 5.0:
                v = _ratio(_C, _D, r - 1.6)
            else:
                v = _ratio(_E, _F, r - 5.0)
            out[i] = -v if q < 0.0 else v
    return out


@jit
def normals_block(key, start, n):
    return ndtri(uniforms_block(key, start, n))


class NoiseStream:
    """Replayable stream of draws addressed by an explicit counter.

    Parameters
    ----------
    seed : int
        Base seed of the experiment.
    index : int
        Trajectory index; distinct indices give statistically independent
        streams.
    """

    def __init__(self, seed: int, index: int = 0):
        self.seed = int(seed)
        self.index = int(index)
        self.key = trajectory_key(seed, index)
        self.counter = 0

    def uniforms(self, n: int, start: int | None = None) -> np.ndarray:
        if start is None:
            start = self.counter
            self.counter += n
        return uniforms_block(self.key, np.uint64(start), n)

    def normals(self, n: int, start: int | None = None) -> np.ndarray:
        if start is None:
            start = self.counter
            self.counter += n
        return normals_block(self.key, np.uint64(start), n)

    def increments(self, n_steps: int, dt: float, lane: int = 0) -> np.ndarray:
        """Wiener increments ``sqrt(dt) * z`` for steps ``0..n_steps-1``.

        Uses the same counters (``LANES * step + lane``) as the trajectory
        kernels, so a path drawn here reproduces the one a simulation sees.
        """
        z = normals_block(self.key, np.uint64(0), LANES * n_steps)
        return np.sqrt(dt) * z[lane::LANES]
