"""Stepping kernels for the conditioned master equations.

All operators of the model are banded in the joint basis, so they are never
formed as matrices here.  With ``d`` the (block) dimension:

* ``sa[j]``  -- the cavity annihilator, ``a[j, j+1] = sa[j]`` (zero at the
  Fock cutoff, so blocks never leak into each other);
* ``nph[j]`` -- photon number ``a^dag a`` on the diagonal;
* ``h0[b, j]`` -- the diagonal Hamiltonian of block ``b``;
* ``hs[j]`` -- microwave coupling ``H[j, j+sh] = H[j+sh, j] = hs[j]``.

A state is an array ``rho[b, :, :]`` of ``nb`` blocks.  The full joint
density is the single-block case; the QND fast path keeps one block per Dicke
index ``n`` (valid when the Hamiltonian is diagonal in ``n``).

Every function is written in the numpy subset numba compiles; see
``_backend``.
"""

import math

import numpy as np

from ._backend import jit, pick
from .rng import LANES, normals_block, uniforms_block

# status codes returned by trajectory kernels
OK = 0
NONFINITE = 1
BAD_CLICK = 2

_CHUNK = 4096


@jit
def a_l(sa, X):
    out = np.zeros_like(X)
    out[:-1] = sa[:-1, None] * X[1:]
    return out


@jit
def ad_l(sa, X):
    out = np.zeros_like(X)
    out[1:] = sa[:-1, None] * X[:-1]
    return out


@jit
def x_a(sa, X):
    out = np.zeros_like(X)
    out[:, 1:] = X[:, :-1] * sa[None, :-1]
    return out


@jit
def x_ad(sa, X):
    out = np.zeros_like(X)
    out[:, :-1] = X[:, 1:] * sa[None, :-1]
    return out


@jit
def h_l(h0, hs, gs, sh, X):
    out = h0[:, None] * X
    if gs != 0.0:
        n = X.shape[0] - sh
        out[:n] += gs * hs[:n, None] * X[sh:]
        out[sh:] += gs * hs[:n, None] * X[:n]
    return out


@jit
def x_h(h0, hs, gs, sh, X):
    out = X * h0[None, :]
    if gs != 0.0:
        n = X.shape[1] - sh
        out[:, sh:] += gs * X[:, :n] * hs[None, :n]
        out[:, :n] += gs * X[:, sh:] * hs[None, :n]
    return out


@jit
def trace(X):
    t = 0j
    for i in range(X.shape[0]):
        t += X[i, i]
    return t


@jit
def drift(X, sa, nph, h0, hs, gs, sh, sk1, beta, kappa):
    """Deterministic generator: Hamiltonian, coherent drive and cavity decay."""
    aX = a_l(sa, X)
    Xad = x_ad(sa, X)
    out = -1j * (h_l(h0, hs, gs, sh, X) - x_h(h0, hs, gs, sh, X))
    if beta != 0.0:
        out += sk1 * (beta * (ad_l(sa, X) - Xad) - np.conj(beta) * (aX - x_a(sa, X)))
    out += kappa * (x_ad(sa, aX) - 0.5 * (nph[:, None] * X + X * nph[None, :]))
    return out


@jit
def meas(X, sa, c0):
    """Linear diffusion map ``c X + X c^dag`` with ``c = c0 a``."""
    return c0 * a_l(sa, X) + np.conj(c0) * x_ad(sa, X)


# ---------------------------------------------------------------------------
# banded step operators
#
# The Kraus factor of a Milstein step, the no-click factor of photon counting
# and the SSE propagator are all banded: row i of ``M`` couples to rows
# i, i+1, i-1, i+2, i+sh and i-sh.  ``C[6, d]`` holds those coefficients.
# ``band_left`` / ``band_right`` apply ``M X`` and ``X M^dag``.


@jit
def band_coeffs(C, dy, dt, sa, nph, h0, hs, gs, sh, sk1, beta, kappa, c0, shift_mc):
    """Fill ``C`` for ``M = 1 + A dt + c dy + c^2 (dy^2 - dt) / 2 - shift_mc``.

    ``A = -i H - kappa a^dag a / 2`` with the coherent drive in ``H``.  The
    scalar ``shift_mc`` is subtracted from the diagonal (used by the SSE).
    """
    d = C.shape[1]
    up = -dt * sk1 * np.conj(beta) + c0 * dy
    dn = dt * sk1 * beta
    q = 0.5 * c0 * c0 * (dy * dy - dt)
    hop = -1j * dt * gs
    for i in range(d):
        C[0, i] = 1.0 + dt * (-1j * h0[i] - 0.5 * kappa * nph[i]) - shift_mc
        C[1, i] = up * sa[i] if i + 1 < d else 0.0
        C[2, i] = dn * sa[i - 1] if i >= 1 else 0.0
        C[3, i] = q * sa[i] * sa[i + 1] if i + 2 < d else 0.0
        C[4, i] = hop * hs[i] if i + sh < d else 0.0
        C[5, i] = hop * hs[i - sh] if i >= sh else 0.0


def _band_left_loop(C, sh, hop, X, out):
    # one branch-free pass per band so the inner loops vectorise
    d = X.shape[0]
    m = X.shape[1]
    for i in range(d):
        c0 = C[0, i]
        for j in range(m):
            out[i, j] = c0 * X[i, j]
        if i + 1 < d:
            c1 = C[1, i]
            for j in range(m):
                out[i, j] += c1 * X[i + 1, j]
        if i >= 1:
            c2 = C[2, i]
            for j in range(m):
                out[i, j] += c2 * X[i - 1, j]
        if i + 2 < d:
            c3 = C[3, i]
            for j in range(m):
                out[i, j] += c3 * X[i + 2, j]
        if hop:
            if i + sh < d:
                c4 = C[4, i]
                for j in range(m):
                    out[i, j] += c4 * X[i + sh, j]
            if i >= sh:
                c5 = C[5, i]
                for j in range(m):
                    out[i, j] += c5 * X[i - sh, j]


def _band_left_np(C, sh, hop, X, out):
    d = X.shape[0]
    out[:] = C[0][:, None] * X
    out[:-1] += C[1][:-1, None] * X[1:]
    out[1:] += C[2][1:, None] * X[:-1]
    out[:-2] += C[3][:-2, None] * X[2:]
    if hop and sh < d:
        n = d - sh
        out[:n] += C[4][:n, None] * X[sh:]
        out[sh:] += C[5][sh:, None] * X[:n]


def _band_right_loop(C, sh, hop, X, out):
    d = X.shape[1]
    for i in range(X.shape[0]):
        for j in range(d):
            out[i, j] = np.conj(C[0, j]) * X[i, j]
        for j in range(d - 1):
            out[i, j] += np.conj(C[1, j]) * X[i, j + 1]
        for j in range(1, d):
            out[i, j] += np.conj(C[2, j]) * X[i, j - 1]
        for j in range(d - 2):
            out[i, j] += np.conj(C[3, j]) * X[i, j + 2]
        if hop:
            for j in range(d - sh):
                out[i, j] += np.conj(C[4, j]) * X[i, j + sh]
            for j in range(sh, d):
                out[i, j] += np.conj(C[5, j]) * X[i, j - sh]


def _band_right_np(C, sh, hop, X, out):
    d = X.shape[1]
    Cc = np.conj(C)
    out[:] = X * Cc[0][None, :]
    out[:, :-1] += X[:, 1:] * Cc[1][None, :-1]
    out[:, 1:] += X[:, :-1] * Cc[2][None, 1:]
    out[:, :-2] += X[:, 2:] * Cc[3][None, :-2]
    if hop and sh < d:
        n = d - sh
        out[:, :n] += X[:, sh:] * Cc[4][None, :n]
        out[:, sh:] += X[:, :n] * Cc[5][None, sh:]


def _jump_add_loop(X, out, w, sa):
    d = X.shape[0]
    for i in range(d - 1):
        wi = w * sa[i]
        for j in range(d - 1):
            out[i, j] += wi * sa[j] * X[i + 1, j + 1]


def _jump_add_np(X, out, w, sa):
    out[:-1, :-1] += w * (sa[:-1, None] * sa[None, :-1]) * X[1:, 1:]


def _purity_loop(X):
    s = 0.0
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            z = X[i, j]
            s += z.real * z.real + z.imag * z.imag
    return s


def _purity_np(X):
    return float(np.sum(np.abs(X) ** 2))


def _combine_loop(out, buf, X, f):
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] += buf[i, j] - f * X[i, j]


def _combine_np(out, buf, X, f):
    out += buf - f * X


def _generator_loop(C, sh, hop, X, out, f, w, sa):
    # Hermitian X: fill the upper triangle in one pass and mirror it
    d = X.shape[0]
    for i in range(d):
        a0 = C[0, i]
        a1 = C[1, i]
        a2 = C[2, i]
        a3 = C[3, i]
        a4 = C[4, i]
        a5 = C[5, i]
        wi = w * sa[i]
        for j in range(i, d):
            v = (a0 + np.conj(C[0, j]) - f) * X[i, j]
            if i + 1 < d:
                v += a1 * X[i + 1, j]
                if j + 1 < d:
                    v += wi * sa[j] * X[i + 1, j + 1]
            if i >= 1:
                v += a2 * X[i - 1, j]
            if i + 2 < d:
                v += a3 * X[i + 2, j]
            if j + 1 < d:
                v += np.conj(C[1, j]) * X[i, j + 1]
            if j >= 1:
                v += np.conj(C[2, j]) * X[i, j - 1]
            if j + 2 < d:
                v += np.conj(C[3, j]) * X[i, j + 2]
            if hop:
                if i + sh < d:
                    v += a4 * X[i + sh, j]
                if i >= sh:
                    v += a5 * X[i - sh, j]
                if j + sh < d:
                    v += np.conj(C[4, j]) * X[i, j + sh]
                if j >= sh:
                    v += np.conj(C[5, j]) * X[i, j - sh]
            out[i, j] = v
            out[j, i] = np.conj(v)


def _generator_np(C, sh, hop, X, out, f, w, sa):
    buf = np.empty_like(X)
    _band_left_np(C, sh, hop, X, out)
    _band_right_np(C, sh, hop, X, buf)
    _combine_np(out, buf, X, f)
    _jump_add_np(X, out, w, sa)


band_left = pick(_band_left_loop, _band_left_np)
band_right = pick(_band_right_loop, _band_right_np)
jump_add = pick(_jump_add_loop, _jump_add_np)
sq_norm = pick(_purity_loop, _purity_np)
combine = pick(_combine_loop, _combine_np)
generator_apply = pick(_generator_loop, _generator_np)


@jit
def tr_a(X, sa):
    """``Tr(a X)``."""
    s = 0j
    for j in range(X.shape[0] - 1):
        s += sa[j] * X[j + 1, j]
    return s


@jit
def tr_jump(X, sa):
    """``Tr(a X a^dag)``."""
    s = 0.0
    for j in range(X.shape[0] - 1):
        s += sa[j] * sa[j] * X[j + 1, j + 1].real
    return s


@jit
def kraus_sandwich(X, out, buf, C, sh, hop):
    """``out = M X M^dag`` for the banded ``M`` in ``C``."""
    band_left(C, sh, hop, X, buf)
    band_right(C, sh, hop, buf, out)


@jit
def linear_update(X, dy, dt, milstein, sa, nph, h0, hs, gs, sh, sk1, beta, kappa, c0):
    """One step of the linear homodyne equation driven by the record ``dy``.

    Dense reference: Euler-Maruyama, plus ``B[B[X]] (dy^2 - dt) / 2`` with
    ``B[X] = c X + X c^dag`` for Milstein.
    """
    out = X + dt * drift(X, sa, nph, h0, hs, gs, sh, sk1, beta, kappa) + dy * meas(X, sa, c0)
    if milstein:
        out += 0.5 * (dy * dy - dt) * meas(meas(X, sa, c0), sa, c0)
    return out


@jit
def kraus_update(X, dy, dt, sa, nph, h0, hs, gs, sh, sk1, beta, kappa, c0):
    """Factored Milstein map ``M X M^dag + dt (kappa - |c0|^2) a X a^dag``.

    Expanding it gives the Milstein step of :func:`linear_update` plus
    remainders that are O(dt^1.5) with zero mean and O(dt^2)
    (``dt^2 (A X A^dag + c^2 X c^dag^2 / 2)`` on average), and it maps positive
    operators to positive operators.
    """
    d = X.shape[0]
    C = np.empty((6, d), dtype=np.complex128)
    buf = np.empty_like(X)
    out = np.empty_like(X)
    band_coeffs(C, dy, dt, sa, nph, h0, hs, gs, sh, sk1, beta, kappa, c0, 0j)
    kraus_sandwich(X, out, buf, C, sh, gs != 0.0)
    unmon = kappa - abs(c0) ** 2
    if unmon != 0.0:
        jump_add(X, out, dt * unmon, sa)
    return out


@jit
def block_traces(rho):
    tr = 0j
    for b in range(rho.shape[0]):
        tr += trace(rho[b])
    return tr


@jit
def mean_signal(rho, sa, c0):
    """Re Tr(c rho + rho c^dag) / Tr rho over all blocks."""
    s = 0j
    for b in range(rho.shape[0]):
        s += tr_a(rho[b], sa)
    return 2.0 * (c0 * s).real / block_traces(rho).real


@jit
def signal_moments(rho, sa, nph, c0):
    """``Tr(B[rho])`` and ``Tr(B[B[rho]])`` per unit trace, ``B[X] = c X + X c^dag``."""
    ta = 0j
    ta2 = 0j
    n = 0.0
    tr = 0.0
    for b in range(rho.shape[0]):
        ta += tr_a(rho[b], sa)
        ta2 += tr_a2(rho[b], sa)
        for j in range(rho.shape[1]):
            n += nph[j] * rho[b, j, j].real
            tr += rho[b, j, j].real
    s = 2.0 * (c0 * ta).real / tr
    m2 = (2.0 * (c0 * c0 * ta2).real + 2.0 * abs(c0) ** 2 * n) / tr
    return s, m2


_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


@jit
def predictive_record(x, s, m2, dt):
    """Map a standard normal ``x`` to a record increment of the Milstein step.

    The linear Milstein step multiplies the trace by
    ``1 + s dy + m2 (dy^2 - dt) / 2``, so the record density is that factor
    times the N(0, dt) density.  Its CDF in ``z = dy / sqrt(dt)`` is
    ``Phi(z) - phi(z) (a + b z)`` with ``a = s sqrt(dt)``, ``b = m2 dt / 2``;
    ``Phi(z) = Phi(x)`` is solved by safeguarded Newton.  When the factor is
    not positive for every ``dy`` the Gaussian ``N(s dt, dt)`` is used.
    """
    sdt = math.sqrt(dt)
    a = s * sdt
    b = 0.5 * m2 * dt
    if b >= 1.0 or a * a >= 4.0 * b * (1.0 - b):
        return sdt * x + s * dt
    upper = x > 0.0
    qx = 0.5 * math.erfc(x / _SQRT2) if upper else 0.5 * math.erfc(-x / _SQRT2)
    lo = -40.0
    hi = 40.0
    z = x + a
    for _ in range(100):
        phi = math.exp(-0.5 * z * z) / _SQRT2PI
        if upper:
            g = qx - 0.5 * math.erfc(z / _SQRT2) - phi * (a + b * z)
        else:
            g = 0.5 * math.erfc(-z / _SQRT2) - qx - phi * (a + b * z)
        if g > 0.0:
            hi = z
        else:
            lo = z
        dens = phi * (1.0 + a * z + b * (z * z - 1.0))
        zn = z - g / dens if dens > 0.0 else 0.5 * (lo + hi)
        if not lo < zn < hi:
            zn = 0.5 * (lo + hi)
        if abs(zn - z) <= 1e-14 * (1.0 + abs(z)):
            z = zn
            break
        z = zn
    return sdt * z


@jit
def homodyne_into(rho, out, buf, C, dw, dt, mode, sa, nph, h0, hs, gs, sh, sk1, beta, kappa,
                  c0):
    """One homodyne step written into ``out``; returns the record increment.

    ``mode``: 0 nonlinear Euler, 1 nonlinear Milstein, 2 linear Euler,
    3 linear Milstein.  For the nonlinear modes ``dw`` is the innovation
    increment; for the linear modes it is the record increment ``dy``.
    ``buf`` (d, d) and ``C`` (6, d) are scratch space.
    """
    nb = rho.shape[0]
    s = 0.0
    if mode >= 2:
        dy = dw
    else:
        s = mean_signal(rho, sa, c0)
        dy = dw + s * dt
    hop = gs != 0.0
    if mode == 1:
        # normalised equation: the factored map keeps every step positive
        w = dt * (kappa - abs(c0) ** 2)
        for b in range(nb):
            band_coeffs(C, dy, dt, sa, nph, h0[b], hs, gs, sh, sk1, beta, kappa, c0, 0j)
            kraus_sandwich(rho[b], out[b], buf, C, sh, hop)
            if w != 0.0:
                jump_add(rho[b], out[b], w, sa)
    else:
        # M1 X + X M1^dag - f X + w a X a^dag with M1 = 1 + A dt + c dw
        # + c^2 (dw^2 - dt) / 2.  Euler drops the second-order band and has
        # w = kappa dt; linear Milstein keeps it and adds |c0|^2 (dy^2 - dt),
        # which is exactly B[B[X]] (dy^2 - dt) / 2; for dy ~ N(0, dt) the trace
        # is then a martingale.
        f = 1.0 + s * dw if mode == 0 else 1.0
        w = dt * kappa
        if mode == 3:
            w += abs(c0) ** 2 * (dy * dy - dt)
        for b in range(nb):
            band_coeffs(C, dw, dt, sa, nph, h0[b], hs, gs, sh, sk1, beta, kappa, c0, 0j)
            if mode != 3:
                C[3, :] = 0.0
            generator_apply(C, sh, hop, rho[b], out[b], f, w, sa)
    if mode < 2:
        out /= block_traces(out).real
    return dy


@jit
def homodyne_step(rho, dw, dt, mode, sa, nph, h0, hs, gs, sh, sk1, beta, kappa, c0):
    """Allocating wrapper of :func:`homodyne_into`; returns (rho', dy)."""
    out = np.empty_like(rho)
    buf = np.empty_like(rho[0])
    C = np.empty((6, rho.shape[1]), dtype=np.complex128)
    dy = homodyne_into(rho, out, buf, C, dw, dt, mode, sa, nph, h0, hs, gs, sh, sk1, beta,
                       kappa, c0)
    return out, dy


@jit
def counting_into(rho, out, buf, C, u, dt, sa, nph, h0, hs, gs, sh, sk1, beta, kappa, rate):
    """Photon-counting step into ``out``; ``u`` is a uniform draw.

    A click applies ``a X a^dag``.  Otherwise the state becomes
    ``M0 X M0^dag + dt (kappa - rate) a X a^dag`` with
    ``M0 = 1 - (i H + kappa a^dag a / 2) dt``, which keeps it positive.
    Returns whether a photon was detected.
    """
    nb = rho.shape[0]
    p = 0.0
    for b in range(nb):
        p += tr_jump(rho[b], sa)
    p /= block_traces(rho).real
    if u < rate * p * dt:
        for b in range(nb):
            out[b] = 0.0
            jump_add(rho[b], out[b], 1.0, sa)
        out /= block_traces(out).real
        return True
    hop = gs != 0.0
    w = dt * (kappa - rate)
    for b in range(nb):
        band_coeffs(C, 0.0, dt, sa, nph, h0[b], hs, gs, sh, sk1, beta, kappa, 0j, 0j)
        kraus_sandwich(rho[b], out[b], buf, C, sh, hop)
        if w != 0.0:
            jump_add(rho[b], out[b], w, sa)
    out /= block_traces(out).real
    return False


@jit
def counting_step(rho, u, dt, sa, nph, h0, hs, gs, sh, sk1, beta, kappa, rate):
    """Allocating wrapper of :func:`counting_into`; returns (rho', clicked)."""
    out = np.empty_like(rho)
    buf = np.empty_like(rho[0])
    C = np.empty((6, rho.shape[1]), dtype=np.complex128)
    clicked = counting_into(rho, out, buf, C, u, dt, sa, nph, h0, hs, gs, sh, sk1, beta, kappa,
                            rate)
    return out, clicked


@jit
def _expect_a(psi, sa):
    """``<psi| a |psi>`` for a column vector."""
    s = 0j
    for j in range(psi.shape[0] - 1):
        s += np.conj(psi[j, 0]) * sa[j] * psi[j + 1, 0]
    return s


@jit
def sse_into(psi, out, C, dw, dt, sa, nph, h0, hs, gs, sh, sk1, beta, c0):
    """Euler step of the stochastic Schroedinger equation into ``out``, normalised.

    ``psi`` has shape (d, 1); ``c = c0 a`` collects every detected port.
    The update ``psi + [-i H dt - (c^dag c - 2 m^* c + |m|^2) dt / 2
    + (c - m) dw] psi`` with ``m = <c>`` is banded, so it reuses
    :func:`band_left` with ``dy = dw + m^* dt``.
    """
    mc = c0 * _expect_a(psi, sa)
    kk = abs(c0) ** 2
    # diagonal: 1 - i h0 dt - kk n dt / 2 - |m|^2 dt / 2 - m dw
    band_coeffs(C, 0.0, dt, sa, nph, h0, hs, gs, sh, sk1, beta, kk, 0j,
                0.5 * abs(mc) ** 2 * dt + mc * dw)
    g1 = c0 * (dw + np.conj(mc) * dt)
    for i in range(C.shape[1] - 1):
        C[1, i] += g1 * sa[i]
    band_left(C, sh, gs != 0.0, psi, out)
    nrm = np.sqrt(sq_norm(out))
    for i in range(out.shape[0]):
        out[i, 0] /= nrm


@jit
def sse_step(psi, dw, dt, sa, nph, h0, hs, gs, sh, sk1, beta, c0):
    """Allocating wrapper of :func:`sse_into`."""
    out = np.empty_like(psi)
    C = np.empty((6, psi.shape[0]), dtype=np.complex128)
    sse_into(psi, out, C, dw, dt, sa, nph, h0, hs, gs, sh, sk1, beta, c0)
    return out


@jit
def observe(rho, sa, atom, top, nat, pops):
    """Fill ``pops`` and return (trace, <a>, purity, atomic purity, top-Fock weight)."""
    nb = rho.shape[0]
    d = rho.shape[1]
    tr = block_traces(rho).real
    pops[:] = 0.0
    ea = 0j
    pur = 0.0
    topw = 0.0
    for b in range(nb):
        X = rho[b]
        for j in range(d):
            pops[b + atom[j]] += X[j, j].real
            topw += top[j] * X[j, j].real
        ea += tr_a(X, sa)
        pur += sq_norm(X)
    pops /= tr
    if nb > 1:
        spur = 0.0
        for n in range(nat):
            spur += pops[n] * pops[n]
    else:
        # reduced atomic density of the single joint block
        dc = d // nat
        X = rho[0]
        spur = 0.0
        for n in range(nat):
            for n2 in range(nat):
                z = 0j
                for m in range(dc):
                    z += X[n * dc + m, n2 * dc + m]
                spur += z.real * z.real + z.imag * z.imag
        spur /= tr * tr
    return tr, ea / tr, pur / (tr * tr), spur, topw / tr


@jit
def level_population(rho, atom, level):
    """Normalised population of atomic level ``level``."""
    nb = rho.shape[0]
    p = 0.0
    tr = 0.0
    for b in range(nb):
        for j in range(rho.shape[1]):
            x = rho[b, j, j].real
            tr += x
            if b + atom[j] == level:
                p += x
    return p / tr


@jit
def diagnostics(rho):
    """(Hermiticity defect, minimum eigenvalue) of the normalised state."""
    tr = block_traces(rho).real
    herm = 0.0
    mineig = np.inf
    for b in range(rho.shape[0]):
        X = rho[b] / tr
        herm = max(herm, np.max(np.abs(X - X.conj().T)))
        ev = np.linalg.eigvalsh(0.5 * (X + X.conj().T))
        mineig = min(mineig, ev[0])
    return herm, mineig


@jit
def run_density(rho, key, n_steps, stride, mode, dt, sa, nph, h0, hs, sh, atom, top, nat,
                gs0, sk1, betas, beta_switch, kappa, c0, rate, fb, physical, dws, check):
    """Integrate one trajectory of a density-matrix equation.

    ``mode`` 0-3 as in :func:`homodyne_into`, 4 for photon counting.
    ``fb`` = (enabled, target n, low, high, g_s high, g_s low).
    ``dws``: externally supplied innovation increments (length ``n_steps``),
    or an empty array to draw from the counter-based stream ``key``.
    ``physical``: for linear modes, draw the record from its predictive
    density instead of the reference N(0, dt) measure (exactly for Milstein,
    see :func:`predictive_record`; as N(s dt, dt) for Euler).
    """
    n_rec = n_steps // stride + 1
    rec_dy = np.zeros(n_rec)
    rec_pops = np.zeros((n_rec, nat))
    rec_a = np.zeros(n_rec, dtype=np.complex128)
    rec_pur = np.zeros(n_rec)
    rec_spur = np.zeros(n_rec)
    rec_tr = np.zeros(n_rec)
    rec_top = np.zeros(n_rec)
    rec_herm = np.zeros(n_rec)
    rec_eig = np.zeros(n_rec)
    rec_gs = np.zeros(n_rec)
    pops = np.zeros(nat)
    gs = gs0
    given = dws.shape[0] == n_steps
    sdt = np.sqrt(dt)
    draws = np.zeros(0)
    status = OK
    bad_step = -1
    acc = 0.0
    cur = rho.copy()
    nxt = np.empty_like(cur)
    buf = np.empty_like(cur[0])
    C = np.empty((6, cur.shape[1]), dtype=np.complex128)

    tr, ea, pur, spur, topw = observe(cur, sa, atom, top, nat, pops)
    rec_pops[0] = pops
    rec_a[0] = ea
    rec_pur[0] = pur
    rec_spur[0] = spur
    rec_tr[0] = tr
    rec_top[0] = topw
    rec_gs[0] = gs
    if check:
        rec_herm[0], rec_eig[0] = diagnostics(cur)

    for i in range(n_steps):
        if i % _CHUNK == 0 and not given:
            m = min(_CHUNK, n_steps - i)
            if mode == 4:
                draws = uniforms_block(key, np.uint64(LANES * i), LANES * m)
            else:
                draws = normals_block(key, np.uint64(LANES * i), LANES * m)
        beta = betas[0] if i < beta_switch else betas[1]
        if fb[0] > 0.0:
            p = level_population(cur, atom, int(fb[1]))
            if p < fb[2]:
                gs = fb[4]
            elif p > fb[3]:
                gs = fb[5]
        if mode == 4:
            u = draws[LANES * (i % _CHUNK)]
            clicked = counting_into(cur, nxt, buf, C, u, dt, sa, nph, h0, hs, gs, sh, sk1, beta,
                                    kappa, rate)
            acc += 1.0 if clicked else 0.0
        else:
            if given:
                dw = dws[i]
            else:
                dw = sdt * draws[LANES * (i % _CHUNK)]
            if mode == 3 and physical:
                s, m2 = signal_moments(cur, sa, nph, c0)
                dw = predictive_record(dw / sdt, s, m2, dt)
            elif mode == 2 and physical:
                dw = dw + mean_signal(cur, sa, c0) * dt
            acc += homodyne_into(cur, nxt, buf, C, dw, dt, mode, sa, nph, h0, hs, gs, sh, sk1,
                                 beta, kappa, c0)
        cur, nxt = nxt, cur
        tr = block_traces(cur).real
        if not np.isfinite(tr):
            status = NONFINITE
            bad_step = i
            break
        if (i + 1) % stride == 0:
            r = (i + 1) // stride
            tr, ea, pur, spur, topw = observe(cur, sa, atom, top, nat, pops)
            rec_dy[r] = acc
            acc = 0.0
            rec_pops[r] = pops
            rec_a[r] = ea
            rec_pur[r] = pur
            rec_spur[r] = spur
            rec_tr[r] = tr
            rec_top[r] = topw
            rec_gs[r] = gs
            if check:
                rec_herm[r], rec_eig[r] = diagnostics(cur)
    return (cur, status, bad_step, rec_dy, rec_pops, rec_a, rec_pur, rec_spur, rec_tr,
            rec_top, rec_herm, rec_eig, rec_gs)


@jit
def run_sse(psi, key, n_steps, stride, dt, sa, nph, h0, hs, sh, atom, top, nat, gs0, sk1,
            betas, beta_switch, c0, w1, w2, c_rec, dws):
    """Integrate one SSE trajectory.

    The detected ports enter as one channel ``c0 a`` driven by
    ``w1 dW1 + w2 dW2`` (lane 0 reflected, lane 1 transmitted); the recorded
    signal is that of port ``c_rec a`` with its own increment.  Supplied
    ``dws`` drive the combined channel directly.
    """
    n_rec = n_steps // stride + 1
    rec_dy = np.zeros(n_rec)
    rec_pops = np.zeros((n_rec, nat))
    rec_a = np.zeros(n_rec, dtype=np.complex128)
    rec_spur = np.zeros(n_rec)
    rec_norm = np.zeros(n_rec)
    rec_top = np.zeros(n_rec)
    pops = np.zeros(nat)
    given = dws.shape[0] == n_steps
    sdt = np.sqrt(dt)
    draws = np.zeros(0)
    status = OK
    bad_step = -1
    acc = 0.0
    lane_rec = 1 if w2 != 0.0 else 0
    cur = psi.copy()
    nxt = np.empty_like(cur)
    C = np.empty((6, cur.shape[0]), dtype=np.complex128)

    rho = np.empty((1, psi.shape[0], psi.shape[0]), dtype=np.complex128)
    rho[0] = cur @ cur.conj().T
    tr, ea, pur, spur, topw = observe(rho, sa, atom, top, nat, pops)
    rec_pops[0] = pops
    rec_a[0] = ea
    rec_spur[0] = spur
    rec_norm[0] = tr
    rec_top[0] = topw
    for i in range(n_steps):
        if i % _CHUNK == 0 and not given:
            m = min(_CHUNK, n_steps - i)
            draws = normals_block(key, np.uint64(LANES * i), LANES * m)
        beta = betas[0] if i < beta_switch else betas[1]
        if given:
            dwe = dws[i]
            dwr = dws[i]
        else:
            j = LANES * (i % _CHUNK)
            dw1 = sdt * draws[j]
            dw2 = sdt * draws[j + 1]
            dwe = w1 * dw1 + w2 * dw2
            dwr = dw2 if lane_rec == 1 else dw1
        acc += dwr + 2.0 * (c_rec * _expect_a(cur, sa)).real * dt
        sse_into(cur, nxt, C, dwe, dt, sa, nph, h0[0], hs, gs0, sh, sk1, beta, c0)
        cur, nxt = nxt, cur
        nrm = sq_norm(cur)
        if not np.isfinite(nrm):
            status = NONFINITE
            bad_step = i
            break
        if (i + 1) % stride == 0:
            r = (i + 1) // stride
            rho[0] = cur @ cur.conj().T
            tr, ea, pur, spur, topw = observe(rho, sa, atom, top, nat, pops)
            rec_dy[r] = acc
            acc = 0.0
            rec_pops[r] = pops
            rec_a[r] = ea
            rec_spur[r] = spur
            rec_norm[r] = nrm
            rec_top[r] = topw
    return cur, status, bad_step, rec_dy, rec_pops, rec_a, rec_spur, rec_norm, rec_top


@jit
def discrete_terms(rho, dt, sa, nph, h0, hs, gs, sh, sk1, beta, kappa1, kappa2):
    """Operator coefficients of the exact discrete homodyne step.

    Returns ``X`` of shape (6, d, d) such that the unnormalised updated state
    for readout ``k`` is ``sum_pq u_pq(k) X_pq`` with the order
    (00, 10, 01, 11, 20, 02).  The oscillator phase lives in the u-table.
    """
    d = rho.shape[0]
    X = np.zeros((6, d, d), dtype=np.complex128)
    t1sq = kappa1 * dt
    t2sq = kappa2 * dt
    t2 = np.sqrt(t2sq)
    arho = a_l(sa, rho)
    rhoad = x_ad(sa, rho)
    n_rho = nph[:, None] * rho + rho * nph[None, :]
    X[0] = (rho - 1j * dt * (h_l(h0, hs, gs, sh, rho) - x_h(h0, hs, gs, sh, rho))
            + sk1 * dt * (beta * (ad_l(sa, rho) - rhoad) - np.conj(beta) * (arho - x_a(sa, rho)))
            + 0.5 * t1sq * (2.0 * x_ad(sa, arho) - n_rho) - 0.5 * t2sq * n_rho)
    X[1] = t2 * arho
    X[2] = t2 * rhoad
    X[3] = t2sq * x_ad(sa, arho)
    X[4] = (t2sq / np.sqrt(2.0)) * a_l(sa, arho)
    X[5] = (t2sq / np.sqrt(2.0)) * x_ad(sa, rhoad)
    return X


@jit
def discrete_probs(X, u00, u10, u11, u20):
    tr = np.zeros(6, dtype=np.complex128)
    for p in range(6):
        tr[p] = trace(X[p])
    P = (u00 * tr[0] + u10 * tr[1] + np.conj(u10) * tr[2] + u11 * tr[3]
         + u20 * tr[4] + np.conj(u20) * tr[5])
    return P.real


@jit
def discrete_combine(X, i, u00, u10, u11, u20):
    return (u00[i] * X[0] + u10[i] * X[1] + np.conj(u10[i]) * X[2] + u11[i] * X[3]
            + u20[i] * X[4] + np.conj(u20[i]) * X[5])


@jit
def band_trace(C, sh, hop, X):
    """``Tr(M X)`` for the banded ``M`` in ``C``."""
    d = X.shape[0]
    s = 0j
    for i in range(d):
        s += C[0, i] * X[i, i]
        if i + 1 < d:
            s += C[1, i] * X[i + 1, i]
        if i >= 1:
            s += C[2, i] * X[i - 1, i]
        if i + 2 < d:
            s += C[3, i] * X[i + 2, i]
        if hop:
            if i + sh < d:
                s += C[4, i] * X[i + sh, i]
            if i >= sh:
                s += C[5, i] * X[i - sh, i]
    return s


@jit
def tr_a2(X, sa):
    """``Tr(a^2 X)``."""
    s = 0j
    for j in range(X.shape[0] - 2):
        s += sa[j] * sa[j + 1] * X[j + 2, j]
    return s


@jit
def discrete_into(rho, out, buf, C, u, dt, sa, nph, h0, hs, gs, sh, sk1, beta, kappa1, kappa2,
                  u00, u10, u11, u20):
    """Sample a readout and write the conditioned state into ``out``.

    Uses ``sum_pq u_pq X_pq = N rho + rho N^dag - u00 rho
    + (u00 t1^2 + u11 t2^2) a rho a^dag`` with the banded
    ``N = u00 M0 + t2 u10 a + u20 t2^2 a^2 / sqrt 2`` (``u00``, ``u11`` real),
    so ``P_k`` needs only five traces of ``rho``.  ``u`` is a uniform draw.
    Returns the readout index, or -1 when some ``P_k`` is negative.
    """
    t1sq = kappa1 * dt
    t2sq = kappa2 * dt
    t2 = np.sqrt(t2sq)
    q = t2sq / np.sqrt(2.0)
    hop = gs != 0.0
    band_coeffs(C, 0.0, dt, sa, nph, h0, hs, gs, sh, sk1, beta, kappa1 + kappa2, 0j, 0j)
    tm = band_trace(C, sh, hop, rho)
    ta = tr_a(rho, sa)
    ta2 = tr_a2(rho, sa)
    tj = tr_jump(rho, sa)
    tr = trace(rho).real
    nk = u00.shape[0]
    P = np.empty(nk)
    total = 0.0
    pmin = 0.0
    pmax = 0.0
    for k in range(nk):
        v = (2.0 * (u00[k].real * tm + t2 * u10[k] * ta + q * u20[k] * ta2).real
             - u00[k].real * tr + (u00[k].real * t1sq + u11[k].real * t2sq) * tj)
        P[k] = v
        total += v
        pmin = min(pmin, v)
        pmax = max(pmax, v)
    if pmin < -1e-12 * pmax:
        return -1
    target = u * total
    idx = nk - 1
    acc = 0.0
    for k in range(nk):
        acc += P[k]
        if acc >= target:
            idx = k
            break
    # N = u00 M0 + t2 u10 a + q u20 a^2, in place on C
    c00 = u00[idx].real
    for i in range(C.shape[1]):
        for b in range(6):
            C[b, i] *= c00
        C[1, i] += t2 * u10[idx] * sa[i]
        if i + 2 < C.shape[1]:
            C[3, i] += q * u20[idx] * sa[i] * sa[i + 1]
    band_left(C, sh, hop, rho, out)
    band_right(C, sh, hop, rho, buf)
    pk = P[idx]
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] = (out[i, j] + buf[i, j] - c00 * rho[i, j]) / pk
    jump_add(rho, out, (c00 * t1sq + u11[idx].real * t2sq) / pk, sa)
    return idx


@jit
def run_discrete(rho, key, n_steps, stride, dt, sa, nph, h0, hs, gs, sh, atom, top, nat, sk1,
                 beta, kappa1, kappa2, u00, u10, u11, u20):
    """Iterate the exact discrete measurement model, sampling each readout.

    Returns (rho, status, bad_step, recorded populations, recorded <a>,
    recorded readout indices).
    """
    n_rec = n_steps // stride + 1
    rec_pops = np.zeros((n_rec, nat))
    rec_a = np.zeros(n_rec, dtype=np.complex128)
    rec_k = np.zeros(n_steps, dtype=np.int64)
    pops = np.zeros(nat)
    d = rho.shape[0]
    cur = np.empty((1, d, d), dtype=np.complex128)
    cur[0] = rho
    nxt = np.empty_like(cur)
    buf = np.empty((d, d), dtype=np.complex128)
    C = np.empty((6, d), dtype=np.complex128)
    tr, ea, pur, spur, topw = observe(cur, sa, atom, top, nat, pops)
    rec_pops[0] = pops
    rec_a[0] = ea
    status = OK
    bad_step = -1
    draws = np.zeros(0)
    for i in range(n_steps):
        if i % _CHUNK == 0:
            m = min(_CHUNK, n_steps - i)
            draws = uniforms_block(key, np.uint64(LANES * i), LANES * m)
        idx = discrete_into(cur[0], nxt[0], buf, C, draws[LANES * (i % _CHUNK)], dt, sa, nph,
                            h0, hs, gs, sh, sk1, beta, kappa1, kappa2, u00, u10, u11, u20)
        if idx < 0:
            status = BAD_CLICK
            bad_step = i
            break
        rec_k[i] = idx
        cur, nxt = nxt, cur
        if (i + 1) % stride == 0:
            r = (i + 1) // stride
            tr, ea, pur, spur, topw = observe(cur, sa, atom, top, nat, pops)
            rec_pops[r] = pops
            rec_a[r] = ea
    return cur[0], status, bad_step, rec_pops, rec_a, rec_k
