"""Reference values for the C++ tests, computed with mpmath.

Two-phase flat-interface kernel in the plane by a Fourier-Laplace route:
tangential cosine transform, then numerical Laplace inversion of the
one-dimensional transmission problem for each frequency.  Run with
    python3 tests/oracles/freeze.py
and paste the printed values into the tests when a definition changes.
"""
import mpmath as mp

mp.mp.dps = 25


def kernel_hat(xi, p, xn, yn, k):
    mu1 = mp.sqrt(p + xi * xi)
    mu2 = mp.sqrt(xi * xi + p / k)
    if xn < 0:
        refl = (mu1 - k * mu2) / (mu1 + k * mu2)
        return (mp.exp(-mu1 * abs(xn - yn)) + refl * mp.exp(-mu1 * (abs(xn) + abs(yn)))) / (2 * mu1)
    return mp.exp(-mu1 * abs(yn) - mu2 * xn) / (mu1 + k * mu2)


def flat_kernel(x1, xn, t, yn, k):
    def in_time(xi):
        return mp.invertlaplace(lambda p: kernel_hat(xi, p, xn, yn, k), t, method="dehoog")

    reach = mp.sqrt(40 / (min(1, k) * t))
    return mp.quad(lambda xi: mp.cos(xi * x1) * in_time(xi), [0, reach / 4, reach / 2, reach]) / mp.pi


def free_kernel(x1, xn, t, yn):
    return mp.exp(-(x1 ** 2 + (xn - yn) ** 2) / (4 * t)) / (4 * mp.pi * t)


if __name__ == "__main__":
    print("sanity k=1:", flat_kernel(0.1, 0.05, 0.1, -0.2, 1), free_kernel(0.1, 0.05, 0.1, -0.2))
    for k in (4, 0.25):
        for x1, xn, t in ((0.1, -0.1, 0.05), (0.1, 0.15, 0.1), (-0.2, 0.3, 0.2)):
            print(f"k={k} x=({x1},{xn}) t={t} y=(0,-0.2):", mp.nstr(flat_kernel(x1, xn, t, -0.2, k), 17))
    for a, b in ((0, 0), (0.5, 0.5), (1, 0.25)):
        print(f"convolution constant n=2 alpha={a} beta={b}:", mp.nstr(4 * mp.pi * mp.beta(2 - a, 2 - b), 17))
