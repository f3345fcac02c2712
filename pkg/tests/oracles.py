"""Independent reference computations used to check the fast paths.

Nothing here calls numpy or the kernels; arithmetic is plain Python ints
with loops, written straight from the definitions.
"""

from qsmn.crypto.primitives import expand


def ring_mul(a, b, q):
    """Schoolbook product in Z_q[x]/(x^n + 1) using x^n = -1 directly."""
    n = len(a)
    out = [0] * n
    for i in range(n):
        for j in range(n):
            term = a[i] * b[j]
            if i + j < n:
                out[i + j] += term
            else:
                out[i + j - n] -= term
    return [c % q for c in out]


def matrix_from_poly(a, q):
    """Column j of the matrix is a * x^j reduced mod x^n + 1."""
    n = len(a)
    cols = []
    for j in range(n):
        unit = [0] * n
        unit[j] = 1
        cols.append(ring_mul(a, unit, q))
    return [[cols[j][i] for j in range(n)] for i in range(n)]


def matvec(m, v, q):
    return [sum(m[i][j] * v[j] for j in range(len(v))) % q for i in range(len(m))]


def cbd(stream, eta, count):
    bits = []
    for byte in stream:
        for k in range(8):
            bits.append((byte >> k) & 1)
    out = []
    for i in range(count):
        chunk = bits[2 * eta * i: 2 * eta * (i + 1)]
        out.append(sum(chunk[:eta]) - sum(chunk[eta:]))
    return out


def noise(seed, label, n, eta):
    if eta == 0:
        return [0] * n
    return cbd(expand(seed, label, (2 * eta * n + 7) // 8), eta, n)


def uniform(rho, n, q):
    mask = (1 << q.bit_length()) - 1
    out = []
    block = 0
    while len(out) < n:
        raw = expand(rho, f"matrix/{block}", 2 * n + 64)
        for i in range(0, len(raw), 2):
            c = (raw[i] | raw[i + 1] << 8) & mask
            if c < q:
                out.append(c)
        block += 1
    return out[:n]


def nearest_code(x, d, q):
    """Brute-force search for the d-bit code whose reconstruction is closest to x."""
    best, best_dist = None, None
    for y in range(1 << d):
        center = y * q / (1 << d)
        dist = min(abs(x - center), q - abs(x - center))
        if best_dist is None or dist < best_dist:
            best, best_dist = y, dist
    return best


def keygen(seed, n, q, eta):
    material = expand(seed, "kem/keygen", 96)
    rho, sigma = material[:32], material[32:64]
    a = uniform(rho, n, q)
    s = noise(sigma, "kem/s", n, eta)
    e = noise(sigma, "kem/e", n, eta)
    big_a = matrix_from_poly(a, q)
    b = [(x + y) % q for x, y in zip(matvec(big_a, s, q), e)]
    return rho, s, e, b


def encrypt(rho, b, message_bits, coins, n, q, eta, v_bits):
    big_a = matrix_from_poly(uniform(rho, n, q), q)
    r = noise(coins, "enc/r", n, eta)
    e1 = noise(coins, "enc/e1", n, eta)
    e2 = noise(coins, "enc/e2", n, eta)
    u = [(x + y) % q for x, y in zip(matvec(big_a, r, q), e1)]
    big_b = matrix_from_poly(b, q)
    half = (q + 1) // 2
    v_full = [(x + y + m * half) % q for x, y, m in zip(matvec(big_b, r, q), e2, message_bits)]
    v = [nearest_code(x, v_bits, q) for x in v_full]
    return u, v


def intercept_resend_error_rate():
    """Exact error probability on sifted bits when Eve intercepts every pulse.

    Enumerates Alice's bit, Alice's basis, Eve's basis, and Eve's random
    outcome, keeping only the sifted case where Bob's basis equals Alice's.
    """
    from fractions import Fraction

    errors = Fraction(0)
    total = Fraction(0)
    for bit in (0, 1):
        for basis in (0, 1):
            for eve_basis in (0, 1):
                for eve_outcome in (0, 1):
                    p = Fraction(1, 16)
                    eve_bit = bit if eve_basis == basis else eve_outcome
                    # Bob measures in Alice's basis (sifted); Eve's resent state is in eve_basis.
                    for bob_outcome in (0, 1):
                        q = Fraction(1, 2)
                        bob_bit = eve_bit if eve_basis == basis else bob_outcome
                        total += p * q
                        errors += p * q * (bob_bit != bit)
    return errors / total
