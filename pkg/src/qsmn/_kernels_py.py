"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature and
bit-identical results; ``qsmn.kernels`` picks one at import time.
"""

import numpy as np


def negacyclic_mul(a, b, q):
    """Product of ``a`` and ``b`` in Z_q[x]/(x^n + 1), coefficients in [0, q)."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    n = a.shape[0]
    full = np.convolve(a % q, b % q)
    out = full[:n].copy()
    out[: n - 1] -= full[n:]
    return out % q


def bb84_channel(alice_bits, alice_bases, eve_mask, eve_bases, eve_rand,
                 flip_mask, bob_bases, bob_rand):
    """Propagate prepared qubits through Eve and the noisy channel to Bob.

    All arguments are equal-length uint8 arrays of 0/1. Returns Bob's
    measured bits.
    """
    state_bits = alice_bits.copy()
    state_bases = alice_bases.copy()

    eve = eve_mask.astype(bool)
    eve_match = eve_bases == alice_bases
    eve_bits = np.where(eve_match, alice_bits, eve_rand)
    state_bits[eve] = eve_bits[eve]
    state_bases[eve] = eve_bases[eve]

    state_bits ^= flip_mask.astype(np.uint8)

    return np.where(bob_bases == state_bases, state_bits, bob_rand).astype(np.uint8)


def parity_bisect_pass(alice, bob, order, block_size):
    """One bisection pass over ``order`` in blocks of ``block_size``.

    Corrects at most one error per block whose parity differs, flipping
    ``bob`` in place. Returns ``(corrections, leaked_parity_bits)``.
    """
    a = alice[order]
    b = bob[order]
    total = order.shape[0]
    corrections = 0
    leaked = 0
    for start in range(0, total, block_size):
        lo = start
        hi = min(start + block_size, total)
        leaked += 1
        if (int(a[lo:hi].sum()) - int(b[lo:hi].sum())) % 2 == 0:
            continue
        while hi - lo > 1:
            mid = (lo + hi) // 2
            leaked += 1
            if (int(a[lo:mid].sum()) - int(b[lo:mid].sum())) % 2:
                hi = mid
            else:
                lo = mid
        b[lo] ^= 1
        bob[order[lo]] ^= 1
        corrections += 1
    return corrections, leaked
