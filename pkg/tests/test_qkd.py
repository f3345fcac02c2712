import numpy as np
import pytest
from scipy import stats

import oracles
from qsmn import _kernels_py, kernels
from qsmn.qkd import (
    Eavesdropper,
    InsufficientKeyMaterial,
    QkdError,
    QkdLinkConfig,
    RoundStatus,
    binomial_bounds,
    detect_eavesdropper,
    distill_key_block,
    reconcile,
    round_trace_csv,
    run_bb84_round,
)

CLEAN = QkdLinkConfig(pulses_per_round=4000)
EVE = QkdLinkConfig(pulses_per_round=4000, eavesdropper=Eavesdropper.intercept_all())


def test_noiseless_no_eve():
    r = run_bb84_round(CLEAN, 1)
    assert r.qber_estimate == 0.0
    assert r.status is RoundStatus.DISTILLED
    assert r.reconciled_alice == r.reconciled_bob
    assert r.leaked_parity_bits == 0


def test_intercept_resend_oracle_is_one_quarter():
    from fractions import Fraction

    assert oracles.intercept_resend_error_rate() == Fraction(1, 4)


def test_intercept_resend_qber_near_quarter():
    qbers = [run_bb84_round(EVE, s).qber_estimate for s in range(20)]
    assert 0.22 <= np.mean(qbers) <= 0.28


def test_true_error_rate_under_eve_matches_oracle():
    # Use all sifted bits rather than the sample, for a tight check.
    cfg = QkdLinkConfig(pulses_per_round=20000, eavesdropper=Eavesdropper.intercept_all())
    r = run_bb84_round(cfg, 7)
    a = np.frombuffer(r.sifted_bits_alice, np.uint8)
    b = np.frombuffer(r.sifted_bits_bob, np.uint8)
    lo, hi = binomial_bounds(len(a), 0.25, 4)
    assert lo <= np.mean(a != b) <= hi


def test_fractional_eve_scales_error():
    cfg = QkdLinkConfig(pulses_per_round=20000, eavesdropper=Eavesdropper.intercept_fraction(0.4))
    r = run_bb84_round(cfg, 3)
    a = np.frombuffer(r.sifted_bits_alice, np.uint8)
    b = np.frombuffer(r.sifted_bits_bob, np.uint8)
    lo, hi = binomial_bounds(len(a), 0.1, 4)
    assert lo <= np.mean(a != b) <= hi


def test_sifted_fraction_within_binomial_bound():
    for s in range(10):
        r = run_bb84_round(CLEAN, s)
        lo, hi = binomial_bounds(CLEAN.pulses_per_round, 0.5, 3)
        assert lo <= r.sifted_fraction <= hi


def test_sifting_chi_square_over_100_rounds():
    n = 2000
    cfg = QkdLinkConfig(pulses_per_round=n, channel_flip_prob=0.02)
    counts = np.array([round(run_bb84_round(cfg, s).sifted_fraction * n) for s in range(100)])
    chi2 = float(np.sum((counts - n / 2) ** 2 / (n / 4)))
    assert stats.chi2.sf(chi2, df=100) > 0.001


def test_sifting_keeps_exactly_matched_bases():
    r = run_bb84_round(CLEAN, 5, keep_trace=True)
    t = r.trace
    matched = [i for i in range(CLEAN.pulses_per_round) if t.alice_bases[i] == t.bob_bases[i]]
    assert [i for i, s in enumerate(t.sifted) if s] == matched
    assert bytes(t.alice_bits[i] for i in matched) == r.sifted_bits_alice
    assert sum(t.disclosed) == r.disclosed_bits


def test_qber_only_from_disclosed_sample():
    cfg = QkdLinkConfig(pulses_per_round=4000, channel_flip_prob=0.08)
    r = run_bb84_round(cfg, 11, keep_trace=True)
    t = r.trace
    idx = [i for i, d in enumerate(t.disclosed) if d]
    errors = sum(t.alice_bits[i] != t.bob_bits[i] for i in idx)
    assert r.qber_estimate == errors / len(idx)
    assert len(r.reconciled_alice) == len(r.sifted_bits_alice) - r.disclosed_bits


def test_determinism():
    cfg = QkdLinkConfig(pulses_per_round=3000, channel_flip_prob=0.03)
    assert run_bb84_round(cfg, b"seed", 5) == run_bb84_round(cfg, b"seed", 5)


def test_min_pulses():
    with pytest.raises(ValueError):
        run_bb84_round(QkdLinkConfig(pulses_per_round=999), 0)


@pytest.mark.parametrize("kwargs", [
    {"channel_flip_prob": 0.5},
    {"sample_fraction": 0.0},
    {"sample_fraction": 1.0},
    {"qber_abort_threshold": 0.5},
    {"target_block_bits": 12},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        QkdLinkConfig(**kwargs)


class TestDetection:
    def test_threshold_rules(self):
        r = run_bb84_round(CLEAN, 1)
        cfg = QkdLinkConfig(qber_abort_threshold=0.11)
        assert detect_eavesdropper(type(r)(**{**r.__dict__, "qber_estimate": 0.30}), cfg)
        assert not detect_eavesdropper(type(r)(**{**r.__dict__, "qber_estimate": 0.0}), cfg)
        assert not detect_eavesdropper(type(r)(**{**r.__dict__, "qber_estimate": 0.11}), cfg)

    def test_eve_round_aborts(self):
        r = run_bb84_round(EVE, 2)
        assert r.status is RoundStatus.ABORTED and detect_eavesdropper(r, EVE)
        assert r.reconciled_alice == b"" and r.extractable_bits == 0


class TestDistill:
    cfg = QkdLinkConfig(pulses_per_round=4000, channel_flip_prob=0.04)

    def test_both_ends_agree(self):
        r = run_bb84_round(self.cfg, 3)
        a = distill_key_block(r, "bs1~core", 256, side="alice")
        b = distill_key_block(r, "bs1~core", 256, side="bob")
        assert a == b and len(a.key) == 32

    def test_distinct_rounds(self):
        a = distill_key_block(run_bb84_round(self.cfg, 3), "l", 256)
        b = distill_key_block(run_bb84_round(self.cfg, 4), "l", 256)
        assert a.key_id != b.key_id and a.key != b.key

    def test_too_many_bits(self):
        r = run_bb84_round(self.cfg, 3)
        with pytest.raises(InsufficientKeyMaterial):
            distill_key_block(r, "l", (r.extractable_bits // 8 + 1) * 8)

    def test_aborted_round(self):
        with pytest.raises(QkdError):
            distill_key_block(run_bb84_round(EVE, 2), "l", 256)

    def test_disclosed_bits_subtracted(self):
        r = run_bb84_round(self.cfg, 3)
        assert r.leaked_parity_bits > 0
        assert r.extractable_bits == len(r.reconciled_alice) - r.leaked_parity_bits


def test_trace_csv_columns():
    r = run_bb84_round(CLEAN, 1, keep_trace=True)
    lines = round_trace_csv(r).splitlines()
    assert lines[0] == "pulse_index,alice_bit,alice_basis,eve_acted,bob_basis,bob_bit,sifted,disclosed"
    assert len(lines) == CLEAN.pulses_per_round + 1
    with pytest.raises(QkdError):
        round_trace_csv(run_bb84_round(CLEAN, 1))


def test_reconcile_fixes_all_errors():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2, 3000, dtype=np.uint8)
    b = a.copy()
    flips = rng.choice(3000, 150, replace=False)
    b[flips] ^= 1
    fixed, leaked = reconcile(a, b, np.random.default_rng(1))
    assert np.array_equal(fixed, a) and leaked >= 150


def test_kernel_backends_agree_on_channel_and_bisection():
    rng = np.random.default_rng(42)
    arrays = [rng.integers(0, 2, 5000, dtype=np.uint8) for _ in range(8)]
    assert np.array_equal(kernels.bb84_channel(*arrays), _kernels_py.bb84_channel(*arrays))
    a = arrays[0]
    b1 = arrays[1].copy()
    b2 = arrays[1].copy()
    order = rng.permutation(5000).astype(np.int64)
    assert kernels.parity_bisect_pass(a, b1, order, 16) == _kernels_py.parity_bisect_pass(a, b2, order, 16)
    assert np.array_equal(b1, b2)
