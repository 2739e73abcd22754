import math

import pytest
from hypothesis import given, strategies as st

from radioslam.fingerprint import (
    Fingerprint,
    cosine_similarity,
    prepare,
    shift_rss,
)


def naive_similarity(fi, fj, offset):
    """Brute-force oracle: explicit set intersection and full-norm denominators."""
    si = {k: max(v + offset, 0.0) for k, v in fi.readings.items()}
    sj = {k: max(v + offset, 0.0) for k, v in fj.readings.items()}
    common = set(si) & set(sj)
    num = sum(si[k] * sj[k] for k in common)
    ni = math.sqrt(sum(v * v for v in si.values()))
    nj = math.sqrt(sum(v * v for v in sj.values()))
    return num / (ni * nj)


def fp(readings, t=0.0):
    return Fingerprint(timestamp=t, readings=readings)


class TestShiftRss:
    def test_plain_shift(self):
        assert shift_rss(-40.0, 100.0) == 60.0

    def test_clamps_below_zero(self):
        assert shift_rss(-120.0, 100.0) == 0.0

    def test_boundary(self):
        assert shift_rss(-100.0, 100.0) == 0.0

    def test_negative_offset_rejected(self):
        with pytest.raises(ValueError):
            shift_rss(-40.0, -1.0)


class TestCosineSimilarity:
    def test_self_similarity(self):
        f = fp({"a": 60.0, "b": 80.0})
        assert cosine_similarity(f, f, offset=0.0) == pytest.approx(1.0, abs=1e-15)

    def test_disjoint_transmitters(self):
        assert cosine_similarity(fp({"a": 60.0}), fp({"b": 60.0}), offset=0.0) == 0.0

    def test_common_subset_example(self):
        # numerator over the shared transmitter only: 3*3 / (5 * 3) = 0.6
        fi = fp({"a": 3.0, "b": 4.0})
        fj = fp({"a": 3.0})
        assert cosine_similarity(fi, fj, offset=0.0) == pytest.approx(0.6, abs=1e-15)

    def test_empty_fingerprint_rejected(self):
        with pytest.raises(ValueError):
            cosine_similarity(fp({}), fp({"a": 1.0}), offset=0.0)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            cosine_similarity(fp({"a": -120.0}), fp({"a": -40.0}), offset=100.0)

    def test_strict_subset_scores_below_one(self):
        fi = fp({"a": 50.0, "b": 60.0, "c": 40.0})
        fj = fp({"a": 50.0, "b": 60.0})
        assert cosine_similarity(fi, fj, offset=0.0) < 1.0


readings_strategy = st.dictionaries(
    keys=st.text(alphabet="abcdefghij0123456789", min_size=1, max_size=6),
    values=st.floats(min_value=-95.0, max_value=-20.0),
    min_size=1,
    max_size=20,
)


class TestProperties:
    @given(readings_strategy, readings_strategy)
    def test_symmetry_exact(self, ri, rj):
        fi, fj = fp(ri), fp(rj)
        assert cosine_similarity(fi, fj) == cosine_similarity(fj, fi)

    @given(readings_strategy, readings_strategy)
    def test_bounded(self, ri, rj):
        s = cosine_similarity(fp(ri), fp(rj))
        assert 0.0 <= s <= 1.0

    @given(readings_strategy, readings_strategy)
    def test_matches_naive_oracle(self, ri, rj):
        fi, fj = fp(ri), fp(rj)
        assert cosine_similarity(fi, fj) == pytest.approx(
            naive_similarity(fi, fj, 100.0), abs=1e-12
        )

    @given(readings_strategy)
    def test_prepare_norm_positive(self, r):
        assert prepare(fp(r), 100.0).norm > 0.0
