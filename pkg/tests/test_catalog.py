import pytest

from qsmn.crypto import Domain, Family, Rating, family_suitability, recommend_schemes
from qsmn.crypto.catalog import all_profiles

# Literal transcription of the family comparison table, column by column.
TABLE_FAMILIES = {
    "Hash": ("High", "Moderate", "Small", "Moderate", "Moderate"),
    "Isogeny": ("Moderate", "Slow", "Small", "High", "Low"),
    "Lattice": ("High", "Moderate", "Moderate", "Moderate", "Moderate"),
    "Code": ("High", "Fast", "Moderate", "Moderate", "High"),
    "Multivariate": ("Moderate", "Slow", "Large", "High", "Low"),
}

TABLE_SCHEMES = {
    Domain.USER_AUTH_SIGNALING: ["Crystals-DILITHIUM", "Falcon", "Rainbow", "SIKE"],
    Domain.DATA_ENCRYPTION_PRIVACY: ["Kyber", "NTRU", "BIKE", "HQC"],
    Domain.NETWORK_MGMT_INFRA: ["Kyber", "NTRU", "Classic McEliece", "SIKE"],
    Domain.KEY_MANAGEMENT: ["Crystals-KYBER", "NTRU", "SABER", "BIKE"],
}


@pytest.mark.parametrize("family", list(TABLE_FAMILIES))
def test_family_profiles_golden(family):
    p = family_suitability(Family(family))
    got = (p.security_level, p.performance, p.key_size, p.impl_complexity, p.mobile_suitability)
    assert tuple(r.value for r in got) == TABLE_FAMILIES[family]


@pytest.mark.parametrize("domain", list(TABLE_SCHEMES))
def test_scheme_registry_golden(domain):
    assert list(recommend_schemes(domain)) == TABLE_SCHEMES[domain]


def test_spot_checks():
    code = family_suitability(Family.CODE)
    assert code.mobile_suitability is Rating.HIGH and code.performance is Rating.FAST
    mv = family_suitability(Family.MULTIVARIATE)
    assert mv.key_size is Rating.LARGE and mv.mobile_suitability is Rating.LOW
    lat = family_suitability(Family.LATTICE)
    assert lat.security_level is Rating.HIGH and lat.performance is Rating.MODERATE
    assert recommend_schemes(Domain.KEY_MANAGEMENT) == ("Crystals-KYBER", "NTRU", "SABER", "BIKE")


def test_exactly_five_families_and_read_only():
    assert [p.family.value for p in all_profiles()] == list(TABLE_FAMILIES)
    with pytest.raises(Exception):
        family_suitability(Family.CODE).performance = Rating.SLOW


def test_rating_ordinals():
    assert Rating.LOW.rank < Rating.MODERATE.rank < Rating.HIGH.rank
    assert Rating.SLOW.rank == 0 and Rating.LARGE.rank == 2
