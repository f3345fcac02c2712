"""Read-only PQC family ratings and per-domain scheme recommendations."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType


class Family(Enum):
    HASH = "Hash"
    ISOGENY = "Isogeny"
    LATTICE = "Lattice"
    CODE = "Code"
    MULTIVARIATE = "Multivariate"


class Rating(Enum):
    LOW = "Low"
    SLOW = "Slow"
    SMALL = "Small"
    MODERATE = "Moderate"
    HIGH = "High"
    FAST = "Fast"
    LARGE = "Large"

    @property
    def rank(self) -> int:
        """Ordinal position: 0 for Low/Slow/Small, 1 for Moderate, 2 for High/Fast/Large."""
        if self is Rating.MODERATE:
            return 1
        return 2 if self in (Rating.HIGH, Rating.FAST, Rating.LARGE) else 0


class Domain(Enum):
    USER_AUTH_SIGNALING = "User authentication and signaling security"
    DATA_ENCRYPTION_PRIVACY = "Data encryption and privacy preservation"
    NETWORK_MGMT_INFRA = "Network management and infrastructure security"
    KEY_MANAGEMENT = "Key management"


@dataclass(frozen=True)
class FamilyProfile:
    family: Family
    security_level: Rating
    performance: Rating
    key_size: Rating
    impl_complexity: Rating
    mobile_suitability: Rating


_R = Rating
_PROFILES = MappingProxyType({
    Family.HASH: FamilyProfile(Family.HASH, _R.HIGH, _R.MODERATE, _R.SMALL, _R.MODERATE, _R.MODERATE),
    Family.ISOGENY: FamilyProfile(Family.ISOGENY, _R.MODERATE, _R.SLOW, _R.SMALL, _R.HIGH, _R.LOW),
    Family.LATTICE: FamilyProfile(Family.LATTICE, _R.HIGH, _R.MODERATE, _R.MODERATE, _R.MODERATE, _R.MODERATE),
    Family.CODE: FamilyProfile(Family.CODE, _R.HIGH, _R.FAST, _R.MODERATE, _R.MODERATE, _R.HIGH),
    Family.MULTIVARIATE: FamilyProfile(Family.MULTIVARIATE, _R.MODERATE, _R.SLOW, _R.LARGE, _R.HIGH, _R.LOW),
})

_SCHEMES = MappingProxyType({
    Domain.USER_AUTH_SIGNALING: ("Crystals-DILITHIUM", "Falcon", "Rainbow", "SIKE"),
    Domain.DATA_ENCRYPTION_PRIVACY: ("Kyber", "NTRU", "BIKE", "HQC"),
    Domain.NETWORK_MGMT_INFRA: ("Kyber", "NTRU", "Classic McEliece", "SIKE"),
    Domain.KEY_MANAGEMENT: ("Crystals-KYBER", "NTRU", "SABER", "BIKE"),
})

SCHEME_REGISTRY = _SCHEMES


def family_suitability(family: Family) -> FamilyProfile:
    return _PROFILES[Family(family)]


def recommend_schemes(domain: Domain) -> tuple[str, ...]:
    """Ordered candidate schemes (Scheme 1..4) for a network domain."""
    return _SCHEMES[Domain(domain)]


def all_profiles() -> tuple[FamilyProfile, ...]:
    return tuple(_PROFILES[f] for f in Family)
