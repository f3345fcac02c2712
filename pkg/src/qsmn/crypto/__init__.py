from .catalog import (
    Domain,
    Family,
    FamilyProfile,
    Rating,
    SCHEME_REGISTRY,
    family_suitability,
    recommend_schemes,
)
from .lwe import (
    LWE_256,
    TOY_4,
    KemCiphertext,
    KemError,
    KemKeyPair,
    KemPublicKey,
    KemSecretKey,
    LweParameters,
    ParamsMismatch,
    SharedSecret,
    kem_decapsulate,
    kem_encapsulate,
    kem_keygen,
)
from .ots import (
    KeyReuseError,
    OtsError,
    OtsKeyPair,
    OtsKeyPool,
    OtsPublicKey,
    OtsSignature,
    PoolExhausted,
    TrustAnchor,
    ots_sign,
    ots_verify,
)
from .primitives import (
    AeadEnvelope,
    AeadError,
    CryptoError,
    SymmetricKey,
    aead_open,
    aead_seal,
    classical_stub_keypair,
    classical_stub_shared,
    expand,
    frame,
    hybrid_combine,
    kdf,
)
