"""Authentication and key agreement between UE and core, with key forwarding to the BS."""

from .handshake import (
    BaseStation,
    CoreNetwork,
    CorePhase,
    CoreSession,
    ForwardingError,
    ForwardStatus,
    HandshakeError,
    HandshakeOutcome,
    KeyForwardRecord,
    ProtocolStateError,
    UeHandshake,
    UeIdentity,
    UePhase,
    compute_res,
    core_forward_session_key,
    run_handshake,
    ue_handle_challenge,
    ue_handle_reject,
    ue_initiate,
)
from .session import (
    ReplayError,
    RekeyRequired,
    SessionError,
    SessionKeyContext,
    decrypt_app_message,
    encrypt_app_message,
    subscriber_label,
)
from .wire import (
    STEP_NAMES,
    AppData,
    AuthChallenge,
    AuthReject,
    AuthRequest,
    AuthResponse,
    ConcealedIdentity,
    KeyForward,
    MsgType,
    WireError,
    flip_field_bit,
    decode_message,
    describe,
    encode_message,
)
