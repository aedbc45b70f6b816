"""IKEv2 IKE_SA_INIT construction, parsing and probing."""

from .codec import (
    DEFAULT_PROPOSALS,
    ConfigError,
    IkeMessage,
    IkeSaInitConfig,
    MalformedMessage,
    NotifyType,
    TransformSet,
    build_sa_init,
    config_from_message,
    encode_message,
    parse_message,
)
from .probe import ProbeError, ProbeOutcome, ResponseKind, RetryPolicy, probe

__all__ = [
    "DEFAULT_PROPOSALS",
    "ConfigError",
    "IkeMessage",
    "IkeSaInitConfig",
    "MalformedMessage",
    "NotifyType",
    "ProbeError",
    "ProbeOutcome",
    "ResponseKind",
    "RetryPolicy",
    "TransformSet",
    "build_sa_init",
    "config_from_message",
    "encode_message",
    "parse_message",
    "probe",
]
