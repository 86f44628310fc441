"""Pairwise-sign image watermarking.

A watermark bit is stored as an order constraint on a secret pair of
values: bit 0 means the first value stays at least a margin above the
second, bit 1 the reverse. Pairs can address raw pixels, the magnitude
spectrum of the luminance plane (translation-invariant), or the
magnitude spectrum of its log-polar resample (rotation-invariant).
Extraction is blind: it only compares the two values of each pair.
"""

from .core import (
    Registry,
    SecretKey,
    UserRecord,
    DetectionPolicy,
    as_bits,
    as_image,
    bits_to_str,
    complement,
    hamming_distance,
)
from .keygen import KeygenConfig, new_registry, register_user, persist_registry, load_registry
from .embedding import EmbedConfig, EmbedReport, embed
from .extraction import AttributionResult, extract_bits, attribute, attribute3, detect
from .attacks import AttackSpec, apply_attack, pgd_attack, renormalize
from .certify import Certificate, DeltaProfile, certified_bits, delta_profile, worst_case_adversary

__all__ = [
    "Registry",
    "SecretKey",
    "UserRecord",
    "DetectionPolicy",
    "as_bits",
    "as_image",
    "bits_to_str",
    "complement",
    "hamming_distance",
    "KeygenConfig",
    "new_registry",
    "register_user",
    "persist_registry",
    "load_registry",
    "EmbedConfig",
    "EmbedReport",
    "embed",
    "AttributionResult",
    "extract_bits",
    "attribute",
    "attribute3",
    "detect",
    "AttackSpec",
    "apply_attack",
    "pgd_attack",
    "renormalize",
    "Certificate",
    "DeltaProfile",
    "certified_bits",
    "delta_profile",
    "worst_case_adversary",
]
