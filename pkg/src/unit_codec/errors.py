"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures to distinct process exit statuses.
"""
from __future__ import annotations


class UnitCodecError(Exception):
    exit_code = 1


# audio-io
class UnsupportedFormat(UnitCodecError):
    exit_code = 10


class CorruptHeader(UnitCodecError):
    exit_code = 11


# dsp-features
class InputTooShort(UnitCodecError):
    exit_code = 12


class DegenerateBand(UnitCodecError):
    exit_code = 13


class BadMagic(UnitCodecError):
    exit_code = 14


class VersionMismatch(UnitCodecError):
    exit_code = 15


class TruncatedFile(UnitCodecError):
    exit_code = 16


class NonFiniteEntry(UnitCodecError):
    exit_code = 17


# pitch
class InsufficientVoicedFrames(UnitCodecError):
    exit_code = 20


# quantizer
class TooFewPoints(UnitCodecError):
    exit_code = 21


class NonFiniteInput(UnitCodecError):
    exit_code = 22


class DimensionMismatch(UnitCodecError):
    exit_code = 23


# streams
class LengthMismatch(UnitCodecError):
    exit_code = 24


class IncompatibleRates(UnitCodecError):
    exit_code = 25


# codec
class EmptyCorpus(UnitCodecError):
    exit_code = 26


class ModelMismatch(UnitCodecError):
    exit_code = 27


class ModelFingerprintMismatch(UnitCodecError):
    exit_code = 28


class TruncatedPayload(UnitCodecError):
    exit_code = 29


# vocoder
class FeatureKindMismatch(UnitCodecError):
    exit_code = 30


class VocabMismatch(UnitCodecError):
    exit_code = 31


class ConfigMismatch(UnitCodecError):
    exit_code = 32


# probing
class EmptySequence(UnitCodecError):
    exit_code = 33


class DegenerateLabels(UnitCodecError):
    exit_code = 34


class InsufficientData(UnitCodecError):
    exit_code = 35
