"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class CCoTEmoError(Exception):
    """Base class for all pipeline errors."""


# audio_io
class AudioError(CCoTEmoError):
    pass


class UnsupportedFormat(AudioError):
    pass


class CorruptHeader(AudioError):
    pass


class EmptyAudio(AudioError):
    pass


class BadFrameSpec(AudioError, ValueError):
    pass


# calibration
class EmptyCorpus(CCoTEmoError):
    pass


class MissingFeature(CCoTEmoError, KeyError):
    pass


# text / relations backends
class BackendUnavailable(CCoTEmoError):
    pass


class MalformedRelationResponse(CCoTEmoError):
    pass


# emotion graph
class InconsistentComponents(CCoTEmoError, ValueError):
    pass


class BudgetInfeasible(CCoTEmoError):
    pass


# prompting
class InvalidAblation(CCoTEmoError, ValueError):
    pass


class PromptStructureError(CCoTEmoError, ValueError):
    pass


# model client
class ClientError(CCoTEmoError):
    pass


class RemoteFailure(ClientError):
    pass


class AuthError(ClientError):
    pass


class Timeout(ClientError):
    pass


class ReplayMiss(ClientError):
    """Replay store has no recording for the request key."""


class NetworkDisabled(ClientError):
    """Raised when a network call is attempted in offline mode."""


class ParseFailure(CCoTEmoError):
    pass


# evaluation / manifests
class ManifestError(CCoTEmoError):
    pass


class DuplicateId(ManifestError):
    pass


class UnknownLabel(ManifestError):
    pass


class MissingAudio(ManifestError):
    pass


class MissingTranscript(ManifestError):
    pass


class MissingSessionKey(ManifestError):
    pass


class ConfigError(CCoTEmoError):
    pass
