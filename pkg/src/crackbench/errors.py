"""Exception hierarchy.

Every error raised by the library derives from :class:`CrackbenchError`.
The ``category`` attribute drives the CLI exit code: ``"config"`` errors
exit with 1, ``"data"`` errors with 2.
"""

from __future__ import annotations


class CrackbenchError(Exception):
    category = "data"

    def __init__(self, message: str, *, source: str | None = None) -> None:
        self.message = message
        self.source = source
        super().__init__(f"{source}: {message}" if source else message)

    def with_source(self, source: str) -> "CrackbenchError":
        """Return a copy of this error carrying file/line context."""
        if self.source:
            return self
        err = type(self).__new__(type(self))
        CrackbenchError.__init__(err, self.message, source=source)
        return err


# annotations
class MalformedXml(CrackbenchError):
    pass


class MissingField(CrackbenchError):
    pass


class UnknownLabel(CrackbenchError):
    pass


class UnknownClassId(CrackbenchError):
    pass


class DegenerateBox(CrackbenchError):
    pass


class MalformedLine(CrackbenchError):
    pass


class OutOfRange(CrackbenchError):
    pass


class BoxOutOfFrame(CrackbenchError):
    pass


class ConfidenceOutOfRange(CrackbenchError):
    pass


class InvalidClassMap(CrackbenchError):
    category = "config"


# imageops
class CropTallerThanImage(CrackbenchError):
    pass


class CropSpecMismatch(CrackbenchError):
    pass


# datasetops
class OrphanImage(CrackbenchError):
    pass


class UnreadableFile(CrackbenchError):
    pass


class UnmappedClass(CrackbenchError):
    pass


class EmptyManifest(CrackbenchError):
    pass


# metrics
class MixedImageIds(CrackbenchError):
    pass


class NoGroundTruth(CrackbenchError):
    pass


class UnknownImageId(CrackbenchError):
    pass


class EmptySplit(CrackbenchError):
    pass


# report
class ConfigMismatch(CrackbenchError):
    pass


# synthgen
class InfeasibleSpec(CrackbenchError):
    pass


# cli
class ConfigInvalid(CrackbenchError):
    category = "config"
