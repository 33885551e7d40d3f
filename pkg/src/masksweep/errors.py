"""Exception types raised by the reconstruction pipeline.

Errors that identify a specific instance carry its id so CLI diagnostics
can point at the offending mask.
"""


class MaskSweepError(Exception):
    """Base class for all package errors."""


class MissingFile(MaskSweepError):
    def __init__(self, path, instance_id=None):
        self.path = str(path)
        self.instance_id = instance_id
        where = f" (instance {instance_id})" if instance_id is not None else ""
        super().__init__(f"missing file: {self.path}{where}")


class DimensionMismatch(MaskSweepError):
    def __init__(self, instance_id, got, expected):
        self.instance_id = instance_id
        super().__init__(
            f"instance {instance_id}: mask is {got[0]}x{got[1]}, "
            f"scene is {expected[0]}x{expected[1]}"
        )


class UnknownClassString(MaskSweepError):
    def __init__(self, instance_id, value):
        self.instance_id = instance_id
        super().__init__(f"instance {instance_id}: unknown class {value!r}")


class EmptyMask(MaskSweepError):
    def __init__(self, instance_id):
        self.instance_id = instance_id
        super().__init__(f"instance {instance_id}: mask has no foreground pixels")


class UnknownLabelValue(MaskSweepError):
    def __init__(self, value):
        self.value = int(value)
        super().__init__(
            f"combined label image contains value {value}, expected one of "
            "{0, 40, 100, 150, 200}"
        )


class ClassMismatch(MaskSweepError):
    pass


class NoBodies(MaskSweepError):
    pass


class DegenerateMask(MaskSweepError):
    def __init__(self, instance_id, detail=""):
        self.instance_id = instance_id
        msg = f"instance {instance_id}: mask too thin to fit a profile"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class NotQuadrilateral(MaskSweepError):
    def __init__(self, instance_id, detail=""):
        self.instance_id = instance_id
        msg = f"instance {instance_id}: outline does not simplify to 4 corners"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class EdgeOnPlane(MaskSweepError):
    pass


class NoContact(MaskSweepError):
    def __init__(self, instance_id):
        self.instance_id = instance_id
        super().__init__(
            f"instance {instance_id}: handle mask does not touch the host silhouette"
        )


class UnknownPart(MaskSweepError):
    def __init__(self, part_id):
        self.part_id = part_id
        super().__init__(f"no part with id {part_id}")


class NonPositiveFactor(MaskSweepError):
    def __init__(self, factor):
        super().__init__(f"scale factor must be > 0, got {factor}")


class OffPlaneAxis(MaskSweepError):
    pass


class UnsupportedVersion(MaskSweepError):
    def __init__(self, version):
        super().__init__(f"unsupported model file version {version!r}")


class OffscreenObject(MaskSweepError):
    pass
