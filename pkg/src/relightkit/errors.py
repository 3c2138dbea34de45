"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A caller-supplied parameter violates its documented range or shape."""


class BehindCameraError(ValueError):
    """A 3D point with z <= 0 cannot be projected onto the image plane."""


class StageError(RuntimeError):
    """A relighting pipeline stage failed; carries the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class KittiParseError(ValueError):
    """A KITTI tracking label file contains a malformed line."""

    def __init__(self, path, line_number, message):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = str(path)
        self.line_number = line_number
