"""Exception types shared across the pipeline."""


class DenseGraspError(Exception):
    """Base class for all package errors."""


class MeshParseError(DenseGraspError):
    pass


class DegenerateMeshError(DenseGraspError):
    pass


class PlacementFailure(DenseGraspError):
    """Objects could not be placed on the table without overlap."""


class RenderError(DenseGraspError):
    pass


class SceneRejected(DenseGraspError):
    """Fewer valid grasps than requested were found within the sample budget."""

    def __init__(self, message, found=0):
        super().__init__(message)
        self.found = found


class OpenContactError(DenseGraspError):
    """No edge pixel was reached while marching from a grasp center."""


class NoExecutableGrasp(DenseGraspError):
    pass


class DatasetError(DenseGraspError):
    pass


class CorruptFileError(DatasetError):
    pass


class ValidationError(DatasetError):
    pass
