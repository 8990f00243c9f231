"""scikit-learn style wrappers around the fusion methods.

Fusion has nothing to learn across samples, so ``fit`` runs the fusion on one
depth/normal pair and stores the result; ``transform`` returns it for new
inputs. Hyper-parameters are constructor arguments, which gives
``get_params``/``set_params``/``clone`` for free.
"""

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .camera import CameraIntrinsics
from .gradfield import DEFAULT_MIN_COS
from .grids import mask_from_normals
from .pipeline import FusionMethod, fuse
from .solver_ls import LsParams
from .solver_tgv import TgvParams
from .validation import check_vector_field


class _FusionEstimator(BaseEstimator):
    method = None

    def _params(self):
        return LsParams(alpha=self.alpha, beta=self.beta, cg_tol=self.cg_tol,
                        cg_max_iter=self.cg_max_iter)

    def _camera(self):
        cam = getattr(self, "camera", None)
        if cam is None or isinstance(cam, CameraIntrinsics):
            return cam
        return CameraIntrinsics.from_dict(cam)

    def _run(self, depth, normals, confidence, mask):
        normals = check_vector_field(normals, 3, "normals")
        if mask is None:
            mask = mask_from_normals(normals)
        d_hat, info = fuse(self.method, depth, normals, confidence, mask,
                           self._camera(), self._params(), return_info=True,
                           min_cos=self.min_cos)
        return d_hat, info, mask

    def fit(self, depth, normals, confidence=None, mask=None):
        """Fuse ``depth`` with ``normals`` and keep the result in ``depth_``.

        ``mask`` defaults to the pixels with a non-zero normal;
        ``confidence`` to 1 wherever depth is finite and positive.
        """
        self.depth_, self.info_, self.mask_ = self._run(depth, normals,
                                                        confidence, mask)
        self.n_iter_ = self.info_.get("n_iter")
        return self

    def transform(self, depth, normals, confidence=None, mask=None):
        """Fuse new inputs with the fitted settings; fitted state is kept."""
        check_is_fitted(self, "depth_")
        return self._run(depth, normals, confidence, mask)[0]

    def fit_transform(self, depth, normals, confidence=None, mask=None):
        return self.fit(depth, normals, confidence, mask).depth_


class OrthoFusion(_FusionEstimator):
    """Orthographic least-squares fusion; needs no camera."""

    method = FusionMethod.ORTHO

    def __init__(self, alpha=1.0, beta=1.0, cg_tol=1e-9, cg_max_iter=10000,
                 min_cos=DEFAULT_MIN_COS):
        self.alpha = alpha
        self.beta = beta
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter
        self.min_cos = min_cos


class NaiveFusion(_FusionEstimator):
    """Orthographic fusion on a resampled orthographic grid."""

    method = FusionMethod.NAIVE

    def __init__(self, camera=None, alpha=1.0, beta=1.0, cg_tol=1e-9,
                 cg_max_iter=10000, min_cos=DEFAULT_MIN_COS):
        self.camera = camera
        self.alpha = alpha
        self.beta = beta
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter
        self.min_cos = min_cos


class PGFusion(NaiveFusion):
    """Perspective least-squares fusion in log-depth."""

    method = FusionMethod.PG


class PTGVFusion(_FusionEstimator):
    """Perspective TGV fusion in log-depth."""

    method = FusionMethod.PTGV

    def __init__(self, camera=None, alpha=1.0, beta=1.0, lambda0=1e-3,
                 lambda1=1e-3, max_iter=2000, rel_change_tol=1e-8, cg_tol=1e-9,
                 cg_max_iter=10000, min_cos=DEFAULT_MIN_COS):
        self.camera = camera
        self.alpha = alpha
        self.beta = beta
        self.lambda0 = lambda0
        self.lambda1 = lambda1
        self.max_iter = max_iter
        self.rel_change_tol = rel_change_tol
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter
        self.min_cos = min_cos

    def _params(self):
        return TgvParams(alpha=self.alpha, beta=self.beta, lambda0=self.lambda0,
                         lambda1=self.lambda1, max_iter=self.max_iter,
                         rel_change_tol=self.rel_change_tol, cg_tol=self.cg_tol,
                         cg_max_iter=self.cg_max_iter)


ESTIMATORS = {FusionMethod.ORTHO: OrthoFusion, FusionMethod.NAIVE: NaiveFusion,
              FusionMethod.PG: PGFusion, FusionMethod.PTGV: PTGVFusion}
