import numpy as np
from scipy.spatial.transform import Rotation

# a matrix is skew within this tolerance, its antisymmetric part is used up to ASYMMETRY_LIMIT
SKEW_TOLERANCE = 1e-9
ASYMMETRY_LIMIT = 1e-6
ORTHONORMAL_TOLERANCE = 1e-9


def hat(v):
    """
    Map a 3-vector to the skew-symmetric matrix S with S @ u == np.cross(v, u).

    Parameters
    ----------
    v array_like
        the 3-vector

    Returns
    -------
    the 3x3 skew-symmetric numpy array

    """
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S):
    """
    Inverse of the hat map.

    Parameters
    ----------
    S array_like
        a 3x3 matrix that is skew-symmetric up to floating point noise

    Returns
    -------
    the 3-vector v with hat(v) == S

    we extract the antisymmetric part of S when its symmetric part is small, and raise a ValueError when the
    symmetric part exceeds ASYMMETRY_LIMIT in Frobenius norm

    """
    S = np.asarray(S, dtype=float)
    symmetric_part = 0.5 * (S + S.T)
    asymmetry = np.linalg.norm(symmetric_part)
    if asymmetry > ASYMMETRY_LIMIT:
        raise ValueError(
            f"Matrix is not skew-symmetric (symmetric part {asymmetry:.3e} exceeds {ASYMMETRY_LIMIT:.0e}). "
            f"Please provide a skew-symmetric matrix."
        )
    if asymmetry > SKEW_TOLERANCE:
        S = S - symmetric_part
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def rotation_exp(omega, dt=1.0):
    """
    Rotation matrix obtained by rotating with constant angular velocity omega for dt seconds.

    Parameters
    ----------
    omega array_like
        the angular velocity in rad/s
    dt float
        the duration in s, non-negative

    Returns
    -------
    the 3x3 rotation matrix exp(hat(omega * dt))

    """
    if dt < 0:
        raise ValueError(f"Duration must be non-negative, got dt={dt}.")
    return Rotation.from_rotvec(np.asarray(omega, dtype=float) * dt).as_matrix()


def orthonormalize(R):
    """
    Project a near-rotation matrix onto SO(3) with the polar decomposition.
    """
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q


def is_rotation(R, tolerance=ORTHONORMAL_TOLERANCE):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    orthogonality = np.linalg.norm(R.T @ R - np.eye(3))
    return orthogonality < tolerance and abs(np.linalg.det(R) - 1.0) < tolerance


def rot_z(angle):
    return Rotation.from_euler("z", angle).as_matrix()


def yaw_of(R):
    """Heading angle of the body x-axis projected onto the world xy-plane."""
    return float(np.arctan2(R[1, 0], R[0, 0]))


def to_quaternion(R):
    """
    Unit quaternion (w, x, y, z) of a rotation matrix, with w >= 0.
    """
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    return -q if w < 0 else q


def from_quaternion(q):
    """Rotation matrix of a unit quaternion given as (w, x, y, z)."""
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def random_rotation(rng):
    return Rotation.random(random_state=rng).as_matrix()
