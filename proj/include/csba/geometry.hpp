#pragma once

#include <csba/types.hpp>

namespace csba {

/// Rotation matrix from an axis-angle vector (angle = norm).
Matrix3 rotation_from_axis_angle(const Vector3& omega);

/// Closest orthogonal matrix in Frobenius norm (polar factor). The sign of
/// each singular pair is fixed so the result is deterministic.
Matrix3 project_to_orthogonal(const Matrix3& m);

/// Closest rotation (determinant +1) in Frobenius norm.
Matrix3 project_to_rotation(const Matrix3& m);

/// Geodesic distance on SO(3), in radians.
double rotation_angle(const Matrix3& a, const Matrix3& b);

/// Polar factor of a tall r x 3 block: the matrix with orthonormal columns
/// closest to `block`. Throws if the block is rank deficient.
Matrix polar_factor(const Matrix& block);

/// Median of a copy of `values`; 0 for an empty input.
double median(std::vector<double> values);

}  // namespace csba
