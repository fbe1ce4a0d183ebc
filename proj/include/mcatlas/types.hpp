#pragma once

#include <Eigen/Dense>

namespace mcatlas {

/// 2×M matrix of points in Ω = [0,1]².
using UvSet = Eigen::Matrix<double, 2, Eigen::Dynamic>;

/// 3×n matrix, one point per column.
using PointCloud = Eigen::Matrix3Xd;

using Vec3 = Eigen::Vector3d;

using LatentCode = Eigen::VectorXd;

}  // namespace mcatlas
