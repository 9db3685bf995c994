#include <algorithm>
#include <cmath>

#include "dva/kernels/kernels.hpp"

namespace dva::kernels {

namespace {

double rectangle_sdf(const double* p, double px, double py, double* grad) {
  const double cx = p[0], cy = p[1], angle = p[2], hx = p[3], hy = p[4];
  const double c = std::cos(angle), s = std::sin(angle);
  const double dx = px - cx, dy = py - cy;
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  const double qx = std::abs(lx) - hx;
  const double qy = std::abs(ly) - hy;
  const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
  const double outside = std::sqrt(ox * ox + oy * oy);
  const double inside = std::min(std::max(qx, qy), 0.0);
  if (grad != nullptr) {
    // d(distance)/d(qx, qy)
    double gqx = 0.0, gqy = 0.0;
    if (outside > 0.0) {
      gqx = ox / outside;
      gqy = oy / outside;
    } else if (qx >= qy) {
      gqx = 1.0;
    } else {
      gqy = 1.0;
    }
    const double sx = lx >= 0.0 ? 1.0 : -1.0;
    const double sy = ly >= 0.0 ? 1.0 : -1.0;
    const double glx = gqx * sx, gly = gqy * sy;
    // lx, ly as functions of (dx, dy, angle); dx = px - cx.
    const double gdx = glx * c - gly * s;
    const double gdy = glx * s + gly * c;
    grad[0] = -gdx;
    grad[1] = -gdy;
    grad[2] = glx * ly - gly * lx;
    grad[3] = -gqx;
    grad[4] = -gqy;
  }
  return outside + inside;
}

double capsule_sdf(const double* p, double px, double py, double* grad) {
  const double ax = p[0], ay = p[1], bx = p[2], by = p[3], r = p[4];
  const double bax = bx - ax, bay = by - ay;
  const double pax = px - ax, pay = py - ay;
  const double len2 = bax * bax + bay * bay;
  const double t = std::clamp((pax * bax + pay * bay) / len2, 0.0, 1.0);
  const double ex = pax - t * bax, ey = pay - t * bay;
  const double norm = std::sqrt(ex * ex + ey * ey);
  if (grad != nullptr) {
    // The closest-point parameter is stationary (or clamped), so only the
    // explicit dependence on the endpoints survives.
    double nx = 0.0, ny = 0.0;
    if (norm > 0.0) {
      nx = ex / norm;
      ny = ey / norm;
    }
    grad[0] = -nx * (1.0 - t);
    grad[1] = -ny * (1.0 - t);
    grad[2] = -nx * t;
    grad[3] = -ny * t;
    grad[4] = -1.0;
  }
  return norm - r;
}

double disk_sdf(const double* p, double px, double py, double* grad) {
  const double dx = px - p[0], dy = py - p[1];
  const double norm = std::sqrt(dx * dx + dy * dy);
  if (grad != nullptr) {
    double nx = 0.0, ny = 0.0;
    if (norm > 0.0) {
      nx = dx / norm;
      ny = dy / norm;
    }
    grad[0] = -nx;
    grad[1] = -ny;
    grad[2] = -1.0;
    grad[3] = 0.0;
    grad[4] = 0.0;
  }
  return norm - p[2];
}

}  // namespace

double signed_distance(PrimitiveKind kind, const double* params, double px,
                       double py) {
  switch (kind) {
    case PrimitiveKind::rectangle:
      return rectangle_sdf(params, px, py, nullptr);
    case PrimitiveKind::capsule:
      return capsule_sdf(params, px, py, nullptr);
    case PrimitiveKind::disk:
      return disk_sdf(params, px, py, nullptr);
  }
  return 0.0;
}

double signed_distance_grad(PrimitiveKind kind, const double* params,
                            double px, double py, double* grad) {
  switch (kind) {
    case PrimitiveKind::rectangle:
      return rectangle_sdf(params, px, py, grad);
    case PrimitiveKind::capsule:
      return capsule_sdf(params, px, py, grad);
    case PrimitiveKind::disk:
      return disk_sdf(params, px, py, grad);
  }
  return 0.0;
}

}  // namespace dva::kernels
