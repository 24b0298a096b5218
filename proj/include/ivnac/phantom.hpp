#pragma once

#include <cstdint>

#include "ivnac/image.hpp"

namespace ivnac {

struct Ellipse {
  double cy = 0, cx = 0;   // center, pixel coordinates
  double ry = 0, rx = 0;   // semi-axes, pixels
  double angle = 0;        // rotation, radians

  bool contains(double y, double x) const;
};

// Parametric head phantom: elliptical skull ring around brain tissue with a
// lower-uptake white-matter core and 0-3 near-zero-uptake ventricles. Every
// per-sample quantity is the base value plus a seeded jitter draw.
struct PhantomSpec {
  std::int64_t size = 64;

  Ellipse skull{31.5, 31.5, 26.0, 21.5};  // outer skull boundary
  double skull_thickness = 2.5;
  Ellipse brain{31.5, 31.5, 19.5, 15.5};  // must fit inside the skull interior
  double white_frac = 0.62;  // white-matter core as a fraction of the brain axes
  int n_ventricles = 2;
  double vent_ry = 5.0, vent_rx = 2.0, vent_offset = 4.5;

  // HU levels (air fixed at -1000)
  double hu_air = -1000.0;
  double hu_skull = 1000.0;  // jittered within [800, 1200]
  double hu_brain = 35.0;    // jittered within [20, 50]
  double hu_ventricle = 8.0; // jittered within [0, 15]

  // activity levels (arbitrary units)
  double act_gray = 1.0;
  double act_white = 0.55;
  double act_ventricle = 0.02;

  // jitter amplitudes (uniform, symmetric)
  double jitter_center = 1.5;
  double jitter_axes = 1.5;
  double jitter_thickness = 0.5;
  double jitter_angle = 0.12;
  double jitter_hu_skull = 180.0;
  double jitter_hu_brain = 12.0;
  double jitter_hu_vent = 6.0;
  double jitter_act = 0.08;

  // Checks the containment chain (ventricles in brain in skull in FOV) for
  // the worst-case jitter; throws ContractError when violated.
  void validate() const;

  // Rescales every pixel-unit quantity from the default 64-px grid.
  PhantomSpec scaled_to(std::int64_t new_size) const;
};

// Co-registered activity / CT pair from one seeded draw.
struct PhantomPair {
  Image activity;
  Image ct_hu;
  std::int64_t id = 0;
  std::uint64_t seed = 0;
};

PhantomPair gen_phantom(const PhantomSpec& spec, std::uint64_t seed, std::int64_t id = 0);

}  // namespace ivnac
