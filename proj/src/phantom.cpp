#include "ivnac/phantom.hpp"

#include <cmath>

namespace ivnac {

bool Ellipse::contains(double y, double x) const {
  const double dy = y - cy, dx = x - cx;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double u = dx * ca + dy * sa;
  const double v = -dx * sa + dy * ca;
  return (u / rx) * (u / rx) + (v / ry) * (v / ry) <= 1.0;
}

void PhantomSpec::validate() const {
  if (size < 16) throw ContractError("phantom: size must be at least 16");
  if (n_ventricles < 0 || n_ventricles > 3)
    throw ContractError("phantom: ventricle count must lie in [0, 3]");
  const double jc = jitter_center, ja = jitter_axes;
  const double rmax = std::max(skull.ry, skull.rx) + ja;
  // skull inside FOV for the worst jitter
  if (skull.cy + jc + rmax > double(size) - 1 || skull.cy - jc - rmax < 0 ||
      skull.cx + jc + rmax > double(size) - 1 || skull.cx - jc - rmax < 0)
    throw ContractError("phantom: skull ellipse can leave the field of view");
  // brain inside the skull interior (brain shares the skull's jittered
  // center, so only axis jitters separate them)
  const double inner_ry = skull.ry - skull_thickness - jitter_thickness - ja;
  const double inner_rx = skull.rx - skull_thickness - jitter_thickness - ja;
  if (brain.ry + ja > inner_ry || brain.rx + ja > inner_rx)
    throw ContractError("phantom: brain ellipse can touch the skull ring");
  // ventricles inside the white-matter core
  const double core_ry = white_frac * (brain.ry - ja);
  const double core_rx = white_frac * (brain.rx - ja);
  if (n_ventricles > 0 &&
      (vent_offset + vent_rx + 1.0 > core_rx || vent_ry + 1.0 > core_ry))
    throw ContractError("phantom: ventricles can leave the white-matter core");
  if (hu_skull - jitter_hu_skull < 800 || hu_skull + jitter_hu_skull > 1200)
    throw ContractError("phantom: skull HU range must stay in [800, 1200]");
  if (hu_brain - jitter_hu_brain < 20 || hu_brain + jitter_hu_brain > 50)
    throw ContractError("phantom: brain HU range must stay in [20, 50]");
  if (hu_ventricle - jitter_hu_vent < 0 || hu_ventricle + jitter_hu_vent > 15)
    throw ContractError("phantom: ventricle HU range must stay in [0, 15]");
  if (act_gray <= act_white || act_white <= act_ventricle || act_ventricle < 0)
    throw ContractError("phantom: activity levels must be ordered gray > white > "
                        "ventricle >= 0");
}

PhantomSpec PhantomSpec::scaled_to(std::int64_t new_size) const {
  PhantomSpec s = *this;
  const double f = double(new_size) / double(size);
  s.size = new_size;
  auto scale_ellipse = [f](Ellipse& e) {
    e.cy = (e.cy + 0.5) * f - 0.5;
    e.cx = (e.cx + 0.5) * f - 0.5;
    e.ry *= f;
    e.rx *= f;
  };
  scale_ellipse(s.skull);
  scale_ellipse(s.brain);
  s.skull_thickness *= f;
  s.vent_ry *= f;
  s.vent_rx *= f;
  s.vent_offset *= f;
  s.jitter_center *= f;
  s.jitter_axes *= f;
  s.jitter_thickness *= f;
  s.validate();
  return s;
}

PhantomPair gen_phantom(const PhantomSpec& spec, std::uint64_t seed, std::int64_t id) {
  spec.validate();
  Rng rng(seed);
  auto jit = [&rng](double amp) { return amp * (2.0 * rng.uniform() - 1.0); };

  // one center jitter moves the whole head; axes/angle wobble independently
  const double dcy = jit(spec.jitter_center), dcx = jit(spec.jitter_center);
  Ellipse skull = spec.skull;
  skull.cy += dcy;
  skull.cx += dcx;
  skull.ry += jit(spec.jitter_axes);
  skull.rx += jit(spec.jitter_axes);
  skull.angle += jit(spec.jitter_angle);
  const double thickness = spec.skull_thickness + jit(spec.jitter_thickness);

  Ellipse inner = skull;
  inner.ry -= thickness;
  inner.rx -= thickness;

  Ellipse brain = spec.brain;
  brain.cy += dcy;
  brain.cx += dcx;
  brain.ry += jit(spec.jitter_axes);
  brain.rx += jit(spec.jitter_axes);
  brain.angle = skull.angle;

  Ellipse white = brain;
  white.ry *= spec.white_frac;
  white.rx *= spec.white_frac;

  const double hu_skull = spec.hu_skull + jit(spec.jitter_hu_skull);
  const double hu_brain = spec.hu_brain + jit(spec.jitter_hu_brain);
  const double hu_vent = spec.hu_ventricle + jit(spec.jitter_hu_vent);
  const double act_gray = spec.act_gray * (1.0 + jit(spec.jitter_act));
  const double act_white = spec.act_white * (1.0 + jit(spec.jitter_act));

  Ellipse vents[3];
  const double voff[3][2] = {{-1.0, -spec.vent_offset}, {-1.0, spec.vent_offset},
                             {spec.vent_offset, 0.0}};
  for (int i = 0; i < spec.n_ventricles; i++) {
    vents[i].cy = brain.cy + voff[i][0] + jit(0.4 * spec.jitter_center);
    vents[i].cx = brain.cx + voff[i][1] + jit(0.4 * spec.jitter_center);
    vents[i].ry = spec.vent_ry + jit(0.3 * spec.jitter_axes);
    vents[i].rx = spec.vent_rx + jit(0.2 * spec.jitter_axes);
    vents[i].angle = skull.angle + (i == 0 ? 0.25 : i == 1 ? -0.25 : 0.0);
  }

  PhantomPair pair;
  pair.id = id;
  pair.seed = seed;
  pair.activity = Image(spec.size, spec.size, 0.f);
  pair.ct_hu = Image(spec.size, spec.size, float(spec.hu_air));

  for (std::int64_t y = 0; y < spec.size; y++) {
    for (std::int64_t x = 0; x < spec.size; x++) {
      const double py = double(y), px = double(x);
      if (!skull.contains(py, px)) continue;
      bool in_vent = false;
      for (int i = 0; i < spec.n_ventricles; i++) in_vent = in_vent || vents[i].contains(py, px);
      if (!inner.contains(py, px)) {
        pair.ct_hu.at(y, x) = float(hu_skull);  // skull ring, zero uptake
      } else if (in_vent) {
        pair.ct_hu.at(y, x) = float(hu_vent);
        pair.activity.at(y, x) = float(spec.act_ventricle);
      } else if (brain.contains(py, px)) {
        pair.ct_hu.at(y, x) = float(hu_brain);
        pair.activity.at(y, x) =
            float(white.contains(py, px) ? act_white : act_gray);
      } else {
        // thin margin between brain ellipse and skull interior
        pair.ct_hu.at(y, x) = float(hu_brain);
        pair.activity.at(y, x) = float(act_gray);
      }
    }
  }
  return pair;
}

}  // namespace ivnac
