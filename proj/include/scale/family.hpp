#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace scale {

/// Transform families a block can draw from.
enum class Family { rotation, scale_x, scale_y, shear_x, rot180, hflip, crop };

inline constexpr std::array<Family, 7> kAllFamilies = {
    Family::rotation, Family::scale_x, Family::scale_y, Family::shear_x,
    Family::rot180,   Family::hflip,   Family::crop};

constexpr std::string_view to_string(Family f) noexcept {
  switch (f) {
    case Family::rotation: return "rotation";
    case Family::scale_x: return "scale-x";
    case Family::scale_y: return "scale-y";
    case Family::shear_x: return "shear-x";
    case Family::rot180: return "rot180";
    case Family::hflip: return "hflip";
    case Family::crop: return "crop";
  }
  return "?";
}

inline Family family_from_string(std::string_view name) {
  for (Family f : kAllFamilies)
    if (to_string(f) == name) return f;
  throw std::invalid_argument("unknown transform family '" + std::string(name) +
                              "'");
}

/// Families realized as a 3x3 matrix on normalized image coordinates.
constexpr bool is_affine(Family f) noexcept { return f != Family::crop; }

/// Families with a continuous range parameter a = alpha * eps.
constexpr bool is_continuous(Family f) noexcept {
  return f == Family::rotation || f == Family::scale_x ||
         f == Family::scale_y || f == Family::shear_x;
}

}  // namespace scale
