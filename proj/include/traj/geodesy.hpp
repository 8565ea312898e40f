#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "traj/errors.hpp"

namespace traj {

/// Planar position in meters (easting x, northing y).
struct PlanePoint {
    double x = 0.0;
    double y = 0.0;
};

namespace geodesy {

inline constexpr double kEarthRadiusM = 6378137.0; // equatorial radius
inline constexpr double kFalseEastingM = 500000.0;
inline constexpr double kMaxLatitudeDeg = 85.0;    // Mercator y diverges toward the poles
inline constexpr double kMaxLongitudeDeg = 180.0;

/// Geographic position in degrees.
struct GeoPoint {
    double latitude_deg = 0.0;  // must stay within [-85, 85]
    double longitude_deg = 0.0; // must stay within [-180, 180]
};

/// Spherical-Mercator projection to planar meters:
///   x = R * lon_rad + 500000
///   y = R * ln(tan(pi/4 + lat_rad/2))
/// Monotone in both arguments; throws DomainError outside the admissible box.
inline PlanePoint project(const GeoPoint& p) {
    // Negated comparisons so NaN fails the check too.
    if (!(std::abs(p.latitude_deg) <= kMaxLatitudeDeg)) {
        throw DomainError("geodesy: latitude " + std::to_string(p.latitude_deg) +
                          " deg outside [-85, 85]");
    }
    if (!(std::abs(p.longitude_deg) <= kMaxLongitudeDeg)) {
        throw DomainError("geodesy: longitude " + std::to_string(p.longitude_deg) +
                          " deg outside [-180, 180]");
    }
    const double lat_rad = p.latitude_deg * std::numbers::pi / 180.0;
    const double lon_rad = p.longitude_deg * std::numbers::pi / 180.0;
    PlanePoint out;
    out.x = kEarthRadiusM * lon_rad + kFalseEastingM;
    // asinh(tan(lat)) == ln(tan(pi/4 + lat/2)); the asinh form is exact at the
    // equator and exactly odd in latitude.
    out.y = kEarthRadiusM * std::asinh(std::tan(lat_rad));
    if (!std::isfinite(out.x) || !std::isfinite(out.y)) {
        throw DomainError("geodesy: projection produced a non-finite coordinate");
    }
    return out;
}

/// Rebase a track so it starts at the origin. Returns the shifted points and
/// the offset (the original first point); adding the offset back reproduces
/// the inputs for route-scale magnitudes.
inline std::pair<std::vector<PlanePoint>, PlanePoint>
remove_offset(const std::vector<PlanePoint>& points) {
    if (points.empty()) {
        throw InvalidInput("geodesy: remove_offset requires a non-empty sequence");
    }
    const PlanePoint offset = points.front();
    std::vector<PlanePoint> shifted;
    shifted.reserve(points.size());
    shifted.push_back(PlanePoint{0.0, 0.0});
    for (std::size_t i = 1; i < points.size(); ++i) {
        shifted.push_back(PlanePoint{points[i].x - offset.x, points[i].y - offset.y});
    }
    return {std::move(shifted), offset};
}

} // namespace geodesy
} // namespace traj
