#include <algorithm>
#include <cmath>
#include <numbers>

#include "ciso/colocate/colocate.hpp"

namespace ciso::geo {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
// Absorbs rounding in the triangle-inequality bound so pruning never drops a
// point the linear scan would accept.
constexpr double kPruneSlackKm = 1e-9;

}  // namespace

double haversine_km(LatLon p, LatLon q) {
    const double phi1 = p.lat * kDegToRad, phi2 = q.lat * kDegToRad;
    const double dphi = phi2 - phi1;
    const double dlambda = (q.lon - p.lon) * kDegToRad;
    const double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlambda / 2.0);
    double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    h = std::clamp(h, 0.0, 1.0);
    return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

BallTree::BallTree(std::vector<LatLon> points, std::size_t leaf_size)
    : points_(std::move(points)), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    if (points_.empty()) throw std::invalid_argument("BallTree needs at least one point");
    order_.resize(points_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    nodes_.reserve(2 * points_.size() / leaf_size_ + 2);
    build(0, points_.size());
}

int BallTree::build(std::size_t begin, std::size_t end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{begin, end, {}, 0.0, -1, -1});

    // Center: the member closest to the normalized 3-D centroid.
    double x = 0, y = 0, z = 0;
    for (std::size_t k = begin; k < end; ++k) {
        const auto& p = points_[order_[k]];
        const double phi = p.lat * kDegToRad, lam = p.lon * kDegToRad;
        x += std::cos(phi) * std::cos(lam);
        y += std::cos(phi) * std::sin(lam);
        z += std::sin(phi);
    }
    LatLon center = points_[order_[begin]];
    const double norm = std::sqrt(x * x + y * y + z * z);
    if (norm > 1e-12) {
        const LatLon mean{std::asin(std::clamp(z / norm, -1.0, 1.0)) / kDegToRad, std::atan2(y, x) / kDegToRad};
        double best = haversine_km(mean, center);
        for (std::size_t k = begin + 1; k < end; ++k) {
            const double d = haversine_km(mean, points_[order_[k]]);
            if (d < best) {
                best = d;
                center = points_[order_[k]];
            }
        }
    }
    double radius = 0.0;
    for (std::size_t k = begin; k < end; ++k) radius = std::max(radius, haversine_km(center, points_[order_[k]]));
    nodes_[id].center = center;
    nodes_[id].radius_km = radius;

    if (end - begin <= leaf_size_) return id;

    double lat_lo = 1e300, lat_hi = -1e300, lon_lo = 1e300, lon_hi = -1e300;
    for (std::size_t k = begin; k < end; ++k) {
        const auto& p = points_[order_[k]];
        lat_lo = std::min(lat_lo, p.lat);
        lat_hi = std::max(lat_hi, p.lat);
        lon_lo = std::min(lon_lo, p.lon);
        lon_hi = std::max(lon_hi, p.lon);
    }
    const bool by_lat = (lat_hi - lat_lo) >= (lon_hi - lon_lo);
    const std::size_t mid = begin + (end - begin) / 2;
    auto key = [&](std::size_t i) { return by_lat ? points_[i].lat : points_[i].lon; };
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t i, std::size_t j) {
                         const double ki = key(i), kj = key(j);
                         return ki < kj || (ki == kj && i < j);
                     });
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

std::vector<Neighbor> BallTree::query_radius(LatLon q, double radius_km) const {
    std::vector<Neighbor> out;
    std::vector<int> stack{0};
    while (!stack.empty()) {
        const Node& n = nodes_[stack.back()];
        stack.pop_back();
        if (haversine_km(q, n.center) - n.radius_km > radius_km + kPruneSlackKm) continue;
        if (n.left < 0) {
            for (std::size_t k = n.begin; k < n.end; ++k) {
                const std::size_t i = order_[k];
                const double d = haversine_km(q, points_[i]);
                if (d <= radius_km) out.push_back({i, d});
            }
        } else {
            stack.push_back(n.left);
            stack.push_back(n.right);
        }
    }
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.index < y.index; });
    return out;
}

std::optional<Neighbor> BallTree::nearest_within(LatLon q, double radius_km) const {
    std::optional<Neighbor> best;
    double bound = radius_km;
    std::vector<int> stack{0};
    while (!stack.empty()) {
        const Node& n = nodes_[stack.back()];
        stack.pop_back();
        const double dc = haversine_km(q, n.center);
        if (dc - n.radius_km > bound + kPruneSlackKm) continue;
        if (n.left < 0) {
            for (std::size_t k = n.begin; k < n.end; ++k) {
                const std::size_t i = order_[k];
                const double d = haversine_km(q, points_[i]);
                if (d > radius_km) continue;
                if (!best || d < best->distance_km || (d == best->distance_km && i < best->index)) {
                    best = Neighbor{i, d};
                    bound = d;
                }
            }
        } else {
            // Visit the nearer child first so the bound tightens early.
            const double dl = haversine_km(q, nodes_[n.left].center);
            const double dr = haversine_km(q, nodes_[n.right].center);
            if (dl <= dr) {
                stack.push_back(n.right);
                stack.push_back(n.left);
            } else {
                stack.push_back(n.left);
                stack.push_back(n.right);
            }
        }
    }
    return best;
}

std::size_t BallTree::leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.left < 0; }));
}

bool BallTree::validate() const {
    std::vector<int> seen(points_.size(), 0);
    for (const auto& n : nodes_) {
        for (std::size_t k = n.begin; k < n.end; ++k) {
            if (haversine_km(n.center, points_[order_[k]]) > n.radius_km + 1e-12) return false;
            if (n.left < 0) ++seen[order_[k]];
        }
    }
    return std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
}

}  // namespace ciso::geo
