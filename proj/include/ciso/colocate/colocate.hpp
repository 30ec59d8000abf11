#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ciso/dataio/dataset.hpp"

namespace ciso::geo {

inline constexpr double kEarthRadiusKm = 6371.0;

struct LatLon {
    double lat = 0.0;  // degrees
    double lon = 0.0;  // degrees
};

double haversine_km(LatLon p, LatLon q);

struct Neighbor {
    std::size_t index = 0;
    double distance_km = 0.0;
};

// Ball tree under the great-circle metric. Each node stores a center point and
// the maximum haversine distance from it to any member; pruning relies on the
// triangle inequality of that metric.
class BallTree {
public:
    explicit BallTree(std::vector<LatLon> points, std::size_t leaf_size = 32);

    // All points with distance <= radius_km, ordered by index.
    std::vector<Neighbor> query_radius(LatLon q, double radius_km) const;
    // Closest point with distance <= radius_km; ties go to the smaller index.
    std::optional<Neighbor> nearest_within(LatLon q, double radius_km) const;

    std::size_t size() const { return points_.size(); }
    std::size_t leaf_count() const;
    // Checks the structural invariants (every point in exactly one leaf, radii
    // cover their members). Used by tests.
    bool validate() const;

private:
    struct Node {
        std::size_t begin = 0, end = 0;  // range into order_
        LatLon center;
        double radius_km = 0.0;
        int left = -1, right = -1;
    };
    int build(std::size_t begin, std::size_t end);

    std::vector<LatLon> points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    std::size_t leaf_size_;
};

struct CoLocation {
    std::size_t a_index = 0;
    std::size_t b_index = 0;
    std::string a_id;
    std::string b_id;
    double distance_km = 0.0;
};

// For every A location (in A order) the nearest B location within radius_km,
// if any. B locations may be claimed by several A locations.
std::vector<CoLocation> colocate(const data::Dataset& a, const data::Dataset& b, double radius_km = 1.0);

void write_pairs_csv(const std::vector<CoLocation>& pairs, std::ostream& out);

// Combined dataset over roster A ++ B. A records keep their env and split;
// paired records receive B's targets, the rest get B-side availability false.
// Validation and test records without a pair are dropped. Group masks from
// both inputs carry over, plus `name_a` / `name_b` masks marking each side.
data::Dataset attach(const data::Dataset& a, const data::Dataset& b, const std::vector<CoLocation>& pairs,
                     const std::string& name_a = "dataset_a", const std::string& name_b = "dataset_b");

}  // namespace ciso::geo
