#include "ciso/colocate/colocate.hpp"

#include <charconv>
#include <ostream>
#include <set>

#include "ciso/util/threads.hpp"

namespace ciso::geo {

std::vector<CoLocation> colocate(const data::Dataset& a, const data::Dataset& b, double radius_km) {
    if (a.records.empty() || b.records.empty()) throw std::invalid_argument("colocate needs two nonempty datasets");
    std::vector<LatLon> bpts;
    bpts.reserve(b.records.size());
    for (const auto& r : b.records) bpts.push_back({r.lat, r.lon});
    const BallTree tree(std::move(bpts), 32);

    std::vector<std::optional<Neighbor>> hits(a.records.size());
    util::parallel_for(a.records.size(), [&](std::size_t i) {
        hits[i] = tree.nearest_within({a.records[i].lat, a.records[i].lon}, radius_km);
    });
    std::vector<CoLocation> out;
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (!hits[i]) continue;
        out.push_back({i, hits[i]->index, a.records[i].id, b.records[hits[i]->index].id, hits[i]->distance_km});
    }
    return out;
}

void write_pairs_csv(const std::vector<CoLocation>& pairs, std::ostream& out) {
    out << "a_id,b_id,distance_km\n";
    char buf[64];
    for (const auto& p : pairs) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), p.distance_km);
        (void)ec;
        out << p.a_id << ',' << p.b_id << ',' << std::string(buf, ptr) << '\n';
    }
}

data::Dataset attach(const data::Dataset& a, const data::Dataset& b, const std::vector<CoLocation>& pairs,
                     const std::string& name_a, const std::string& name_b) {
    std::set<std::string> a_ids;
    for (const auto& r : a.records) a_ids.insert(r.id);
    for (const auto& r : b.records) {
        if (a_ids.count(r.id)) throw std::invalid_argument("record id '" + r.id + "' appears in both datasets");
    }
    const std::set<std::string> a_species(a.species.begin(), a.species.end());
    for (const auto& s : b.species) {
        if (a_species.count(s)) throw std::invalid_argument("species '" + s + "' appears in both rosters");
    }

    const std::size_t na = a.n_species(), nb = b.n_species();
    data::Dataset out;
    out.species = a.species;
    out.species.insert(out.species.end(), b.species.begin(), b.species.end());
    for (const auto& [name, mask] : a.group_masks) {
        auto m = mask;
        m.resize(na + nb, 0);
        out.group_masks[name] = std::move(m);
    }
    for (const auto& [name, mask] : b.group_masks) {
        std::vector<std::uint8_t> m(na, 0);
        m.insert(m.end(), mask.begin(), mask.end());
        out.group_masks[name] = std::move(m);
    }
    std::vector<std::uint8_t> side(na + nb, 0);
    std::fill(side.begin(), side.begin() + static_cast<std::ptrdiff_t>(na), 1);
    out.group_masks[name_a] = side;
    for (auto& v : side) v = !v;
    out.group_masks[name_b] = side;

    std::vector<const CoLocation*> pair_of(a.records.size(), nullptr);
    for (const auto& p : pairs) {
        if (p.a_index >= a.records.size() || p.b_index >= b.records.size()) {
            throw std::invalid_argument("co-location pair refers to a missing record");
        }
        pair_of[p.a_index] = &p;
    }
    const bool has_split = a.split.size() == a.records.size();
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        const auto* p = pair_of[i];
        if (has_split && !p && a.split[i] != data::Split::Train) continue;
        data::LocationRecord r = a.records[i];
        r.targets.resize(na + nb, 0.0);
        r.available.resize(na + nb, 0);
        if (p) {
            const auto& br = b.records[p->b_index];
            for (std::size_t c = 0; c < nb; ++c) {
                r.targets[na + c] = br.targets[c];
                r.available[na + c] = br.available[c];
            }
        }
        out.records.push_back(std::move(r));
        if (has_split) out.split.push_back(a.split[i]);
    }
    return out;
}

}  // namespace ciso::geo
