#include "ciso/dataio/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace ciso::data {

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val" || s == "valid" || s == "validation") return Split::Val;
    if (s == "test") return Split::Test;
    throw SchemaError("unknown split tag '" + s + "'");
}

std::size_t Dataset::species_index(const std::string& name) const {
    for (std::size_t i = 0; i < species.size(); ++i) {
        if (species[i] == name) return i;
    }
    throw std::out_of_range("unknown species '" + name + "'");
}

std::vector<std::size_t> Dataset::indices_of(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i) {
        if (split[i] == s) out.push_back(i);
    }
    return out;
}

bool Dataset::is_binary() const {
    for (const auto& r : records) {
        for (std::size_t c = 0; c < r.targets.size(); ++c) {
            if (r.available[c] && r.targets[c] != 0.0 && r.targets[c] != 1.0) return false;
        }
    }
    return true;
}

SchemaConfig load_schema_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open schema config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("schema config '" + path + "': " + e.what());
    }
    SchemaConfig cfg;
    if (j.contains("species")) cfg.species = j.at("species").get<std::vector<std::string>>();
    if (j.contains("groups")) cfg.groups = j.at("groups").get<std::map<std::string, std::vector<std::string>>>();
    return cfg;
}

void save_schema_config(const SchemaConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write schema config '" + path + "'");
    nlohmann::json j;
    j["species"] = cfg.species;
    j["groups"] = cfg.groups;
    out << j.dump(2) << '\n';
}

SchemaConfig schema_of(const Dataset& ds) {
    SchemaConfig cfg;
    cfg.species = ds.species;
    for (const auto& [name, mask] : ds.group_masks) {
        auto& members = cfg.groups[name];
        for (std::size_t c = 0; c < mask.size(); ++c) {
            if (mask[c]) members.push_back(ds.species[c]);
        }
    }
    return cfg;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out.push_back('"');
        out.push_back(ch);
    }
    out.push_back('"');
    return out;
}

bool parse_double(const std::string& text, double& out) {
    std::size_t b = 0, e = text.size();
    while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b == e) return false;
    const char* first = text.data() + b;
    const char* last = text.data() + e;
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

bool is_blank(const std::string& s) {
    for (char ch : s) {
        if (!std::isspace(static_cast<unsigned char>(ch))) return false;
    }
    return true;
}

}  // namespace

Dataset read_dataset(std::istream& in, const SchemaConfig& cfg, LoadReport* report) {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("empty dataset file");
    const auto header = split_csv_line(line);

    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;

    std::vector<std::string> missing;
    for (const char* req : {"id", "lat", "lon"}) {
        if (!col.count(req)) missing.push_back(req);
    }
    std::vector<std::size_t> env_cols;
    for (std::size_t k = 0;; ++k) {
        auto it = col.find("env_" + std::to_string(k));
        if (it == col.end()) break;
        env_cols.push_back(it->second);
    }
    std::vector<std::string> header_species;
    std::vector<std::size_t> species_cols;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i].rfind("sp_", 0) == 0) {
            header_species.push_back(header[i].substr(3));
            species_cols.push_back(i);
        }
    }
    if (header_species.empty()) missing.push_back("sp_<name>");
    if (!missing.empty()) {
        std::string msg = "missing required columns:";
        for (const auto& m : missing) msg += " " + m;
        throw SchemaError(msg);
    }
    for (const auto& [name, idx] : col) {
        (void)idx;
        if (name.rfind("env_", 0) == 0 && name.size() > 4) {
            const auto k = name.substr(4);
            if (std::all_of(k.begin(), k.end(), ::isdigit) && std::stoul(k) >= env_cols.size()) {
                throw SchemaError("env columns are not contiguous from env_0: found " + name);
            }
        }
    }

    Dataset ds;
    std::vector<std::size_t> roster_to_col;
    if (cfg.species.empty()) {
        ds.species = header_species;
        roster_to_col = species_cols;
    } else {
        const std::set<std::string> a(header_species.begin(), header_species.end());
        const std::set<std::string> b(cfg.species.begin(), cfg.species.end());
        if (a != b || cfg.species.size() != b.size() || header_species.size() != a.size()) {
            std::string msg = "species roster mismatch between header and config";
            for (const auto& s : a) {
                if (!b.count(s)) msg += "; header-only '" + s + "'";
            }
            for (const auto& s : b) {
                if (!a.count(s)) msg += "; config-only '" + s + "'";
            }
            throw SchemaError(msg);
        }
        ds.species = cfg.species;
        for (const auto& name : ds.species) {
            for (std::size_t i = 0; i < header_species.size(); ++i) {
                if (header_species[i] == name) roster_to_col.push_back(species_cols[i]);
            }
        }
    }
    for (const auto& [group, members] : cfg.groups) {
        std::vector<std::uint8_t> mask(ds.species.size(), 0);
        for (const auto& m : members) {
            try {
                mask[ds.species_index(m)] = 1;
            } catch (const std::out_of_range&) {
                throw SchemaError("group '" + group + "' names unknown species '" + m + "'");
            }
        }
        ds.group_masks[group] = std::move(mask);
    }

    const auto split_it = col.find("split");
    const bool has_split = split_it != col.end();
    LoadReport local;
    local.had_split_column = has_split;
    std::set<std::string> seen_ids;

    while (std::getline(in, line)) {
        if (is_blank(line)) continue;
        ++local.rows_read;
        const auto cells = split_csv_line(line);
        const std::string id = col["id"] < cells.size() ? cells[col["id"]] : std::string();
        if (cells.size() != header.size()) {
            throw RowError(id, "expected " + std::to_string(header.size()) + " cells, got " +
                                   std::to_string(cells.size()));
        }
        if (!seen_ids.insert(id).second) throw RowError(id, "duplicate id");
        LocationRecord rec;
        rec.id = id;
        if (!parse_double(cells[col["lat"]], rec.lat) || !parse_double(cells[col["lon"]], rec.lon)) {
            throw RowError(id, "non-numeric coordinate");
        }
        if (!(rec.lat >= -90.0 && rec.lat <= 90.0 && rec.lon >= -180.0 && rec.lon <= 180.0)) {
            ++local.rejected_coordinates;
            continue;
        }
        rec.env.resize(env_cols.size());
        for (std::size_t k = 0; k < env_cols.size(); ++k) {
            const auto& cell = cells[env_cols[k]];
            if (is_blank(cell)) {
                rec.env[k] = std::numeric_limits<double>::quiet_NaN();
            } else if (!parse_double(cell, rec.env[k]) || !std::isfinite(rec.env[k])) {
                throw RowError(id, "non-numeric value '" + cell + "' in env_" + std::to_string(k));
            }
        }
        rec.targets.assign(ds.species.size(), 0.0);
        rec.available.assign(ds.species.size(), 0);
        for (std::size_t c = 0; c < ds.species.size(); ++c) {
            const auto& cell = cells[roster_to_col[c]];
            if (is_blank(cell)) continue;
            double v = 0.0;
            if (!parse_double(cell, v) || !(v >= 0.0 && v <= 1.0)) {
                throw RowError(id, "target for '" + ds.species[c] + "' must be in [0,1], got '" + cell + "'");
            }
            rec.targets[c] = v;
            rec.available[c] = 1;
        }
        if (has_split) {
            const auto& tag = cells[split_it->second];
            try {
                ds.split.push_back(split_from_string(tag));
            } catch (const SchemaError& e) {
                throw RowError(id, e.what());
            }
        }
        ds.records.push_back(std::move(rec));
    }
    if (report) *report = local;
    return ds;
}

Dataset load_dataset(const std::string& path, const SchemaConfig& cfg, LoadReport* report) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open dataset '" + path + "'");
    return read_dataset(in, cfg, report);
}

namespace {

std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace

void write_dataset(const Dataset& ds, std::ostream& out) {
    out << "id,lat,lon";
    const std::size_t n_env = ds.n_env();
    for (std::size_t k = 0; k < n_env; ++k) out << ",env_" << k;
    for (const auto& s : ds.species) out << ',' << csv_escape("sp_" + s);
    const bool with_split = ds.split.size() == ds.records.size() && !ds.records.empty();
    if (with_split) out << ",split";
    out << '\n';
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& r = ds.records[i];
        out << csv_escape(r.id) << ',' << format_double(r.lat) << ',' << format_double(r.lon);
        for (double v : r.env) out << ',' << format_double(v);
        for (std::size_t c = 0; c < ds.species.size(); ++c) {
            out << ',';
            if (r.available[c]) out << format_double(r.targets[c]);
        }
        if (with_split) out << ',' << to_string(ds.split[i]);
        out << '\n';
    }
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write dataset '" + path + "'");
    write_dataset(ds, out);
}

nlohmann::json split_to_json(const Dataset& ds) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < ds.records.size() && i < ds.split.size(); ++i) {
        j[ds.records[i].id] = to_string(ds.split[i]);
    }
    return j;
}

}  // namespace ciso::data
