#include "ciso/cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "ciso/colocate/colocate.hpp"
#include "ciso/dataio/dataset.hpp"
#include "ciso/features/maxent.hpp"
#include "ciso/metrics/metrics.hpp"
#include "ciso/models/model.hpp"
#include "ciso/synth/synth.hpp"
#include "ciso/training/training.hpp"
#include "json.hpp"

namespace ciso::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kCommands = {"prepare", "colocate", "train", "eval",
                                            "delta",   "map",      "synth", "ablate"};

// Bad flags or config: exit 2. Runtime failures: exit 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const std::string& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw UsageError("'" + path + "' is not valid JSON: " + e.what());
    }
}

// Files are held in memory and written together at the end.
class Outputs {
public:
    void add(const std::string& name, std::string content) { files_.emplace_back(name, std::move(content)); }
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& f : files_) out.push_back(f.first);
        return out;
    }
    void commit(const fs::path& dir) const {
        fs::create_directories(dir);
        std::vector<fs::path> parts;
        try {
            for (const auto& [name, content] : files_) {
                const fs::path part = dir / (name + ".part");
                std::ofstream out(part, std::ios::binary);
                out << content;
                parts.push_back(part);
                if (!out) throw std::runtime_error("failed writing " + part.string());
            }
        } catch (...) {
            for (const auto& p : parts) fs::remove(p);
            throw;
        }
        for (std::size_t i = 0; i < files_.size(); ++i) fs::rename(parts[i], dir / files_[i].first);
    }

private:
    std::vector<std::pair<std::string, std::string>> files_;
};

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON file whose keys fill flags not given on the command line");
    c.seed_opt = sub->add_option("--seed", c.seed, "Run seed");
    sub->add_option("--out-dir", c.out_dir, "Output directory");
}

bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

// Expands --config keys into flags. Explicit command-line flags win.
std::vector<std::string> expand_config(std::vector<std::string> args, const CLI::App* sub) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    const json cfg = read_json(path);
    if (!cfg.is_object()) throw UsageError("config '" + path + "' must be a JSON object");
    auto present = [&](const std::string& flag) {
        return std::any_of(args.begin(), args.end(),
                           [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
    };
    auto scalar = [&](const std::string& key, const json& v) -> std::string {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number()) return v.dump();
        throw UsageError("config key '" + key + "' has an unsupported value " + v.dump());
    };
    std::vector<std::string> extra;
    for (const auto& [key, v] : cfg.items()) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (flag == "--config") continue;
        if (sub->get_option_no_throw(flag) == nullptr) {
            throw UsageError("config key '" + key + "' is not an option of '" + sub->get_name() + "'");
        }
        if (present(flag) || v.is_null()) continue;
        if (v.is_boolean()) {
            if (v.get<bool>()) extra.push_back(flag);
        } else if (v.is_array()) {
            extra.push_back(flag);
            for (const auto& e : v) extra.push_back(scalar(key, e));
        } else {
            extra.push_back(flag);
            extra.push_back(scalar(key, v));
        }
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

json resolved_options(const CLI::App* sub) {
    json j = json::object();
    for (const CLI::Option* o : sub->get_options()) {
        const std::string name = o->get_single_name();
        if (name == "help" || name == "h") continue;
        std::string key = name;
        std::replace(key.begin(), key.end(), '-', '_');
        if (o->get_expected_min() == 0) {
            j[key] = o->count() > 0;
        } else if (o->count() > 0) {
            const auto& r = o->results();
            j[key] = o->get_expected_max() > 1 ? json(r) : json(r.back());
        } else {
            const std::string d = o->get_default_str();
            j[key] = d.empty() ? json(nullptr) : json(d);
        }
    }
    return j;
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

data::Dataset load(const std::string& path, const std::string& schema, data::LoadReport* rep = nullptr) {
    if (path.empty()) throw UsageError("a dataset path is required");
    const data::SchemaConfig cfg = schema.empty() ? data::SchemaConfig{} : data::load_schema_config(schema);
    return data::load_dataset(path, cfg, rep);
}

std::string schema_text(const data::Dataset& ds) {
    const auto cfg = data::schema_of(ds);
    return dump({{"species", cfg.species}, {"groups", cfg.groups}});
}

std::string dataset_text(const data::Dataset& ds) {
    std::ostringstream os;
    data::write_dataset(ds, os);
    return os.str();
}

void require_split(const data::Dataset& ds) {
    if (ds.split.size() != ds.records.size()) {
        throw UsageError("dataset has no split column; run `prepare` first");
    }
}

// ---- model and training options --------------------------------------------

struct ModelOpts {
    std::string family = "ciso";
    std::size_t hidden_dim = 256;
    std::size_t mlp_depth = 3;
    std::size_t layers = 3;
    std::size_t heads = 4;
    std::size_t ff_dim = 0;
    int n_b = 0;
    std::string encoding = "discrete";
    double dropout = 0.1;
    CLI::Option* n_b_opt = nullptr;
};

void add_model_opts(CLI::App* sub, ModelOpts& m, bool with_family) {
    if (with_family) sub->add_option("--family", m.family, "linear | maxent | mlp | mlp++ | ciso");
    sub->add_option("--hidden-dim", m.hidden_dim, "Hidden dimension d");
    sub->add_option("--mlp-depth", m.mlp_depth, "Linear layers of the MLP (3 = two hidden)");
    sub->add_option("--layers", m.layers, "Transformer blocks");
    sub->add_option("--heads", m.heads, "Attention heads");
    sub->add_option("--ff-dim", m.ff_dim, "Transformer feed-forward width (0 = 11 d)");
    m.n_b_opt = sub->add_option("--n-b", m.n_b, "State bins (default from preset)")->default_str("preset");
    sub->add_option("--encoding", m.encoding, "discrete | linear | periodic");
    sub->add_option("--dropout", m.dropout, "Dropout probability");
}

struct TrainOpts {
    std::string preset;
    std::size_t epochs = 0;
    double lr = 0.0;
    std::size_t batch_size = 0;
    double weight_decay = 0.0;
    double mask_cap = 0.0;
    std::vector<std::string> selection_groups;
    CLI::Option *epochs_opt = nullptr, *lr_opt = nullptr, *batch_opt = nullptr, *wd_opt = nullptr,
                *cap_opt = nullptr, *sel_opt = nullptr;
};

void add_train_opts(CLI::App* sub, TrainOpts& t) {
    sub->add_option("--preset", t.preset, "splotopen | satbird | across")
        ->check(CLI::IsMember({"splotopen", "satbird", "across"}));
    t.epochs_opt = sub->add_option("--epochs", t.epochs, "Training epochs")->default_str("preset");
    t.lr_opt = sub->add_option("--lr", t.lr, "Learning rate")->default_str("preset");
    t.batch_opt = sub->add_option("--batch-size", t.batch_size, "Batch size")->default_str("preset");
    t.wd_opt = sub->add_option("--weight-decay", t.weight_decay, "AdamW weight decay")->default_str("preset");
    t.cap_opt = sub->add_option("--mask-cap", t.mask_cap, "Upper bound on the revealed fraction")->default_str("preset");
    t.sel_opt = sub->add_option("--selection-groups", t.selection_groups, "Two groups for dual selection");
}

train::TrainConfig resolve_train(const TrainOpts& t, std::uint64_t seed) {
    train::TrainConfig c = t.preset.empty() ? train::TrainConfig{} : train::preset(t.preset);
    if (given(t.epochs_opt)) c.epochs = t.epochs;
    if (given(t.lr_opt)) c.lr = t.lr;
    if (given(t.batch_opt)) c.batch_size = t.batch_size;
    if (given(t.wd_opt)) c.weight_decay = t.weight_decay;
    if (given(t.cap_opt)) c.mask_cap_fraction = t.mask_cap;
    if (given(t.sel_opt)) c.selection_groups = t.selection_groups;
    c.seed = seed;
    try {
        return train::train_config_from_json(train::to_json(c));
    } catch (const std::exception& e) {
        throw UsageError(std::string("invalid training config: ") + e.what());
    }
}

model::ModelSpec resolve_spec(const ModelOpts& m, const data::Dataset& ds, const train::TrainConfig& c) {
    model::ModelSpec s;
    try {
        s.family = model::family_from_string(m.family);
        s.encoding = enc::encoding_from_string(m.encoding);
        s.n_species = ds.n_species();
        s.n_env = ds.n_env();
        s.hidden_dim = m.hidden_dim;
        s.mlp_depth = m.mlp_depth;
        s.transformer_layers = m.layers;
        s.heads = m.heads;
        s.ff_dim = m.ff_dim;
        s.n_b = given(m.n_b_opt) ? m.n_b : c.n_b;
        s.dropout = m.dropout;
        s.validate();
    } catch (const std::exception& e) {
        throw UsageError(std::string("invalid model config: ") + e.what());
    }
    return s;
}

std::optional<features::MaxentConfig> maxent_for(const model::ModelSpec& s, const data::Dataset& ds) {
    if (s.family != model::Family::Maxent) return std::nullopt;
    std::vector<std::vector<double>> env;
    for (auto i : ds.indices_of(data::Split::Train)) env.push_back(ds.records[i].env);
    return features::fit_maxent(env);
}

std::pair<model::Model, model::Checkpoint> load_model(const std::string& path, const data::Dataset* ds) {
    if (path.empty()) throw UsageError("--checkpoint is required");
    auto mc = model::parse_checkpoint(read_text(path));
    if (ds != nullptr && mc.second.species != ds->species) {
        throw UsageError("dataset roster differs from the checkpoint roster");
    }
    return mc;
}

// ---- protocol helpers ----------------------------------------------------------

std::vector<std::uint8_t> species_mask(const data::Dataset& ds, const std::vector<std::string>& names) {
    std::vector<std::uint8_t> mask(ds.n_species(), 0);
    for (const auto& n : names) {
        if (n == "all") {
            std::fill(mask.begin(), mask.end(), 1);
        } else if (auto it = ds.group_masks.find(n); it != ds.group_masks.end()) {
            for (std::size_t c = 0; c < mask.size(); ++c) mask[c] |= it->second[c];
        } else {
            const auto pos = std::find(ds.species.begin(), ds.species.end(), n);
            if (pos == ds.species.end()) throw UsageError("'" + n + "' is neither a species nor a group");
            mask[static_cast<std::size_t>(pos - ds.species.begin())] = 1;
        }
    }
    return mask;
}

data::Split parse_split(const std::string& s) {
    try {
        return data::split_from_string(s);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

train::EvalProtocol protocol(const data::Dataset& ds, const std::string& name, const std::string& target,
                             const std::string& condition, data::Split split) {
    try {
        return train::make_protocol(ds, name, target, condition, split);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

// ---- subcommands ----------------------------------------------------------------

struct Result {
    Outputs files;
    std::vector<std::string> inputs;
    json resolved = json::object();  // settings after presets and defaults
};

struct PrepareOpts {
    std::string input, schema;
    std::vector<std::string> merge;
    double fuzzy_threshold = 90.0;
    std::size_t min_presences = 0;
    double block_deg = 1.0;
    bool resplit = false, allow_degenerate = false;
    double train_frac = 0.7, val_frac = 0.15, test_frac = 0.15;
};

Result do_prepare(const PrepareOpts& o, const Common& c) {
    Result r;
    r.inputs = {o.input};
    if (!o.schema.empty()) r.inputs.push_back(o.schema);
    data::LoadReport rep;
    data::Dataset ds = load(o.input, o.schema, &rep);
    const std::size_t species_in = ds.n_species();

    const auto proposals = data::fuzzy_merge_species(ds.species, o.fuzzy_threshold);
    std::ostringstream pcsv;
    pcsv << "a,b,score\n";
    for (const auto& p : proposals) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", p.score);
        pcsv << p.a << ',' << p.b << ',' << buf << '\n';
    }

    std::vector<std::pair<std::string, std::string>> approved;
    for (const auto& m : o.merge) {
        const auto eq = m.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == m.size()) {
            throw UsageError("--merge expects keep=absorb, got '" + m + "'");
        }
        approved.emplace_back(m.substr(0, eq), m.substr(eq + 1));
    }
    if (!approved.empty()) ds = data::merge_targets(ds, approved);
    if (o.min_presences > 0) ds = data::filter_min_presences(ds, o.min_presences);

    std::vector<std::string> warnings;
    std::size_t n_blocks = 0;
    const bool split_now = !rep.had_split_column || o.resplit;
    if (split_now) {
        auto s = data::spatial_block_split(ds.records, o.block_deg, {o.train_frac, o.val_frac, o.test_frac}, c.seed,
                                           o.allow_degenerate);
        ds.split = std::move(s.tags);
        n_blocks = s.n_blocks;
        warnings = std::move(s.warnings);
    }
    const auto stats = data::fit_norm(ds);
    data::apply_norm(ds, stats);

    json counts = json::object();
    for (auto s : {data::Split::Train, data::Split::Val, data::Split::Test}) {
        counts[data::to_string(s)] = ds.indices_of(s).size();
    }
    json merges = json::array();
    for (const auto& [keep, absorb] : approved) merges.push_back({{"keep", keep}, {"absorb", absorb}});
    const json report = {{"rows_read", rep.rows_read},
                         {"rejected_coordinates", rep.rejected_coordinates},
                         {"records", ds.records.size()},
                         {"species_in", species_in},
                         {"species_out", ds.n_species()},
                         {"merges_applied", merges},
                         {"merge_proposals", proposals.size()},
                         {"split_source", split_now ? "spatial_blocks" : "input_column"},
                         {"blocks", n_blocks},
                         {"split_counts", counts},
                         {"env_kept", stats.kept.size()},
                         {"env_dropped", stats.dropped},
                         {"warnings", warnings}};

    r.files.add("dataset.csv", dataset_text(ds));
    r.files.add("schema.json", schema_text(ds));
    r.files.add("norm_stats.json", dump(data::to_json(stats)));
    r.files.add("split.json", dump(data::split_to_json(ds)));
    r.files.add("merge_proposals.csv", pcsv.str());
    r.files.add("prepare_report.json", dump(report));
    return r;
}

struct ColocateOpts {
    std::string a, a_schema, b, b_schema, name_a = "dataset_a", name_b = "dataset_b";
    double radius_km = 1.0;
};

Result do_colocate(const ColocateOpts& o, const Common&) {
    Result r;
    r.inputs = {o.a, o.b};
    if (o.radius_km <= 0 || !std::isfinite(o.radius_km)) throw UsageError("--radius-km must be positive");
    const auto a = load(o.a, o.a_schema);
    const auto b = load(o.b, o.b_schema);
    const auto pairs = geo::colocate(a, b, o.radius_km);
    std::ostringstream pcsv;
    geo::write_pairs_csv(pairs, pcsv);
    const auto combined = geo::attach(a, b, pairs, o.name_a, o.name_b);
    r.files.add("pairs.csv", pcsv.str());
    r.files.add("combined.csv", dataset_text(combined));
    r.files.add("schema.json", schema_text(combined));
    return r;
}

struct TrainCmd {
    std::string dataset, schema, norm_stats;
    ModelOpts model;
    TrainOpts train;
    bool quiet = false;
};

Result do_train(const TrainCmd& o, const Common& c, std::ostream& err) {
    Result r;
    r.inputs = {o.dataset};
    const auto ds = load(o.dataset, o.schema);
    require_split(ds);
    const auto cfg = resolve_train(o.train, c.seed);
    const auto spec = resolve_spec(o.model, ds, cfg);
    for (const auto& g : cfg.selection_groups) {
        if (!ds.group_masks.count(g)) throw UsageError("selection group '" + g + "' is not defined");
    }
    model::Checkpoint meta;
    if (!o.norm_stats.empty()) {
        meta.norm_stats = read_json(o.norm_stats);
        r.inputs.push_back(o.norm_stats);
    }
    train::ProgressFn progress;
    if (!o.quiet) {
        progress = [&err](const train::EpochRecord& e) {
            err << "epoch " << e.epoch << " loss " << e.train_loss << " val " << e.val_metric_uncond << "\n";
        };
    }
    r.resolved = {{"model", model::to_json(spec)}, {"train", train::to_json(cfg)}};
    auto res = train::train(ds, spec, cfg, maxent_for(spec, ds), progress);
    meta.spec = spec;
    meta.species = ds.species;
    meta.seed = c.seed;
    meta.extra = {{"train_config", train::to_json(cfg)}, {"best_epoch", res.history.best_epoch}};
    r.files.add("checkpoint.json", model::serialize_checkpoint(res.model, meta));
    std::ostringstream hist;
    res.history.write_csv(hist);
    r.files.add("history.csv", hist.str());
    return r;
}

struct EvalCmd {
    std::string checkpoint, dataset, schema, target = "all", condition, split = "test", name;
    bool unconditioned = false;
};

Result do_eval(const EvalCmd& o, const Common&) {
    Result r;
    r.inputs = {o.checkpoint, o.dataset};
    const auto ds = load(o.dataset, o.schema);
    require_split(ds);
    const auto [m, meta] = load_model(o.checkpoint, &ds);
    const std::string name = o.name.empty() ? o.target + "|" + o.condition : o.name;
    const auto p = protocol(ds, name, o.target, o.condition, parse_split(o.split));
    const auto e = train::evaluate_full(m, ds, p, !o.unconditioned);
    r.files.add("report.json", dump({{"protocol", train::to_json(p, ds)}, {"report", metrics::to_json(e.report)}}));
    r.files.add("table.txt", metrics::format_table({e.report}));
    std::ostringstream pred;
    train::write_predictions_csv(e, ds, pred);
    r.files.add("predictions.csv", pred.str());
    return r;
}

struct DeltaCmd {
    std::string checkpoint, dataset, schema, source, targets = "all", split = "test";
};

Result do_delta(const DeltaCmd& o, const Common&) {
    Result r;
    r.inputs = {o.checkpoint, o.dataset};
    const auto ds = load(o.dataset, o.schema);
    require_split(ds);
    const auto [m, meta] = load_model(o.checkpoint, &ds);
    if (o.source.empty()) throw UsageError("--source is required");
    const auto src = std::find(ds.species.begin(), ds.species.end(), o.source);
    if (src == ds.species.end()) throw UsageError("unknown source species '" + o.source + "'");
    const auto mask = species_mask(ds, {o.targets});
    std::vector<std::size_t> targets;
    for (std::size_t c = 0; c < mask.size(); ++c) {
        if (mask[c]) targets.push_back(c);
    }
    const auto rows = train::conditioning_delta(m, ds, static_cast<std::size_t>(src - ds.species.begin()), targets,
                                                parse_split(o.split));
    std::ostringstream out;
    train::write_delta_csv(rows, o.source, out);
    r.files.add("delta.csv", out.str());
    return r;
}

// Grid CSV: [id,]lat,lon,env_*[,sp_<name>...]. Species columns are optional and
// only needed for revealed species.
data::Dataset read_grid(const std::string& path, const std::vector<std::string>& roster) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw UsageError("grid '" + path + "' is empty");
    auto split_line = [](const std::string& l) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(l);
        while (std::getline(ls, cell, ',')) {
            if (!cell.empty() && cell.back() == '\r') cell.pop_back();
            cells.push_back(cell);
        }
        if (!l.empty() && l.back() == ',') cells.emplace_back();
        return cells;
    };
    const auto header = split_line(line);
    int id_col = -1, lat_col = -1, lon_col = -1;
    std::vector<std::size_t> env_cols;
    std::vector<int> sp_col(roster.size(), -1);
    for (std::size_t i = 0; i < header.size(); ++i) {
        const auto& h = header[i];
        if (h == "id") id_col = static_cast<int>(i);
        else if (h == "lat") lat_col = static_cast<int>(i);
        else if (h == "lon") lon_col = static_cast<int>(i);
        else if (h.rfind("env_", 0) == 0) env_cols.push_back(i);
        else if (h.rfind("sp_", 0) == 0) {
            const auto it = std::find(roster.begin(), roster.end(), h.substr(3));
            if (it != roster.end()) sp_col[static_cast<std::size_t>(it - roster.begin())] = static_cast<int>(i);
        }
    }
    if (lat_col < 0 || lon_col < 0 || env_cols.empty()) throw UsageError("grid needs lat, lon and env_* columns");
    data::Dataset g;
    g.species = roster;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split_line(line);
        if (cells.size() != header.size()) throw UsageError("grid row " + std::to_string(n + 1) + " has wrong width");
        auto num = [&](std::size_t col) {
            const auto& s = cells[col];
            if (s.empty()) return std::nan("");
            try {
                return std::stod(s);
            } catch (...) {
                throw UsageError("grid row " + std::to_string(n + 1) + ": bad number '" + s + "'");
            }
        };
        data::LocationRecord rec;
        rec.id = id_col >= 0 ? cells[static_cast<std::size_t>(id_col)] : std::to_string(n);
        rec.lat = num(static_cast<std::size_t>(lat_col));
        rec.lon = num(static_cast<std::size_t>(lon_col));
        for (auto col : env_cols) rec.env.push_back(num(col));
        rec.targets.assign(roster.size(), 0.0);
        rec.available.assign(roster.size(), 0);
        for (std::size_t c = 0; c < roster.size(); ++c) {
            if (sp_col[c] < 0 || cells[static_cast<std::size_t>(sp_col[c])].empty()) continue;
            rec.targets[c] = num(static_cast<std::size_t>(sp_col[c]));
            rec.available[c] = 1;
        }
        g.records.push_back(std::move(rec));
        ++n;
    }
    return g;
}

struct MapCmd {
    std::string checkpoint, grid, schema;
    std::vector<std::string> reveal;
    bool raw_env = false;
};

Result do_map(const MapCmd& o, const Common&) {
    Result r;
    r.inputs = {o.checkpoint, o.grid};
    const auto [m, meta] = load_model(o.checkpoint, nullptr);
    if (o.grid.empty()) throw UsageError("--grid is required");
    auto grid = read_grid(o.grid, meta.species);
    if (!o.schema.empty()) {
        const auto cfg = data::load_schema_config(o.schema);
        for (const auto& [name, members] : cfg.groups) {
            std::vector<std::uint8_t> mask(grid.n_species(), 0);
            for (const auto& s : members) mask[grid.species_index(s)] = 1;
            grid.group_masks[name] = mask;
        }
    }
    if (!o.raw_env && !meta.norm_stats.is_null()) {
        const auto stats = data::norm_stats_from_json(meta.norm_stats);
        for (auto& rec : grid.records) rec.env = data::normalize_env(rec.env, stats);
    }
    for (const auto& rec : grid.records) {
        if (rec.env.size() != m.spec().n_env) throw UsageError("grid env width does not match the model");
        for (double v : rec.env) {
            if (!std::isfinite(v)) throw UsageError("grid record '" + rec.id + "' has a missing env value");
        }
    }
    const auto reveal = o.reveal.empty() ? std::vector<std::uint8_t>{} : species_mask(grid, o.reveal);
    std::ostringstream out;
    train::predict_map(m, grid, reveal, out);
    r.files.add("map.csv", out.str());
    return r;
}

struct SynthCmd {
    std::string spec;
    std::size_t species = 10, env = 5, locations = 5000;
    double strength = 3.0, noise = 0.0, missingness = 0.0, block_deg = 1.0;
    bool rates = false;
};

Result do_synth(const SynthCmd& o, const Common& c) {
    Result r;
    synth::SynthSpec s;
    try {
        if (!o.spec.empty()) {
            r.inputs = {o.spec};
            s = synth::synth_spec_from_json(read_json(o.spec));
            if (given(c.seed_opt)) s.seed = c.seed;
        } else {
            s = synth::planted_spec(o.species, o.env, o.locations, o.strength, c.seed);
            s.noise = o.noise;
            s.rates = o.rates;
            s.missingness = o.missingness;
            s.block_deg = o.block_deg;
        }
        s.validate();
    } catch (const UsageError&) {
        throw;
    } catch (const std::exception& e) {
        throw UsageError(std::string("invalid synth spec: ") + e.what());
    }
    const auto ds = synth::generate(s);
    json oracle = json::object();
    if (s.n_species <= 12 && s.groups.count("roots") && s.groups.count("children")) {
        const auto roots = species_mask(ds, {"roots"}), children = species_mask(ds, {"children"});
        auto entry = [&](const std::vector<std::uint8_t>& cond, const std::vector<std::uint8_t>& tgt) {
            const auto rep = synth::oracle_mae(s, ds, data::Split::Test, cond, tgt);
            return json{{"locations", rep.locations},
                        {"marginal_mae", rep.marginal_mae},
                        {"conditional_mae", rep.conditional_mae}};
        };
        oracle["split"] = "test";
        oracle["children|roots"] = entry(roots, children);
        oracle["roots|children"] = entry(children, roots);
    } else {
        oracle["skipped"] = "oracle needs at most 12 species and roots/children groups";
    }
    r.files.add("synth.csv", dataset_text(ds));
    r.files.add("schema.json", schema_text(ds));
    r.files.add("spec.json", dump(synth::to_json(s)));
    r.files.add("oracle.json", dump(oracle));
    return r;
}

// ---- ablate -------------------------------------------------------------------------

struct AblateCmd {
    std::string dataset, schema, sweep = "all";
    std::vector<std::string> groups{"all"};
    std::vector<std::size_t> depths{3, 5, 6, 7};
    std::vector<std::size_t> dims{64, 128, 256};
    ModelOpts model;
    TrainOpts train;
};

struct AblationRow {
    std::string section, setting;
    std::size_t params = 0;
    std::vector<double> mae, metric;  // per group
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, const std::vector<std::string>& groups,
                         const std::string& metric, bool with_mae) {
    std::ostringstream os;
    os << "section,setting,params";
    if (with_mae) {
        for (const auto& g : groups) os << ",mae_x100_" << g;
    }
    for (const auto& g : groups) os << ',' << metric << '_' << g;
    os << '\n';
    for (const auto& r : rows) {
        os << r.section << ',' << r.setting << ',' << r.params;
        if (with_mae) {
            for (double v : r.mae) os << ',' << fmt(v);
        }
        for (double v : r.metric) os << ',' << fmt(v);
        os << '\n';
    }
    return os.str();
}

Result do_ablate(const AblateCmd& o, const Common& c, std::ostream& err) {
    Result r;
    r.inputs = {o.dataset};
    const auto ds = load(o.dataset, o.schema);
    require_split(ds);
    if (o.groups.empty()) throw UsageError("--groups needs at least one group");
    for (const auto& g : o.groups) {
        if (g != "all" && !ds.group_masks.count(g)) throw UsageError("group '" + g + "' is not defined");
    }
    const std::set<std::string> sweeps = o.sweep == "all" ? std::set<std::string>{"encoding", "depth", "dims"}
                                                          : std::set<std::string>{o.sweep};
    const auto cfg = resolve_train(o.train, c.seed);
    const auto base = resolve_spec(o.model, ds, cfg);
    r.resolved = {{"model", model::to_json(base)}, {"train", train::to_json(cfg)}};
    const bool binary = ds.is_binary();
    const std::string metric = binary ? "auc_pct" : "topk_pct";

    std::vector<std::pair<train::EvalProtocol, std::string>> protos;
    for (const auto& g : o.groups) protos.emplace_back(protocol(ds, g, g, g == "all" ? "" : "rest", data::Split::Test), g);

    // One trained model gives an unconditioned and a conditioned row.
    auto fit = [&](model::ModelSpec s, const std::string& label) {
        err << "ablate: training " << label << "\n";
        return train::train(ds, s, cfg).model;
    };
    auto measure = [&](const model::Model& m, const std::string& section, const std::string& setting,
                       bool conditioned) {
        AblationRow row{section, setting, m.parameter_count(), {}, {}};
        for (const auto& [p, g] : protos) {
            const auto rep = train::evaluate(m, ds, p, conditioned);
            row.mae.push_back(rep.mae_x100);
            row.metric.push_back(binary ? rep.auc_pct.value_or(NAN) : rep.topk_pct.value_or(NAN));
        }
        return row;
    };
    auto both = [&](std::vector<std::pair<std::string, model::ModelSpec>> settings) {
        std::vector<AblationRow> unc, con;
        for (const auto& [label, s] : settings) {
            const auto m = fit(s, label);
            unc.push_back(measure(m, "Unconditioned", label, false));
            con.push_back(measure(m, "Conditioned", label, true));
        }
        unc.insert(unc.end(), con.begin(), con.end());
        return unc;
    };

    auto ciso = base;
    ciso.family = model::Family::Ciso;
    if (sweeps.count("encoding")) {
        auto bins4 = ciso, bins1 = ciso, periodic = ciso, linear = ciso;
        bins4.encoding = bins1.encoding = enc::EncodingMode::Discrete;
        bins4.n_b = 4;
        bins1.n_b = 1;
        periodic.encoding = enc::EncodingMode::Periodic;
        linear.encoding = enc::EncodingMode::Linear;
        const auto rows = both({{"4 bins", bins4}, {"1 bin", bins1}, {"Periodic", periodic}, {"Linear", linear}});
        r.files.add("ablation_encoding.csv", ablation_csv(rows, o.groups, metric, true));
    }
    if (sweeps.count("depth")) {
        std::vector<AblationRow> rows;
        for (auto depth : o.depths) {
            auto s = base;
            s.family = model::Family::Mlp;
            s.mlp_depth = depth;
            const std::string label = "MLP-" + std::to_string(depth) + (depth == 3 ? " (baseline)" : "");
            rows.push_back(measure(fit(s, label), "MLP: #layers", label, false));
        }
        auto pp = base;
        pp.family = model::Family::MlpPP;
        const auto refs = both({{"MLP++", pp}, {"CISO", ciso}});
        rows.insert(rows.end(), refs.begin(), refs.end());
        r.files.add("ablation_depth.csv", ablation_csv(rows, o.groups, metric, false));
    }
    if (sweeps.count("dims")) {
        std::vector<std::pair<std::string, model::ModelSpec>> settings;
        for (auto d : o.dims) {
            auto s = ciso;
            s.hidden_dim = d;
            try {
                s.validate();
            } catch (const std::exception& e) {
                throw UsageError("hidden dim " + std::to_string(d) + ": " + e.what());
            }
            settings.emplace_back(std::to_string(d), s);
        }
        r.files.add("ablation_dims.csv", ablation_csv(both(settings), o.groups, metric, true));
    }
    return r;
}

}  // namespace

std::string usage() {
    return "usage: ciso <command> [options]\n"
           "commands:\n"
           "  prepare   load, merge, filter, split and normalize a dataset\n"
           "  colocate  pair two datasets within a radius and attach them\n"
           "  train     train a model and write a checkpoint and history\n"
           "  eval      evaluate a checkpoint under a protocol\n"
           "  delta     conditioning delta of a source species\n"
           "  map       predictions over a grid of locations\n"
           "  synth     generate a synthetic dataset with its oracle report\n"
           "  ablate    encoding, depth and hidden-dimension sweeps\n"
           "run `ciso <command> --help` for options\n";
}

int run(const std::vector<std::string>& raw, std::ostream& out, std::ostream& err) {
    if (raw.empty() || (std::find(kCommands.begin(), kCommands.end(), raw[0]) == kCommands.end() &&
                        raw[0] != "--help" && raw[0] != "-h" && raw[0] != "--version")) {
        if (!raw.empty()) err << "unknown command '" << raw[0] << "'\n";
        err << usage();
        return 2;
    }
    const auto started = std::chrono::steady_clock::now();
    const std::string started_utc = utc_now();

    CLI::App app{"Species distribution toolkit", "ciso"};
    app.set_version_flag("--version", kVersion);
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    Common common;
    PrepareOpts prep;
    ColocateOpts col;
    TrainCmd trn;
    EvalCmd ev;
    DeltaCmd dl;
    MapCmd mp;
    SynthCmd sy;
    AblateCmd ab;

    auto* s_prep = app.add_subcommand("prepare", "Build a processed dataset bundle");
    add_common(s_prep, common);
    s_prep->add_option("--input", prep.input, "Raw dataset CSV")->required();
    s_prep->add_option("--schema", prep.schema, "Schema JSON (roster, groups)");
    s_prep->add_option("--merge", prep.merge, "Approved merge keep=absorb (repeatable)");
    s_prep->add_option("--fuzzy-threshold", prep.fuzzy_threshold, "Similarity threshold for merge proposals");
    s_prep->add_option("--min-presences", prep.min_presences, "Drop species with fewer presences");
    s_prep->add_option("--block-deg", prep.block_deg, "Spatial block size in degrees");
    s_prep->add_flag("--resplit", prep.resplit, "Ignore an existing split column");
    s_prep->add_flag("--allow-degenerate", prep.allow_degenerate, "Accept fewer than three blocks");
    s_prep->add_option("--train-frac", prep.train_frac, "Train fraction");
    s_prep->add_option("--val-frac", prep.val_frac, "Validation fraction");
    s_prep->add_option("--test-frac", prep.test_frac, "Test fraction");

    auto* s_col = app.add_subcommand("colocate", "Pair two datasets and build the combined dataset");
    add_common(s_col, common);
    s_col->add_option("--a", col.a, "Dataset A CSV")->required();
    s_col->add_option("--a-schema", col.a_schema, "Schema for A");
    s_col->add_option("--b", col.b, "Dataset B CSV")->required();
    s_col->add_option("--b-schema", col.b_schema, "Schema for B");
    s_col->add_option("--radius-km", col.radius_km, "Pairing radius in km");
    s_col->add_option("--name-a", col.name_a, "Group name for A species");
    s_col->add_option("--name-b", col.name_b, "Group name for B species");

    auto* s_train = app.add_subcommand("train", "Train a model");
    add_common(s_train, common);
    s_train->add_option("--dataset", trn.dataset, "Prepared dataset CSV")->required();
    s_train->add_option("--schema", trn.schema, "Schema JSON");
    s_train->add_option("--norm-stats", trn.norm_stats, "Normalization stats stored in the checkpoint");
    add_model_opts(s_train, trn.model, true);
    add_train_opts(s_train, trn.train);
    s_train->add_flag("--quiet", trn.quiet, "No per-epoch progress");

    auto* s_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_common(s_eval, common);
    s_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON")->required();
    s_eval->add_option("--dataset", ev.dataset, "Prepared dataset CSV")->required();
    s_eval->add_option("--schema", ev.schema, "Schema JSON");
    s_eval->add_option("--target", ev.target, "Scored group ('all' for every species)");
    s_eval->add_option("--condition", ev.condition, "Revealed group ('rest' = complement of target)");
    s_eval->add_option("--split", ev.split, "train | val | test");
    s_eval->add_option("--name", ev.name, "Protocol name");
    s_eval->add_flag("--unconditioned", ev.unconditioned, "Reveal nothing");

    auto* s_delta = app.add_subcommand("delta", "Conditioning delta of one source species");
    add_common(s_delta, common);
    s_delta->add_option("--checkpoint", dl.checkpoint, "Checkpoint JSON")->required();
    s_delta->add_option("--dataset", dl.dataset, "Prepared dataset CSV")->required();
    s_delta->add_option("--schema", dl.schema, "Schema JSON");
    s_delta->add_option("--source", dl.source, "Revealed species")->required();
    s_delta->add_option("--targets", dl.targets, "Target group or species");
    s_delta->add_option("--split", dl.split, "train | val | test");

    auto* s_map = app.add_subcommand("map", "Predict over a grid");
    add_common(s_map, common);
    s_map->add_option("--checkpoint", mp.checkpoint, "Checkpoint JSON")->required();
    s_map->add_option("--grid", mp.grid, "Grid CSV (lat, lon, env_*, optional sp_*)")->required();
    s_map->add_option("--schema", mp.schema, "Schema JSON for group names");
    s_map->add_option("--reveal", mp.reveal, "Species or groups revealed from the grid's sp_ columns");
    s_map->add_flag("--raw-env", mp.raw_env, "Grid env is already normalized");

    auto* s_synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    add_common(s_synth, common);
    s_synth->add_option("--spec", sy.spec, "SynthSpec JSON (overrides the planted generator)");
    s_synth->add_option("--species", sy.species, "Species count");
    s_synth->add_option("--env", sy.env, "Env variables");
    s_synth->add_option("--locations", sy.locations, "Locations");
    s_synth->add_option("--strength", sy.strength, "Minimum |W| of planted interactions");
    s_synth->add_option("--noise", sy.noise, "Logit noise sd");
    s_synth->add_option("--missingness", sy.missingness, "Per-cell unavailability probability");
    s_synth->add_option("--block-deg", sy.block_deg, "Spatial block size");
    s_synth->add_flag("--rates", sy.rates, "Encounter rates instead of presence/absence");

    auto* s_ab = app.add_subcommand("ablate", "Encoding, depth and hidden-dimension sweeps");
    add_common(s_ab, common);
    s_ab->add_option("--dataset", ab.dataset, "Prepared dataset CSV")->required();
    s_ab->add_option("--schema", ab.schema, "Schema JSON");
    s_ab->add_option("--sweep", ab.sweep, "encoding | depth | dims | all")
        ->check(CLI::IsMember({"encoding", "depth", "dims", "all"}));
    s_ab->add_option("--groups", ab.groups, "Evaluation groups (each conditioned on the rest)");
    s_ab->add_option("--depths", ab.depths, "MLP depths");
    s_ab->add_option("--dims", ab.dims, "CISO hidden dimensions");
    add_model_opts(s_ab, ab.model, false);
    add_train_opts(s_ab, ab.train);

    try {
        auto args = raw[0].rfind("-", 0) == 0 ? raw : expand_config(raw, app.get_subcommand(raw[0]));
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code != 0) {
            err << usage();
            return 2;
        }
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string cmd = sub->get_name();
    try {
        Result r;
        if (cmd == "prepare") r = do_prepare(prep, common);
        else if (cmd == "colocate") r = do_colocate(col, common);
        else if (cmd == "train") r = do_train(trn, common, err);
        else if (cmd == "eval") r = do_eval(ev, common);
        else if (cmd == "delta") r = do_delta(dl, common);
        else if (cmd == "map") r = do_map(mp, common);
        else if (cmd == "synth") r = do_synth(sy, common);
        else r = do_ablate(ab, common, err);

        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        const fs::path dir(common.out_dir);
        json outputs = json::array();
        for (const auto& n : r.files.names()) outputs.push_back((dir / n).string());
        const json manifest = {{"command", cmd},
                               {"args", raw},
                               {"config", resolved_options(sub)},
                               {"resolved", r.resolved},
                               {"seed", common.seed},
                               {"inputs", r.inputs},
                               {"outputs", outputs},
                               {"version", kVersion},
                               {"started_utc", started_utc},
                               {"wall_clock_s", wall}};
        r.files.add(cmd + ".manifest.json", dump(manifest));
        r.files.commit(dir);
        for (const auto& n : r.files.names()) out << (dir / n).string() << "\n";
        return 0;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace ciso::cli
