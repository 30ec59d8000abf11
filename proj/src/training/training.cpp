#include "ciso/training/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ciso/numerics/adamw.hpp"
#include "ciso/numerics/ops.hpp"
#include "ciso/util/threads.hpp"

namespace ciso::train {

using enc::StateAssignment;
using num::Tensor;

namespace {

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stage) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stage + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

Tensor env_batch(const data::Dataset& ds, std::span<const std::size_t> rows) {
    const std::size_t E = ds.n_env();
    Tensor x({rows.size(), E});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& env = ds.records[rows[i]].env;
        std::copy(env.begin(), env.end(), x.values().begin() + static_cast<std::ptrdiff_t>(i * E));
    }
    return x;
}

Tensor target_batch(const data::Dataset& ds, std::span<const std::size_t> rows) {
    const std::size_t C = ds.n_species();
    Tensor y({rows.size(), C});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = ds.records[rows[i]];
        for (std::size_t c = 0; c < C; ++c) y[i * C + c] = r.available[c] ? r.targets[c] : 0.0;
    }
    return y;
}

// Batched inference with caller-built states (B*C entries per row block).
std::vector<double> predict_states(const model::Model& m, const data::Dataset& ds, std::span<const std::size_t> rows,
                                   const std::vector<StateAssignment>& states, std::size_t batch) {
    const std::size_t C = ds.n_species();
    std::vector<double> out(rows.size() * C);
    const std::size_t n_batches = (rows.size() + batch - 1) / batch;
    util::parallel_for(n_batches, [&](std::size_t b) {
        const std::size_t lo = b * batch, hi = std::min(rows.size(), lo + batch);
        auto sub = rows.subspan(lo, hi - lo);
        std::span<const StateAssignment> st;
        if (m.spec().uses_states()) st = std::span<const StateAssignment>(states).subspan(lo * C, (hi - lo) * C);
        Tensor y = m.forward(env_batch(ds, sub), st);
        std::copy(y.values().begin(), y.values().end(), out.begin() + static_cast<std::ptrdiff_t>(lo * C));
    });
    return out;
}

std::vector<StateAssignment> reveal_states(const data::Dataset& ds, std::span<const std::size_t> rows,
                                           std::span<const std::uint8_t> reveal, int n_b) {
    const std::size_t C = ds.n_species();
    std::vector<StateAssignment> st(rows.size() * C);
    if (reveal.empty()) return st;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = ds.records[rows[i]];
        for (std::size_t c = 0; c < C; ++c) {
            if (reveal[c]) st[i * C + c] = true_state(r, c, n_b);
        }
    }
    return st;
}

double safe_metric(const metrics::CellGrid& g, bool binary) {
    try {
        return binary ? metrics::macro_auc(g).value : metrics::topk_adaptive(g).percent / 100.0;
    } catch (const std::invalid_argument&) {
        return -std::numeric_limits<double>::infinity();
    }
}

double safe_mae(const metrics::CellGrid& g) {
    try {
        return metrics::mae(g);
    } catch (const std::invalid_argument&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

bool better(double a, double b) { return !std::isnan(a) && (std::isnan(b) || a > b); }

}  // namespace

TrainConfig preset(const std::string& name) {
    TrainConfig c;
    if (name == "splotopen") {
        c.lr = 1e-3;
        c.batch_size = 64;
        c.epochs = 20;
        c.n_b = 1;
    } else if (name == "satbird") {
        c.lr = 1e-4;
        c.batch_size = 128;
        c.epochs = 50;
        c.n_b = 4;
    } else if (name == "across") {
        c = preset("satbird");
        c.n_b = 1;
        c.selection_groups = {"dataset_a", "dataset_b"};
    } else {
        throw std::invalid_argument("unknown preset '" + name + "' (expected splotopen, satbird, across)");
    }
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"n_b", c.n_b},
            {"mask_cap_fraction", c.mask_cap_fraction},
            {"weight_decay", c.weight_decay},
            {"selection_groups", c.selection_groups}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.n_b = j.value("n_b", c.n_b);
    c.mask_cap_fraction = j.value("mask_cap_fraction", c.mask_cap_fraction);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.selection_groups = j.value("selection_groups", c.selection_groups);
    if (c.lr <= 0.0) throw std::invalid_argument("lr must be positive");
    if (c.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (c.epochs == 0) throw std::invalid_argument("epochs must be positive");
    if (c.n_b < 1) throw std::invalid_argument("n_b must be >= 1");
    if (c.mask_cap_fraction < 0.0 || c.mask_cap_fraction > 1.0) {
        throw std::invalid_argument("mask_cap_fraction must be in [0,1]");
    }
    if (!c.selection_groups.empty() && c.selection_groups.size() != 2) {
        throw std::invalid_argument("selection_groups takes exactly two groups");
    }
    return c;
}

KnownSetSample sample_known(std::span<const std::uint8_t> available, std::size_t n_species, std::mt19937_64& rng,
                            double cap_fraction) {
    std::vector<std::size_t> avail;
    for (std::size_t c = 0; c < available.size(); ++c) {
        if (available[c]) avail.push_back(c);
    }
    const auto cap = static_cast<std::size_t>(std::floor(cap_fraction * static_cast<double>(n_species)));
    const std::size_t hi = std::min(cap, avail.size());
    KnownSetSample s;
    s.k = std::uniform_int_distribution<std::size_t>(0, hi)(rng);
    // partial Fisher-Yates
    for (std::size_t i = 0; i < s.k; ++i) {
        std::size_t j = std::uniform_int_distribution<std::size_t>(i, avail.size() - 1)(rng);
        std::swap(avail[i], avail[j]);
    }
    s.known.assign(avail.begin(), avail.begin() + static_cast<std::ptrdiff_t>(s.k));
    std::sort(s.known.begin(), s.known.end());
    return s;
}

StateAssignment true_state(const data::LocationRecord& r, std::size_t c, int n_b) {
    if (!r.available[c]) return StateAssignment::unknown();
    return enc::bin_rate(std::clamp(r.targets[c], 0.0, 1.0), n_b);
}

void EvalProtocol::validate(std::size_t n_species) const {
    if (target_mask.size() != n_species) throw std::invalid_argument("protocol '" + name + "': target mask size");
    if (!condition_mask.empty() && condition_mask.size() != n_species) {
        throw std::invalid_argument("protocol '" + name + "': condition mask size");
    }
    for (std::size_t c = 0; c < condition_mask.size(); ++c) {
        if (condition_mask[c] && target_mask[c]) {
            throw std::invalid_argument("protocol '" + name + "': species " + std::to_string(c) +
                                        " is both revealed and scored");
        }
    }
}

EvalProtocol make_protocol(const data::Dataset& ds, const std::string& name, const std::string& target_group,
                           const std::string& condition_group, data::Split split) {
    const std::size_t C = ds.n_species();
    auto group = [&](const std::string& g) -> std::vector<std::uint8_t> {
        if (g == "all") return std::vector<std::uint8_t>(C, 1);
        auto it = ds.group_masks.find(g);
        if (it == ds.group_masks.end()) throw std::invalid_argument("protocol '" + name + "': unknown group '" + g + "'");
        return it->second;
    };
    EvalProtocol p;
    p.name = name;
    p.split = split;
    p.target_mask = group(target_group);
    if (condition_group == "rest") {
        p.condition_mask.resize(C);
        for (std::size_t c = 0; c < C; ++c) p.condition_mask[c] = !p.target_mask[c];
    } else if (!condition_group.empty()) {
        p.condition_mask = group(condition_group);
    } else {
        p.condition_mask.assign(C, 0);
    }
    p.validate(C);
    return p;
}

nlohmann::json to_json(const EvalProtocol& p, const data::Dataset& ds) {
    std::vector<std::string> cond, targ;
    for (std::size_t c = 0; c < ds.n_species(); ++c) {
        if (c < p.condition_mask.size() && p.condition_mask[c]) cond.push_back(ds.species[c]);
        if (p.target_mask[c]) targ.push_back(ds.species[c]);
    }
    return {{"name", p.name}, {"split", data::to_string(p.split)}, {"condition", cond}, {"target", targ}};
}

std::vector<double> predict(const model::Model& m, const data::Dataset& ds, std::span<const std::size_t> rows,
                            std::span<const std::uint8_t> reveal, std::size_t batch) {
    if (!reveal.empty() && reveal.size() != ds.n_species()) throw std::invalid_argument("reveal mask size");
    return predict_states(m, ds, rows, reveal_states(ds, rows, reveal, m.spec().n_b), batch);
}

Evaluation evaluate_full(const model::Model& m, const data::Dataset& ds, const EvalProtocol& p, bool conditioned) {
    const std::size_t C = ds.n_species();
    p.validate(C);
    if (m.spec().n_species != C) throw std::invalid_argument("model and dataset rosters differ in size");
    Evaluation e;
    e.rows = ds.indices_of(p.split);
    if (e.rows.empty()) throw std::invalid_argument("protocol '" + p.name + "': split has no records");
    e.pred = predict(m, ds, e.rows, conditioned ? std::span<const std::uint8_t>(p.condition_mask)
                                                : std::span<const std::uint8_t>());
    std::vector<double> truth(e.rows.size() * C);
    e.scored.assign(e.rows.size() * C, 0);
    for (std::size_t i = 0; i < e.rows.size(); ++i) {
        const auto& r = ds.records[e.rows[i]];
        for (std::size_t c = 0; c < C; ++c) {
            truth[i * C + c] = r.available[c] ? r.targets[c] : 0.0;
            e.scored[i * C + c] = p.target_mask[c] && r.available[c];
        }
    }
    metrics::CellGrid g{e.rows.size(), C, e.pred, truth, e.scored};
    e.report = metrics::build_report(g, ds.species, ds.is_binary());
    e.report.protocol = p.name;
    // Nothing revealed is the unconditioned setting, whatever was asked for.
    e.report.conditioned =
        conditioned && std::any_of(p.condition_mask.begin(), p.condition_mask.end(), [](auto v) { return v != 0; });
    return e;
}

metrics::EvalReport evaluate(const model::Model& m, const data::Dataset& ds, const EvalProtocol& p,
                             bool conditioned) {
    return evaluate_full(m, ds, p, conditioned).report;
}

void write_predictions_csv(const Evaluation& e, const data::Dataset& ds, std::ostream& out) {
    const std::size_t C = ds.n_species();
    out << "id,species,pred,truth,scored\n";
    for (std::size_t i = 0; i < e.rows.size(); ++i) {
        const auto& r = ds.records[e.rows[i]];
        for (std::size_t c = 0; c < C; ++c) {
            out << r.id << ',' << ds.species[c] << ',' << fmt(e.pred[i * C + c]) << ','
                << (r.available[c] ? fmt(r.targets[c]) : std::string()) << ',' << int(e.scored[i * C + c]) << '\n';
        }
    }
}

void History::write_csv(std::ostream& out) const {
    out << "epoch,train_loss,fixed_loss,val_" << metric << "_uncond,val_" << metric << "_cond,val_mae_uncond,val_mae_cond";
    const std::size_t n_sel = epochs.empty() ? 0 : epochs.front().selection.size();
    for (std::size_t i = 0; i < n_sel; ++i) out << ",selection_" << i;
    out << ",selected\n";
    for (const auto& e : epochs) {
        out << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.fixed_loss) << ',' << fmt(e.val_metric_uncond) << ','
            << fmt(e.val_metric_cond) << ',' << fmt(e.val_mae_uncond) << ',' << fmt(e.val_mae_cond);
        for (double s : e.selection) out << ',' << fmt(s);
        out << ',' << (e.epoch == best_epoch ? 1 : 0) << '\n';
    }
}

std::size_t select_checkpoint_dual(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dual histories differ in length");
    std::size_t best = 0;
    for (std::size_t e = 1; e < a.size(); ++e) {
        if (better(a[e], a[best]) && better(b[e], b[best])) best = e;
    }
    return best;
}

std::size_t select_checkpoint(std::span<const double> metric) {
    std::size_t best = 0;
    for (std::size_t e = 1; e < metric.size(); ++e) {
        if (better(metric[e], metric[best])) best = e;
    }
    return best;
}

namespace {

struct BatchInputs {
    Tensor env;
    Tensor target;
    std::vector<StateAssignment> states;
    std::vector<std::uint8_t> mask;
    std::vector<std::vector<std::size_t>> known;
};

// Label Mask Training inputs for a batch: per example a random known set,
// revealed at the true state; the loss covers available, unknown cells.
BatchInputs make_batch(const model::Model& m, const data::Dataset& ds, std::span<const std::size_t> rows,
                       std::mt19937_64& rng, double cap) {
    const std::size_t C = ds.n_species();
    const int n_b = m.spec().n_b;
    BatchInputs in;
    in.env = env_batch(ds, rows);
    in.target = target_batch(ds, rows);
    in.mask.assign(rows.size() * C, 0);
    in.known.resize(rows.size());
    const bool lmt = m.spec().uses_states();
    if (lmt) in.states.assign(rows.size() * C, StateAssignment::unknown());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = ds.records[rows[i]];
        for (std::size_t c = 0; c < C; ++c) in.mask[i * C + c] = r.available[c];
        if (!lmt) continue;
        in.known[i] = sample_known(r.available, C, rng, cap).known;
        for (std::size_t c : in.known[i]) {
            in.states[i * C + c] = true_state(r, c, n_b);
            in.mask[i * C + c] = 0;
        }
    }
    return in;
}

struct ValMetrics {
    std::vector<double> selection;
    double uncond = 0.0, cond = 0.0, mae_uncond = 0.0, mae_cond = 0.0;
};

ValMetrics validate(const model::Model& m, const data::Dataset& ds, std::span<const std::size_t> rows,
                    const std::vector<std::vector<std::uint8_t>>& groups, std::uint64_t reveal_seed, double cap) {
    const std::size_t C = ds.n_species();
    const bool binary = ds.is_binary();
    std::vector<double> truth(rows.size() * C);
    std::vector<std::uint8_t> avail(rows.size() * C);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = ds.records[rows[i]];
        for (std::size_t c = 0; c < C; ++c) {
            truth[i * C + c] = r.available[c] ? r.targets[c] : 0.0;
            avail[i * C + c] = r.available[c];
        }
    }
    ValMetrics v;
    const auto uncond = predict_states(m, ds, rows, std::vector<StateAssignment>(rows.size() * C), 256);
    const metrics::CellGrid gu{rows.size(), C, uncond, truth, avail};
    v.uncond = safe_metric(gu, binary);
    v.mae_uncond = safe_mae(gu);
    for (const auto& g : groups) {
        std::vector<std::uint8_t> sc(avail.size());
        for (std::size_t i = 0; i < avail.size(); ++i) sc[i] = avail[i] && g[i % C];
        v.selection.push_back(safe_metric({rows.size(), C, uncond, truth, sc}, binary));
    }
    if (groups.empty()) v.selection.push_back(v.uncond);

    if (m.spec().uses_states()) {
        std::mt19937_64 rng(reveal_seed);
        std::vector<StateAssignment> st(rows.size() * C);
        std::vector<std::uint8_t> sc = avail;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& r = ds.records[rows[i]];
            for (std::size_t c : sample_known(r.available, C, rng, cap).known) {
                st[i * C + c] = true_state(r, c, m.spec().n_b);
                sc[i * C + c] = 0;
            }
        }
        const auto cond = predict_states(m, ds, rows, st, 256);
        const metrics::CellGrid gc{rows.size(), C, cond, truth, sc};
        v.cond = safe_metric(gc, binary);
        v.mae_cond = safe_mae(gc);
    } else {
        v.cond = v.uncond;
        v.mae_cond = v.mae_uncond;
    }
    return v;
}

std::vector<std::vector<double>> snapshot(const num::NamedParams& params) {
    std::vector<std::vector<double>> s;
    for (const auto& [name, t] : params) s.emplace_back(t.values().begin(), t.values().end());
    return s;
}

void restore(const num::NamedParams& params, const std::vector<std::vector<double>>& s) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].second;
        std::copy(s[i].begin(), s[i].end(), t.values().begin());
    }
}

}  // namespace

TrainResult train(const data::Dataset& ds, const model::ModelSpec& spec, const TrainConfig& cfg,
                  std::optional<features::MaxentConfig> maxent, const ProgressFn& progress) {
    if (spec.n_species != ds.n_species() || spec.n_env != ds.n_env()) {
        throw std::invalid_argument("model spec does not match the dataset (" + std::to_string(ds.n_species()) +
                                    " species, " + std::to_string(ds.n_env()) + " env variables)");
    }
    auto train_rows = ds.indices_of(data::Split::Train);
    const auto val_rows = ds.indices_of(data::Split::Val);
    if (train_rows.empty()) throw std::invalid_argument("train split is empty");
    if (val_rows.empty()) throw std::invalid_argument("validation split is empty");

    std::vector<std::vector<std::uint8_t>> groups;
    for (const auto& g : cfg.selection_groups) {
        auto it = ds.group_masks.find(g);
        if (it == ds.group_masks.end()) throw std::invalid_argument("selection group '" + g + "' not in dataset");
        groups.push_back(it->second);
    }

    model::Model m(spec, sub_seed(cfg.seed, 1), std::move(maxent));
    const auto params = m.parameters();
    num::AdamW opt(params, {cfg.lr, cfg.weight_decay});
    std::mt19937_64 shuffle_rng(sub_seed(cfg.seed, 2));
    std::mt19937_64 mask_rng(sub_seed(cfg.seed, 3));
    std::mt19937_64 dropout_rng(sub_seed(cfg.seed, 4));
    const std::uint64_t reveal_seed = sub_seed(cfg.seed, 5);
    const double cap = cfg.mask_cap_fraction;

    History h;
    h.metric = ds.is_binary() ? "auc" : "topk";
    // loss over the train split with a fixed reveal draw and no dropout, so
    // epochs are comparable with each other and with the untrained model
    auto fixed_loss = [&] {
        std::mt19937_64 rng(sub_seed(cfg.seed, 6));
        double total = 0.0;
        std::size_t n = 0;
        for (std::size_t lo = 0; lo < train_rows.size(); lo += cfg.batch_size) {
            const auto sub = std::span<const std::size_t>(train_rows).subspan(
                lo, std::min(cfg.batch_size, train_rows.size() - lo));
            auto in = make_batch(m, ds, sub, rng, cap);
            total += num::bce_masked(m.forward(in.env, in.states), in.target, in.mask).item();
            ++n;
        }
        return total / static_cast<double>(n);
    };
    auto record = [&](std::size_t epoch, double loss) {
        auto v = validate(m, ds, val_rows, groups, reveal_seed, cap);
        const double fl = fixed_loss();
        EpochRecord e{epoch, epoch == 0 ? fl : loss, fl, v.selection, v.uncond, v.cond, v.mae_uncond, v.mae_cond};
        h.epochs.push_back(e);
        if (progress) progress(e);
        return e;
    };

    auto incumbent = record(0, 0.0);
    auto best = snapshot(params);

    model::ForwardOptions fo;
    fo.train = true;
    fo.rng = &dropout_rng;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(train_rows.begin(), train_rows.end(), shuffle_rng);
        double total = 0.0;
        std::size_t steps = 0;
        for (std::size_t lo = 0; lo < train_rows.size(); lo += cfg.batch_size) {
            const auto sub = std::span<const std::size_t>(train_rows).subspan(
                lo, std::min(cfg.batch_size, train_rows.size() - lo));
            auto in = make_batch(m, ds, sub, mask_rng, cap);
            num::Tape tape;
            num::TapeScope scope(tape);
            Tensor loss = num::bce_masked(m.forward(in.env, in.states, fo), in.target, in.mask);
            const double lv = loss.item();
            if (!std::isfinite(lv)) {
                throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                    std::to_string(steps + 1));
            }
            tape.backward(loss);
            opt.step();
            total += lv;
            ++steps;
        }
        auto e = record(epoch, total / static_cast<double>(steps));
        bool improved = true;
        for (std::size_t g = 0; g < e.selection.size(); ++g) {
            improved = improved && better(e.selection[g], incumbent.selection[g]);
        }
        if (improved) {
            incumbent = e;
            h.best_epoch = epoch;
            best = snapshot(params);
        }
    }
    restore(params, best);
    return {std::move(m), std::move(h)};
}

LossProbe probe_loss_gradient(const model::Model& m, const data::Dataset& ds, std::span<const std::size_t> rows,
                              std::mt19937_64& rng, double cap_fraction, int n_b) {
    if (n_b != m.spec().n_b) throw std::invalid_argument("probe n_b differs from the model's");
    auto in = make_batch(m, ds, rows, rng, cap_fraction);
    num::Tape tape;
    num::TapeScope scope(tape);
    Tensor pred = m.forward(in.env, in.states);
    Tensor loss = num::bce_masked(pred, in.target, in.mask);
    tape.backward(loss);
    LossProbe p;
    if (pred.has_grad()) {
        p.grad_pred.assign(pred.grad_view().begin(), pred.grad_view().end());
    } else {
        p.grad_pred.assign(pred.size(), 0.0);
    }
    p.loss_mask = std::move(in.mask);
    p.known = std::move(in.known);
    for (auto& [name, t] : m.parameters()) t.zero_grad();
    return p;
}

std::vector<DeltaRow> conditioning_delta(const model::Model& m, const data::Dataset& ds, std::size_t source,
                                         std::span<const std::size_t> targets, data::Split split) {
    const std::size_t C = ds.n_species();
    if (source >= C) throw std::invalid_argument("source species index out of range");
    std::vector<std::size_t> rows;
    for (std::size_t i : ds.indices_of(split)) {
        const auto& r = ds.records[i];
        if (r.available[source] && r.targets[source] > 0.0) rows.push_back(i);
    }
    if (rows.empty()) {
        throw std::invalid_argument("species '" + ds.species[source] + "' has no positive " +
                                    data::to_string(split) + " locations");
    }
    std::vector<std::uint8_t> reveal(C, 0);
    reveal[source] = 1;
    const auto base = predict(m, ds, rows, {});
    const auto cond = predict(m, ds, rows, reveal);
    std::vector<DeltaRow> out;
    for (std::size_t t : targets) {
        if (t >= C) throw std::invalid_argument("target species index out of range");
        DeltaRow d{t, ds.species[t], 0.0, rows.size(), t == source};
        for (std::size_t i = 0; i < rows.size(); ++i) d.mean_delta += cond[i * C + t] - base[i * C + t];
        d.mean_delta /= static_cast<double>(rows.size());
        out.push_back(d);
    }
    return out;
}

void write_delta_csv(const std::vector<DeltaRow>& rows, const std::string& source, std::ostream& out) {
    out << "source,target,mean_delta,locations,flagged\n";
    for (const auto& d : rows) {
        out << source << ',' << d.name << ',' << fmt(d.mean_delta) << ',' << d.locations << ','
            << (d.flagged ? 1 : 0) << '\n';
    }
}

void predict_map(const model::Model& m, const data::Dataset& grid, std::span<const std::uint8_t> reveal,
                 std::ostream& out) {
    std::vector<std::size_t> rows(grid.records.size());
    std::iota(rows.begin(), rows.end(), 0);
    const auto pred = predict(m, grid, rows, reveal);
    const std::size_t C = grid.n_species();
    out << "lat,lon,species,pred\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = grid.records[i];
        for (std::size_t c = 0; c < C; ++c) {
            out << fmt(r.lat) << ',' << fmt(r.lon) << ',' << grid.species[c] << ',' << fmt(pred[i * C + c]) << '\n';
        }
    }
}

}  // namespace ciso::train
