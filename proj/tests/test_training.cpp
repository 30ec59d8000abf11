#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "ciso/synth/synth.hpp"
#include "ciso/training/training.hpp"

using namespace ciso;
using namespace ciso::train;

namespace {

model::ModelSpec small_spec(model::Family f, const data::Dataset& ds, int n_b = 1) {
    model::ModelSpec s;
    s.family = f;
    s.n_species = ds.n_species();
    s.n_env = ds.n_env();
    s.hidden_dim = 8;
    s.heads = 2;
    s.ff_dim = 16;
    s.n_b = n_b;
    s.transformer_layers = 1;
    return s;
}

data::Dataset small_data(std::size_t n = 300, double strength = 3.0, std::uint64_t seed = 1, double missing = 0.0) {
    auto s = synth::planted_spec(6, 3, n, strength, seed);
    s.missingness = missing;
    s.block_deg = 2.0;
    return synth::generate(s);
}

// chi-square upper critical values at p = 0.01
double chi2_crit(int df) {
    static const double t[] = {0, 6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475, 20.090};
    return t[df];
}

}  // namespace

TEST_CASE("sample_known edge cases") {
    std::mt19937_64 rng(1);
    std::vector<std::uint8_t> none(4, 0);
    for (int i = 0; i < 100; ++i) CHECK(sample_known(none, 4, rng).k == 0);
    std::vector<std::uint8_t> all(4, 1);
    std::vector<int> seen(5, 0);
    for (int i = 0; i < 4000; ++i) ++seen[sample_known(all, 4, rng).k];
    CHECK(seen[4] == 0);
    for (int k = 0; k < 4; ++k) CHECK(seen[k] > 0);
}

TEST_CASE("sample_known distribution") {
    std::mt19937_64 rng(2);
    // |C| = 10, cap 3/4 -> 7; l = 8 available
    std::vector<std::uint8_t> avail{1, 1, 0, 1, 1, 1, 0, 1, 1, 1};
    const int N = 100000;
    std::vector<double> kcount(8, 0), member(10, 0);
    double ksum = 0;
    for (int i = 0; i < N; ++i) {
        auto s = sample_known(avail, 10, rng);
        REQUIRE(s.known.size() == s.k);
        ++kcount[s.k];
        ksum += s.k;
        for (auto c : s.known) {
            REQUIRE(avail[c]);
            ++member[c];
        }
    }
    double chi = 0;
    for (int k = 0; k <= 7; ++k) chi += std::pow(kcount[k] - N / 8.0, 2) / (N / 8.0);
    CHECK(chi < chi2_crit(7));
    double total = 0;
    for (double m : member) total += m;
    CHECK(total == ksum);
    double chi_m = 0;
    for (std::size_t c = 0; c < 10; ++c) {
        if (!avail[c]) {
            CHECK(member[c] == 0);
            continue;
        }
        chi_m += std::pow(member[c] - total / 8, 2) / (total / 8);
    }
    CHECK(chi_m < chi2_crit(7));
}

TEST_CASE("loss gradient is zero at known and unavailable cells") {
    auto ds = small_data(200, 3.0, 3, 0.3);
    std::vector<std::size_t> rows(64);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    for (auto f : {model::Family::Ciso, model::Family::MlpPP, model::Family::Mlp}) {
        model::Model m(small_spec(f, ds), 4);
        std::mt19937_64 rng(5);
        auto probe = probe_loss_gradient(m, ds, rows, rng, 0.75, 1);
        const std::size_t C = ds.n_species();
        std::size_t nonzero = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& r = ds.records[rows[i]];
            for (std::size_t c = 0; c < C; ++c) {
                const double g = probe.grad_pred[i * C + c];
                const bool known = std::find(probe.known[i].begin(), probe.known[i].end(), c) != probe.known[i].end();
                if (known || !r.available[c]) {
                    CHECK(g == 0.0);
                    CHECK(probe.loss_mask[i * C + c] == 0);
                } else {
                    nonzero += g != 0.0;
                }
                if (known) CHECK(r.available[c]);
            }
        }
        CHECK(nonzero > 0);
        if (f == model::Family::Mlp) {
            for (const auto& k : probe.known) CHECK(k.empty());
        }
    }
}

TEST_CASE("dual checkpoint rule") {
    std::vector<double> a{0.5, 0.6}, b{0.5, 0.4};
    CHECK(select_checkpoint_dual(a, b) == 0);
    b[1] = 0.55;
    CHECK(select_checkpoint_dual(a, b) == 1);
    b[1] = 0.5;  // tie is not an improvement
    CHECK(select_checkpoint_dual(a, b) == 0);
    // hand trace: incumbent 0 -> 1 (both up) -> 1 (A down) -> 3 (both above epoch 1) -> 3 (B tie)
    std::vector<double> A{0.50, 0.55, 0.54, 0.60, 0.70};
    std::vector<double> B{0.40, 0.45, 0.60, 0.46, 0.46};
    CHECK(select_checkpoint_dual(A, B) == 3);
    CHECK(select_checkpoint(A) == 4);
    CHECK(select_checkpoint(std::vector<double>{0.3, 0.3, 0.2}) == 0);
    CHECK_THROWS(select_checkpoint_dual(A, std::vector<double>{1.0}));
}

TEST_CASE("presets") {
    CHECK(preset("splotopen").lr == 1e-3);
    CHECK(preset("splotopen").batch_size == 64);
    CHECK(preset("splotopen").n_b == 1);
    CHECK(preset("splotopen").epochs == 20);
    CHECK(preset("satbird").lr == 1e-4);
    CHECK(preset("satbird").batch_size == 128);
    CHECK(preset("satbird").epochs == 50);
    CHECK(preset("across").selection_groups.size() == 2);
    CHECK_THROWS(preset("ebird"));
    auto c = train_config_from_json({{"lr", 0.01}}, preset("satbird"));
    CHECK(c.lr == 0.01);
    CHECK(c.batch_size == 128);
    CHECK_THROWS(train_config_from_json({{"batch_size", 0}}));
}

TEST_CASE("evaluation protocols") {
    auto ds = small_data(300);
    model::Model m(small_spec(model::Family::Ciso, ds), 2);
    auto empty = make_protocol(ds, "p", "children", "");
    auto a = evaluate(m, ds, empty, true), b = evaluate(m, ds, empty, false);
    CHECK_FALSE(a.conditioned);
    CHECK(metrics::to_json(a).dump() == metrics::to_json(b).dump());
    CHECK_THROWS(make_protocol(ds, "bad", "children", "all"));
    CHECK_THROWS(make_protocol(ds, "bad", "birds", ""));

    auto p = make_protocol(ds, "p", "children", "roots");
    auto e = evaluate_full(m, ds, p, true);
    double s = 0;
    std::size_t n = 0;
    const std::size_t C = ds.n_species();
    for (std::size_t i = 0; i < e.rows.size(); ++i) {
        const auto& r = ds.records[e.rows[i]];
        for (std::size_t c = 3; c < C; ++c) {
            s += std::abs(e.pred[i * C + c] - r.targets[c]);
            ++n;
        }
    }
    CHECK(e.report.mae_x100 == doctest::Approx(100.0 * s / n).epsilon(1e-12));
    std::ostringstream csv;
    write_predictions_csv(e, ds, csv);
    const auto text = csv.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(e.rows.size() * C + 1));
    auto rest = make_protocol(ds, "q", "children", "rest");
    CHECK(rest.condition_mask == p.condition_mask);
}

TEST_CASE("training is seeded and deterministic") {
    auto ds = small_data(300);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 9;
    auto spec = small_spec(model::Family::Ciso, ds);
    auto r1 = train::train(ds, spec, cfg);
    auto r2 = train::train(ds, spec, cfg);
    model::Checkpoint meta{spec, ds.species, nlohmann::json::object(), cfg.seed};
    CHECK(model::serialize_checkpoint(r1.model, meta) == model::serialize_checkpoint(r2.model, meta));
    std::ostringstream h1, h2;
    r1.history.write_csv(h1);
    r2.history.write_csv(h2);
    CHECK(h1.str() == h2.str());
    CHECK(h1.str().rfind("epoch,train_loss,fixed_loss,val_auc_uncond", 0) == 0);
    CHECK(r1.history.epochs.size() == 3);
    cfg.seed = 10;
    auto r3 = train::train(ds, spec, cfg);
    CHECK(model::serialize_checkpoint(r3.model, meta) != model::serialize_checkpoint(r1.model, meta));
}

TEST_CASE("first epoch lowers the loss on every preset") {
    auto bin = small_data(1500, 3.0, 4);
    auto s = synth::planted_spec(6, 3, 1500, 3.0, 4);
    s.rates = true;
    s.block_deg = 2.0;
    auto rates = synth::generate(s);
    for (const std::string name : {"splotopen", "satbird", "across"}) {
        auto cfg = preset(name);
        cfg.epochs = 1;
        cfg.selection_groups.clear();
        const auto& ds = name == "splotopen" ? bin : rates;
        auto spec = small_spec(model::Family::Ciso, ds, cfg.n_b);
        auto r = train::train(ds, spec, cfg);
        CHECK_MESSAGE(r.history.epochs[1].fixed_loss < r.history.epochs[0].fixed_loss, name);
    }
}

TEST_CASE("dual selection uses both dataset groups") {
    auto ds = small_data(300);
    ds.group_masks["dataset_a"] = ds.group_masks.at("roots");
    ds.group_masks["dataset_b"] = ds.group_masks.at("children");
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.selection_groups = {"dataset_a", "dataset_b"};
    auto r = train::train(ds, small_spec(model::Family::Mlp, ds), cfg);
    std::vector<double> a, b;
    for (const auto& e : r.history.epochs) {
        REQUIRE(e.selection.size() == 2);
        a.push_back(e.selection[0]);
        b.push_back(e.selection[1]);
    }
    CHECK(r.history.best_epoch == select_checkpoint_dual(a, b));
    cfg.selection_groups = {"dataset_a", "nope"};
    CHECK_THROWS(train::train(ds, small_spec(model::Family::Mlp, ds), cfg));
}

TEST_CASE("conditioning delta") {
    // two species, B strongly facilitated by A, flat environment
    synth::SynthSpec s;
    s.n_species = 2;
    s.n_env = 1;
    s.n_locations = 2000;
    s.theta = {{0.0}, {0.0}};
    s.bias = {0.0, -2.5};
    s.W = {{0.0, 0.0}, {5.0, 0.0}};
    s.block_deg = 2.0;
    s.seed = 3;
    auto ds = synth::generate(s);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.lr = 3e-3;
    auto r = train::train(ds, small_spec(model::Family::Ciso, ds), cfg);
    std::vector<std::size_t> targets{1, 0};
    auto d = conditioning_delta(r.model, ds, 0, targets);
    REQUIRE(d.size() == 2);
    CHECK(d[0].mean_delta > 0.0);
    CHECK_FALSE(d[0].flagged);
    CHECK(d[1].flagged);
    std::ostringstream os;
    write_delta_csv(d, "sp0", os);
    CHECK(os.str().rfind("source,target,mean_delta,locations,flagged\n", 0) == 0);

    auto absent = ds;
    for (auto& rec : absent.records) rec.targets[0] = 0.0;
    CHECK_THROWS_WITH(conditioning_delta(r.model, absent, 0, targets), doctest::Contains("sp0"));

    std::ostringstream map_u, map_c;
    data::Dataset grid = ds;
    grid.records.resize(5);
    predict_map(r.model, grid, {}, map_u);
    std::vector<std::uint8_t> reveal{1, 0};
    predict_map(r.model, grid, reveal, map_c);
    const auto map_text = map_u.str();
    CHECK(std::count(map_text.begin(), map_text.end(), '\n') == 11);
    CHECK(map_u.str().rfind("lat,lon,species,pred\n", 0) == 0);
    CHECK(map_u.str() != map_c.str());
}
