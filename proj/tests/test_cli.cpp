#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ciso/cli/cli.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = ciso::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t lines(const std::string& s) {
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// Shared scratch directory with a small synthetic dataset and one checkpoint.
struct Fixture {
    fs::path dir;
    fs::path data, schema, ckpt;
    Fixture() {
        dir = fs::temp_directory_path() / ("ciso_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        const auto syn = dir / "syn";
        REQUIRE(cli({"synth", "--species", "6", "--env", "3", "--locations", "500", "--seed", "4", "--out-dir",
                     syn.string()})
                    .code == 0);
        data = syn / "synth.csv";
        schema = syn / "schema.json";
        ckpt = dir / "train" / "checkpoint.json";
        REQUIRE(cli({"train", "--dataset", data.string(), "--schema", schema.string(), "--hidden-dim", "8",
                     "--ff-dim", "16", "--epochs", "2", "--seed", "7", "--quiet", "--out-dir",
                     (dir / "train").string()})
                    .code == 0);
    }
    ~Fixture() { fs::remove_all(dir); }
};

Fixture& fx() {
    static Fixture f;
    return f;
}

}  // namespace

TEST_CASE("unknown subcommand prints usage") {
    auto r = cli({"frobnicate"});
    CHECK(r.code != 0);
    CHECK(r.err.find("usage: ciso") != std::string::npos);
    CHECK(cli({}).code != 0);
}

TEST_CASE("synth writes dataset, spec, oracle and manifest") {
    auto& f = fx();
    const auto syn = f.data.parent_path();
    for (auto n : {"synth.csv", "schema.json", "spec.json", "oracle.json", "synth.manifest.json"}) {
        CHECK(fs::exists(syn / n));
    }
    const auto oracle = json::parse(slurp(syn / "oracle.json"));
    CHECK(oracle["children|roots"]["conditional_mae"].get<double>() <=
          oracle["children|roots"]["marginal_mae"].get<double>());
    const auto man = json::parse(slurp(syn / "synth.manifest.json"));
    for (auto k : {"command", "config", "seed", "inputs", "outputs", "version", "wall_clock_s"}) {
        CHECK(man.contains(k));
    }
    CHECK(man["seed"] == 4);
    CHECK(lines(slurp(f.data)) == 501);
}

TEST_CASE("train is deterministic and keeps the manifest out of the checkpoint") {
    auto& f = fx();
    const auto again = f.dir / "train2";
    REQUIRE(cli({"train", "--dataset", f.data.string(), "--schema", f.schema.string(), "--hidden-dim", "8",
                 "--ff-dim", "16", "--epochs", "2", "--seed", "7", "--quiet", "--out-dir", again.string()})
                .code == 0);
    CHECK(slurp(f.ckpt) == slurp(again / "checkpoint.json"));
    CHECK(slurp(f.ckpt).find("wall_clock") == std::string::npos);
    CHECK(lines(slurp(again / "history.csv")) == 4);

    const auto other = f.dir / "train3";
    REQUIRE(cli({"train", "--dataset", f.data.string(), "--hidden-dim", "8", "--ff-dim", "16", "--epochs", "2",
                 "--seed", "8", "--quiet", "--out-dir", other.string()})
                .code == 0);
    CHECK(slurp(f.ckpt) != slurp(other / "checkpoint.json"));
}

TEST_CASE("config file fills flags and explicit flags win") {
    auto& f = fx();
    const auto cfg = f.dir / "cfg.json";
    std::ofstream(cfg) << json{{"dataset", f.data.string()}, {"schema", f.schema.string()}, {"hidden_dim", 8},
                               {"ff_dim", 16}, {"epochs", 2}, {"seed", 99}, {"quiet", true}}
                              .dump();
    const auto out = f.dir / "cfgrun";
    REQUIRE(cli({"train", "--config", cfg.string(), "--seed", "7", "--out-dir", out.string()}).code == 0);
    CHECK(slurp(f.ckpt) == slurp(out / "checkpoint.json"));
    const auto man = json::parse(slurp(out / "train.manifest.json"));
    CHECK(man["resolved"]["train"]["epochs"] == 2);
    CHECK(man["resolved"]["model"]["hidden_dim"] == 8);
}

TEST_CASE("invalid config exits nonzero without partial outputs") {
    auto& f = fx();
    const auto bad = f.dir / "bad.json";
    std::ofstream(bad) << R"({"dataset": "x.csv", "not_an_option": 1})";
    const auto out = f.dir / "badrun";
    auto r = cli({"train", "--config", bad.string(), "--out-dir", out.string()});
    CHECK(r.code != 0);
    CHECK(r.err.find("not_an_option") != std::string::npos);
    CHECK_FALSE(fs::exists(out));

    std::ofstream(bad) << "{ not json";
    CHECK(cli({"train", "--config", bad.string(), "--out-dir", out.string()}).code != 0);
    CHECK(cli({"train", "--dataset", f.data.string(), "--family", "gbm", "--out-dir", out.string()}).code != 0);
    CHECK(cli({"train", "--dataset", f.data.string(), "--epochs", "0", "--out-dir", out.string()}).code != 0);
    CHECK(cli({"eval", "--checkpoint", f.ckpt.string(), "--dataset", f.data.string(), "--target", "nope",
               "--out-dir", out.string()})
              .code != 0);
    CHECK_FALSE(fs::exists(out));
}

TEST_CASE("eval with an empty condition set equals --unconditioned") {
    auto& f = fx();
    const auto a = f.dir / "eval_a", b = f.dir / "eval_b", c = f.dir / "eval_c";
    const std::vector<std::string> base = {"eval",     "--checkpoint",  f.ckpt.string(), "--dataset",
                                           f.data.string(), "--schema", f.schema.string(), "--target",
                                           "children"};
    auto with = [&](std::vector<std::string> extra, const fs::path& out) {
        auto args = base;
        args.insert(args.end(), extra.begin(), extra.end());
        args.push_back("--out-dir");
        args.push_back(out.string());
        return cli(args).code;
    };
    REQUIRE(with({}, a) == 0);
    REQUIRE(with({"--unconditioned"}, b) == 0);
    CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
    CHECK(slurp(a / "table.txt") == slurp(b / "table.txt"));
    CHECK(slurp(a / "predictions.csv") == slurp(b / "predictions.csv"));

    REQUIRE(with({"--condition", "roots"}, c) == 0);
    const auto rep = json::parse(slurp(c / "report.json"));
    CHECK(rep["report"]["conditioned"] == true);
    CHECK(slurp(a / "predictions.csv") != slurp(c / "predictions.csv"));
}

TEST_CASE("delta and map") {
    auto& f = fx();
    const auto d = f.dir / "delta";
    REQUIRE(cli({"delta", "--checkpoint", f.ckpt.string(), "--dataset", f.data.string(), "--source", "sp0",
                 "--out-dir", d.string()})
                .code == 0);
    const auto csv = slurp(d / "delta.csv");
    CHECK(csv.rfind("source,target,mean_delta,locations,flagged\n", 0) == 0);
    CHECK(lines(csv) == 7);
    CHECK(cli({"delta", "--checkpoint", f.ckpt.string(), "--dataset", f.data.string(), "--source", "sp99",
               "--out-dir", d.string()})
              .code != 0);

    const auto grid = f.dir / "grid.csv";
    std::ofstream(grid) << "lat,lon,env_0,env_1,env_2,sp_sp0\n40,-100,0.1,0.2,0.3,1\n41,-101,-0.5,0,0.5,\n";
    const auto m = f.dir / "map";
    REQUIRE(cli({"map", "--checkpoint", f.ckpt.string(), "--grid", grid.string(), "--reveal", "sp0", "--out-dir",
                 m.string()})
                .code == 0);
    CHECK(lines(slurp(m / "map.csv")) == 1 + 2 * 6);
}

TEST_CASE("prepare merges, filters, splits and normalizes") {
    auto& f = fx();
    const auto raw = f.dir / "raw.csv";
    {
        std::ofstream out(raw);
        out << "id,lat,lon,env_0,env_1,sp_Quercus alba,sp_Quercus albaa,sp_Rare one\n";
        for (int i = 0; i < 200; ++i) {
            out << "r" << i << ',' << 30 + (i % 20) << ',' << -120 + (i / 20) * 3 << ',' << i * 0.1 << ",7,"
                << (i % 3 == 0) << ',' << (i % 5 == 0) << ',' << (i == 0) << '\n';
        }
    }
    const auto p = f.dir / "prep";
    auto r = cli({"prepare", "--input", raw.string(), "--merge", "Quercus alba=Quercus albaa", "--min-presences",
                  "2", "--seed", "1", "--out-dir", p.string()});
    REQUIRE(r.code == 0);
    for (auto n : {"dataset.csv", "schema.json", "norm_stats.json", "split.json", "merge_proposals.csv",
                   "prepare_report.json", "prepare.manifest.json"}) {
        CHECK(fs::exists(p / n));
    }
    const auto rep = json::parse(slurp(p / "prepare_report.json"));
    CHECK(rep["species_out"] == 1);
    CHECK(rep["env_dropped"] == json::array({1}));
    CHECK(slurp(p / "merge_proposals.csv").find("Quercus alba,Quercus albaa") != std::string::npos);
    const auto split = json::parse(slurp(p / "split.json"));
    CHECK(split.size() == 200);

    // Re-running with the same inputs reproduces every data output.
    const auto p2 = f.dir / "prep2";
    REQUIRE(cli({"prepare", "--input", raw.string(), "--merge", "Quercus alba=Quercus albaa", "--min-presences",
                 "2", "--seed", "1", "--out-dir", p2.string()})
                .code == 0);
    for (auto n : {"dataset.csv", "norm_stats.json", "split.json"}) CHECK(slurp(p / n) == slurp(p2 / n));

    CHECK(cli({"prepare", "--input", raw.string(), "--merge", "noequals", "--out-dir", (f.dir / "prep3").string()})
              .code != 0);
    CHECK_FALSE(fs::exists(f.dir / "prep3"));
}

TEST_CASE("colocate writes pairs and a combined dataset") {
    auto& f = fx();
    const auto b = f.dir / "b.csv";
    std::ofstream(b) << "id,lat,lon,env_0,sp_Danaus\nb0,40,-100,1,1\nb1,10,10,1,0\n";
    const auto a = f.dir / "a.csv";
    std::ofstream(a) << "id,lat,lon,env_0,sp_Oak,split\na0,40.001,-100,0,1,train\na1,45,-90,0,0,train\n";
    const auto out = f.dir / "coloc";
    REQUIRE(cli({"colocate", "--a", a.string(), "--b", b.string(), "--out-dir", out.string()}).code == 0);
    const auto pairs = slurp(out / "pairs.csv");
    CHECK(lines(pairs) == 2);
    CHECK(pairs.find("a0,b0,") != std::string::npos);
    const auto schema = json::parse(slurp(out / "schema.json"));
    CHECK(schema["species"] == json::array({"Oak", "Danaus"}));
}

TEST_CASE("ablate emits table-shaped CSVs") {
    auto& f = fx();
    const auto out = f.dir / "ablate";
    auto r = cli({"ablate", "--dataset", f.data.string(), "--schema", f.schema.string(), "--groups", "roots",
                  "children", "--hidden-dim", "8", "--ff-dim", "16", "--dims", "8", "16", "32", "--epochs", "1",
                  "--out-dir", out.string()});
    REQUIRE(r.code == 0);
    const auto enc = slurp(out / "ablation_encoding.csv");
    CHECK(lines(enc) == 9);
    CHECK(enc.find("Conditioned,Periodic,") != std::string::npos);
    CHECK(enc.rfind("section,setting,params,mae_x100_roots,mae_x100_children,auc_pct_roots,auc_pct_children\n",
                    0) == 0);
    const auto depth = slurp(out / "ablation_depth.csv");
    CHECK(lines(depth) == 9);
    CHECK(depth.find("MLP: #layers,MLP-7,") != std::string::npos);
    CHECK(depth.find("Conditioned,CISO,") != std::string::npos);
    const auto dims = slurp(out / "ablation_dims.csv");
    CHECK(lines(dims) == 7);
    CHECK(dims.find("Unconditioned,32,") != std::string::npos);

    CHECK(cli({"ablate", "--dataset", f.data.string(), "--sweep", "width", "--out-dir", out.string()}).code != 0);
}
