#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ciso/dataio/dataset.hpp"
#include "ciso/metrics/metrics.hpp"
#include "ciso/models/model.hpp"

namespace ciso::train {

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch_size = 64;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;
    int n_b = 1;
    double mask_cap_fraction = 0.75;
    double weight_decay = 0.01;
    // Empty: select on all species. Two group names: dual-dataset rule, one
    // metric per group, strict improvement on both.
    std::vector<std::string> selection_groups;
};

// "splotopen", "satbird", "across". Throws on an unknown name.
TrainConfig preset(const std::string& name);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct KnownSetSample {
    std::vector<std::size_t> known;  // ascending species indices
    std::size_t k = 0;
};

// k ~ U{0 .. min(floor(cap * n_species), l)}, then k species drawn without
// replacement from the available ones.
KnownSetSample sample_known(std::span<const std::uint8_t> available, std::size_t n_species, std::mt19937_64& rng,
                            double cap_fraction = 0.75);

// True state of species c at a record, binned with n_b (value kept for the
// continuous encodings).
enc::StateAssignment true_state(const data::LocationRecord& r, std::size_t c, int n_b);

struct EvalProtocol {
    std::string name = "all";
    std::vector<std::uint8_t> condition_mask;  // species revealed when conditioned
    std::vector<std::uint8_t> target_mask;     // species scored
    data::Split split = data::Split::Test;

    // Throws std::invalid_argument when masks overlap or have the wrong size.
    void validate(std::size_t n_species) const;
};

// Target and condition sets from group names ("all" = every species, "" for
// the condition group = nothing revealed, "rest" = complement of the target
// group). Throws on an unknown group.
EvalProtocol make_protocol(const data::Dataset& ds, const std::string& name, const std::string& target_group,
                           const std::string& condition_group, data::Split split = data::Split::Test);
nlohmann::json to_json(const EvalProtocol& p, const data::Dataset& ds);

// Predictions [rows.size() x n_species] for the given record indices.
// `reveal` (n_species flags or empty) marks species shown at their true state
// where available; everything else is Unknown.
std::vector<double> predict(const model::Model& m, const data::Dataset& ds, std::span<const std::size_t> rows,
                            std::span<const std::uint8_t> reveal, std::size_t batch = 256);

struct Evaluation {
    metrics::EvalReport report;
    std::vector<std::size_t> rows;
    std::vector<double> pred;
    std::vector<std::uint8_t> scored;
};

Evaluation evaluate_full(const model::Model& m, const data::Dataset& ds, const EvalProtocol& p, bool conditioned);
metrics::EvalReport evaluate(const model::Model& m, const data::Dataset& ds, const EvalProtocol& p,
                             bool conditioned);

// Writes id,species,pred,truth,scored for every (row, species) pair.
void write_predictions_csv(const Evaluation& e, const data::Dataset& ds, std::ostream& out);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean over the epoch's steps (epoch 0: same as fixed_loss)
    double fixed_loss = 0.0;  // train split, fixed reveal draw, no dropout
    std::vector<double> selection;  // one value per selection group
    double val_metric_uncond = 0.0;
    double val_metric_cond = 0.0;
    double val_mae_uncond = 0.0;
    double val_mae_cond = 0.0;
};

struct History {
    std::string metric;  // "auc" or "topk"
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;

    void write_csv(std::ostream& out) const;
};

// Incumbent starts at epoch 0; an epoch replaces it only when it is strictly
// better on both metrics.
std::size_t select_checkpoint_dual(std::span<const double> metric_a, std::span<const double> metric_b);
// Single-metric rule: first epoch attaining the strict running maximum.
std::size_t select_checkpoint(std::span<const double> metric);

class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    model::Model model;
    History history;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

// Trains on the train split, selecting on the val split. The returned model
// holds the selected epoch's parameters.
TrainResult train(const data::Dataset& ds, const model::ModelSpec& spec, const TrainConfig& cfg,
                  std::optional<features::MaxentConfig> maxent = std::nullopt, const ProgressFn& progress = {});

// Gradient of the training loss with respect to the model output for one
// batch, for mask-integrity checks: returns d loss / d yhat [B x C] plus the
// loss mask used.
struct LossProbe {
    std::vector<double> grad_pred;
    std::vector<std::uint8_t> loss_mask;
    std::vector<std::vector<std::size_t>> known;
};
LossProbe probe_loss_gradient(const model::Model& m, const data::Dataset& ds, std::span<const std::size_t> rows,
                              std::mt19937_64& rng, double cap_fraction, int n_b);

struct DeltaRow {
    std::size_t target = 0;
    std::string name;
    double mean_delta = 0.0;
    std::size_t locations = 0;
    bool flagged = false;  // target is the revealed source species
};

// Mean change of each target's prediction when the source species is revealed
// at its true state, over split locations where the source is present.
std::vector<DeltaRow> conditioning_delta(const model::Model& m, const data::Dataset& ds, std::size_t source,
                                         std::span<const std::size_t> targets,
                                         data::Split split = data::Split::Test);
void write_delta_csv(const std::vector<DeltaRow>& rows, const std::string& source, std::ostream& out);

// lat,lon,species,pred for every record and species; `reveal` as in predict().
void predict_map(const model::Model& m, const data::Dataset& grid, std::span<const std::uint8_t> reveal,
                 std::ostream& out);

}  // namespace ciso::train
