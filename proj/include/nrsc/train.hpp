#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nrsc/net.hpp"
#include "nrsc/synthdata.hpp"

namespace nrsc {

enum class TrainMode { normal, fixed_template };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
    int batch_size = 10;
    double lr = 1e-3;
    double beta1 = 0.9;
    int epochs = 10;                 // desk scale
    int triplets_per_epoch = 2000;   // desk scale
    double alpha = 0.1;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::normal;
    int template_subject_id = 0;     // fixed-template mode only
    bool differentiate_normals = true;

    void validate() const;  // throws InvalidInput
};

/// Flat `key = value` config text; keys match TrainConfig field names,
/// unknown keys are errors.
TrainConfig parse_train_config(const std::string& text);
TrainConfig read_train_config(const std::filesystem::path& path);

struct Checkpoint {
    TrainConfig config;
    NetworkWeights weights;
    AdamState adam;
    int epoch = 0;  // epochs completed
    std::vector<float> train_loss_history;
    std::vector<float> val_loss_history;
};

/// One network-ready training sample: centered float inputs plus owned
/// face storage the inputs point into.
struct TrainSample {
    TripletInputs<float> in;
    std::shared_ptr<const std::vector<std::array<int, 3>>> faces;
};

/// Center P/Q/R independently and pack a triplet into network inputs.
/// In fixed-template mode the trainer substitutes Q before calling this.
TrainSample prepare_sample(const Triplet& t, const TrainConfig& cfg);

/// Substitute the constant full template for Q (fixed-template training).
Triplet substitute_template(Triplet t, const SkinnedTemplate& tmpl);

/// Forward/backward over the batch (triplets may run on worker threads;
/// gradient merge order is fixed by batch slot, so results do not depend
/// on the thread count), mean-of-batch gradients, one Adam update.
/// Returns the mean batch loss.
float train_step(const std::vector<TrainSample>& batch, NetworkWeights& weights,
                 AdamState& state, const TrainConfig& cfg);

/// Forward-only mean loss over prepared samples.
double mean_loss(const std::vector<TrainSample>& samples, const NetworkWeights& weights);

struct TrainPaths {
    std::filesystem::path checkpoint;  // written at every epoch end
    std::filesystem::path log_csv;     // header: epoch,train_loss,val_loss
};

/// Full training run per the config. Deterministic: (seed, config,
/// dataset spec) determine the checkpoint byte stream. Resuming from a
/// mid-run checkpoint reproduces the uninterrupted run bit-exactly.
Checkpoint train_loop(const TrainConfig& cfg, const DatasetSpec& spec, const TrainPaths& paths,
                      const Checkpoint* resume_from = nullptr);

/// Binary checkpoint serialization. Magic "NRSW", version, length-prefixed
/// JSON config, then named tensor records (row-major float32 LE).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Seed for the triplet drawn at (epoch, step, slot); exposed so tests can
/// reproduce the exact training stream.
std::uint64_t triplet_seed(const TrainConfig& cfg, int epoch, int step, int slot);
std::uint64_t validation_seed(const TrainConfig& cfg, int index);

}  // namespace nrsc
