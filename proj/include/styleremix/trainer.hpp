#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "styleremix/adam.hpp"
#include "styleremix/image.hpp"
#include "styleremix/model.hpp"
#include "styleremix/perceptual.hpp"

namespace styleremix {

/// Every training hyperparameter. Serialised field-for-field as JSON; see
/// README for the schema.
struct TrainConfig {
    std::string content_dir;
    std::string style_dir;
    std::size_t batch_size = 4;
    std::size_t crop_size = 64;
    std::size_t style_long_side = 64;
    double lr0 = 1e-3;
    double lr_decay = 0.8;
    std::size_t decay_every = 30000;
    std::size_t total_iters = 1000;
    std::size_t warmup_k = 200;
    std::size_t finetune_t = 2;
    LossWeights loss{};
    GramNorm gram_norm = GramNorm::chw;
    std::vector<std::string> content_taps{"conv2_2"};
    std::vector<std::string> style_taps{"conv1_2", "conv2_2", "conv3_2", "conv4_2"};
    /// Extractor archive directory; generated from extractor_seed when empty.
    std::string extractor;
    std::uint64_t extractor_seed = 1234;
    /// Fixed block one-hot style weights instead of learnable ones.
    bool stylebank = false;
    std::uint64_t seed = 0;
    ModelConfig model{};

    void validate() const;
    std::size_t warmup_iters(std::size_t num_styles) const { return warmup_k * (num_styles + 1); }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::filesystem::path& file);

double lr_at(const TrainConfig& cfg, std::size_t iter);

struct StyleImage {
    std::string name;
    std::string path;
    Tensor<float> tensor;  // [3,h,w]
};

/// Decoded content images and preprocessed style images in listing order.
struct Dataset {
    std::vector<std::string> content_paths;
    std::vector<Image> content;
    std::vector<StyleImage> styles;

    /// PNG files of each directory in lexicographic order; style names are
    /// file stems.
    static Dataset from_dirs(const std::filesystem::path& content_dir, const std::filesystem::path& style_dir,
                             std::size_t style_long_side);
};

enum class Branch { reconstruction, style };

struct LossRecord {
    std::size_t iter = 0;
    Branch branch = Branch::reconstruction;
    std::string style;
    double loss = 0;
};

nlohmann::json to_json(const LossRecord& r);
void write_loss_log(const std::filesystem::path& file, const std::vector<LossRecord>& log);
std::vector<LossRecord> read_loss_log(const std::filesystem::path& file);

/// One scheduled iteration.
struct ScheduleEntry {
    Branch branch;
    std::size_t style = 0;                    // dataset index, style branch only
    std::optional<std::size_t> adds_style;    // registered before stepping

    bool operator==(const ScheduleEntry&) const = default;
};

/// [AE x K] then segments j = 1..m of K steps cycling s_1..s_j.
std::vector<ScheduleEntry> warmup_schedule(std::size_t num_styles, std::size_t k);
/// Cycles of one reconstruction step and T style steps; styles continue
/// round-robin from `first_style`.
std::vector<ScheduleEntry> finetune_schedule(std::size_t num_styles, std::size_t t, std::size_t iters,
                                             std::size_t first_style = 0);

class Trainer {
public:
    Trainer(TrainConfig cfg, Dataset data);
    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    const TrainConfig& config() const { return cfg_; }
    const Dataset& data() const { return data_; }
    StyleRemixModel<float>& model() { return model_; }
    const StyleRemixModel<float>& model() const { return model_; }
    const FeatureExtractor<float>& extractor() const { return extractor_; }
    const PerceptualLoss<float>& losses() const { return losses_; }
    const std::vector<LossRecord>& log() const { return log_; }
    std::size_t iteration() const { return iter_; }

    /// Warm-up followed by total_iters - warmup finetuning iterations.
    void run();
    void warmup();
    void finetune(std::size_t iters);
    /// Executes one schedule entry at the current iteration.
    double step(const ScheduleEntry& entry);

    /// Per-image perceptual loss of stylizing `content` [n,3,H,W] with style
    /// `name`, evaluated without recording.
    double evaluate_perceptual(const std::string& name, const Tensor<float>& content) const;
    /// Per-image style loss of `image` [n,3,H,W] against style `name`.
    double evaluate_style(const std::string& name, const Tensor<float>& image) const;
    const StyleTarget<float>& target(const std::string& name) const;

    /// Called after every iteration.
    std::function<void(const LossRecord&)> on_step;

private:
    Tensor<float> next_batch();
    void register_style(std::size_t index);

    TrainConfig cfg_;
    Dataset data_;
    StyleRemixModel<float> model_;
    FeatureExtractor<float> extractor_;
    PerceptualLoss<float> losses_;
    std::vector<StyleTarget<float>> targets_;
    Adam<float> optimizer_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t iter_ = 0;
    std::size_t finetune_style_ = 0;
    std::vector<LossRecord> log_;
};

/// Synthetic toy dataset: `contents` smooth-blob photographs and `styles`
/// distinct procedural textures, written as PNGs. Returns held-out content
/// paths when `holdout` > 0 (written to `dir/holdout`).
struct ToyDataset {
    std::filesystem::path content_dir;
    std::filesystem::path style_dir;
    std::vector<std::filesystem::path> holdout;
};
ToyDataset generate_toy_dataset(const std::filesystem::path& dir, std::size_t contents, std::size_t styles,
                                std::size_t size, std::uint64_t seed, std::size_t holdout = 1);

}  // namespace styleremix
