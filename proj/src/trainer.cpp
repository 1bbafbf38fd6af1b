#include "styleremix/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "styleremix/ops.hpp"
#include "styleremix/remix.hpp"
#include "styleremix/tape.hpp"

namespace styleremix {

void TrainConfig::validate() const
{
    if (batch_size == 0 || crop_size == 0 || style_long_side == 0 || decay_every == 0 || total_iters == 0 ||
        warmup_k == 0) {
        throw std::invalid_argument("train config: counts must be positive");
    }
    if (finetune_t < 1) throw std::invalid_argument("train config: T must be at least 1");
    if (crop_size % 8 != 0) throw std::invalid_argument("train config: crop_size must be divisible by 8");
    if (!(lr0 > 0) || !(lr_decay > 0) || lr_decay > 1) {
        throw std::invalid_argument("train config: need lr0 > 0 and 0 < lr_decay <= 1");
    }
    if (content_taps.empty() || style_taps.empty()) throw std::invalid_argument("train config: empty tap list");
    loss.validate();
    model.validate();
    if (model.image_size != crop_size) {
        throw std::invalid_argument("train config: model.image_size must equal crop_size");
    }
}

void to_json(nlohmann::json& j, const TrainConfig& c)
{
    j = {{"content_dir", c.content_dir},
         {"style_dir", c.style_dir},
         {"batch_size", c.batch_size},
         {"crop_size", c.crop_size},
         {"style_long_side", c.style_long_side},
         {"lr0", c.lr0},
         {"lr_decay", c.lr_decay},
         {"decay_every", c.decay_every},
         {"total_iters", c.total_iters},
         {"warmup_k", c.warmup_k},
         {"finetune_t", c.finetune_t},
         {"loss", c.loss},
         {"gram_norm", to_string(c.gram_norm)},
         {"content_taps", c.content_taps},
         {"style_taps", c.style_taps},
         {"extractor", c.extractor},
         {"extractor_seed", c.extractor_seed},
         {"stylebank", c.stylebank},
         {"seed", c.seed},
         {"model", c.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& c)
{
    static const std::set<std::string> known{
        "content_dir", "style_dir", "batch_size", "crop_size", "style_long_side", "lr0", "lr_decay",
        "decay_every", "total_iters", "warmup_k", "finetune_t", "loss", "gram_norm", "content_taps",
        "style_taps", "extractor", "extractor_seed", "stylebank", "seed", "model"};
    if (!j.is_object()) throw std::invalid_argument("train config: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw std::invalid_argument("train config: unknown field '" + key + "'");
    }
    TrainConfig d;
    c.content_dir = j.value("content_dir", d.content_dir);
    c.style_dir = j.value("style_dir", d.style_dir);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.crop_size = j.value("crop_size", d.crop_size);
    c.style_long_side = j.value("style_long_side", d.style_long_side);
    c.lr0 = j.value("lr0", d.lr0);
    c.lr_decay = j.value("lr_decay", d.lr_decay);
    c.decay_every = j.value("decay_every", d.decay_every);
    c.total_iters = j.value("total_iters", d.total_iters);
    c.warmup_k = j.value("warmup_k", d.warmup_k);
    c.finetune_t = j.value("finetune_t", d.finetune_t);
    c.loss = j.contains("loss") ? j["loss"].get<LossWeights>() : d.loss;
    c.gram_norm = parse_gram_norm(j.value("gram_norm", to_string(d.gram_norm)));
    c.content_taps = j.value("content_taps", d.content_taps);
    c.style_taps = j.value("style_taps", d.style_taps);
    c.extractor = j.value("extractor", d.extractor);
    c.extractor_seed = j.value("extractor_seed", d.extractor_seed);
    c.stylebank = j.value("stylebank", d.stylebank);
    c.seed = j.value("seed", d.seed);
    c.model = j.contains("model") ? j["model"].get<ModelConfig>() : d.model;
}

TrainConfig load_train_config(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open config " + file.string());
    TrainConfig cfg;
    try {
        cfg = nlohmann::json::parse(in).get<TrainConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config " + file.string() + ": " + e.what());
    }
    const auto base = file.parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    resolve(cfg.content_dir);
    resolve(cfg.style_dir);
    resolve(cfg.extractor);
    cfg.validate();
    return cfg;
}

double lr_at(const TrainConfig& cfg, std::size_t iter)
{
    return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(iter / cfg.decay_every));
}

namespace {

std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (entry.is_regular_file() && ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

const char* branch_name(Branch b)
{
    return b == Branch::reconstruction ? "reconstruction" : "style";
}

}  // namespace

Dataset Dataset::from_dirs(const std::filesystem::path& content_dir, const std::filesystem::path& style_dir,
                           std::size_t style_long_side)
{
    Dataset data;
    for (const auto& f : list_pngs(content_dir)) {
        data.content_paths.push_back(f.string());
        data.content.push_back(read_png(f));
    }
    if (data.content.empty()) throw std::runtime_error("no PNG content images in " + content_dir.string());
    if (!style_dir.empty()) {
        for (const auto& f : list_pngs(style_dir)) {
            data.styles.push_back({f.stem().string(), f.string(), preprocess_style(f, style_long_side)});
        }
    }
    return data;
}

nlohmann::json to_json(const LossRecord& r)
{
    nlohmann::json j{{"iter", r.iter}, {"branch", branch_name(r.branch)}, {"loss", r.loss}};
    j["style"] = r.branch == Branch::style ? nlohmann::json(r.style) : nlohmann::json(nullptr);
    return j;
}

void write_loss_log(const std::filesystem::path& file, const std::vector<LossRecord>& log)
{
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write loss log " + file.string());
    for (const auto& r : log) out << to_json(r).dump() << '\n';
}

std::vector<LossRecord> read_loss_log(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read loss log " + file.string());
    std::vector<LossRecord> log;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        LossRecord r;
        r.iter = j.at("iter").get<std::size_t>();
        r.branch = j.at("branch").get<std::string>() == "style" ? Branch::style : Branch::reconstruction;
        if (j.contains("style") && !j["style"].is_null()) r.style = j["style"].get<std::string>();
        r.loss = j.at("loss").get<double>();
        log.push_back(std::move(r));
    }
    return log;
}

std::vector<ScheduleEntry> warmup_schedule(std::size_t num_styles, std::size_t k)
{
    std::vector<ScheduleEntry> schedule(k, ScheduleEntry{Branch::reconstruction, 0, std::nullopt});
    for (std::size_t j = 1; j <= num_styles; ++j) {
        for (std::size_t i = 0; i < k; ++i) {
            ScheduleEntry e{Branch::style, i % j, std::nullopt};
            if (i == 0) e.adds_style = j - 1;
            schedule.push_back(e);
        }
    }
    return schedule;
}

std::vector<ScheduleEntry> finetune_schedule(std::size_t num_styles, std::size_t t, std::size_t iters,
                                             std::size_t first_style)
{
    std::vector<ScheduleEntry> schedule;
    schedule.reserve(iters);
    std::size_t next = first_style;
    for (std::size_t i = 0; i < iters; ++i) {
        if (num_styles == 0 || i % (t + 1) == 0) {
            schedule.push_back({Branch::reconstruction, 0, std::nullopt});
        } else {
            schedule.push_back({Branch::style, next % num_styles, std::nullopt});
            ++next;
        }
    }
    return schedule;
}

namespace {

FeatureExtractor<float> make_extractor(const TrainConfig& cfg)
{
    if (!cfg.extractor.empty()) return FeatureExtractor<float>::load(cfg.extractor);
    return FeatureExtractor<float>::generate(cfg.extractor_seed);
}

TrainConfig validated(TrainConfig cfg)
{
    cfg.validate();
    return cfg;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, Dataset data)
    : cfg_(validated(std::move(cfg))),
      data_(std::move(data)),
      model_(cfg_.model, cfg_.seed),
      extractor_(make_extractor(cfg_)),
      losses_(extractor_, cfg_.content_taps, cfg_.style_taps, cfg_.gram_norm),
      rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL)
{
    if (data_.content.empty()) throw std::invalid_argument("trainer: no content images");
    std::set<std::string> names;
    for (const auto& s : data_.styles) {
        if (!names.insert(s.name).second) throw std::invalid_argument("trainer: duplicate style name " + s.name);
        targets_.push_back(losses_.style_target(s.tensor));
    }
    if (cfg_.stylebank && !data_.styles.empty() && model_.channels() % data_.styles.size() != 0) {
        throw std::invalid_argument("trainer: stylebank mode needs c divisible by the number of styles");
    }
    for (const auto& [name, t] : model_.autoencoder_parameters()) optimizer_.add_parameter(t);
    for (const auto& [name, t] : model_.basis_parameters()) optimizer_.add_parameter(t);
    order_.resize(data_.content.size());
}

void Trainer::register_style(std::size_t index)
{
    const auto& s = data_.styles.at(index);
    if (cfg_.stylebank) {
        model_.add_fixed_style(s.name, stylebank_onehot_weights(index, data_.styles.size(), model_.channels()), s.path);
    } else {
        optimizer_.add_parameter(model_.add_style(s.name, s.path).theta);
    }
}

Tensor<float> Trainer::next_batch()
{
    const std::size_t b = cfg_.batch_size, side = cfg_.crop_size;
    std::vector<float> values;
    values.reserve(b * 3 * side * side);
    for (std::size_t i = 0; i < b; ++i) {
        if (cursor_ % order_.size() == 0) {
            std::iota(order_.begin(), order_.end(), 0);
            std::shuffle(order_.begin(), order_.end(), rng_);
            cursor_ = 0;
        }
        const auto crop = preprocess_content(data_.content[order_[cursor_++]], side, rng_);
        values.insert(values.end(), crop.data().begin(), crop.data().end());
    }
    return Tensor<float>({b, 3, side, side}, std::move(values));
}

double Trainer::step(const ScheduleEntry& entry)
{
    if (entry.adds_style) register_style(*entry.adds_style);
    const auto batch = next_batch();
    const auto per_image = 1.0f / static_cast<float>(cfg_.batch_size);

    LossRecord record;
    record.iter = iter_;
    record.branch = entry.branch;
    {
        Tape<float> tape;
        TapeScope<float> scope(&tape);
        Tensor<float> loss;
        if (entry.branch == Branch::reconstruction) {
            loss = scale(reconstruction_loss(model_.reconstruct(batch), batch), per_image);
        } else {
            const auto& style = data_.styles.at(entry.style);
            record.style = style.name;
            const auto output = model_.stylize(batch, style.name);
            loss = scale(losses_.perceptual_loss(output, losses_.content_target(batch), targets_.at(entry.style),
                                                 cfg_.loss),
                         per_image);
        }
        record.loss = loss.item();
        if (!std::isfinite(record.loss)) {
            throw std::runtime_error("training diverged at iteration " + std::to_string(iter_));
        }
        tape.backward(loss);
        optimizer_.step(lr_at(cfg_, iter_));
        optimizer_.zero_grad();
    }
    ++iter_;
    log_.push_back(record);
    if (on_step) on_step(record);
    return record.loss;
}

void Trainer::warmup()
{
    if (data_.styles.empty()) std::cerr << "warning: empty style set, warming up the autoencoder only\n";
    for (const auto& e : warmup_schedule(data_.styles.size(), cfg_.warmup_k)) step(e);
}

void Trainer::finetune(std::size_t iters)
{
    if (model_.styles().size() != data_.styles.size()) {
        throw std::logic_error("finetune: warm-up has not registered every style");
    }
    const auto schedule = finetune_schedule(data_.styles.size(), cfg_.finetune_t, iters, finetune_style_);
    for (const auto& e : schedule) {
        step(e);
        if (e.branch == Branch::style) ++finetune_style_;
    }
}

void Trainer::run()
{
    const auto warm = cfg_.warmup_iters(data_.styles.size());
    if (warm > cfg_.total_iters) {
        std::cerr << "warning: warm-up needs " << warm << " iterations, more than total_iters "
                  << cfg_.total_iters << "; no finetuning\n";
    }
    warmup();
    finetune(cfg_.total_iters > warm ? cfg_.total_iters - warm : 0);
}

const StyleTarget<float>& Trainer::target(const std::string& name) const
{
    for (std::size_t i = 0; i < data_.styles.size(); ++i) {
        if (data_.styles[i].name == name) return targets_[i];
    }
    throw std::out_of_range("unknown style '" + name + "'");
}

double Trainer::evaluate_perceptual(const std::string& name, const Tensor<float>& content) const
{
    TapeScope<float> off(nullptr);
    const auto output = model_.stylize(content, name);
    return losses_.perceptual_loss(output, losses_.content_target(content), target(name), cfg_.loss).item() /
           static_cast<double>(content.dim(0));
}

double Trainer::evaluate_style(const std::string& name, const Tensor<float>& image) const
{
    TapeScope<float> off(nullptr);
    return losses_.style_loss(extractor_.extract(image, losses_.style_taps()), target(name)).item() /
           static_cast<double>(image.dim(0));
}

namespace {

struct Rgb {
    double r, g, b;
};

Rgb random_color(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return {u(rng), u(rng), u(rng)};
}

Image render(std::size_t size, const std::function<Rgb(double, double)>& f)
{
    Image img{size, size, std::vector<std::uint8_t>(size * size * 3)};
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const auto c = f(static_cast<double>(x) / size, static_cast<double>(y) / size);
            auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255)); };
            auto* px = &img.rgb[(y * size + x) * 3];
            px[0] = q(c.r);
            px[1] = q(c.g);
            px[2] = q(c.b);
        }
    return img;
}

Image content_image(std::size_t size, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Rgb top = random_color(rng), bottom = random_color(rng);
    struct Blob {
        double x, y, r;
        Rgb c;
    };
    std::vector<Blob> blobs(4);
    for (auto& b : blobs) b = {u(rng), u(rng), 0.08 + 0.2 * u(rng), random_color(rng)};
    return render(size, [&](double x, double y) {
        Rgb c{top.r * (1 - y) + bottom.r * y, top.g * (1 - y) + bottom.g * y, top.b * (1 - y) + bottom.b * y};
        for (const auto& b : blobs) {
            const double a = std::exp(-((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y)) / (b.r * b.r));
            c = {c.r * (1 - a) + b.c.r * a, c.g * (1 - a) + b.c.g * a, c.b * (1 - a) + b.c.b * a};
        }
        return c;
    });
}

Image style_image(std::size_t index, std::size_t size, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Rgb a = random_color(rng), b = random_color(rng);
    const double freq = 4.0 + 6.0 * u(rng);
    const double angle = 3.14159265358979 * u(rng);
    const double ca = std::cos(angle), sa = std::sin(angle);
    auto mix = [&](double t) { return Rgb{a.r * (1 - t) + b.r * t, a.g * (1 - t) + b.g * t, a.b * (1 - t) + b.b * t}; };
    switch (index % 4) {
    case 0:  // stripes
        return render(size, [&](double x, double y) {
            return mix(0.5 + 0.5 * std::sin(2 * 3.14159265358979 * freq * (x * ca + y * sa)));
        });
    case 1:  // checkerboard
        return render(size, [&](double x, double y) {
            const auto cx = static_cast<long>(std::floor(x * freq)), cy = static_cast<long>(std::floor(y * freq));
            return mix(static_cast<double>((cx + cy) & 1));
        });
    case 2:  // dots
        return render(size, [&](double x, double y) {
            const double fx = x * freq - std::floor(x * freq) - 0.5, fy = y * freq - std::floor(y * freq) - 0.5;
            return mix(fx * fx + fy * fy < 0.09 ? 1.0 : 0.0);
        });
    default:  // interference waves
        return render(size, [&](double x, double y) {
            return mix(0.5 + 0.5 * std::sin(2 * 3.14159265358979 * freq * x) *
                                 std::cos(2 * 3.14159265358979 * freq * (y * ca + x * sa)));
        });
    }
}

}  // namespace

ToyDataset generate_toy_dataset(const std::filesystem::path& dir, std::size_t contents, std::size_t styles,
                                std::size_t size, std::uint64_t seed, std::size_t holdout)
{
    ToyDataset toy{dir / "content", dir / "styles", {}};
    std::filesystem::create_directories(toy.content_dir);
    std::filesystem::create_directories(toy.style_dir);
    std::mt19937_64 rng(seed);
    char name[64];
    for (std::size_t i = 0; i < contents; ++i) {
        std::snprintf(name, sizeof name, "content_%03zu.png", i);
        write_png(toy.content_dir / name, content_image(size, rng));
    }
    for (std::size_t i = 0; i < styles; ++i) {
        std::snprintf(name, sizeof name, "style_%02zu.png", i);
        write_png(toy.style_dir / name, style_image(i, size, rng));
    }
    if (holdout > 0) std::filesystem::create_directories(dir / "holdout");
    for (std::size_t i = 0; i < holdout; ++i) {
        std::snprintf(name, sizeof name, "holdout_%03zu.png", i);
        toy.holdout.push_back(dir / "holdout" / name);
        write_png(toy.holdout.back(), content_image(size, rng));
    }
    return toy;
}

}  // namespace styleremix
