#include "cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "styleremix/image.hpp"
#include "styleremix/ops.hpp"
#include "styleremix/remix.hpp"
#include "styleremix/service.hpp"
#include "styleremix/tape.hpp"
#include "styleremix/trainer.hpp"

namespace styleremix {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Stylizes at the input's own size; dims are rounded to multiples of 8 for
/// the network and the result resampled back.
Image stylize_image(const StyleRemixModel<float>& model, const Image& input, const Tensor<float>& weights)
{
    const auto w8 = round_to_8(input.width), h8 = round_to_8(input.height);
    const Image work = (w8 == input.width && h8 == input.height) ? input : resize_bilinear(input, w8, h8);
    TapeScope<float> no_tape(nullptr);
    auto out = tensor_to_image(model.stylize(reshape(image_to_tensor(work), {1, 3, h8, w8}), weights));
    if (out.width != input.width || out.height != input.height) out = resize_bilinear(out, input.width, input.height);
    return out;
}

Tensor<float> parse_weight_list(const std::string& text, std::size_t c)
{
    std::vector<float> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos) {
            throw RequestError("--weights: '" + item + "' is not a number");
        }
        if (!std::isfinite(v)) throw RequestError("--weights: '" + item + "' is not finite");
        values.push_back(static_cast<float>(v));
    }
    if (values.size() != c) {
        throw RequestError("--weights: expected " + std::to_string(c) + " values, got " + std::to_string(values.size()));
    }
    return Tensor<float>({c}, std::move(values));
}

void write_csv_matrix(const fs::path& file, const std::vector<std::string>& header, const std::vector<std::string>& names,
                      const Eigen::MatrixXd& m)
{
    std::ofstream f(file);
    f << std::setprecision(9);
    f << "name";
    for (const auto& h : header) f << "," << h;
    f << "\n";
    for (long i = 0; i < m.rows(); ++i) {
        f << names[static_cast<std::size_t>(i)];
        for (long j = 0; j < m.cols(); ++j) f << "," << m(i, j);
        f << "\n";
    }
    if (!f) throw std::runtime_error("failed writing " + file.string());
}

ModelConfig model_config_from(const std::string& path)
{
    if (path.empty()) return ModelConfig::desk();
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    const auto j = json::parse(f);
    auto cfg = j.contains("model") ? j.at("model").get<ModelConfig>() : j.get<ModelConfig>();
    cfg.validate();
    return cfg;
}

struct TrainArgs {
    std::string config, out;
    std::optional<std::uint64_t> seed;
    std::size_t log_every = 100;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err)
{
    auto cfg = load_train_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    Trainer trainer(cfg, Dataset::from_dirs(cfg.content_dir, cfg.style_dir, cfg.style_long_side));
    trainer.on_step = [&](const LossRecord& r) {
        if (a.log_every && (r.iter % a.log_every == 0 || r.iter + 1 == cfg.total_iters)) {
            err << "iter " << r.iter << " " << (r.branch == Branch::style ? "style" : "reconstruction") << (r.style.empty() ? "" : " " + r.style)
                << " loss " << r.loss << "\n";
        }
    };
    trainer.run();
    fs::create_directories(a.out);
    save_checkpoint(trainer.model(), a.out);
    write_loss_log(fs::path(a.out) / "losses.jsonl", trainer.log());
    std::ofstream(fs::path(a.out) / "train_config.json") << json(cfg).dump(2) << "\n";
    out << "trained " << trainer.model().styles().size() << " styles for " << trainer.log().size()
        << " iterations -> " << a.out << "\n";
    return 0;
}

struct StylizeArgs {
    std::string ckpt, in, out, style, weights;
};

int cmd_stylize(const StylizeArgs& a, std::ostream& out)
{
    const auto model = load_checkpoint(a.ckpt);
    const auto weights = a.style.empty() ? parse_weight_list(a.weights, model.channels())
                                         : resolve_weights(model, json{{"style", a.style}});
    write_png(a.out, stylize_image(model, read_png(a.in), weights));
    out << "wrote " << a.out << "\n";
    return 0;
}

struct RemixArgs {
    std::string ckpt, in, out, cst, perturb;
    std::vector<std::string> combine;
    double alpha = 0.5;
    std::optional<double> mu;
    double sigma = 0.005;
    std::uint64_t seed = 0;
};

int cmd_remix(const RemixArgs& a, std::ostream& out)
{
    const auto model = load_checkpoint(a.ckpt);
    json spec;
    if (!a.combine.empty()) {
        if (a.combine.size() != 2) throw RequestError("--combine takes exactly two style names: a,b");
        spec["combine"] = {{"a", a.combine[0]}, {"b", a.combine[1]}, {"alpha", a.alpha}};
    } else if (!a.perturb.empty()) {
        spec["perturb"] = {{"style", a.perturb},
                           {"mu", a.mu.value_or(1.0 / static_cast<double>(model.channels()))},
                           {"sigma", a.sigma},
                           {"seed", a.seed}};
    } else {
        spec["cst"] = {{"mode", a.cst}};
    }
    write_png(a.out, stylize_image(model, read_png(a.in), resolve_weights(model, spec)));
    out << "wrote " << a.out << "\n";
    return 0;
}

struct EmbedArgs {
    std::string ckpt, out;
    std::uint64_t seed = 0;
    std::optional<double> perplexity;
    std::size_t iterations = 1000;
};

int cmd_embed(const EmbedArgs& a, std::ostream& out)
{
    const auto model = load_checkpoint(a.ckpt);
    const auto names = model.styles().names();
    const auto n = names.size();
    if (n < 2) throw std::invalid_argument("embed needs at least 2 styles, checkpoint has " + std::to_string(n));
    fs::create_directories(a.out);
    const fs::path dir(a.out);
    json summary{{"styles", names}, {"seed", a.seed}};

    const auto weights = style_weight_matrix(model.styles());
    std::vector<std::string> channels;
    for (long j = 0; j < weights.cols(); ++j) channels.push_back("w" + std::to_string(j));
    write_csv_matrix(dir / "weights.csv", channels, names, weights);

    const auto corr = correlation_matrix(weights, names);
    write_csv_matrix(dir / "correlation.csv", names, names, corr);
    render_heatmap(corr, dir / "correlation.png");

    const std::size_t k = std::min<std::size_t>(2, n - 1);
    const auto pca = pca_reduce(weights, k);
    write_csv_matrix(dir / "pca.csv", k == 2 ? std::vector<std::string>{"pc1", "pc2"} : std::vector<std::string>{"pc1"},
                     names, pca.scores);
    const double total = pca.eigenvalues.sum();
    std::vector<double> ratios;
    for (long i = 0; i < pca.eigenvalues.size(); ++i) ratios.push_back(total > 0 ? pca.eigenvalues(i) / total : 0.0);
    summary["pca_explained_variance_ratio"] = ratios;

    if (n >= 3) {
        TsneOptions opts;
        opts.seed = a.seed;
        opts.iterations = a.iterations;
        opts.perplexity = a.perplexity.value_or(std::clamp((static_cast<double>(n) - 1) / 3.0, 1.0, 5.0));
        const auto tsne = tsne_embed(weights, opts);
        write_csv_matrix(dir / "tsne.csv", {"x", "y"}, names, tsne.coords);
        render_scatter(tsne.coords, dir / "tsne.png");
        summary["tsne"] = {{"perplexity", opts.perplexity},
                           {"iterations", opts.iterations},
                           {"initial_kl", tsne.initial_kl},
                           {"final_kl", tsne.final_kl},
                           {"fallback_points", tsne.fallback_points}};
    } else {
        summary["tsne"] = nullptr;
    }
    std::ofstream(dir / "summary.json") << summary.dump(2) << "\n";
    out << "wrote embedding tables and plots for " << n << " styles to " << a.out << "\n";
    return 0;
}

struct FlopsArgs {
    std::string config;
    std::size_t size = 64;
};

int cmd_flops(const FlopsArgs& a, std::ostream& out)
{
    const auto report = flops_count(model_config_from(a.config), a.size, a.size);
    out << std::left << std::setw(12) << "layer" << std::setw(8) << "c_in" << std::setw(8) << "c_out" << std::setw(12)
        << "output" << "MACs\n";
    for (const auto& l : report.layers) {
        out << std::setw(12) << l.name << std::setw(8) << l.c_in << std::setw(8) << l.c_out << std::setw(12)
            << (std::to_string(l.h_out) + "x" + std::to_string(l.w_out)) << l.macs << "\n";
    }
    out << "total MACs " << report.macs << "\n";
    out << "total FLOPs " << report.flops() << "\n";
    return 0;
}

struct ServeArgs {
    ServiceOptions options;
    std::string ckpt, host = "127.0.0.1", static_dir;
    int port = 8080;
};

struct ToyArgs {
    std::string out;
    std::size_t contents = 8, styles = 2, size = 64, holdout = 1;
    std::uint64_t seed = 0;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Multi-style transfer with a shared style basis and per-style simplex weights"};
    app.name(args.empty() ? "styleremix" : fs::path(args.front()).filename().string());
    app.require_subcommand(1, 1);

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON config and save a checkpoint");
    train_cmd->add_option("--config", train.config, "training config JSON")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out", train.out, "checkpoint directory to write")->required();
    train_cmd->add_option("--seed", train.seed, "overrides the config seed");
    train_cmd->add_option("--log-every", train.log_every, "print progress every N iterations (0: silent)");

    StylizeArgs stylize;
    auto* stylize_cmd = app.add_subcommand("stylize", "Stylize an image with a trained style or explicit weights");
    stylize_cmd->add_option("--ckpt", stylize.ckpt)->required()->check(CLI::ExistingDirectory);
    auto* style_opt = stylize_cmd->add_option("--style", stylize.style, "registered style name");
    auto* weights_opt = stylize_cmd->add_option("--weights", stylize.weights, "comma-separated weight vector");
    style_opt->excludes(weights_opt);
    stylize_cmd->add_option("--in", stylize.in, "content PNG")->required()->check(CLI::ExistingFile);
    stylize_cmd->add_option("--out", stylize.out, "output PNG")->required();

    RemixArgs remix;
    auto* remix_cmd = app.add_subcommand("remix", "Combine, perturb, or average style weights and stylize");
    remix_cmd->add_option("--ckpt", remix.ckpt)->required()->check(CLI::ExistingDirectory);
    remix_cmd->add_option("--in", remix.in, "content PNG")->required()->check(CLI::ExistingFile);
    remix_cmd->add_option("--out", remix.out, "output PNG")->required();
    auto* combine_opt = remix_cmd->add_option("--combine", remix.combine, "two style names a,b")->delimiter(',');
    auto* alpha_opt = remix_cmd->add_option("--alpha", remix.alpha, "weight of style a in [0,1]")
                          ->check(CLI::Range(0.0, 1.0));
    auto* perturb_opt = remix_cmd->add_option("--perturb", remix.perturb, "style whose weights get Gaussian noise");
    auto* mu_opt = remix_cmd->add_option("--mu", remix.mu, "noise mean (default 1/c)");
    auto* sigma_opt = remix_cmd->add_option("--sigma", remix.sigma, "noise standard deviation")
                          ->check(CLI::NonNegativeNumber);
    auto* seed_opt = remix_cmd->add_option("--seed", remix.seed, "noise seed");
    auto* cst_opt = remix_cmd->add_option("--cst", remix.cst, "average | uniform")
                        ->check(CLI::IsMember({"average", "uniform"}));
    combine_opt->excludes(perturb_opt)->excludes(cst_opt);
    perturb_opt->excludes(cst_opt);
    alpha_opt->needs(combine_opt);
    mu_opt->needs(perturb_opt);
    sigma_opt->needs(perturb_opt);
    seed_opt->needs(perturb_opt);

    EmbedArgs embed;
    auto* embed_cmd = app.add_subcommand("embed", "Correlation, PCA and t-SNE of the learned style weights");
    embed_cmd->add_option("--ckpt", embed.ckpt)->required()->check(CLI::ExistingDirectory);
    embed_cmd->add_option("--out", embed.out, "output directory")->required();
    embed_cmd->add_option("--seed", embed.seed, "t-SNE seed");
    embed_cmd->add_option("--perplexity", embed.perplexity, "t-SNE perplexity (default min(5, (N-1)/3), at least 1)");
    embed_cmd->add_option("--iterations", embed.iterations, "t-SNE iterations");

    FlopsArgs flops;
    auto* flops_cmd = app.add_subcommand("flops", "Analytic multiply-accumulate count of the stylizing branch");
    flops_cmd->add_option("--config", flops.config, "model or training config JSON (default: desk model)")
        ->check(CLI::ExistingFile);
    flops_cmd->add_option("--size", flops.size, "square input side")->check(CLI::PositiveNumber);

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP inference service over a checkpoint");
    serve_cmd->add_option("--ckpt", serve.ckpt)->required()->check(CLI::ExistingDirectory);
    serve_cmd->add_option("--port", serve.port)->check(CLI::Range(1, 65535));
    serve_cmd->add_option("--host", serve.host);
    serve_cmd->add_option("--max-inflight", serve.options.max_inflight, "concurrent stylize jobs")
        ->check(CLI::PositiveNumber);
    serve_cmd->add_option("--seed", serve.options.seed, "t-SNE seed for /api/embedding");
    serve_cmd->add_option("--static", serve.static_dir, "directory served under /")->check(CLI::ExistingDirectory);

    ToyArgs toy;
    auto* toy_cmd = app.add_subcommand("make-toy", "Write a synthetic content/style dataset");
    toy_cmd->add_option("--out", toy.out)->required();
    toy_cmd->add_option("--contents", toy.contents)->check(CLI::PositiveNumber);
    toy_cmd->add_option("--styles", toy.styles);
    toy_cmd->add_option("--size", toy.size)->check(CLI::PositiveNumber);
    toy_cmd->add_option("--holdout", toy.holdout);
    toy_cmd->add_option("--seed", toy.seed);

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*train_cmd) return cmd_train(train, out, err);
        if (*stylize_cmd) {
            if (stylize.style.empty() && stylize.weights.empty()) {
                throw std::invalid_argument("stylize needs --style or --weights");
            }
            return cmd_stylize(stylize, out);
        }
        if (*remix_cmd) {
            if (remix.combine.empty() && remix.perturb.empty() && remix.cst.empty()) {
                throw std::invalid_argument("remix needs one of --combine, --perturb, --cst");
            }
            return cmd_remix(remix, out);
        }
        if (*embed_cmd) return cmd_embed(embed, out);
        if (*flops_cmd) return cmd_flops(flops, out);
        if (*serve_cmd) {
            serve.options.checkpoint = serve.ckpt;
            serve.options.static_dir = serve.static_dir;
            return run_server(serve.options, serve.host, serve.port);
        }
        const auto data = generate_toy_dataset(toy.out, toy.contents, toy.styles, toy.size, toy.seed, toy.holdout);
        out << "content " << data.content_dir.string() << "\nstyles " << data.style_dir.string() << "\n";
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace styleremix
