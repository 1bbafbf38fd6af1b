#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "json.hpp"
#include "styleremix/checkpoint.hpp"
#include "styleremix/model.hpp"
#include "styleremix/ops.hpp"
#include "styleremix/tape.hpp"
#include "test_support.hpp"

using namespace styleremix;
using styleremix::testing::as_doubles;
using styleremix::testing::random_tensor;

namespace {

const ModelConfig tiny{{4, 6, 8}, 8, 3, 16};

double scaled_error(const std::vector<double>& got, const std::vector<double>& want)
{
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        diff = std::max(diff, std::abs(got[i] - want[i]));
        scale = std::max(scale, std::abs(want[i]));
    }
    return diff / std::max(scale, 1e-12);
}

std::filesystem::path fresh_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    return dir;
}

}  // namespace

TEST(StyleWeights, SoftmaxOfThetaIsOnSimplex)
{
    StyleRemixModel<float> model(tiny, 1);
    auto& layer = model.add_style("a");
    const auto initial = layer.weights();
    for (auto v : initial.data()) EXPECT_FLOAT_EQ(v, 1.0f / 8);

    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        auto theta = random_tensor<float>({8}, rng, -20, 20);
        std::copy(theta.data().begin(), theta.data().end(), layer.theta.mutable_data().begin());
        const auto w = layer.weights();
        double total = 0;
        for (auto v : w.data()) {
            EXPECT_GE(v, 0.0f);
            total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
    }
}

TEST(StyleBasisOps, WeightedBasisMatchesLoopOracle)
{
    std::mt19937_64 rng(3);
    StyleBasis<double> basis{random_tensor<double>({5, 4, 3, 3}, rng), {}, {}};
    const auto w = random_tensor<double>({4}, rng, 0, 1);
    const auto got = as_doubles(weighted_basis(basis, w));
    const auto b = as_doubles(basis.kernels);
    for (std::size_t o = 0; o < 5; ++o)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t k = 0; k < 9; ++k) {
                const std::size_t idx = (o * 4 + i) * 9 + k;
                EXPECT_DOUBLE_EQ(got[idx], b[idx] * w.data()[i]);
            }

    const auto uniform = Tensor<double>::full({4}, 0.25);
    const auto u = as_doubles(weighted_basis(basis, uniform));
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_DOUBLE_EQ(u[i], b[i] / 4);

    EXPECT_THROW(weighted_basis(basis, Tensor<double>::full({3}, 1.0)), ShapeError);
}

TEST(StyleBasisOps, OneHotKeepsOneInputSlice)
{
    std::mt19937_64 rng(4);
    StyleBasis<float> basis{random_tensor<float>({6, 6, 3, 3}, rng), {}, {}};
    for (std::size_t j = 0; j < 6; ++j) {
        std::vector<float> e(6, 0.0f);
        e[j] = 1.0f;
        const auto wb = weighted_basis(basis, Tensor<float>({6}, e));
        for (std::size_t o = 0; o < 6; ++o)
            for (std::size_t i = 0; i < 6; ++i)
                for (std::size_t k = 0; k < 9; ++k) {
                    const std::size_t idx = (o * 6 + i) * 9 + k;
                    EXPECT_EQ(wb.data()[idx], i == j ? basis.kernels.data()[idx] : 0.0f);
                }
    }
}

TEST(StyleBasisOps, ChannelScalingEqualsMaterializedKernel)
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> dim(2, 9), batch(1, 3), chans(1, 8);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = batch(rng), c = chans(rng), h = dim(rng), w = dim(rng);
        StyleBasis<float> basis{random_tensor<float>({c, c, 3, 3}, rng), random_tensor<float>({c}, rng, 0.5, 1.5),
                                random_tensor<float>({c}, rng, -0.5, 0.5)};
        const auto f = random_tensor<float>({n, c, h, w}, rng);
        const auto wts = random_tensor<float>({c}, rng, 0, 1);
        worst = std::max(worst, scaled_error(as_doubles(apply_style(f, basis, wts)),
                                             as_doubles(apply_style_materialized(f, basis, wts))));
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(Model, BranchShapes)
{
    StyleRemixModel<float> model(ModelConfig::desk(), 6);
    std::mt19937_64 rng(6);
    const auto x = random_tensor<float>({2, 3, 64, 64}, rng, 0, 1);
    EXPECT_EQ(model.encode(x).shape(), (Shape{2, 64, 16, 16}));
    EXPECT_EQ(model.reconstruct(x).shape(), (Shape{2, 3, 64, 64}));
    EXPECT_EQ(model.stylize(x, Tensor<float>::full({64}, 1.0f / 64)).shape(), (Shape{2, 3, 64, 64}));
    EXPECT_EQ(model.reconstruct(random_tensor<float>({1, 3, 40, 24}, rng)).shape(), (Shape{1, 3, 40, 24}));
    EXPECT_THROW(model.reconstruct(random_tensor<float>({1, 3, 30, 32}, rng)), ShapeError);
    EXPECT_THROW(model.stylize(x, Tensor<float>::full({63}, 0.0f)), ShapeError);
    EXPECT_THROW(model.stylize(x, "missing"), std::out_of_range);
}

TEST(Model, PaperConfigurationShapes)
{
    StyleRemixModel<float> model(ModelConfig::paper(), 7);
    std::mt19937_64 rng(7);
    const auto x = random_tensor<float>({1, 3, 512, 512}, rng, 0, 1);
    Tape<float> tape;
    TapeScope<float> scope(nullptr);
    const auto f = model.encode(x);
    EXPECT_EQ(f.shape(), (Shape{1, 256, 128, 128}));
    EXPECT_EQ(model.add_style("p").theta.shape(), (Shape{256}));
}

TEST(Model, ReconstructionBackpropReachesOnlyAutoencoder)
{
    StyleRemixModel<float> model(tiny, 8);
    model.add_style("s");
    std::mt19937_64 rng(8);
    const auto x = random_tensor<float>({2, 3, 16, 16}, rng, 0, 1);
    Tape<float> tape;
    TapeScope<float> scope(&tape);
    tape.backward(sum(model.reconstruct(x)));
    for (const auto& [name, t] : model.autoencoder_parameters()) {
        ASSERT_TRUE(t.has_grad()) << name;
        double norm = 0;
        for (auto g : t.grad()) norm += std::abs(g);
        EXPECT_GT(norm, 0.0) << name;
    }
    for (const auto& [name, t] : model.basis_parameters()) EXPECT_FALSE(t.has_grad()) << name;
    for (const auto& [name, t] : model.style_parameters()) EXPECT_FALSE(t.has_grad()) << name;
}

TEST(Model, SameSeedSameParameters)
{
    StyleRemixModel<float> a(tiny, 9), b(tiny, 9), c(tiny, 10);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    bool differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].first, pb[i].first);
        EXPECT_EQ(as_doubles(pa[i].second), as_doubles(pb[i].second));
        differs |= as_doubles(pa[i].second) != as_doubles(pc[i].second);
    }
    EXPECT_TRUE(differs);
}

TEST(Model, AddingStyleCostsExactlyC)
{
    StyleRemixModel<float> desk(ModelConfig::desk(), 0);
    const auto before = desk.parameter_count();
    desk.add_style("one");
    EXPECT_EQ(desk.parameter_count() - before, 64u);
    desk.add_style("two");
    EXPECT_EQ(desk.parameter_count() - before, 128u);
    EXPECT_THROW(desk.add_style("one"), std::invalid_argument);
    EXPECT_EQ(desk.styles().names(), (std::vector<std::string>{"one", "two"}));

    StyleRemixModel<float> paper(ModelConfig::paper(), 0);
    const auto p0 = paper.parameter_count();
    paper.add_style("x");
    EXPECT_EQ(paper.parameter_count() - p0, 256u);
}

TEST(Model, ParameterAccounting)
{
    StyleRemixModel<float> model(tiny, 0);
    std::size_t expected = 0;
    // encoder: conv + IN affine
    expected += 4 * 3 * 9 + 8 + 6 * 4 * 9 + 12 + 8 * 6 * 9 + 16;
    // basis
    expected += 8 * 8 * 9 + 16;
    // decoder: two normalised blocks, linear output with bias
    expected += 6 * 8 * 9 + 12 + 4 * 6 * 9 + 8 + 3 * 4 * 9 + 3;
    EXPECT_EQ(model.parameter_count(), expected);
}

TEST(Model, ConfigValidation)
{
    EXPECT_THROW((ModelConfig{{4, 8}, 8, 3, 16}.validate()), std::invalid_argument);
    EXPECT_THROW((ModelConfig{{4, 8, 8}, 16, 3, 16}.validate()), std::invalid_argument);
    EXPECT_THROW((ModelConfig{{4, 8, 8}, 8, 2, 16}.validate()), std::invalid_argument);
    EXPECT_THROW((ModelConfig{{4, 8, 8}, 8, 3, 18}.validate()), std::invalid_argument);
    const nlohmann::json j = ModelConfig::paper();
    EXPECT_EQ(j.get<ModelConfig>(), ModelConfig::paper());
}

TEST(Checkpoint, RoundTripIsBitExact)
{
    StyleRemixModel<float> model(tiny, 11);
    std::mt19937_64 rng(11);
    auto& s = model.add_style("learned", "styles/a.png");
    auto theta = random_tensor<float>({8}, rng, -3, 3);
    std::copy(theta.data().begin(), theta.data().end(), s.theta.mutable_data().begin());
    std::vector<float> fixed(8, 0.0f);
    fixed[2] = fixed[3] = 0.5f;
    model.add_fixed_style("bank", Tensor<float>({8}, fixed));

    const auto dir = fresh_dir("styleremix_ckpt");
    save_checkpoint(model, dir);
    const auto back = load_checkpoint(dir);
    EXPECT_EQ(back.config(), model.config());
    ASSERT_EQ(back.styles().size(), 2u);
    EXPECT_EQ(back.styles().at(0).reference, "styles/a.png");
    EXPECT_TRUE(back.styles().at(0).learnable);
    EXPECT_FALSE(back.styles().at(1).learnable);
    const auto pa = model.parameters(), pb = back.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].first, pb[i].first);
        EXPECT_EQ(as_doubles(pa[i].second), as_doubles(pb[i].second)) << pa[i].first;
    }
    const auto x = random_tensor<float>({1, 3, 16, 16}, rng, 0, 1);
    TapeScope<float> off(nullptr);
    EXPECT_EQ(as_doubles(model.stylize(x, "learned")), as_doubles(back.stylize(x, "learned")));
}

TEST(Checkpoint, TamperedFilesAreRejected)
{
    StyleRemixModel<float> model(tiny, 12);
    model.add_style("a");
    const auto dir = fresh_dir("styleremix_ckpt_tamper");
    save_checkpoint(model, dir);
    const auto manifest_path = dir / TensorArchive::kManifestName;
    const auto payload_path = dir / TensorArchive::kPayloadName;
    const auto original = nlohmann::json::parse(std::ifstream(manifest_path));
    const auto payload_size = std::filesystem::file_size(payload_path);

    std::filesystem::resize_file(payload_path, payload_size - 4);
    EXPECT_THROW(load_checkpoint(dir), TruncatedPayloadError);
    std::filesystem::resize_file(payload_path, payload_size + 4);
    EXPECT_THROW(load_checkpoint(dir), LayoutError);
    std::filesystem::resize_file(payload_path, payload_size);

    std::ofstream(manifest_path) << "{ not json";
    EXPECT_THROW(load_checkpoint(dir), ManifestError);

    auto bad_shape = original;
    bad_shape["tensors"][0]["shape"][0] = 5;
    std::ofstream(manifest_path) << bad_shape.dump();
    EXPECT_THROW(load_checkpoint(dir), LayoutError);

    auto no_config = original;
    no_config.erase("config");
    std::ofstream(manifest_path) << no_config.dump();
    EXPECT_THROW(load_checkpoint(dir), ManifestError);

    std::filesystem::remove(manifest_path);
    EXPECT_THROW(load_checkpoint(dir), ManifestError);
}
