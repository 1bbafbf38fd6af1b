#include "styleremix/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

namespace styleremix {

namespace {

std::uint32_t to_little_endian(std::uint32_t v)
{
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    }
}

void append_floats(std::string& blob, const std::vector<float>& values)
{
    const auto start = blob.size();
    blob.resize(start + values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = to_little_endian(std::bit_cast<std::uint32_t>(values[i]));
        std::memcpy(blob.data() + start + i * 4, &bits, 4);
    }
}

std::vector<float> read_floats(const std::string& blob, std::uint64_t offset, std::size_t count)
{
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, blob.data() + offset + i * 4, 4);
        out[i] = std::bit_cast<float>(to_little_endian(bits));
    }
    return out;
}

}  // namespace

void TensorArchive::add(const std::string& name, const Tensor<float>& tensor)
{
    if (contains(name)) throw std::invalid_argument("archive: duplicate tensor name " + name);
    TensorRecord rec;
    rec.name = name;
    rec.shape = tensor.shape();
    rec.byte_offset = records_.empty() ? 0 : records_.back().byte_offset + records_.back().byte_len;
    rec.byte_len = tensor.numel() * 4;
    records_.push_back(rec);
    payloads_.emplace_back(tensor.data().begin(), tensor.data().end());
}

bool TensorArchive::contains(const std::string& name) const
{
    return std::any_of(records_.begin(), records_.end(), [&](const auto& r) { return r.name == name; });
}

Tensor<float> TensorArchive::get(const std::string& name) const
{
    for (std::size_t i = 0; i < records_.size(); ++i) {
        if (records_[i].name == name) return Tensor<float>(records_[i].shape, payloads_[i]);
    }
    throw CheckpointError("archive: no tensor named " + name);
}

void TensorArchive::save(const std::filesystem::path& dir) const
{
    std::filesystem::create_directories(dir);
    std::string blob;
    nlohmann::json tensors = nlohmann::json::array();
    for (std::size_t i = 0; i < records_.size(); ++i) {
        append_floats(blob, payloads_[i]);
        tensors.push_back({{"name", records_[i].name},
                           {"shape", records_[i].shape},
                           {"byte_offset", records_[i].byte_offset},
                           {"byte_len", records_[i].byte_len}});
    }
    nlohmann::json manifest = metadata_;
    manifest["version"] = kVersion;
    manifest["tensors"] = std::move(tensors);

    std::ofstream payload(dir / kPayloadName, std::ios::binary | std::ios::trunc);
    payload.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    std::ofstream text(dir / kManifestName, std::ios::trunc);
    text << manifest.dump(2) << '\n';
    if (!payload || !text) throw CheckpointError("archive: failed writing " + dir.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& dir)
{
    std::ifstream text(dir / kManifestName);
    if (!text) throw ManifestError("archive: cannot open " + (dir / kManifestName).string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError("archive: corrupt manifest " + (dir / kManifestName).string() + ": " + e.what());
    }
    if (!manifest.is_object() || !manifest.contains("version") || !manifest.contains("tensors") ||
        !manifest["tensors"].is_array()) {
        throw ManifestError("archive: manifest lacks version/tensors");
    }
    if (manifest["version"] != kVersion) {
        throw ManifestError("archive: unsupported manifest version " + manifest["version"].dump());
    }

    std::ifstream payload(dir / kPayloadName, std::ios::binary);
    if (!payload) throw TruncatedPayloadError("archive: missing " + (dir / kPayloadName).string());
    const std::string blob((std::istreambuf_iterator<char>(payload)), std::istreambuf_iterator<char>());

    TensorArchive archive;
    std::uint64_t expected_offset = 0;
    for (const auto& entry : manifest["tensors"]) {
        TensorRecord rec;
        try {
            rec.name = entry.at("name").get<std::string>();
            rec.shape = entry.at("shape").get<Shape>();
            rec.byte_offset = entry.at("byte_offset").get<std::uint64_t>();
            rec.byte_len = entry.at("byte_len").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw ManifestError(std::string("archive: malformed tensor record: ") + e.what());
        }
        if (rec.shape.empty() || std::find(rec.shape.begin(), rec.shape.end(), 0u) != rec.shape.end()) {
            throw LayoutError("archive: tensor " + rec.name + " has invalid shape " + to_string(rec.shape));
        }
        if (rec.byte_len != shape_numel(rec.shape) * 4) {
            throw LayoutError("archive: tensor " + rec.name + " byte_len " + std::to_string(rec.byte_len) +
                              " does not match shape " + to_string(rec.shape));
        }
        if (rec.byte_offset != expected_offset) {
            throw LayoutError("archive: tensor " + rec.name + " offset " + std::to_string(rec.byte_offset) +
                              ", expected " + std::to_string(expected_offset));
        }
        if (rec.byte_offset + rec.byte_len > blob.size()) {
            throw TruncatedPayloadError("archive: payload ends at byte " + std::to_string(blob.size()) +
                                        " but tensor " + rec.name + " needs " +
                                        std::to_string(rec.byte_offset + rec.byte_len));
        }
        if (archive.contains(rec.name)) throw ManifestError("archive: duplicate tensor " + rec.name);
        expected_offset += rec.byte_len;
        archive.payloads_.push_back(read_floats(blob, rec.byte_offset, shape_numel(rec.shape)));
        archive.records_.push_back(std::move(rec));
    }
    if (expected_offset != blob.size()) {
        throw LayoutError("archive: payload has " + std::to_string(blob.size() - expected_offset) +
                          " trailing bytes");
    }
    manifest.erase("tensors");
    manifest.erase("version");
    archive.metadata_ = std::move(manifest);
    return archive;
}

}  // namespace styleremix
