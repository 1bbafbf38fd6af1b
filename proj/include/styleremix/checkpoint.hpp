#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "styleremix/tensor.hpp"

namespace styleremix {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// manifest.json is missing, unparsable, or lacks required fields.
class ManifestError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

/// A tensor record disagrees with its shape, or offsets do not tile the payload.
class LayoutError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

/// weights.bin is shorter than the manifest requires.
class TruncatedPayloadError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

struct TensorRecord {
    std::string name;
    Shape shape;
    std::uint64_t byte_offset = 0;
    std::uint64_t byte_len = 0;
};

/// Ordered named float tensors plus free-form metadata, stored as a directory
/// holding `manifest.json` and `weights.bin` (little-endian float32, tensors
/// concatenated in record order).
class TensorArchive {
public:
    static constexpr int kVersion = 1;
    static constexpr const char* kManifestName = "manifest.json";
    static constexpr const char* kPayloadName = "weights.bin";

    void add(const std::string& name, const Tensor<float>& tensor);
    bool contains(const std::string& name) const;
    /// Copy of the stored tensor as a fresh leaf.
    Tensor<float> get(const std::string& name) const;
    const std::vector<TensorRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }

    nlohmann::json& metadata() { return metadata_; }
    const nlohmann::json& metadata() const { return metadata_; }

    void save(const std::filesystem::path& dir) const;
    /// Validates the manifest and payload completely before returning.
    static TensorArchive load(const std::filesystem::path& dir);

private:
    std::vector<TensorRecord> records_;
    std::vector<std::vector<float>> payloads_;
    nlohmann::json metadata_ = nlohmann::json::object();
};

}  // namespace styleremix
