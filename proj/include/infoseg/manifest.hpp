#pragma once

#include "infoseg/checkpoint.hpp"

#include <filesystem>
#include <string>

namespace infoseg {

inline constexpr const char* kCodeVersion = "infoseg 0.1.0";

/// Everything needed to reconstruct a run: config snapshot, dataset
/// content hash, code version and seed.
struct RunManifest {
    std::string run_name;
    TrainConfig config;
    std::string dataset_fingerprint;
    std::string code_version = kCodeVersion;
    std::string data_root;
};

void write_manifest(const std::filesystem::path& run_dir, const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& run_dir);

/// Exclusive lock file guarding a run directory; released on destruction.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& run_dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path lock_path_;
};

}  // namespace infoseg
