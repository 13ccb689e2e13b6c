#include "infoseg/manifest.hpp"

#include <nlohmann/json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <fstream>

namespace infoseg {

namespace fs = std::filesystem;
using nlohmann::json;

void write_manifest(const fs::path& run_dir, const RunManifest& manifest) {
    json j{{"run_name", manifest.run_name},
           {"config", json::parse(train_config_to_json(manifest.config))},
           {"dataset_fingerprint", manifest.dataset_fingerprint},
           {"code_version", manifest.code_version},
           {"data_root", manifest.data_root}};
    std::ofstream out(run_dir / "manifest.json");
    out << j.dump(2) << "\n";
    if (!out) throw DataError("cannot write manifest under " + run_dir.string());
}

RunManifest read_manifest(const fs::path& run_dir) {
    std::ifstream in(run_dir / "manifest.json");
    if (!in) throw DataError("missing manifest.json under " + run_dir.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed manifest.json: ") + e.what());
    }
    RunManifest m;
    m.run_name = j.at("run_name").get<std::string>();
    m.config = train_config_from_json(j.at("config").dump());
    m.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    m.code_version = j.at("code_version").get<std::string>();
    m.data_root = j.at("data_root").get<std::string>();
    return m;
}

RunLock::RunLock(const fs::path& run_dir) : lock_path_(run_dir / ".lock") {
    fs::create_directories(run_dir);
    int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
        throw DataError("run directory is locked (remove " + lock_path_.string() +
                        " if no other process owns it)");
    ::close(fd);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(lock_path_, ec);
}

}  // namespace infoseg
