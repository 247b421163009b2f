#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nrsc/synthdata.hpp"

namespace nrsc::cli {

/// Exit codes: 0 success, 2 usage, 3 data error, 4 format error, 5 internal.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args without the program name

/// Dataset directory description stored in manifest.json.
struct Manifest {
    DatasetSpec spec;
    std::uint64_t dataset_seed = 0;
};

Manifest read_manifest(const std::filesystem::path& data_dir);  // throws DataError

}  // namespace nrsc::cli
