#pragma once

#include <filesystem>
#include <iosfwd>

#include "mpt/config.hpp"
#include "mpt/trainer.hpp"

namespace mpt {

/// Entry point of the `mpt` executable. Returns the process exit code;
/// failures print a single `error[<category>]: <message>` line to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Reads `<data_dir>/manifest.json` and the trajectories it lists. With
/// `with_bases`, the spectral bases of the training split are loaded from
/// the cache (CacheMissError if preprocessing has not run).
Dataset load_dataset(const RunConfig& cfg, bool with_bases);

/// Cache directory after applying the MPT_CACHE_DIR override.
std::filesystem::path effective_cache_dir(const RunConfig& cfg);

}  // namespace mpt
