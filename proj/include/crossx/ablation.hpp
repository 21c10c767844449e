#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "crossx/config.hpp"
#include "crossx/train.hpp"

namespace crossx {

/// The toggle ladder, from a plain squeeze-excitation classifier to the full
/// model: se, osme, c3s, c3s+gxp, c3s+gxp+cl, c3s+gxp+fp, c3s+gxp+fp+cl.
const std::vector<std::string>& ablation_variants();

/// Whether the variant has a penultimate-stage branch, i.e. whether the
/// pooling axis changes anything.
bool variant_uses_pooling(const std::string& variant);

/// `base` with the variant's toggles, the given penultimate pooling and seed.
CrossXConfig variant_config(const CrossXConfig& base, const std::string& variant, PoolMode pooling,
                            std::uint64_t seed);

struct AblationRow {
  std::string variant;
  PoolMode pooling = PoolMode::kAverage;
  std::uint64_t seed = 0;
  EvalResult test;
  std::vector<MetricsRow> history;
  /// Pooling-insensitive variants train once per seed; the second pooling row
  /// repeats that result.
  bool reused = false;
};

struct AblationOptions {
  /// Per-run metrics land in <outdir>/runs/<variant>_<pooling>_s<seed>/.
  std::optional<std::filesystem::path> outdir;
  std::size_t threads = 1;
  std::ostream* log = nullptr;
};

/// variants x {gap, gmp} x seeds (base.seed, base.seed + 1, ...), in that
/// nesting order. Results do not depend on the thread count.
std::vector<AblationRow> run_ablation(const CrossXConfig& base, const AblationOptions& options = {});

std::string ablation_header();
std::string ablation_line(const AblationRow& row);
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

/// Directory name of one run below <outdir>/runs.
std::string run_directory_name(const std::string& variant, PoolMode pooling, std::uint64_t seed);

}  // namespace crossx
