#include "crossx/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace crossx {

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v = {"se",         "osme",          "c3s",          "c3s+gxp",
                                             "c3s+gxp+cl", "c3s+gxp+fp", "c3s+gxp+fp+cl"};
  return v;
}

bool variant_uses_pooling(const std::string& variant) { return variant.find("gxp") != std::string::npos; }

CrossXConfig variant_config(const CrossXConfig& base, const std::string& variant, PoolMode pooling,
                            std::uint64_t seed) {
  const auto& names = ablation_variants();
  if (std::find(names.begin(), names.end(), variant) == names.end()) {
    throw ConfigError("unknown ablation variant '" + variant + "'");
  }
  CrossXConfig c = base;
  c.seed = seed;
  c.mid_pooling = pooling;
  c.export_dataset = false;
  if (variant == "se") c.excitations = 1;
  c.use_c3s = variant.find("c3s") != std::string::npos;
  c.use_mid = variant_uses_pooling(variant);
  c.use_merged = variant.find("fp") != std::string::npos;
  c.use_cl = variant.find("cl") != std::string::npos;
  return c;
}

std::string run_directory_name(const std::string& variant, PoolMode pooling, std::uint64_t seed) {
  std::string name = variant;
  std::replace(name.begin(), name.end(), '+', '-');
  return name + "_" + std::string(to_string(pooling)) + "_s" + std::to_string(seed);
}

std::vector<AblationRow> run_ablation(const CrossXConfig& base, const AblationOptions& options) {
  base.validate();
  struct Job {
    std::size_t row;
    CrossXConfig config;
  };
  std::vector<AblationRow> rows;
  std::vector<Job> jobs;
  std::vector<std::pair<std::size_t, std::size_t>> copies;  // (target row, source row)
  for (const auto& variant : ablation_variants()) {
    for (PoolMode pooling : {PoolMode::kAverage, PoolMode::kMax}) {
      for (std::size_t s = 0; s < base.ablation_seeds; ++s) {
        AblationRow row;
        row.variant = variant;
        row.pooling = pooling;
        row.seed = base.seed + s;
        if (pooling == PoolMode::kMax && !variant_uses_pooling(variant)) {
          row.reused = true;
          copies.emplace_back(rows.size(), rows.size() - base.ablation_seeds);
        } else {
          jobs.push_back({rows.size(), variant_config(base, variant, pooling, row.seed)});
        }
        rows.push_back(std::move(row));
      }
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      {
        std::lock_guard lock(log_mutex);
        if (failure) return;
      }
      try {
        AblationRow& row = rows[jobs[j].row];
        TrainOptions topts;
        topts.checkpoints = false;
        if (options.outdir) {
          topts.outdir = *options.outdir / "runs" / run_directory_name(row.variant, row.pooling, row.seed);
        }
        TrainResult result = train(jobs[j].config, topts);
        row.test = evaluate(result.state.model, result.data.test);
        row.history = std::move(result.state.history);
        if (options.log) {
          std::lock_guard lock(log_mutex);
          *options.log << "[" << (j + 1) << "/" << jobs.size() << "] " << row.variant << " "
                       << to_string(row.pooling) << " seed " << row.seed << ": test " << std::setprecision(4)
                       << row.test.accuracy << std::endl;
        }
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(1, jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (auto [target, source] : copies) {
    rows[target].test = rows[source].test;
    rows[target].history = rows[source].history;
  }
  if (options.outdir) {
    write_ablation_csv(*options.outdir / "ablation.csv", rows);
  }
  return rows;
}

std::string ablation_header() {
  return "variant,pooling,seed,test_acc,test_acc_top,test_acc_mid,test_acc_merged";
}

std::string ablation_line(const AblationRow& row) {
  std::ostringstream os;
  os << std::setprecision(9) << row.variant << ',' << to_string(row.pooling) << ',' << row.seed << ','
     << row.test.accuracy << ',' << row.test.acc_top << ',';
  if (row.test.acc_mid) os << *row.test.acc_mid;
  os << ',';
  if (row.test.acc_merged) os << *row.test.acc_merged;
  return os.str();
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) {
    throw ConfigError("cannot write " + path.string());
  }
  os << ablation_header() << '\n';
  for (const auto& row : rows) os << ablation_line(row) << '\n';
}

}  // namespace crossx
