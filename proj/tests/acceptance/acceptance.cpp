// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   crossx_acceptance --workdir DIR
//
// Drives the crossx binary for everything that involves training, so the
// measured runtimes are those of the shipped tool.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crossx/ablation.hpp"
#include "crossx/config.hpp"
#include "crossx/ops.hpp"
#include "crossx/random.hpp"
#include "crossx/regularizers.hpp"

namespace fs = std::filesystem;
using namespace crossx;

namespace {

struct Outcome {
  int code = -1;
  double seconds = 0;
  std::string output;
};

Outcome run_tool(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(CROSSX_BINARY) + " " + args + " > " + log.string() + " 2>&1";
  const auto t0 = std::chrono::steady_clock::now();
  const int status = std::system(cmd.c_str());
  Outcome r;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(log);
  std::ostringstream os;
  os << is.rdbuf();
  r.output = os.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// CSV with a header row, as column -> value maps.
std::vector<std::map<std::string, std::string>> read_table(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  std::vector<std::map<std::string, std::string>> rows;
  if (!std::getline(is, line)) return rows;
  const auto header = split_csv(line);
  while (std::getline(is, line)) {
    const auto fields = split_csv(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < fields.size(); ++i) row[header[i]] = fields[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

double num(const std::map<std::string, std::string>& row, const std::string& key) {
  const auto it = row.find(key);
  if (it == row.end() || it->second.empty()) return std::nan("");
  return std::stod(it->second);
}

class Report {
 public:
  void line(int id, bool pass, const std::string& detail) {
    std::cout << "criterion " << std::setw(2) << id << ": " << (pass ? "PASS" : "FAIL") << "  " << detail
              << std::endl;
    failures_ += pass ? 0 : 1;
  }
  int failures() const { return failures_; }

 private:
  int failures_ = 0;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// ---- criteria 2-4: closed-form and brute-force oracles --------------------

double pair_sum(const Tensor64& a, const Tensor64& b) {
  const std::size_t n = a.dim(0), c = a.dim(1);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < c; ++k) total += a.at({i, k}) * b.at({j, k});
    }
  }
  return total / static_cast<double>(n * n);
}

void correlation_oracle(Report& report) {
  Rng rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(8), p = 1 + rng.below(4), c = 1 + rng.below(16);
    std::vector<Tensor64> f;
    for (std::size_t e = 0; e < p; ++e) {
      std::vector<double> v(n * c);
      for (double& x : v) x = rng.uniform(-2, 2);
      f.emplace_back(Shape{n, c}, v);
    }
    const auto s = correlation_matrix(f).s;
    for (std::size_t a = 0; a < p; ++a) {
      for (std::size_t b = 0; b < p; ++b) worst = std::max(worst, std::abs(s.at({a, b}) - pair_sum(f[a], f[b])));
    }
  }
  report.line(2, worst <= 1e-10, "fast vs pair-sum correlation over 100 cases, max |diff| " + fmt(worst) + " (<= 1e-10)");
}

void analytic_values(Report& report) {
  std::vector<std::string> bad;
  const double c3s_identity = c3s_loss(Tensor64({2, 2}, {1, 0, 0, 1})).item();
  if (c3s_identity != -1.0) bad.push_back("c3s(I2)=" + fmt(c3s_identity, 17));
  const double c3s_ones = c3s_loss(Tensor64({2, 2}, {1, 1, 1, 1})).item();
  if (c3s_ones != 0.0) bad.push_back("c3s(ones)=" + fmt(c3s_ones, 17));
  const double kl = kl_divergence(Tensor64({1, 2}, {1, 0}), Tensor64({1, 2}, {0.5, 0.5})).item();
  if (std::abs(kl - std::log(2.0)) > 1e-6) bad.push_back("KL=" + fmt(kl, 17));
  const std::vector<std::size_t> labels{2};
  const double ce = cross_entropy(Tensor64({1, 4}, {0.25, 0.25, 0.25, 0.25}), labels).item();
  if (std::abs(ce - std::log(4.0)) > 1e-6) bad.push_back("CE=" + fmt(ce, 17));
  const auto sm = softmax(Tensor64({1, 2}, {3, 0}));
  if (std::abs(sm.at({0, 0}) - 0.952574) > 1e-6 || std::abs(sm.at({0, 1}) - 0.047426) > 1e-6) {
    bad.push_back("softmax=[" + fmt(sm.at({0, 0}), 9) + "," + fmt(sm.at({0, 1}), 9) + "]");
  }
  std::string detail = "c3s(I2), c3s(ones), KL vs ln2, CE vs ln4, softmax([3,0])";
  for (const auto& b : bad) detail += "; off: " + b;
  report.line(3, bad.empty(), detail);
}

void kl_properties(Report& report) {
  Rng rng(77);
  double most_negative = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.below(9);
    std::vector<double> p(k), q(k);
    double sp = 0, sq = 0;
    for (std::size_t i = 0; i < k; ++i) {
      p[i] = rng.uniform(0.001, 1.0);
      q[i] = rng.uniform(0.001, 1.0);
      sp += p[i];
      sq += q[i];
    }
    for (std::size_t i = 0; i < k; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    most_negative = std::min(most_negative, kl_divergence(Tensor64({1, k}, p), Tensor64({1, k}, q)).item());
  }
  double self_max = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng.below(9);
    std::vector<double> p(k);
    double sp = 0;
    for (double& x : p) sp += (x = rng.uniform(0.001, 1.0));
    for (double& x : p) x /= sp;
    self_max = std::max(self_max, std::abs(kl_divergence(Tensor64({1, k}, p), Tensor64({1, k}, p)).item()));
  }
  report.line(4, most_negative >= 0.0 && self_max <= 1e-12,
              "min KL over 1000 pairs " + fmt(most_negative) + " (>= 0), max |KL(p||p)| " + fmt(self_max) +
                  " (<= 1e-12)");
}

// ---- criterion 8: chance-level bounds ---------------------------------------

// Smallest k with P(X <= k) >= q for X ~ Binomial(n, p).
std::size_t binomial_quantile(std::size_t n, double p, double q) {
  double cdf = 0;
  for (std::size_t k = 0; k <= n; ++k) {
    const double log_pmf = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
                           k * std::log(p) + (n - k) * std::log1p(-p);
    cdf += std::exp(log_pmf);
    if (cdf >= q) return k;
  }
  return n;
}

// ---- helpers over run directories ------------------------------------------

struct StageGap {
  double first = 0, last = 0;
  bool decreased() const { return last < first; }
};

std::map<std::string, StageGap> stage_gaps(const std::vector<std::map<std::string, std::string>>& metrics) {
  std::map<std::string, StageGap> gaps;
  for (const std::string stage : {"top", "mid", "merged"}) {
    const double f = num(metrics.front(), "s_offdiag_" + stage) - num(metrics.front(), "s_diag_" + stage);
    const double l = num(metrics.back(), "s_offdiag_" + stage) - num(metrics.back(), "s_diag_" + stage);
    if (!std::isnan(f) && !std::isnan(l)) gaps[stage] = {f, l};
  }
  return gaps;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crossx acceptance"};
  std::string workdir;
  std::string config = "desk";
  app.add_option("--workdir", workdir, "scratch directory for runs")->required();
  app.add_option("--config", config, "base configuration (file or preset)");
  CLI11_PARSE(app, argc, argv);

  const fs::path work(workdir);
  fs::remove_all(work);
  fs::create_directories(work);
  const CrossXConfig base = resolve_config(config);
  Report report;

  // 1. Gradient suite.
  {
    const auto r = run_tool("gradcheck --out " + (work / "gradcheck").string(), work / "gradcheck.log");
    report.line(1, r.code == 0 && r.seconds <= 60.0,
                "crossx gradcheck exit " + std::to_string(r.code) + " in " + fmt(r.seconds, 3) + " s (<= 60 s)");
  }
  correlation_oracle(report);
  analytic_values(report);
  kl_properties(report);

  // Two identical single-thread training runs of the base configuration.
  const fs::path run_a = work / "train_a", run_b = work / "train_b";
  const std::string train_args = "train --config " + config + " --set export_dataset=true --out ";
  ::setenv("CROSSX_THREADS", "1", 1);
  const auto ta = run_tool(train_args + run_a.string(), work / "train_a.log");
  const auto tb = run_tool(train_args + run_b.string(), work / "train_b.log");
  if (ta.code != 0 || tb.code != 0) {
    std::cerr << "training failed:\n" << ta.output << tb.output;
  }
  const auto metrics_a = read_table(run_a / "metrics.csv");

  // The ablation matrix; its full-model and no-CL runs feed 5-7.
  const fs::path ablation = work / "ablation";
  const auto ab = run_tool("ablate --config " + config + " --out " + ablation.string(), work / "ablation.log");
  if (ab.code != 0) std::cerr << "ablation failed:\n" << ab.output;
  const PoolMode pooling = base.mid_pooling;
  const std::string full = "c3s+gxp+fp+cl", no_cl = "c3s+gxp+fp", osme = "osme";
  auto run_metrics = [&](const std::string& variant, std::uint64_t seed) {
    return read_table(ablation / "runs" / run_directory_name(variant, pooling, seed) / "metrics.csv");
  };

  // 5. Correlation gap shrinks at every stage.
  {
    std::size_t good = 0;
    std::ostringstream detail;
    for (std::size_t s = 0; s < base.ablation_seeds; ++s) {
      const auto m = run_metrics(full, base.seed + s);
      if (m.empty()) continue;
      const auto gaps = stage_gaps(m);
      bool all = gaps.size() == 3;
      for (const auto& [stage, g] : gaps) all = all && g.decreased();
      good += all;
      detail << " s" << base.seed + s << (all ? ":ok" : ":no");
    }
    const double per_run = ta.seconds;
    report.line(5, ab.code == 0 && good >= 4 && per_run <= 600.0,
                "offdiag-diag gap decreased at all stages in " + std::to_string(good) + "/" +
                    std::to_string(base.ablation_seeds) + " seeds (>= 4)" + detail.str() + "; one run " +
                    fmt(per_run, 3) + " s (<= 600 s)");
  }

  // 6. Consistency loss lowers validation KL.
  {
    std::size_t good = 0;
    std::ostringstream detail;
    for (std::size_t s = 0; s < base.ablation_seeds; ++s) {
      const auto with = run_metrics(full, base.seed + s), without = run_metrics(no_cl, base.seed + s);
      if (with.empty() || without.empty()) continue;
      const double a = num(with.back(), "val_kl_top_mid"), b = num(without.back(), "val_kl_top_mid");
      good += a < b;
      detail << " " << fmt(a, 3) << "<" << fmt(b, 3) << (a < b ? "" : "!");
    }
    report.line(6, ab.code == 0 && good >= 4,
                "final val KL(top||mid) below the no-CL run in " + std::to_string(good) + "/" +
                    std::to_string(base.ablation_seeds) + " seeds (>= 4):" + detail.str());
  }

  // 7. Ablation ordering.
  {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (const auto& row : read_table(ablation / "ablation.csv")) {
      const std::string variant = row.at("variant");
      if (variant_uses_pooling(variant) && row.at("pooling") != std::string(to_string(pooling))) continue;
      if (!variant_uses_pooling(variant) && row.at("pooling") != "gap") continue;
      acc[variant].first += num(row, "test_acc");
      acc[variant].second += 1;
    }
    auto mean = [&](const std::string& v) {
      const auto it = acc.find(v);
      return it == acc.end() || it->second.second == 0 ? std::nan("") : it->second.first / it->second.second;
    };
    const double m_full = mean(full), m_osme = mean(osme), m_nocl = mean(no_cl);
    const bool pass = ab.code == 0 && m_full >= m_osme - 0.01 && m_full >= m_nocl - 0.01 && ab.seconds <= 7200.0;
    report.line(7, pass,
                "mean test acc full " + fmt(m_full) + " vs osme " + fmt(m_osme) + " and no-CL " + fmt(m_nocl) +
                    " (within 1 pp); ablation " + fmt(ab.seconds / 60.0, 3) + " min (<= 120)");
  }

  // 8. Training sanity.
  {
    const double train_acc = metrics_a.empty() ? std::nan("") : num(metrics_a.back(), "train_acc");
    const auto e = run_tool("eval --config " + config + " --checkpoint " + (run_a / "initial.ckpt").string() +
                                " --split test --out " + (work / "eval_initial").string(),
                            work / "eval_initial.log");
    const auto rows = read_table(work / "eval_initial" / "eval.csv");
    bool chance_ok = false;
    std::string chance_detail = "untrained eval failed";
    if (e.code == 0 && !rows.empty()) {
      const std::size_t n = static_cast<std::size_t>(num(rows[0], "count"));
      const double p = 1.0 / static_cast<double>(base.data.classes);
      const std::size_t lo = binomial_quantile(n, p, 0.005), hi = binomial_quantile(n, p, 0.995);
      const double hits = std::round(num(rows[0], "accuracy") * static_cast<double>(n));
      chance_ok = hits >= static_cast<double>(lo) && hits <= static_cast<double>(hi);
      chance_detail = "untrained " + fmt(hits, 4) + "/" + std::to_string(n) + " correct, 99% band [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]";
    }
    report.line(8, train_acc >= 0.95 && chance_ok,
                "final train acc " + fmt(train_acc) + " (>= 0.95); " + chance_detail);
  }

  // 9. Determinism and checkpoint round trip.
  {
    const std::string ma = slurp(run_a / "metrics.csv"), mb = slurp(run_b / "metrics.csv");
    const bool identical = ta.code == 0 && tb.code == 0 && !ma.empty() && ma == mb;
    const auto e = run_tool("eval --config " + config + " --checkpoint " + (run_a / "final.ckpt").string() +
                                " --split val --out " + (work / "eval_final").string(),
                            work / "eval_final.log");
    const auto rows = read_table(work / "eval_final" / "eval.csv");
    const double reloaded = rows.empty() ? std::nan("") : num(rows[0], "accuracy");
    const double logged = metrics_a.empty() ? std::nan("") : num(metrics_a.back(), "val_acc");
    report.line(9, identical && e.code == 0 && reloaded == logged,
                std::string("metrics.csv ") + (identical ? "byte-identical" : "DIFFERS") +
                    "; reloaded final val acc " + fmt(reloaded, 9) + " vs logged " + fmt(logged, 9));
  }

  // 10. Activation-map export.
  {
    const fs::path cams = work / "cams";
    const auto e = run_tool("export-cam --config " + config + " --checkpoint " + (run_a / "final.ckpt").string() +
                                " --images " + (run_a / "dataset" / "images.bin").string() + " --out " +
                                cams.string(),
                            work / "cams.log");
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_image;  // heatmaps, combined
    bool sizes_ok = e.code == 0;
    if (fs::exists(cams)) {
      for (const auto& entry : fs::directory_iterator(cams)) {
        const std::string name = entry.path().filename().string();
        if (!name.ends_with(".pgm")) continue;
        const std::string image = name.substr(0, name.find('_'));
        (name.ends_with("_combined.pgm") ? per_image[image].second : per_image[image].first) += 1;
        std::ifstream is(entry.path(), std::ios::binary);
        std::string magic;
        std::size_t w = 0, h = 0;
        is >> magic >> w >> h;
        sizes_ok = sizes_ok && magic == "P5" && w == base.data.image_size && h == base.data.image_size;
      }
    }
    const std::size_t expected_heat = base.excitations * 3;
    bool counts_ok = !per_image.empty() && base.excitations == 2;
    for (const auto& [image, counts] : per_image) {
      counts_ok = counts_ok && counts.first == expected_heat && counts.second == 3;
    }
    report.line(10, sizes_ok && counts_ok,
                std::to_string(per_image.size()) + " images, each with " +
                    (per_image.empty() ? std::string("none")
                                       : std::to_string(per_image.begin()->second.first) + " heatmaps + " +
                                             std::to_string(per_image.begin()->second.second) + " combined") +
                    " (want 6 + 3) at " + std::to_string(base.data.image_size) + "x" +
                    std::to_string(base.data.image_size));
  }

  std::cout << (report.failures() == 0 ? "all criteria passed" : std::to_string(report.failures()) + " failed")
            << std::endl;
  return report.failures() == 0 ? 0 : 1;
}
