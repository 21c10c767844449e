#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "crossx/config.hpp"
#include "crossx/model.hpp"
#include "crossx/regularizers.hpp"
#include "crossx/synth.hpp"

namespace crossx {

/// base_lr * factor^floor(epoch / period).
double lr_schedule(std::size_t epoch, double base_lr, std::size_t period, double factor);

/// Classic momentum: v <- mu v + (g + wd w); w <- w - lr v. A missing gradient
/// counts as zero. Non-finite gradients throw NumericalError naming the
/// parameter, before anything is modified.
template <typename T>
void sgd_step(const std::vector<NamedTensor<T>>& params, std::vector<std::vector<T>>& velocity, double lr,
              double momentum, double weight_decay = 0.0);

/// One metrics.csv row. Absent values are written as empty fields.
struct MetricsRow {
  std::size_t epoch = 0;
  double lr = 0;
  double loss_total = 0;
  double loss_data = 0;
  std::optional<double> c3s_top, c3s_mid, c3s_merged;
  std::optional<double> kl_top_mid, kl_top_merged;
  double train_acc = 0;
  double train_acc_top = 0;
  std::optional<double> train_acc_mid, train_acc_merged;
  double val_acc = 0;
  double val_acc_top = 0;
  std::optional<double> val_acc_mid, val_acc_merged;
  std::optional<double> val_kl_top_mid, val_kl_top_merged;
  // Mean diagonal and mean |off-diagonal| entry of the correlation matrix.
  double s_diag_top = 0, s_offdiag_top = 0;
  std::optional<double> s_diag_mid, s_offdiag_mid;
  std::optional<double> s_diag_merged, s_offdiag_merged;
};

const std::vector<std::string>& metrics_columns();
std::string metrics_header();
std::string metrics_line(const MetricsRow& row);

struct EvalResult {
  std::size_t count = 0;
  double accuracy = 0;
  double acc_top = 0;
  std::optional<double> acc_mid, acc_merged;
  std::optional<double> kl_top_mid, kl_top_merged;
};

/// Loss inputs of one forward pass: cross-entropy of the combined prediction,
/// the correlation matrix of every present stage and each head's softmax.
template <typename T>
LossInputs<T> loss_inputs(const ForwardOutput<T>& out, std::span<const std::size_t> labels);

/// Eval-mode pass over `set` (running BN statistics, no augmentation). Top-1
/// accuracy of the combined prediction and of each head, plus mean KL of each
/// lower head against the last-stage head.
template <typename T>
EvalResult evaluate(CrossXModel<T>& model, const ImageSet& set, std::size_t batch_size = 50);

template <typename T>
struct TrainState {
  CrossXModel<T> model;
  std::vector<std::vector<T>> velocity;  // one buffer per parameter
  std::size_t epoch = 0;                 // completed epochs
  std::uint64_t step = 0;                // completed SGD steps
  std::uint64_t seed = 0;
  std::vector<MetricsRow> history;
};

struct TrainOptions {
  std::optional<std::filesystem::path> outdir;
  std::ostream* log = nullptr;
  bool checkpoints = true;
};

struct TrainResult {
  TrainState<float> state;
  SynthDataset data;
  std::size_t best_epoch = 0;
  double best_val_acc = -1;
};

/// Full training run. With an output directory it writes effective-config.txt,
/// metrics.csv, initial.ckpt, best.ckpt (best validation accuracy), final.ckpt
/// and, when enabled, the exported test split under dataset/.
TrainResult train(const CrossXConfig& config, const TrainOptions& options = {});

/// Checkpoint filenames within a run directory.
inline constexpr const char* kInitialCheckpoint = "initial.ckpt";
inline constexpr const char* kBestCheckpoint = "best.ckpt";
inline constexpr const char* kFinalCheckpoint = "final.ckpt";

}  // namespace crossx
