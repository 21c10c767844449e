#include "crossx/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "crossx/autodiff.hpp"
#include "crossx/checkpoint.hpp"

namespace crossx {

double lr_schedule(std::size_t epoch, double base_lr, std::size_t period, double factor) {
  if (period < 1) {
    throw ConfigError("lr_schedule: decay period must be at least 1");
  }
  return base_lr * std::pow(factor, static_cast<double>(epoch / period));
}

template <typename T>
void sgd_step(const std::vector<NamedTensor<T>>& params, std::vector<std::vector<T>>& velocity, double lr,
              double momentum, double weight_decay) {
  if (velocity.size() != params.size()) {
    throw DimensionError("sgd_step: " + std::to_string(velocity.size()) + " momentum buffers for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (velocity[i].size() != params[i].tensor.numel()) {
      throw DimensionError("sgd_step: momentum buffer of '" + params[i].name + "' has the wrong size");
    }
    if (!all_finite(params[i].tensor.grad())) {
      throw NumericalError("non-finite gradient in parameter '" + params[i].name + "'");
    }
  }
  const T mu = static_cast<T>(momentum);
  const T rate = static_cast<T>(lr);
  const T wd = static_cast<T>(weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].tensor;
    auto w = p.values_mut();
    auto g = p.grad();
    auto& v = velocity[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T grad = (g.empty() ? T(0) : g[j]) + wd * w[j];
      v[j] = mu * v[j] + grad;
      w[j] -= rate * v[j];
    }
  }
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "epoch",          "lr",           "loss_total",     "loss_data",       "c3s_top",
      "c3s_mid",        "c3s_merged",   "kl_top_mid",     "kl_top_merged",   "train_acc",
      "train_acc_top",  "train_acc_mid", "train_acc_merged", "val_acc",       "val_acc_top",
      "val_acc_mid",    "val_acc_merged", "val_kl_top_mid", "val_kl_top_merged", "s_diag_top",
      "s_offdiag_top",  "s_diag_mid",   "s_offdiag_mid",  "s_diag_merged",   "s_offdiag_merged"};
  return cols;
}

std::string metrics_header() {
  std::string out;
  for (const auto& c : metrics_columns()) out += (out.empty() ? "" : ",") + c;
  return out;
}

std::string metrics_line(const MetricsRow& r) {
  std::ostringstream os;
  os << std::setprecision(9);
  auto num = [&](double v) { os << ',' << v; };
  auto opt = [&](const std::optional<double>& v) {
    os << ',';
    if (v) os << *v;
  };
  os << r.epoch;
  num(r.lr);
  num(r.loss_total);
  num(r.loss_data);
  opt(r.c3s_top);
  opt(r.c3s_mid);
  opt(r.c3s_merged);
  opt(r.kl_top_mid);
  opt(r.kl_top_merged);
  num(r.train_acc);
  num(r.train_acc_top);
  opt(r.train_acc_mid);
  opt(r.train_acc_merged);
  num(r.val_acc);
  num(r.val_acc_top);
  opt(r.val_acc_mid);
  opt(r.val_acc_merged);
  opt(r.val_kl_top_mid);
  opt(r.val_kl_top_merged);
  num(r.s_diag_top);
  num(r.s_offdiag_top);
  opt(r.s_diag_mid);
  opt(r.s_offdiag_mid);
  opt(r.s_diag_merged);
  opt(r.s_offdiag_merged);
  return os.str();
}

template <typename T>
LossInputs<T> loss_inputs(const ForwardOutput<T>& out, std::span<const std::size_t> labels) {
  LossInputs<T> in;
  in.data = cross_entropy(combined_prediction(out), labels);
  in.s_top = correlation_matrix(out.top.normalized).s;
  in.prob_top = softmax(out.top.logits);
  if (out.mid) {
    in.s_mid = correlation_matrix(out.mid->normalized).s;
    in.prob_mid = softmax(out.mid->logits);
  }
  if (out.merged) {
    in.s_merged = correlation_matrix(out.merged->normalized).s;
    in.prob_merged = softmax(out.merged->logits);
  }
  return in;
}

namespace {

template <typename T>
std::size_t argmax_row(std::span<const T> v, std::size_t row, std::size_t k) {
  const T* p = v.data() + row * k;
  return static_cast<std::size_t>(std::max_element(p, p + k) - p);
}

// Counts rows whose argmax of the summed logits matches the label.
template <typename T>
std::size_t correct(const std::vector<Tensor<T>>& logits, std::span<const std::size_t> labels) {
  const std::size_t n = logits.front().dim(0), k = logits.front().dim(1);
  std::vector<T> sum(n * k, T(0));
  for (const auto& l : logits) {
    auto v = l.values();
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += v[i];
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    hits += argmax_row<T>(sum, i, k) == labels[i] ? 1 : 0;
  }
  return hits;
}

template <typename T>
std::vector<Tensor<T>> all_logits(const ForwardOutput<T>& out) {
  std::vector<Tensor<T>> l{out.top.logits};
  if (out.mid) l.push_back(out.mid->logits);
  if (out.merged) l.push_back(out.merged->logits);
  return l;
}

struct SStats {
  double diag = 0;
  double offdiag = 0;
};

template <typename T>
SStats s_stats(const Tensor<T>& s) {
  const std::size_t p = s.dim(0);
  auto v = s.values();
  SStats st;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      (i == j ? st.diag : st.offdiag) += std::abs(static_cast<double>(v[i * p + j]));
    }
  }
  st.diag /= static_cast<double>(p);
  st.offdiag = p > 1 ? st.offdiag / static_cast<double>(p * (p - 1)) : 0.0;
  return st;
}

// Sums of per-batch quantities, weighted by batch size.
class EpochAccumulator {
 public:
  void add(const std::string& key, double value, std::size_t weight) {
    auto& slot = sums_[key];
    slot.first += value * static_cast<double>(weight);
    slot.second += weight;
  }
  std::optional<double> mean(const std::string& key) const {
    auto it = sums_.find(key);
    if (it == sums_.end() || it->second.second == 0) return std::nullopt;
    return it->second.first / static_cast<double>(it->second.second);
  }
  double value(const std::string& key) const { return mean(key).value_or(0.0); }

 private:
  std::map<std::string, std::pair<double, std::size_t>> sums_;
};

template <typename T>
double scalar(const std::optional<Tensor<T>>& t) {
  return static_cast<double>(t->item());
}

}  // namespace

template <typename T>
EvalResult evaluate(CrossXModel<T>& model, const ImageSet& set, std::size_t batch_size) {
  if (set.size() == 0) {
    throw ContractError("evaluate: empty split");
  }
  EvalResult r;
  r.count = set.size();
  std::size_t hits = 0, hits_top = 0, hits_mid = 0, hits_merged = 0;
  double kl_mid = 0, kl_merged = 0;
  bool has_mid = false, has_merged = false;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, set.size() - start);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    const std::span<const std::size_t> labels(set.labels.data() + start, n);
    const auto out = model.forward(make_batch<T>(set, idx), Mode::kEval);
    hits += correct(all_logits(out), labels);
    hits_top += correct<T>({out.top.logits}, labels);
    const Tensor<T> prob_top = softmax(out.top.logits);
    if (out.mid) {
      has_mid = true;
      hits_mid += correct<T>({out.mid->logits}, labels);
      kl_mid += static_cast<double>(kl_divergence(prob_top, softmax(out.mid->logits)).item()) * static_cast<double>(n);
    }
    if (out.merged) {
      has_merged = true;
      hits_merged += correct<T>({out.merged->logits}, labels);
      kl_merged +=
          static_cast<double>(kl_divergence(prob_top, softmax(out.merged->logits)).item()) * static_cast<double>(n);
    }
  }
  const double count = static_cast<double>(set.size());
  r.accuracy = static_cast<double>(hits) / count;
  r.acc_top = static_cast<double>(hits_top) / count;
  if (has_mid) {
    r.acc_mid = static_cast<double>(hits_mid) / count;
    r.kl_top_mid = kl_mid / count;
  }
  if (has_merged) {
    r.acc_merged = static_cast<double>(hits_merged) / count;
    r.kl_top_merged = kl_merged / count;
  }
  return r;
}

TrainResult train(const CrossXConfig& config, const TrainOptions& options) {
  config.validate();
  const LossWeights weights = config.effective_weights();
  const std::uint64_t digest = config.model_digest();

  TrainResult result{{CrossXModel<float>(ModelSpec::from_config(config), config.seed), {}, 0, 0, config.seed, {}},
                     synth_dataset(config.data, config.data_seed),
                     0,
                     -1.0};
  auto& state = result.state;
  const auto& train_set = result.data.train;
  const auto params = state.model.parameters();
  for (const auto& p : params) state.velocity.emplace_back(p.tensor.numel(), 0.0f);

  std::ofstream metrics;
  const auto& outdir = options.outdir;
  if (outdir) {
    std::filesystem::create_directories(*outdir);
    std::ofstream(*outdir / "effective-config.txt") << config.to_text();
    metrics.open(*outdir / "metrics.csv");
    if (!metrics) {
      throw ConfigError("cannot write " + (*outdir / "metrics.csv").string());
    }
    metrics << metrics_header() << '\n' << std::flush;
    if (options.checkpoints) {
      write_checkpoint(*outdir / kInitialCheckpoint, make_checkpoint(state.model, digest, &state.velocity));
    }
    if (config.export_dataset) {
      write_image_set(*outdir / "dataset", result.data.test);
    }
  }
  auto save = [&](const char* name) {
    if (!outdir || !options.checkpoints) return;
    Checkpoint ckpt = make_checkpoint(state.model, digest, &state.velocity);
    ckpt.epoch = static_cast<std::uint32_t>(state.epoch);
    ckpt.step = state.step;
    ckpt.seed = state.seed;
    write_checkpoint(*outdir / name, ckpt);
  };

  const std::size_t batch = std::min(config.batch_size, train_set.size());
  if (batch < 2) {
    throw ConfigError("the training split needs at least two images per batch");
  }
  const std::size_t batches = train_set.size() / batch;  // the incomplete tail batch is dropped

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = lr_schedule(epoch, config.lr, config.decay_period, config.decay_factor);
    Rng order_rng = Rng::derive(config.seed, {100, epoch});
    Rng flip_rng = Rng::derive(config.seed, {101, epoch});
    const auto order = order_rng.permutation(train_set.size());
    EpochAccumulator acc;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::span<const std::size_t> idx(order.data() + b * batch, batch);
      std::vector<std::size_t> labels(batch);
      for (std::size_t i = 0; i < batch; ++i) labels[i] = train_set.labels[idx[i]];
      const auto flips = flip_decisions(batch, config.flip_probability, flip_rng);
      const auto out = state.model.forward(make_batch<float>(train_set, idx, flips), Mode::kTrain);
      const auto in = loss_inputs(out, labels);
      const auto loss = total_loss(in, weights, config.kl_stop_gradient);
      const double total = static_cast<double>(loss.total.item());
      if (!std::isfinite(total)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(state.step));
      }
      for (auto p : params) p.tensor.zero_grad();
      backward(loss.total);
      sgd_step(params, state.velocity, lr, config.momentum, config.weight_decay);
      ++state.step;

      acc.add("loss_total", total, batch);
      acc.add("loss_data", static_cast<double>(loss.data.item()), batch);
      if (loss.c3s_top) acc.add("c3s_top", scalar(loss.c3s_top), batch);
      if (loss.c3s_mid) acc.add("c3s_mid", scalar(loss.c3s_mid), batch);
      if (loss.c3s_merged) acc.add("c3s_merged", scalar(loss.c3s_merged), batch);
      if (loss.kl_mid) acc.add("kl_top_mid", scalar(loss.kl_mid), batch);
      if (loss.kl_merged) acc.add("kl_top_merged", scalar(loss.kl_merged), batch);
      const double n = static_cast<double>(batch);
      acc.add("train_acc", static_cast<double>(correct(all_logits(out), labels)) / n, batch);
      acc.add("train_acc_top", static_cast<double>(correct<float>({out.top.logits}, labels)) / n, batch);
      if (out.mid) acc.add("train_acc_mid", static_cast<double>(correct<float>({out.mid->logits}, labels)) / n, batch);
      if (out.merged) {
        acc.add("train_acc_merged", static_cast<double>(correct<float>({out.merged->logits}, labels)) / n, batch);
      }
      const auto st_top = s_stats(*in.s_top);
      acc.add("s_diag_top", st_top.diag, batch);
      acc.add("s_offdiag_top", st_top.offdiag, batch);
      if (in.s_mid) {
        const auto st = s_stats(*in.s_mid);
        acc.add("s_diag_mid", st.diag, batch);
        acc.add("s_offdiag_mid", st.offdiag, batch);
      }
      if (in.s_merged) {
        const auto st = s_stats(*in.s_merged);
        acc.add("s_diag_merged", st.diag, batch);
        acc.add("s_offdiag_merged", st.offdiag, batch);
      }
    }
    state.epoch = epoch + 1;

    const EvalResult val = evaluate(state.model, result.data.val);
    MetricsRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.loss_total = acc.value("loss_total");
    row.loss_data = acc.value("loss_data");
    row.c3s_top = acc.mean("c3s_top");
    row.c3s_mid = acc.mean("c3s_mid");
    row.c3s_merged = acc.mean("c3s_merged");
    row.kl_top_mid = acc.mean("kl_top_mid");
    row.kl_top_merged = acc.mean("kl_top_merged");
    row.train_acc = acc.value("train_acc");
    row.train_acc_top = acc.value("train_acc_top");
    row.train_acc_mid = acc.mean("train_acc_mid");
    row.train_acc_merged = acc.mean("train_acc_merged");
    row.val_acc = val.accuracy;
    row.val_acc_top = val.acc_top;
    row.val_acc_mid = val.acc_mid;
    row.val_acc_merged = val.acc_merged;
    row.val_kl_top_mid = val.kl_top_mid;
    row.val_kl_top_merged = val.kl_top_merged;
    row.s_diag_top = acc.value("s_diag_top");
    row.s_offdiag_top = acc.value("s_offdiag_top");
    row.s_diag_mid = acc.mean("s_diag_mid");
    row.s_offdiag_mid = acc.mean("s_offdiag_mid");
    row.s_diag_merged = acc.mean("s_diag_merged");
    row.s_offdiag_merged = acc.mean("s_offdiag_merged");
    state.history.push_back(row);
    if (metrics.is_open()) metrics << metrics_line(row) << '\n' << std::flush;

    if (val.accuracy > result.best_val_acc) {
      result.best_val_acc = val.accuracy;
      result.best_epoch = epoch;
      save(kBestCheckpoint);
    }
    if (options.log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      *options.log << "epoch " << epoch << "  lr " << lr << "  loss " << std::setprecision(4) << row.loss_total
                   << "  train " << row.train_acc << "  val " << row.val_acc << "  (" << std::setprecision(3) << secs
                   << " s)" << std::endl;
    }
  }
  save(kFinalCheckpoint);
  return result;
}

template void sgd_step(const std::vector<NamedTensor<float>>&, std::vector<std::vector<float>>&, double, double,
                       double);
template void sgd_step(const std::vector<NamedTensor<double>>&, std::vector<std::vector<double>>&, double, double,
                       double);
template LossInputs<float> loss_inputs(const ForwardOutput<float>&, std::span<const std::size_t>);
template LossInputs<double> loss_inputs(const ForwardOutput<double>&, std::span<const std::size_t>);
template EvalResult evaluate(CrossXModel<float>&, const ImageSet&, std::size_t);
template EvalResult evaluate(CrossXModel<double>&, const ImageSet&, std::size_t);

}  // namespace crossx
