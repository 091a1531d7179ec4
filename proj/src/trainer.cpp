#include "dyngate/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>

#include "dyngate/error.hpp"
#include "dyngate/ops.hpp"
#include "dyngate/rng.hpp"

namespace dyngate {
namespace {

int64_t argmax_row(const double* row, int64_t k) {
  int64_t best = 0;
  for (int64_t j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

int64_t count_hits(const Tensor& logits, const std::vector<int>& labels) {
  const int64_t n = logits.dim(0), k = logits.dim(1);
  int64_t hits = 0;
  for (int64_t i = 0; i < n; ++i)
    if (argmax_row(logits.data() + i * k, k) == labels[static_cast<size_t>(i)])
      ++hits;
  return hits;
}

std::vector<int> gather_labels(const DomainDataset& d,
                               const std::vector<int64_t>& ids) {
  std::vector<int> out(ids.size());
  for (size_t i = 0; i < ids.size(); ++i)
    out[i] = d.labels[static_cast<size_t>(ids[i])];
  return out;
}

void check_dataset(const DynamicNet& net, const DomainDataset& d,
                   const char* what) {
  const NetworkConfig& cfg = net.config();
  if (d.size() < 1)
    throw ValidationError(std::string(what) + " dataset is empty");
  if (d.classes != cfg.classes)
    throw ValidationError(std::string(what) + " dataset has " +
                          std::to_string(d.classes) + " classes, network " +
                          std::to_string(cfg.classes));
  if (d.channels != cfg.in_channels || d.h != cfg.in_h || d.w != cfg.in_w)
    throw ValidationError(std::string(what) +
                          " dataset image shape does not match the network");
}

void append_f(std::string& s, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, ",%.6f", v);
  s += buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be positive");
  if (batch < 1) throw ValidationError("batch size must be positive");
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (weight_decay < 0.0) throw ValidationError("weight decay must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ValidationError("momentum must be in [0,1)");
  if (schedule.lambda_b < 0.0)
    throw ValidationError("bound loss weight must be >= 0");
}

EvalStats evaluate(DynamicNet& net, const DomainDataset& data, int batch,
                   bool force_open) {
  if (batch < 1) throw ValidationError("batch size must be positive");
  check_dataset(net, data, "eval");
  NoGradGuard ng;
  DynamicNet::ForwardHooks hooks;
  hooks.force_open = force_open;

  EvalStats stats;
  stats.densities.assign(2 * static_cast<size_t>(net.num_blocks()), 0.0);
  int64_t hits = 0, dense_sum = 0, gated_sum = 0;
  double weighted = 0;
  bool any_masks = false;
  for (int64_t begin = 0; begin < data.size(); begin += batch) {
    const int64_t nb = std::min<int64_t>(batch, data.size() - begin);
    std::vector<int64_t> ids(static_cast<size_t>(nb));
    std::iota(ids.begin(), ids.end(), begin);
    auto res = net.forward(data.batch(ids), data.domain, /*train=*/false,
                           nullptr, &hooks, /*strict_scene=*/false);
    hits += count_hits(res.logits, gather_labels(data, ids));
    MacReport rep = net.count_macs(res.masks);
    dense_sum += rep.dense * (res.masks.empty() ? nb : 1);
    gated_sum += rep.gated * (res.masks.empty() ? nb : 1);
    if (!res.masks.empty()) {
      any_masks = true;
      for (size_t i = 0; i < res.masks.size(); ++i)
        stats.densities[i] += res.masks[i].density() * static_cast<double>(nb);
    }
    weighted += static_cast<double>(nb);
    Tape::active().clear();
  }
  stats.accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
  if (any_masks)
    for (double& d : stats.densities) d /= weighted;
  else
    stats.densities.assign(stats.densities.size(), 1.0);
  stats.macs.dense = dense_sum;
  stats.macs.gated = gated_sum;
  stats.macs.ratio =
      static_cast<double>(gated_sum) / static_cast<double>(dense_sum);
  return stats;
}

std::string metrics_header(int num_blocks,
                           const std::vector<std::string>& targets) {
  std::string s =
      "epoch,p,loss_task,loss_low,loss_up,loss_total,train_acc,val_acc";
  for (const auto& t : targets) s += ",acc_" + t;
  for (int b = 0; b < num_blocks; ++b) {
    s += ",density_b" + std::to_string(b) + "_c";
    s += ",density_b" + std::to_string(b) + "_s";
  }
  s += ",mac_ratio";
  return s;
}

std::string metrics_line(const MetricsRow& row) {
  std::string s = std::to_string(row.epoch);
  append_f(s, row.p);
  append_f(s, row.loss_task);
  append_f(s, row.loss_low);
  append_f(s, row.loss_up);
  append_f(s, row.loss_total);
  append_f(s, row.train_acc);
  append_f(s, row.val_acc);
  for (double a : row.target_acc) append_f(s, a);
  for (double d : row.densities) append_f(s, d);
  append_f(s, row.mac_ratio);
  return s;
}

TrainResult train(DynamicNet& net, const TrainData& data,
                  const TrainConfig& cfg, std::ostream* metrics,
                  const std::string& checkpoint_path) {
  cfg.validate();
  check_dataset(net, data.train, "train");
  check_dataset(net, data.val, "val");
  if (data.val.domain != data.train.domain)
    throw ValidationError("val dataset domain '" + data.val.domain +
                          "' differs from train domain '" + data.train.domain +
                          "'");
  std::vector<std::string> target_names;
  for (const auto& t : data.targets) {
    check_dataset(net, t, "target");
    if (t.domain == data.train.domain)
      throw ValidationError("source domain '" + t.domain +
                            "' is also a target");
    if (std::find(target_names.begin(), target_names.end(), t.domain) !=
        target_names.end())
      throw ValidationError("duplicate target domain '" + t.domain + "'");
    target_names.push_back(t.domain);
  }
  net.register_scene(data.train.domain);
  for (auto& [name, param] : net.params()) param.set_requires_grad(true);

  DynamicNet::ForwardHooks hooks;
  hooks.force_open = cfg.force_open;
  std::map<std::string, std::vector<double>> velocity;

  TrainResult result;
  if (metrics)
    *metrics << metrics_header(net.num_blocks(), target_names) << "\n";

  std::vector<int64_t> order(static_cast<size_t>(data.train.size()));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double p = anneal_p(epoch, cfg.schedule.alpha);

    std::iota(order.begin(), order.end(), 0);
    RngStream shuffle_rng = named_stream(net.seed(), "shuffle",
                                         static_cast<uint64_t>(epoch));
    shuffle(order, shuffle_rng);

    double task_sum = 0, low_sum = 0, up_sum = 0, total_sum = 0;
    int64_t hits = 0;
    int step = 0;
    for (int64_t begin = 0; begin < data.train.size();
         begin += cfg.batch, ++step) {
      const int64_t nb = std::min<int64_t>(cfg.batch, data.train.size() - begin);
      std::vector<int64_t> ids(order.begin() + begin,
                               order.begin() + begin + nb);
      std::vector<int> labels = gather_labels(data.train, ids);

      RngStream gumbel = named_stream(net.seed(), "gumbel",
                                      static_cast<uint64_t>(epoch),
                                      static_cast<uint64_t>(step));
      auto res = net.forward(data.train.batch(ids), data.train.domain,
                             /*train=*/true, &gumbel, &hooks,
                             /*strict_scene=*/true);
      Tensor task = cross_entropy(res.logits, labels);
      double low = 0, up = 0;
      Tensor total = task;
      if (!res.soft_densities.empty() && cfg.schedule.lambda_b > 0.0) {
        auto [t_low, t_up] =
            bound_loss_terms(res.soft_densities, p, cfg.schedule.target_rate);
        total = total_loss(task, t_low, t_up, cfg.schedule.lambda_b);
        low = t_low.item();
        up = t_up.item();
      }
      const double total_v = total.item();
      if (!std::isfinite(total_v))
        throw DivergenceError("non-finite loss at epoch " +
                              std::to_string(epoch) + " step " +
                              std::to_string(step));
      Tape::active().backward(total);

      for (auto& [name, param] : net.params()) {
        if (!param.grad_touched()) continue;
        auto& vel = velocity[name];
        if (vel.empty()) vel.assign(static_cast<size_t>(param.numel()), 0.0);
        double* pd = param.data();
        const double* gd = param.grad();
        for (int64_t i = 0; i < param.numel(); ++i) {
          const double g = gd[i] + cfg.weight_decay * pd[i];
          vel[static_cast<size_t>(i)] =
              cfg.momentum * vel[static_cast<size_t>(i)] + g;
          pd[i] -= cfg.lr * vel[static_cast<size_t>(i)];
        }
        param.zero_grad();
        if (!param.all_finite())
          throw DivergenceError("non-finite parameter '" + name +
                                "' at epoch " + std::to_string(epoch) +
                                " step " + std::to_string(step));
      }
      Tape::active().clear();

      const double w = static_cast<double>(nb);
      task_sum += task.item() * w;
      low_sum += low * w;
      up_sum += up * w;
      total_sum += total_v * w;
      hits += count_hits(res.logits, labels);
    }

    const double n_train = static_cast<double>(data.train.size());
    MetricsRow row;
    row.epoch = epoch;
    row.p = p;
    row.loss_task = task_sum / n_train;
    row.loss_low = low_sum / n_train;
    row.loss_up = up_sum / n_train;
    row.loss_total = total_sum / n_train;
    row.train_acc = static_cast<double>(hits) / n_train;
    EvalStats val = evaluate(net, data.val, cfg.batch, cfg.force_open);
    row.val_acc = val.accuracy;
    row.densities = val.densities;
    row.mac_ratio = val.macs.ratio;
    for (const auto& t : data.targets)
      row.target_acc.push_back(
          evaluate(net, t, cfg.batch, cfg.force_open).accuracy);
    if (metrics) *metrics << metrics_line(row) << "\n" << std::flush;

    if (row.val_acc > result.best_val) {
      result.best_val = row.val_acc;
      result.best_epoch = epoch;
      if (!checkpoint_path.empty())
        net.save_checkpoint(checkpoint_path,
                            {static_cast<int64_t>(epoch), p});
    }
    result.history.push_back(std::move(row));
  }
  return result;
}

}  // namespace dyngate
