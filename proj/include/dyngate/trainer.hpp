#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dyngate/data.hpp"
#include "dyngate/loss.hpp"
#include "dyngate/net.hpp"

namespace dyngate {

struct TrainConfig {
  int epochs = 70;
  int batch = 64;
  double lr = 0.001;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  BoundSchedule schedule;   // two-sided density bound annealing
  bool force_open = false;  // train the static ungated path

  void validate() const;
};

// Eval-mode statistics over one dataset: binarized gates, running norm
// stats, batches visited in index order.
struct EvalStats {
  double accuracy = 0.0;
  std::vector<double> densities;  // per block: channel, spatial (1.0 ungated)
  MacReport macs;                 // accumulated over the whole set
};

EvalStats evaluate(DynamicNet& net, const DomainDataset& data, int batch,
                   bool force_open = false);

struct MetricsRow {
  int epoch = 0;
  double p = 1.0;
  double loss_task = 0, loss_low = 0, loss_up = 0, loss_total = 0;
  double train_acc = 0, val_acc = 0;
  std::vector<double> target_acc;  // one per target dataset, fixed order
  std::vector<double> densities;   // per block: channel, spatial
  double mac_ratio = 1.0;
};

// CSV with fixed six-decimal formatting, so equal runs write equal bytes.
std::string metrics_header(int num_blocks,
                           const std::vector<std::string>& targets);
std::string metrics_line(const MetricsRow& row);

struct TrainData {
  DomainDataset train, val;            // source domain
  std::vector<DomainDataset> targets;  // unseen domains, never trained on
};

struct TrainResult {
  std::vector<MetricsRow> history;
  int best_epoch = -1;
  double best_val = -1.0;
};

// SGD with momentum and decoupled-from-nothing weight decay (g += wd * p).
// Parameters whose gradient was never touched are skipped entirely, so a
// forced-open run updates exactly the parameters a base run would.
// Throws DivergenceError when a loss or parameter turns non-finite.
TrainResult train(DynamicNet& net, const TrainData& data,
                  const TrainConfig& cfg, std::ostream* metrics = nullptr,
                  const std::string& checkpoint_path = "");

}  // namespace dyngate
