#include "dietnlu/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "dietnlu/evaluation.hpp"

namespace dietnlu {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_min < 1 || batch_min > batch_max) {
    throw std::invalid_argument("train config: need 1 <= batch_min <= batch_max");
  }
  if (dev_fraction > 0.5) {
    throw std::invalid_argument("train config: dev_fraction above 0.5");
  }
  if (checkpoint_every < 0) {
    throw std::invalid_argument("train config: checkpoint_every must be >= 0");
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os << "epoch,loss_total,loss_intent,loss_entity,loss_mask,"
        "dev_intent_accuracy,dev_entity_f1\n";
  for (const EpochRecord& r : records) {
    os << r.epoch << ',' << fmt_double(r.loss_total) << ','
       << fmt_double(r.loss_intent) << ',' << fmt_double(r.loss_entity) << ','
       << fmt_double(r.loss_mask) << ',' << fmt_double(r.dev_intent_accuracy)
       << ',' << fmt_double(r.dev_entity_f1) << '\n';
  }
  return os.str();
}

std::string TrainHistory::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const EpochRecord& r : records) {
    arr.push_back({{"epoch", r.epoch},
                   {"loss_total", r.loss_total},
                   {"loss_intent", r.loss_intent},
                   {"loss_entity", r.loss_entity},
                   {"loss_mask", r.loss_mask},
                   {"dev_intent_accuracy", r.dev_intent_accuracy},
                   {"dev_entity_f1", r.dev_entity_f1}});
  }
  return arr.dump(2);
}

int batch_size_schedule(int epoch, int total_epochs, int min_size, int max_size) {
  if (epoch < 0 || epoch >= total_epochs) {
    throw std::invalid_argument("batch_size_schedule: epoch " +
                                std::to_string(epoch) + " outside 0.." +
                                std::to_string(total_epochs - 1));
  }
  if (min_size < 1 || min_size > max_size) {
    throw std::invalid_argument(
        "batch_size_schedule: need 1 <= min_size <= max_size");
  }
  if (total_epochs == 1) return min_size;
  const double t = static_cast<double>(epoch) / (total_epochs - 1);
  return static_cast<int>(std::lround(min_size + (max_size - min_size) * t));
}

std::vector<std::vector<int>> balanced_batches(const Dataset& data,
                                               int batch_size, Rng& rng) {
  if (data.utterances.empty()) {
    throw std::invalid_argument("balanced_batches: empty dataset");
  }
  if (batch_size < 1) {
    throw std::invalid_argument("balanced_batches: batch_size must be >= 1");
  }
  std::map<std::string, std::vector<int>> by_intent;
  for (size_t i = 0; i < data.utterances.size(); i++) {
    by_intent[data.utterances[i].intent].push_back(static_cast<int>(i));
  }
  const int n = static_cast<int>(data.utterances.size());
  const int m = (n + batch_size - 1) / batch_size;  // batches per epoch
  const long capacity = static_cast<long>(m) * batch_size;

  // largest-remainder apportionment of the capacity across intent groups;
  // quota >= group size, so floors never drop anyone
  struct Group {
    std::vector<int>* members;
    long target;
    double remainder;
    int order;
  };
  std::vector<Group> groups;
  int order = 0;
  long assigned = 0;
  for (auto& [intent, members] : by_intent) {
    const double quota = static_cast<double>(capacity) *
                         static_cast<double>(members.size()) / n;
    Group g;
    g.members = &members;
    g.target = static_cast<long>(std::floor(quota));
    g.remainder = quota - static_cast<double>(g.target);
    g.order = order++;
    assigned += g.target;
    groups.push_back(g);
  }
  std::vector<int> by_rem(groups.size());
  for (size_t i = 0; i < groups.size(); i++) by_rem[i] = static_cast<int>(i);
  std::sort(by_rem.begin(), by_rem.end(), [&groups](int a, int b) {
    if (groups[a].remainder != groups[b].remainder) {
      return groups[a].remainder > groups[b].remainder;
    }
    return groups[a].order < groups[b].order;
  });
  for (long leftover = capacity - assigned; leftover > 0; leftover--) {
    groups[by_rem[(capacity - assigned) - leftover]].target++;
  }

  std::vector<std::vector<int>> batches(m);
  for (Group& g : groups) {
    // visiting list: full reshuffled passes, truncated to the target
    std::vector<int> visit;
    visit.reserve(g.target);
    while (static_cast<long>(visit.size()) < g.target) {
      std::vector<int> pass = *g.members;
      rng.shuffle(pass);
      for (int idx : pass) {
        if (static_cast<long>(visit.size()) >= g.target) break;
        visit.push_back(idx);
      }
    }
    // spread the group's items evenly across the batches
    for (long j = 0; j < g.target; j++) {
      batches[static_cast<size_t>(j * m / g.target)].push_back(visit[j]);
    }
  }
  return batches;
}

TrainResult train(const Dataset& data, const ModelConfig& model_config,
                  const TrainConfig& train_config, const DenseSource& dense,
                  const EpochCallback& on_epoch) {
  train_config.validate();
  if (data.utterances.empty()) {
    throw std::invalid_argument("train: empty dataset");
  }
  ModelConfig mcfg = model_config;
  mcfg.dense_dim = dense.dim();
  mcfg.validate();

  Rng root(train_config.seed);
  Rng split_rng = root.fork(1);
  Rng init_rng = root.fork(2);
  Rng batch_rng = root.fork(3);
  Rng step_rng = root.fork(4);

  // dev split
  const int n = static_cast<int>(data.utterances.size());
  int dev_n;
  if (train_config.dev_fraction < 0.0) {
    dev_n = std::min(250, n / 2);
  } else {
    dev_n = static_cast<int>(std::lround(train_config.dev_fraction * n));
    dev_n = std::min(dev_n, n / 2);
  }
  std::vector<int> perm(n);
  for (int i = 0; i < n; i++) perm[i] = i;
  split_rng.shuffle(perm);
  std::vector<Utterance> dev_utts, train_utts;
  for (int i = 0; i < n; i++) {
    (i < dev_n ? dev_utts : train_utts).push_back(data.utterances[perm[i]]);
  }
  if (train_utts.empty()) {
    throw std::invalid_argument("train: dev split consumed every utterance");
  }
  Dataset train_data = make_dataset(data.name + "-train", std::move(train_utts));
  Dataset dev_data;
  if (dev_n > 0) {
    dev_data = make_dataset(data.name + "-dev", std::move(dev_utts));
  }

  SparseVocab vocab;
  if (mcfg.use_sparse) vocab = build_vocab(train_data);
  // label inventories come from the full dataset so dev never surprises us
  DietModel model = init_model(mcfg, data.intents, data.entity_labels,
                               vocab.size(), init_rng);

  std::vector<EncodedInput> encoded;
  encoded.reserve(train_data.utterances.size());
  for (const Utterance& u : train_data.utterances) {
    encoded.push_back(encode_utterance(u, mcfg.use_sparse, vocab, dense));
  }

  std::vector<Tensor> param_tensors;
  for (auto& [name, t] : model.params) param_tensors.push_back(t);
  AdamOptimizer optimizer(param_tensors, train_config.adam);

  TrainHistory history;
  for (int epoch = 0; epoch < train_config.epochs; epoch++) {
    const int batch_size =
        batch_size_schedule(epoch, train_config.epochs, train_config.batch_min,
                            train_config.batch_max);
    const auto batches = balanced_batches(train_data, batch_size, batch_rng);
    double sum_total = 0.0, sum_intent = 0.0, sum_entity = 0.0, sum_mask = 0.0;
    long sum_items = 0;
    for (size_t bi = 0; bi < batches.size(); bi++) {
      std::vector<const Utterance*> batch;
      std::vector<EncodedInput> enc;
      for (int idx : batches[bi]) {
        batch.push_back(&train_data.utterances[idx]);
        enc.push_back(encoded[idx]);
      }
      BatchLossResult loss = compute_batch_loss(model, batch, enc, true,
                                                train_config.weights, step_rng);
      const double total = loss.total.item();
      if (!std::isfinite(total)) {
        throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                 std::to_string(epoch) + " batch " +
                                 std::to_string(bi));
      }
      const long items = static_cast<long>(batch.size());
      sum_total += total * items;
      sum_intent += BatchLossResult::value_of(loss.intent) * items;
      sum_entity += BatchLossResult::value_of(loss.entity) * items;
      sum_mask += BatchLossResult::value_of(loss.mask) * items;
      sum_items += items;
      loss.total.backward();
      optimizer.step();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss_total = sum_total / sum_items;
    rec.loss_intent = sum_intent / sum_items;
    rec.loss_entity = sum_entity / sum_items;
    rec.loss_mask = sum_mask / sum_items;
    if (dev_n > 0) {
      EvalReport dev_report =
          evaluate_dataset(model, vocab, dense, dev_data, MatchMode::kOverlap);
      rec.dev_intent_accuracy = dev_report.intent.accuracy;
      rec.dev_entity_f1 = dev_report.entity_overlap.f1;
    }
    history.records.push_back(rec);
    if (on_epoch) on_epoch(epoch, rec, model, vocab);
  }

  TrainResult result;
  result.model = std::move(model);
  result.vocab = std::move(vocab);
  result.history = std::move(history);
  if (dev_n > 0) result.dev = std::move(dev_data);
  return result;
}

}  // namespace dietnlu
