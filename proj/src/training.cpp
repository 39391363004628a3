#include "ripo/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ripo/error.hpp"
#include "ripo/io_util.hpp"
#include "ripo/random.hpp"

namespace ripo {
namespace {

// Padding only adds masked keys and untargeted rows, so dropping it leaves
// every loss term unchanged while shortening the attention maps.
std::vector<TokenSequence> unpadded(std::span<const TokenSequence> sequences) {
  std::vector<TokenSequence> out;
  out.reserve(sequences.size());
  for (const auto& seq : sequences) {
    TokenSequence s = strip_padding(seq);
    if (s.size() >= 2) out.push_back(std::move(s));
  }
  return out;
}

void check_finite(double value, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(value)) {
    throw Error(ErrorKind::kDivergence, "non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                            std::to_string(batch) + "; lower the learning rate or check the data");
  }
}

}  // namespace

TrainState TrainState::fresh(const RipoModel& model) {
  TrainState s;
  const auto params = model.parameters();
  s.adam.init(params);
  s.adam.lr = model.config().lr;
  s.shuffle = make_stream(model.config().seed, "shuffle");
  return s;
}

std::string TrainState::rng_state() const {
  std::ostringstream os;
  os << shuffle;
  return os.str();
}

void TrainState::set_rng_state(const std::string& text) {
  std::istringstream is(text);
  is >> shuffle;
  if (!is) throw Error(ErrorKind::kInvalidArgument, "malformed shuffle-stream state");
}

LossRecord evaluate_loss(const RipoModel& model, std::span<const TokenSequence> sequences,
                         std::size_t batch_size) {
  const std::vector<TokenSequence> seqs = unpadded(sequences);
  if (seqs.empty()) throw Error(ErrorKind::kInvalidArgument, "evaluate_loss: no sequence with a target");
  NoGradGuard no_grad;
  LossRecord r;
  double wp = 0.0, wd = 0.0;
  for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, seqs.size() - start);
    const LossBreakdown l = model.loss_batch(std::span(seqs).subspan(start, count));
    wp += l.ce_pitch.item() * static_cast<double>(l.targets);
    wd += l.ce_duration.item() * static_cast<double>(l.targets);
    r.targets += l.targets;
  }
  r.ce_pitch = wp / static_cast<double>(r.targets);
  r.ce_duration = wd / static_cast<double>(r.targets);
  r.ce_sum = r.ce_pitch + r.ce_duration;
  return r;
}

std::vector<LossRecord> train(RipoModel& model, std::span<const TokenSequence> train_set,
                              std::span<const TokenSequence> test_set, std::size_t epochs, TrainState& state,
                              const EpochCallback& on_record) {
  const std::vector<TokenSequence> seqs = unpadded(train_set);
  if (seqs.empty()) throw Error(ErrorKind::kInvalidArgument, "train: the training split has no usable sequence");
  const std::size_t batch_size = model.config().batch_size;
  std::vector<Tensor> params = model.parameters();
  if (state.adam.m.size() != params.size()) state.adam.init(params);

  std::vector<LossRecord> log;
  std::vector<std::size_t> order(seqs.size());
  std::vector<TokenSequence> batch;
  for (std::size_t e = 0; e < epochs; ++e) {
    const std::size_t epoch = state.epoch + 1;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.shuffle);

    double wp = 0.0, wd = 0.0;
    std::size_t targets = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += batch_size, ++b) {
      batch.clear();
      for (std::size_t i = start; i < std::min(start + batch_size, order.size()); ++i) batch.push_back(seqs[order[i]]);
      const LossBreakdown l = model.loss_batch(batch);
      check_finite(l.ce_sum.item(), epoch, b);
      l.ce_sum.backward();
      adam_step(params, state.adam);
      wp += l.ce_pitch.item() * static_cast<double>(l.targets);
      wd += l.ce_duration.item() * static_cast<double>(l.targets);
      targets += l.targets;
    }
    LossRecord tr{epoch, "train", wp / static_cast<double>(targets), wd / static_cast<double>(targets), 0.0, targets};
    tr.ce_sum = tr.ce_pitch + tr.ce_duration;
    log.push_back(tr);
    if (on_record) on_record(tr);
    if (!test_set.empty()) {
      LossRecord te = evaluate_loss(model, test_set, batch_size);
      te.epoch = epoch;
      te.split = "test";
      log.push_back(te);
      if (on_record) on_record(te);
    }
    state.adam.lr *= model.config().lr_decay;
    state.epoch = epoch;
  }
  return log;
}

std::string loss_csv(std::span<const LossRecord> records) {
  std::string out = "epoch,split,ce_pitch,ce_duration,ce_sum\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch) + "," + r.split + "," + format_double(r.ce_pitch) + "," +
           format_double(r.ce_duration) + "," + format_double(r.ce_sum) + "\n";
  }
  return out;
}

}  // namespace ripo
