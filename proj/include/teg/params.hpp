#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "teg/rng.hpp"
#include "teg/tape.hpp"
#include "teg/tensor.hpp"

namespace teg {

enum class Init { kZeros, kGlorotUniform };

// Named trainable parameters. Entries iterate in name order, which fixes
// the order of checkpoint layout and optimizer updates.
class ParamStore {
 public:
  void create(const std::string& name, std::vector<std::size_t> shape,
              Init init, Rng& rng);
  void set(const std::string& name, Tensor value);  // creates or replaces
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& mutable_get(const std::string& name);
  std::size_t size() const { return entries_.size(); }
  std::vector<std::string> names() const;
  const std::map<std::string, Tensor>& entries() const { return entries_; }
  std::map<std::string, Tensor>& mutable_entries() { return entries_; }

  bool operator==(const ParamStore& other) const {
    return entries_ == other.entries_;
  }

 private:
  std::map<std::string, Tensor> entries_;
};

// Registers `name` from the store as a trainable leaf on the tape.
Tape::ValueId use_param(Tape& tape, const ParamStore& store,
                        const std::string& name);

// Gradients for every parameter in the store after tape.backward(); params
// the loss never touched get zero tensors.
std::map<std::string, Tensor> collect_grads(const Tape& tape,
                                            const ParamStore& store);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0005;  // decoupled as an L2 term added to the gradient
};

struct AdamState {
  AdamConfig cfg;
  long long step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;

  static AdamState create(const ParamStore& params, AdamConfig cfg);
};

// One Adam update. Requires grads/state key sets to match the store exactly.
void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
               AdamState& state);

// Checkpoint file: a text header `params=<k>`, then per parameter one text
// line `name rank dims...` followed by the raw little-endian float64 buffer.
// Optimizer state, when present, follows the same layout after an `adam`
// line, so interrupted training can resume bit-exactly.
void save_checkpoint(const std::string& path, const ParamStore& params,
                     const AdamState* adam = nullptr);

struct Checkpoint {
  ParamStore params;
  std::optional<AdamState> adam;
};

Checkpoint load_checkpoint(const std::string& path);

struct GradCheckOptions {
  double step = 1e-5;           // central difference half-width
  std::size_t max_samples = 200;  // coordinate budget; all coords if fewer
  std::uint64_t seed = 0;
  double denom_floor = 1e-3;  // keeps ratios meaningful near zero
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares backpropagated gradients against central finite differences of
// `build_loss`, which must deterministically rebuild the scalar loss on the
// given tape from the given store (in particular: no live dropout).
GradCheckResult grad_check(
    const ParamStore& params,
    const std::function<Tape::ValueId(Tape&, const ParamStore&)>& build_loss,
    const GradCheckOptions& options = {});

}  // namespace teg
