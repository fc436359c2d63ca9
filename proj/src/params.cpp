#include "teg/params.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace teg {
namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

void write_f64_le(std::ostream& os, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  char buf[8];
  for (int i = 0; i < 8; ++i) {
    buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  }
  os.write(buf, 8);
}

double read_f64_le(std::istream& is) {
  char buf[8];
  is.read(buf, 8);
  if (!is) throw std::runtime_error("checkpoint: truncated float data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i]))
            << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

void write_tensor_data(std::ostream& os, const Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) write_f64_le(os, t[i]);
  os.put('\n');
}

void read_tensor_data(std::istream& is, Tensor& t, const std::string& name) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = read_f64_le(is);
  if (is.get() != '\n') {
    throw std::runtime_error("checkpoint: missing terminator after data of '" +
                             name + "'");
  }
}

}  // namespace

void ParamStore::create(const std::string& name,
                        std::vector<std::size_t> shape, Init init, Rng& rng) {
  if (entries_.count(name)) fail("ParamStore: duplicate parameter '" + name + "'");
  Tensor t(shape);
  if (init == Init::kGlorotUniform) {
    const double fan_in = static_cast<double>(shape.empty() ? 1 : shape[0]);
    const double fan_out =
        static_cast<double>(shape.size() >= 2 ? shape[1] : 1);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < t.numel(); ++i) {
      t[i] = rng.uniform(-limit, limit);
    }
  }
  entries_.emplace(name, std::move(t));
}

void ParamStore::set(const std::string& name, Tensor value) {
  entries_[name] = std::move(value);
}

bool ParamStore::contains(const std::string& name) const {
  return entries_.count(name) != 0;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::mutable_get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

Tape::ValueId use_param(Tape& tape, const ParamStore& store,
                        const std::string& name) {
  return tape.param(name, store.get(name));
}

std::map<std::string, Tensor> collect_grads(const Tape& tape,
                                            const ParamStore& store) {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, value] : store.entries()) {
    grads.emplace(name, Tensor::zeros(value.shape()));
  }
  for (const auto& [name, id] : tape.params()) {
    auto it = grads.find(name);
    if (it == grads.end()) {
      fail("collect_grads: tape parameter '" + name + "' not in store");
    }
    it->second = tape.grad(id);
  }
  return grads;
}

AdamState AdamState::create(const ParamStore& params, AdamConfig cfg) {
  AdamState state;
  state.cfg = cfg;
  for (const auto& [name, value] : params.entries()) {
    state.m.emplace(name, Tensor::zeros(value.shape()));
    state.v.emplace(name, Tensor::zeros(value.shape()));
  }
  return state;
}

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
               AdamState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    fail("adam_step: gradient/state key sets do not match the parameter store");
  }
  state.step += 1;
  const AdamConfig& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params.mutable_entries()) {
    auto git = grads.find(name);
    if (git == grads.end()) fail("adam_step: missing gradient for '" + name + "'");
    const Tensor& g = git->second;
    if (!g.same_shape(p)) fail("adam_step: gradient shape mismatch for '" + name + "'");
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g[i] + c.weight_decay * p[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const AdamState* adam) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os << "params=" << params.size() << "\n";
  for (const auto& [name, t] : params.entries()) {
    os << name << ' ' << t.rank();
    for (std::size_t d : t.shape()) os << ' ' << d;
    os << "\n";
    write_tensor_data(os, t);
  }
  if (adam != nullptr) {
    char head[256];
    std::snprintf(head, sizeof(head),
                  "adam %lld %.17g %.17g %.17g %.17g %.17g\n", adam->step,
                  adam->cfg.lr, adam->cfg.beta1, adam->cfg.beta2,
                  adam->cfg.eps, adam->cfg.weight_decay);
    os << head;
    for (const auto& [name, t] : params.entries()) {
      write_tensor_data(os, adam->m.at(name));
      write_tensor_data(os, adam->v.at(name));
    }
  }
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::string header;
  if (!std::getline(is, header) || header.rfind("params=", 0) != 0) {
    throw std::runtime_error("checkpoint: malformed header in '" + path + "'");
  }
  std::size_t count = 0;
  try {
    count = std::stoul(header.substr(7));
  } catch (const std::exception&) {
    throw std::runtime_error("checkpoint: bad parameter count in '" + path + "'");
  }
  Checkpoint ckpt;
  for (std::size_t i = 0; i < count; ++i) {
    std::string line;
    if (!std::getline(is, line)) {
      throw std::runtime_error("checkpoint: truncated at parameter " +
                               std::to_string(i));
    }
    std::istringstream ls(line);
    std::string name;
    std::size_t rank = 0;
    if (!(ls >> name >> rank)) {
      throw std::runtime_error("checkpoint: malformed descriptor '" + line + "'");
    }
    std::vector<std::size_t> shape(rank);
    for (std::size_t d = 0; d < rank; ++d) {
      if (!(ls >> shape[d])) {
        throw std::runtime_error("checkpoint: malformed shape for '" + name + "'");
      }
    }
    Tensor t(shape);
    read_tensor_data(is, t, name);
    ckpt.params.set(name, std::move(t));
  }
  std::string adam_line;
  if (std::getline(is, adam_line) && !adam_line.empty()) {
    std::istringstream ls(adam_line);
    std::string tag;
    AdamState state;
    if (!(ls >> tag >> state.step >> state.cfg.lr >> state.cfg.beta1 >>
          state.cfg.beta2 >> state.cfg.eps >> state.cfg.weight_decay) ||
        tag != "adam") {
      throw std::runtime_error("checkpoint: malformed optimizer line '" +
                               adam_line + "'");
    }
    for (const auto& [name, t] : ckpt.params.entries()) {
      Tensor m(t.shape());
      Tensor v(t.shape());
      read_tensor_data(is, m, name + ".m");
      read_tensor_data(is, v, name + ".v");
      state.m.emplace(name, std::move(m));
      state.v.emplace(name, std::move(v));
    }
    ckpt.adam = std::move(state);
  }
  return ckpt;
}

GradCheckResult grad_check(
    const ParamStore& params,
    const std::function<Tape::ValueId(Tape&, const ParamStore&)>& build_loss,
    const GradCheckOptions& options) {
  std::map<std::string, Tensor> analytic;
  {
    Tape tape;
    const Tape::ValueId loss = build_loss(tape, params);
    tape.backward(loss);
    analytic = collect_grads(tape, params);
  }

  // Flatten all (param, index) coordinates, then sample without replacement
  // if the budget is smaller than the total.
  std::vector<std::pair<std::string, std::size_t>> coords;
  for (const auto& [name, t] : params.entries()) {
    for (std::size_t i = 0; i < t.numel(); ++i) coords.emplace_back(name, i);
  }
  if (coords.size() > options.max_samples) {
    Rng rng(options.seed);
    std::vector<int> pick =
        rng.sample_without_replacement(coords.size(), options.max_samples);
    std::vector<std::pair<std::string, std::size_t>> subset;
    subset.reserve(pick.size());
    for (int idx : pick) subset.push_back(coords[static_cast<std::size_t>(idx)]);
    coords = std::move(subset);
  }

  ParamStore work = params;
  const auto eval_loss = [&](const std::string& name, std::size_t idx,
                             double delta) {
    const double saved = work.get(name)[idx];
    work.mutable_get(name)[idx] = saved + delta;
    Tape tape;
    const Tape::ValueId loss = build_loss(tape, work);
    const double value = tape.value(loss).scalar_value();
    work.mutable_get(name)[idx] = saved;
    return value;
  };

  GradCheckResult result;
  for (const auto& [name, idx] : coords) {
    const double plus = eval_loss(name, idx, options.step);
    const double minus = eval_loss(name, idx, -options.step);
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double a = analytic.at(name)[idx];
    const double denom =
        std::max(options.denom_floor, std::abs(a) + std::abs(numeric));
    const double rel = std::abs(a - numeric) / denom;
    ++result.coords_checked;
    if (rel > result.max_rel_err) {
      result.max_rel_err = rel;
      result.worst_param = name;
      result.worst_index = idx;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace teg
