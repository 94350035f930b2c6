// SPDX-License-Identifier: Apache-2.0
#include "anira/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "anira/util/atomic_file.hpp"

namespace anira {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'A', 'N', 'I', 'R', 'A', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("checkpoint is truncated");
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n) {
  if (n > (1ULL << 34)) throw DataError("checkpoint record length is implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("checkpoint is truncated");
  return s;
}

}  // namespace

json model_config_to_json(const ModelConfig& c) {
  return {{"depth", c.depth},
          {"n_heads", c.n_heads},
          {"n_prelude_layers", c.n_prelude_layers},
          {"n_coda_layers", c.n_coda_layers},
          {"d_model", c.d_model},
          {"d_ff", c.d_ff},
          {"decider_d_ff", c.decider_d_ff},
          {"max_seq_len", c.max_seq_len},
          {"vocab_size", c.vocab_size},
          {"decider", to_string(c.decider)},
          {"gumbel_tau", c.gumbel_tau},
          {"init_std", c.init_std},
          {"precision", c.precision},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.depth = j.at("depth").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_prelude_layers = j.at("n_prelude_layers").get<std::size_t>();
    c.n_coda_layers = j.at("n_coda_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.decider_d_ff = j.at("decider_d_ff").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.decider = parse_decider_kind(j.at("decider").get<std::string>());
    c.gumbel_tau = j.at("gumbel_tau").get<double>();
    c.init_std = j.at("init_std").get<double>();
    c.precision = j.at("precision").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

const Tensor<double>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

template <typename Real>
Checkpoint make_checkpoint(const Model<Real>& model, AdamW<Real>* optimizer, json extra) {
  Checkpoint ckp;
  ckp.header = std::move(extra);
  ckp.header["model"] = model_config_to_json(model.config());
  const auto params = model.parameters();
  for (const auto* p : params) ckp.tensors.emplace_back("param/" + p->name, p->value.template cast<double>());
  if (optimizer) {
    ckp.header["adam_steps"] = optimizer->steps();
    auto& m = optimizer->first_moments();
    auto& v = optimizer->second_moments();
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckp.tensors.emplace_back("adam_m/" + params[i]->name, m[i].template cast<double>());
      ckp.tensors.emplace_back("adam_v/" + params[i]->name, v[i].template cast<double>());
    }
  }
  return ckp;
}

namespace {

template <typename Real>
void copy_into(const Checkpoint& ckp, const std::string& name, Tensor<Real>& dst) {
  const Tensor<double>* src = ckp.find(name);
  if (!src) throw DataError("checkpoint lacks tensor " + name);
  if (src->shape() != dst.shape()) {
    throw DataError("checkpoint tensor " + name + " has shape " + shape_string(src->shape()) + ", model expects " +
                    shape_string(dst.shape()));
  }
  dst = src->template cast<Real>();
}

}  // namespace

template <typename Real>
void restore_parameters(const Checkpoint& ckp, Model<Real>& model) {
  for (auto* p : model.parameters()) copy_into(ckp, "param/" + p->name, p->value);
}

template <typename Real>
void restore_optimizer(const Checkpoint& ckp, const Model<Real>& model, AdamW<Real>& optimizer) {
  if (!ckp.header.contains("adam_steps")) return;
  const auto params = model.parameters();
  auto& m = optimizer.first_moments();
  auto& v = optimizer.second_moments();
  for (std::size_t i = 0; i < params.size(); ++i) {
    copy_into(ckp, "adam_m/" + params[i]->name, m[i]);
    copy_into(ckp, "adam_v/" + params[i]->name, v[i]);
  }
  optimizer.set_steps(ckp.header.at("adam_steps").get<std::size_t>());
}

void write_checkpoint(const std::string& path, const Checkpoint& ckp, bool float64) {
  write_atomically(
      path,
      [&](std::ostream& out) {
        out.write(kMagic, sizeof(kMagic));
        put<std::uint32_t>(out, kCheckpointVersion);
        const std::string header = ckp.header.dump();
        put<std::uint64_t>(out, header.size());
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(ckp.tensors.size()));
        for (const auto& [name, t] : ckp.tensors) {
          put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
          out.write(name.data(), static_cast<std::streamsize>(name.size()));
          put<std::uint32_t>(out, float64 ? 1 : 0);
          put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
          for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
          if (float64) {
            out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)));
          } else {
            const Tensor<float> f = t.cast<float>();
            out.write(reinterpret_cast<const char*>(f.ptr()), static_cast<std::streamsize>(f.size() * sizeof(float)));
          }
        }
      },
      std::ios::out | std::ios::binary);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  try {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError("not a checkpoint (bad magic)");
    const auto version = get<std::uint32_t>(in);
    if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckp;
    try {
      ckp.header = json::parse(get_bytes(in, get<std::uint64_t>(in)));
    } catch (const json::parse_error& e) {
      throw DataError(std::string("corrupt checkpoint header: ") + e.what());
    }
    const auto count = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = get_bytes(in, get<std::uint32_t>(in));
      const auto dtype = get<std::uint32_t>(in);
      if (dtype > 1) throw DataError("unknown dtype in tensor " + name);
      Shape shape(get<std::uint32_t>(in));
      for (auto& d : shape) d = get<std::uint64_t>(in);
      const std::size_t n = shape_size(shape);
      if (dtype == 1) {
        std::string raw = get_bytes(in, n * sizeof(double));
        std::vector<double> data(n);
        std::memcpy(data.data(), raw.data(), raw.size());
        ckp.tensors.emplace_back(std::move(name), Tensor<double>(shape, std::move(data)));
      } else {
        std::string raw = get_bytes(in, n * sizeof(float));
        std::vector<float> data(n);
        std::memcpy(data.data(), raw.data(), raw.size());
        ckp.tensors.emplace_back(std::move(name), Tensor<float>(shape, std::move(data)).cast<double>());
      }
    }
    return ckp;
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

template Checkpoint make_checkpoint(const Model<float>&, AdamW<float>*, json);
template Checkpoint make_checkpoint(const Model<double>&, AdamW<double>*, json);
template void restore_parameters(const Checkpoint&, Model<float>&);
template void restore_parameters(const Checkpoint&, Model<double>&);
template void restore_optimizer(const Checkpoint&, const Model<float>&, AdamW<float>&);
template void restore_optimizer(const Checkpoint&, const Model<double>&, AdamW<double>&);

}  // namespace anira
