#include "trialign/checkpoint.hpp"

#include "trialign/binary_io.hpp"
#include "trialign/errors.hpp"

namespace trialign {
namespace {

constexpr std::string_view kMagic = "TRICKPT1";
constexpr std::uint32_t kVersion = 1;

struct NamedTensor {
  std::string name;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::vector<float> values;  // row-major
};

template <typename Derived>
NamedTensor to_tensor(std::string name, const Eigen::MatrixBase<Derived>& m) {
  NamedTensor t{std::move(name), static_cast<std::uint64_t>(m.rows()),
                static_cast<std::uint64_t>(m.cols()), {}};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.values.push_back(static_cast<float>(m(r, c)));
  }
  return t;
}

NamedTensor flat_tensor(std::string name, const std::vector<float>& v) {
  return {std::move(name), 1, v.size(), v};
}

const char* const kParamNames[] = {"w1", "b1", "ln_gain", "ln_bias", "w2", "b2"};

}  // namespace

std::vector<TensorSlot> head_slots(ProjectionHead<float>& head, const HeadGradients<float>& grads) {
  auto slot = [](auto& value, const auto& grad, bool decay) {
    return TensorSlot{std::span<float>(value.data(), static_cast<std::size_t>(value.size())),
                      std::span<const float>(grad.data(), static_cast<std::size_t>(grad.size())),
                      decay};
  };
  // Decoupled decay on the weight matrices only.
  return {slot(head.w1, grads.w1, true),        slot(head.b1, grads.b1, false),
          slot(head.ln_gain, grads.ln_gain, false), slot(head.ln_bias, grads.ln_bias, false),
          slot(head.w2, grads.w2, true),        slot(head.b2, grads.b2, false)};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = checkpoint.metadata;
  meta["format"] = "trialign-checkpoint";
  meta["heads"] = nlohmann::json::object();
  std::size_t slot_index = 0;
  for (const auto& [m, head] : checkpoint.heads) {
    const std::string prefix = std::string(to_string(m)) + "/";
    meta["heads"][std::string(to_string(m))] = {{"d_in", head.d_in()},
                                                {"hidden", head.hidden()},
                                                {"d_out", head.d_out()},
                                                {"dropout", head.dropout_rate}};
    tensors.push_back(to_tensor(prefix + "w1", head.w1));
    tensors.push_back(to_tensor(prefix + "b1", head.b1));
    tensors.push_back(to_tensor(prefix + "ln_gain", head.ln_gain));
    tensors.push_back(to_tensor(prefix + "ln_bias", head.ln_bias));
    tensors.push_back(to_tensor(prefix + "w2", head.w2));
    tensors.push_back(to_tensor(prefix + "b2", head.b2));
    if (checkpoint.optimizer && !checkpoint.optimizer->first_moment.empty()) {
      // Moments follow head_slots order and are stored flat in the solver's layout.
      for (const char* name : kParamNames) {
        tensors.push_back(flat_tensor(prefix + name + "/adam_m",
                                      checkpoint.optimizer->first_moment.at(slot_index)));
        tensors.push_back(flat_tensor(prefix + name + "/adam_v",
                                      checkpoint.optimizer->second_moment.at(slot_index)));
        ++slot_index;
      }
    }
  }
  if (checkpoint.optimizer) {
    const auto& o = *checkpoint.optimizer;
    meta["optimizer"] = {{"step", o.step},
                         {"beta1", o.config.beta1},
                         {"beta2", o.config.beta2},
                         {"eps", o.config.eps},
                         {"weight_decay", o.config.weight_decay}};
  }
  binary::Writer out;
  out.bytes(kMagic);
  out.uint<std::uint32_t>(kVersion);
  const std::string meta_text = meta.dump();
  out.uint<std::uint64_t>(meta_text.size());
  out.bytes(meta_text);
  out.uint<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    out.uint<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    out.bytes(t.name);
    out.uint<std::uint64_t>(t.rows);
    out.uint<std::uint64_t>(t.cols);
    out.f32s(t.values);
  }
  binary::write_file_atomic(path.string(), out.buffer());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string raw = binary::read_file(path.string());
  binary::Reader in(raw, path.string());
  if (raw.size() < kMagic.size() || in.bytes(kMagic.size()) != kMagic) {
    throw FormatError(path.string() + ": bad magic, expected TRICKPT1");
  }
  if (const auto v = in.uint<std::uint32_t>(); v != kVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ckpt;
  const auto meta_len = in.uint<std::uint64_t>();
  if (meta_len > in.remaining()) throw FormatError(path.string() + ": truncated metadata");
  try {
    ckpt.metadata = nlohmann::json::parse(in.bytes(static_cast<std::size_t>(meta_len)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad metadata: " + e.what());
  }
  std::map<std::string, NamedTensor> tensors;
  const auto count = in.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = std::string(in.bytes(in.uint<std::uint32_t>()));
    t.rows = in.uint<std::uint64_t>();
    t.cols = in.uint<std::uint64_t>();
    if (t.cols != 0 && t.rows > in.remaining() / 4 / t.cols) {
      throw FormatError(path.string() + ": truncated tensor '" + t.name + "'");
    }
    t.values.resize(static_cast<std::size_t>(t.rows * t.cols));
    in.f32s(t.values);
    tensors.emplace(t.name, std::move(t));
  }
  if (in.remaining() != 0) throw FormatError(path.string() + ": trailing bytes");

  auto fetch = [&](const std::string& name, std::uint64_t rows, std::uint64_t cols) -> const NamedTensor& {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError(path.string() + ": missing tensor '" + name + "'");
    if (it->second.rows != rows || it->second.cols != cols) {
      throw FormatError(path.string() + ": tensor '" + name + "' has unexpected shape");
    }
    return it->second;
  };
  auto fill = [&](auto& dst, const std::string& name) {
    const auto& t = fetch(name, static_cast<std::uint64_t>(dst.rows()),
                          static_cast<std::uint64_t>(dst.cols()));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < dst.rows(); ++r) {
      for (Eigen::Index c = 0; c < dst.cols(); ++c) dst(r, c) = t.values[k++];
    }
  };
  const bool has_optimizer = ckpt.metadata.contains("optimizer");
  OptimState optim;
  try {
    // JSON objects iterate by key; moments were written in modality order.
    std::map<Modality, nlohmann::json> head_info;
    for (const auto& [name, info] : ckpt.metadata.at("heads").items()) {
      head_info.emplace(modality_from_string(name), info);
    }
    for (const auto& [m, info] : head_info) {
      const std::string name(to_string(m));
      const auto d_in = info.at("d_in").get<Eigen::Index>();
      const auto hidden = info.at("hidden").get<Eigen::Index>();
      const auto d_out = info.at("d_out").get<Eigen::Index>();
      ProjectionHead<float> head;
      head.w1.resize(hidden, d_in);
      head.b1.resize(hidden);
      head.ln_gain.resize(hidden);
      head.ln_bias.resize(hidden);
      head.w2.resize(d_out, hidden);
      head.b2.resize(d_out);
      head.dropout_rate = info.at("dropout").get<double>();
      const std::string prefix = name + "/";
      fill(head.w1, prefix + "w1");
      fill(head.b1, prefix + "b1");
      fill(head.ln_gain, prefix + "ln_gain");
      fill(head.ln_bias, prefix + "ln_bias");
      fill(head.w2, prefix + "w2");
      fill(head.b2, prefix + "b2");
      if (has_optimizer && tensors.contains(prefix + "w1/adam_m")) {
        const std::size_t sizes[] = {static_cast<std::size_t>(head.w1.size()),
                                     static_cast<std::size_t>(hidden), static_cast<std::size_t>(hidden),
                                     static_cast<std::size_t>(hidden),
                                     static_cast<std::size_t>(head.w2.size()),
                                     static_cast<std::size_t>(d_out)};
        for (std::size_t p = 0; p < 6; ++p) {
          const std::string base = prefix + kParamNames[p];
          optim.first_moment.push_back(fetch(base + "/adam_m", 1, sizes[p]).values);
          optim.second_moment.push_back(fetch(base + "/adam_v", 1, sizes[p]).values);
        }
      }
      ckpt.heads.emplace(m, std::move(head));
    }
    if (has_optimizer) {
      const auto& o = ckpt.metadata.at("optimizer");
      optim.step = o.at("step").get<std::int64_t>();
      optim.config.beta1 = o.at("beta1").get<double>();
      optim.config.beta2 = o.at("beta2").get<double>();
      optim.config.eps = o.at("eps").get<double>();
      optim.config.weight_decay = o.at("weight_decay").get<double>();
      ckpt.optimizer = std::move(optim);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad metadata: " + e.what());
  }
  return ckpt;
}

}  // namespace trialign
