#include "phaserec/models.hpp"

#include "phaserec/error.hpp"
#include "phaserec/tensor_io.hpp"
#include "phaserec/util.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace phaserec {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

// ---------------------------------------------------------------- spec

void ModelSpec::validate() const {
  if (input_channels < 1) throw ConfigError("model needs at least one input channel");
  if (depth < 2) throw ConfigError("model depth must be >= 2");
  if (base_width < 1) throw ConfigError("model base width must be >= 1");
  phase_range.validate();
}

void ModelSpec::validate_grid(std::int64_t n) const {
  const std::int64_t step = std::int64_t{1} << depth;
  if (n % step != 0) {
    throw ConfigError("grid size " + std::to_string(n) + " is not divisible by 2^" +
                      std::to_string(depth));
  }
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = {{"input_channels", s.input_channels},
       {"output_heads", s.amplitude_head ? nlohmann::json{"phase", "amplitude"}
                                         : nlohmann::json{"phase"}},
       {"depth", s.depth},
       {"base_width", s.base_width},
       {"rng_seed", s.rng_seed},
       {"phase_range", s.phase_range}};
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  s.input_channels = j.value("input_channels", s.input_channels);
  if (j.contains("output_heads")) {
    s.amplitude_head = false;
    for (const auto& h : j["output_heads"]) {
      if (h.get<std::string>() == "amplitude") s.amplitude_head = true;
    }
  }
  s.amplitude_head = j.value("amplitude_head", s.amplitude_head);
  s.depth = j.value("depth", s.depth);
  s.base_width = j.value("base_width", s.base_width);
  s.rng_seed = j.value("rng_seed", s.rng_seed);
  if (j.contains("phase_range")) s.phase_range = j["phase_range"].get<PhaseRange>();
}

void to_json(nlohmann::json& j, const Provenance& p) {
  j = {{"strategy", p.strategy},
       {"epochs", p.epochs},
       {"cycles", p.cycles},
       {"dataset_hash", p.dataset_hash}};
  j["optics"] = p.optics ? nlohmann::json(*p.optics) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, Provenance& p) {
  p.strategy = j.value("strategy", std::string{"init"});
  p.epochs = j.value("epochs", std::int64_t{0});
  p.cycles = j.value("cycles", std::int64_t{0});
  p.dataset_hash = j.value("dataset_hash", std::string{});
  if (j.contains("optics") && !j["optics"].is_null()) {
    p.optics = j["optics"].get<OpticalConfig>();
  }
}

// ---------------------------------------------------------------- layers

namespace {

std::int64_t groups_for(std::int64_t channels) { return std::gcd(channels, std::int64_t{8}); }

torch::nn::Conv2d conv3x3(std::int64_t in, std::int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

}  // namespace

ConvBlockImpl::ConvBlockImpl(std::int64_t in_channels, std::int64_t out_channels) {
  conv1_ = register_module("conv1", conv3x3(in_channels, out_channels));
  norm1_ = register_module(
      "norm1", torch::nn::GroupNorm(groups_for(out_channels), out_channels));
  conv2_ = register_module("conv2", conv3x3(out_channels, out_channels));
  norm2_ = register_module(
      "norm2", torch::nn::GroupNorm(groups_for(out_channels), out_channels));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(norm1_(conv1_(x)));
  return torch::relu(norm2_(conv2_(y)));
}

DecoderImpl::DecoderImpl(std::int64_t depth, std::int64_t base_width) {
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  std::int64_t channels = base_width << depth;  // bottleneck width
  for (std::int64_t level = depth - 1; level >= 0; --level) {
    const std::int64_t width = base_width << level;
    blocks_->push_back(ConvBlock(channels + width, width));
    channels = width;
  }
  head_ = register_module("head",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(base_width, 1, 1)));
}

torch::Tensor DecoderImpl::forward(torch::Tensor x, const std::vector<torch::Tensor>& skips) {
  std::size_t k = skips.size();
  for (const auto& block : *blocks_) {
    const auto& skip = skips[--k];
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{skip.size(-2), skip.size(-1)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = block->as<ConvBlock>()->forward(torch::cat({x, skip}, 1));
  }
  return head_(x);
}

PhaseNetImpl::PhaseNetImpl(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  encoder_ = register_module("encoder", torch::nn::ModuleList());
  std::int64_t channels = spec_.input_channels;
  for (std::int64_t level = 0; level < spec_.depth; ++level) {
    const std::int64_t width = spec_.base_width << level;
    encoder_->push_back(ConvBlock(channels, width));
    channels = width;
  }
  bottleneck_ = register_module("bottleneck", ConvBlock(channels, 2 * channels));
  phase_decoder_ = register_module("phase_decoder", Decoder(spec_.depth, spec_.base_width));
  if (spec_.amplitude_head) {
    amplitude_decoder_ =
        register_module("amplitude_decoder", Decoder(spec_.depth, spec_.base_width));
  }
}

NetOutput PhaseNetImpl::forward(const torch::Tensor& input) {
  std::vector<torch::Tensor> skips;
  auto x = input;
  for (const auto& block : *encoder_) {
    x = block->as<ConvBlock>()->forward(x);
    skips.push_back(x);
    x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
  }
  x = bottleneck_(x);
  NetOutput out;
  out.phase = spec_.phase_range.min +
              spec_.phase_range.width() * torch::sigmoid(phase_decoder_(x, skips));
  if (amplitude_decoder_) out.amplitude = torch::sigmoid(amplitude_decoder_(x, skips));
  return out;
}

// ---------------------------------------------------------------- weights

namespace {

// Default-style uniform init (bound 1/sqrt(fan_in)) drawn from a private
// generator so that construction is deterministic without global seeding.
void initialize(torch::nn::Module& net, std::uint64_t seed) {
  torch::NoGradGuard guard;
  auto gen = make_generator(seed);
  for (auto& m : net.modules(/*include_self=*/false)) {
    if (auto* conv = m->as<torch::nn::Conv2d>()) {
      auto& w = conv->weight;
      const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
      const double bound = 1.0 / std::sqrt(fan_in);
      w.uniform_(-bound, bound, gen);
      if (conv->bias.defined()) conv->bias.uniform_(-bound, bound, gen);
    } else if (auto* norm = m->as<torch::nn::GroupNorm>()) {
      norm->weight.fill_(1.0);
      norm->bias.zero_();
    }
  }
}

}  // namespace

ModelWeights build_model(const ModelSpec& spec) {
  spec.validate();
  ModelWeights w{spec, PhaseNet(spec), Provenance{}};
  initialize(*w.net, spec.rng_seed);
  return w;
}

ModelWeights ModelWeights::clone() const {
  ModelWeights copy{spec, PhaseNet(spec), provenance};
  torch::NoGradGuard guard;
  auto src = net->named_parameters();
  for (auto& item : copy.net->named_parameters()) {
    item.value().copy_(src[item.key()]);
  }
  auto first = net->parameters().front();
  copy.net->to(first.device(), first.scalar_type());
  copy.net->train(net->is_training());
  return copy;
}

std::int64_t ModelWeights::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : net->parameters()) n += p.numel();
  return n;
}

NetOutput forward(const ModelWeights& weights, const torch::Tensor& input) {
  auto x = input.dim() == 3 ? input.unsqueeze(0) : input;
  if (x.dim() != 4) throw ValidationError("model input must be [C,N,N] or [B,C,N,N]");
  if (x.size(1) != weights.spec.input_channels) {
    throw ValidationError("model expects " + std::to_string(weights.spec.input_channels) +
                          " input channels, got " + std::to_string(x.size(1)));
  }
  if (x.size(2) != x.size(3)) throw ValidationError("model input must be square");
  weights.spec.validate_grid(x.size(2));
  auto first = weights.net->parameters().front();
  x = x.to(first.device(), first.scalar_type());
  auto out = weights.net.ptr()->forward(x);
  if (input.dim() == 3) {
    out.phase = out.phase.squeeze(0);
    if (out.amplitude.defined()) out.amplitude = out.amplitude.squeeze(0);
  }
  return out;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kCheckpointMagic[4] = {'P', 'R', 'C', 'K'};

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw CheckpointError("corrupt checkpoint: truncated");
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(const ModelWeights& weights, const fs::path& path) {
  nlohmann::json header;
  header["spec"] = weights.spec;
  header["provenance"] = weights.provenance;
  auto params = weights.net->named_parameters();
  auto& table = header["tensors"] = nlohmann::json::array();
  for (const auto& item : params) {
    table.push_back({{"name", item.key()}, {"shape", item.value().sizes().vec()}});
  }
  const auto text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& item : params) {
    auto t = item.value().detach();
    const auto rows = t.dim() == 0 ? 1 : t.size(0);
    write_tensor(out, t.reshape({rows, t.numel() / rows}));
  }
  if (!out) throw IoError("cannot write checkpoint " + path.string());
}

ModelWeights load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError("corrupt checkpoint: bad magic in " + path.string());
  }
  const auto version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) +
                          " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_size = get_u32(in);
  std::string text(header_size, '\0');
  if (!in.read(text.data(), header_size)) throw CheckpointError("corrupt checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw CheckpointError("corrupt checkpoint: unreadable header");
  }
  auto weights = build_model(header.at("spec").get<ModelSpec>());
  weights.provenance = header.at("provenance").get<Provenance>();
  auto params = weights.net->named_parameters();
  torch::NoGradGuard guard;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    torch::Tensor blob;
    try {
      blob = read_tensor(in);
    } catch (const IoError&) {
      throw CheckpointError("corrupt checkpoint: tensor '" + name + "' truncated");
    }
    auto* target = params.find(name);
    if (target == nullptr) throw CheckpointError("checkpoint tensor '" + name + "' unknown");
    if (target->sizes().vec() != shape || blob.numel() != target->numel()) {
      throw CheckpointError("checkpoint tensor '" + name + "' has the wrong shape");
    }
    target->copy_(blob.reshape(shape));
  }
  if (header.at("tensors").size() != params.size()) {
    throw CheckpointError("checkpoint is missing tensors");
  }
  return weights;
}

torch::Device compute_device() {
  const char* env = std::getenv("PHASEREC_DEVICE");
  if (env == nullptr || *env == '\0') return torch::kCPU;
  try {
    torch::Device d(env);
    if (d.is_cuda() && !torch::cuda::is_available()) {
      throw ConfigError("PHASEREC_DEVICE requests CUDA but none is available");
    }
    return d;
  } catch (const c10::Error&) {
    throw ConfigError(std::string("unknown PHASEREC_DEVICE '") + env + "'");
  }
}

}  // namespace phaserec
