#include "rfd/io/model_file.hpp"

#include <stdexcept>

#include "rfd/io/files.hpp"

namespace rfd::io {

namespace {

enum class LayerKind : std::uint32_t { Conv2d = 1, Relu = 2, MaxPool2d = 3, Flatten = 4, Dense = 5, BatchNorm = 6 };

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void put_tensor(ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u64(d);
  w.f64s(t.data());
}

Tensor get_tensor(ByteReader& r) {
  const auto rank = r.checked_size(r.u32(), 8);
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = r.u64();
    if (d == 0) throw FormatError("zero tensor dimension before byte " + std::to_string(r.offset()));
    if (count > r.remaining() / d) throw FormatError("tensor larger than its section at byte " + std::to_string(r.offset()));
    count *= d;
  }
  if (rank == 0) throw FormatError("rank-0 tensor at byte " + std::to_string(r.offset()));
  std::vector<double> values(r.checked_size(count, 8));
  r.f64s(values);
  return Tensor(std::move(shape), std::move(values));
}

std::string section_name(std::uint32_t tag) {
  std::string s(4, ' ');
  for (int i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)] = static_cast<char>((tag >> (8 * i)) & 0xFF);
  return s;
}

}  // namespace

std::string encode_container(const std::vector<Section>& sections) {
  ByteWriter w;
  w.bytes(kContainerMagic);
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& s : sections) {
    w.u32(s.tag);
    w.blob(s.payload);
  }
  return w.take();
}

std::vector<Section> decode_container(std::string_view bytes) {
  ByteReader r(bytes);
  if (bytes.substr(0, kContainerMagic.size()) != kContainerMagic) {
    throw FormatError("bad container magic at byte 0, expected RFDMODEL");
  }
  r.bytes(kContainerMagic.size());
  const auto version = r.u32();
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version) + " at byte 8");
  }
  const auto n = r.checked_size(r.u32(), 12);
  std::vector<Section> out(n);
  for (auto& s : out) {
    s.tag = r.u32();
    s.payload = std::string(r.blob());
  }
  if (!r.done()) throw FormatError(std::to_string(r.remaining()) + " trailing bytes at byte " + std::to_string(r.offset()));
  return out;
}

const Section* find_section(const std::vector<Section>& sections, std::uint32_t tag) {
  for (const auto& s : sections)
    if (s.tag == tag) return &s;
  return nullptr;
}

const Section& require_section(const std::vector<Section>& sections, std::uint32_t tag) {
  const auto* s = find_section(sections, tag);
  if (!s) throw FormatError("container has no " + section_name(tag) + " section");
  return *s;
}

std::string encode_network_layers(const Network& net) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(net.input_shape().size()));
  for (auto d : net.input_shape()) w.u64(d);
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& layer : net.layers()) {
    std::visit(overloaded{
                   [&](const Conv2d& c) {
                     w.u32(static_cast<std::uint32_t>(LayerKind::Conv2d));
                     w.u64(c.kernel);
                     w.u64(c.in_channels);
                     w.u64(c.out_channels);
                     w.u8(static_cast<std::uint8_t>(c.padding));
                     put_tensor(w, c.weight);
                     put_tensor(w, c.bias);
                   },
                   [&](const Relu&) { w.u32(static_cast<std::uint32_t>(LayerKind::Relu)); },
                   [&](const MaxPool2d& p) {
                     w.u32(static_cast<std::uint32_t>(LayerKind::MaxPool2d));
                     w.u64(p.size);
                   },
                   [&](const Flatten&) { w.u32(static_cast<std::uint32_t>(LayerKind::Flatten)); },
                   [&](const Dense& d) {
                     w.u32(static_cast<std::uint32_t>(LayerKind::Dense));
                     w.u64(d.in_features);
                     w.u64(d.out_features);
                     put_tensor(w, d.weight);
                     put_tensor(w, d.bias);
                   },
                   [&](const BatchNorm& b) {
                     w.u32(static_cast<std::uint32_t>(LayerKind::BatchNorm));
                     w.u64(b.channels);
                     w.f64(b.eps);
                     w.f64(b.momentum);
                     put_tensor(w, b.gamma);
                     put_tensor(w, b.beta);
                     put_tensor(w, b.running_mean);
                     put_tensor(w, b.running_var);
                   },
               },
               layer);
  }
  return w.take();
}

std::string encode_activation_index(const Network& net) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(net.num_activations()));
  for (auto p : net.activation_positions()) w.u64(p);
  return w.take();
}

Network decode_network(std::string_view layers, std::string_view activations) {
  ByteReader r(layers);
  Shape input(r.checked_size(r.u32(), 8));
  for (auto& d : input) d = r.u64();
  const auto n = r.checked_size(r.u32(), 4);
  std::vector<Layer> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto at = r.offset();
    const auto kind = static_cast<LayerKind>(r.u32());
    switch (kind) {
      case LayerKind::Conv2d: {
        Conv2d c;
        c.kernel = r.u64();
        c.in_channels = r.u64();
        c.out_channels = r.u64();
        const auto pad = r.u8();
        if (pad > 1) throw FormatError("unknown padding " + std::to_string(pad) + " at byte " + std::to_string(r.offset() - 1));
        c.padding = static_cast<Padding>(pad);
        c.weight = get_tensor(r);
        c.bias = get_tensor(r);
        out.emplace_back(std::move(c));
        break;
      }
      case LayerKind::Relu: out.emplace_back(Relu{}); break;
      case LayerKind::MaxPool2d: out.emplace_back(MaxPool2d{r.u64()}); break;
      case LayerKind::Flatten: out.emplace_back(Flatten{}); break;
      case LayerKind::Dense: {
        Dense d;
        d.in_features = r.u64();
        d.out_features = r.u64();
        d.weight = get_tensor(r);
        d.bias = get_tensor(r);
        out.emplace_back(std::move(d));
        break;
      }
      case LayerKind::BatchNorm: {
        BatchNorm b;
        b.channels = r.u64();
        b.eps = r.f64();
        b.momentum = r.f64();
        b.gamma = get_tensor(r);
        b.beta = get_tensor(r);
        b.running_mean = get_tensor(r);
        b.running_var = get_tensor(r);
        out.emplace_back(std::move(b));
        break;
      }
      default:
        throw FormatError("unknown layer kind " + std::to_string(static_cast<std::uint32_t>(kind)) + " at byte " +
                          std::to_string(at) + " of NETW");
    }
  }
  if (!r.done()) throw FormatError("trailing bytes in NETW at byte " + std::to_string(r.offset()));

  ByteReader a(activations);
  std::vector<std::size_t> positions(a.checked_size(a.u32(), 8));
  for (auto& p : positions) p = a.u64();
  if (!a.done()) throw FormatError("trailing bytes in ACTI at byte " + std::to_string(a.offset()));
  try {
    return Network(std::move(input), std::move(out), std::move(positions));
  } catch (const std::exception& e) {
    throw FormatError(std::string("inconsistent network section: ") + e.what());
  }
}

nlohmann::json activation_map(const Network& net) {
  auto arr = nlohmann::json::array();
  for (std::size_t k = 1; k <= net.num_activations(); ++k) {
    const auto pos = net.activation_positions()[k - 1];
    arr.push_back({{"activation", k},
                   {"layer_position", pos},
                   {"layer", layer_name(net.layers()[pos])},
                   {"size", numel(net.activation_shape(k))}});
  }
  return arr;
}

void save_network(const std::filesystem::path& path, const Network& net, nlohmann::json meta) {
  meta["kind"] = "dnn";
  meta["activations"] = activation_map(net);
  write_file_atomic(path, encode_container({{kTagMeta, meta.dump(2)},
                                            {kTagNetwork, encode_network_layers(net)},
                                            {kTagActivations, encode_activation_index(net)}}));
}

NetworkFile load_network(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    const auto sections = decode_container(bytes);
    auto net = decode_network(require_section(sections, kTagNetwork).payload,
                              require_section(sections, kTagActivations).payload);
    nlohmann::json meta = nlohmann::json::object();
    if (const auto* m = find_section(sections, kTagMeta)) meta = nlohmann::json::parse(m->payload);
    return {std::move(net), std::move(meta)};
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": META is not valid JSON: " + e.what());
  }
}

nlohmann::json read_meta(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    const auto sections = decode_container(bytes);
    if (const auto* m = find_section(sections, kTagMeta)) return nlohmann::json::parse(m->payload);
    return nlohmann::json::object();
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": META is not valid JSON: " + e.what());
  }
}

}  // namespace rfd::io
